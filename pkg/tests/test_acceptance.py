"""Acceptance suite: one test per criterion, each printing a PASS line
with its measured numbers (run with -s to see them live).

Criterion 7 is a full-scale benchmark reproduction target, excluded from
the default run; include it with `pytest -m stretch`.
"""

import time
from pathlib import Path

import numpy as np
import pytest

import grcs
from grcs.coder import CoderParams

from conftest import DATA_DIR, cameraman_256, center_crop
from helpers import compensated_groups, golden_section_prox

SQRT2 = np.sqrt(2.0)


def test_criterion_1_prox_oracle_equivalence():
    """code_residual equals the per-coefficient 1-D minimizer."""
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        m = int(rng.integers(1, 4))
        q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        eigvals = np.sort(rng.uniform(0.0, 16.0, n))[::-1].copy()
        params = CoderParams(sigma_n=float(rng.uniform(0.0, 2.0)),
                             hard_weight=1.0)
        residual = rng.normal(0.0, 4.0, (n, m))
        codes = grcs.code_residual(residual, q, eigvals, params)
        coef = q.T @ residual
        sig = np.maximum(np.sqrt(eigvals), params.sigma_floor)
        thresh = 2.0 * SQRT2 * params.sigma_n ** 2 / sig
        for i in range(n):
            for j in range(m):
                expected = golden_section_prox(coef[i, j], thresh[i])
                worst = max(worst, abs(codes[i, j] - expected))
                assert abs(codes[i, j] - expected) < 1e-4
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    print(f"\nACCEPTANCE 1: PASS - 1000 instances, worst deviation "
          f"{worst:.2e}, {elapsed:.1f}s")


def test_criterion_2_x_update_oracle():
    """Gradient descent reaches the closed-form x subproblem solution."""
    start = time.perf_counter()
    rng = np.random.default_rng(202)
    worst = 0.0
    for trial in range(50):
        block_dim = int(rng.choice([4, 8]))
        shape = (block_dim, 2 * block_dim) if block_dim == 4 \
            else (block_dim, block_dim)  # 32 or 64 pixels
        mat = grcs.generate_measurement_matrix(
            block_dim, float(rng.uniform(0.2, 1.0)), trial)
        img = rng.uniform(0, 255, shape)
        meas = grcs.sample_image(img, mat)
        z = rng.uniform(0, 255, shape)
        b = rng.normal(0, 5, shape)
        cfg = grcs.SolverConfig(subrate=mat.subrate, block_dim=block_dim,
                                mu=float(rng.uniform(0.5, 2.0)),
                                inner_grad_steps=800)
        state = grcs.SolverState(x=rng.uniform(0, 255, shape), z=z, b=b)
        moved = grcs.x_update(state, meas, cfg)

        phi = mat.entries
        hess = phi.T @ phi + cfg.mu * np.eye(phi.shape[1])
        from grcs.sensing import merge_blocks, split_blocks
        target = split_blocks(z + b, block_dim)
        solved = np.empty_like(target)
        for i, y_block in enumerate(meas.blocks):
            solved[i] = np.linalg.solve(hess, phi.T @ y_block
                                        + cfg.mu * target[i])
        direct = merge_blocks(solved, shape[0], shape[1], block_dim)
        err = float(np.abs(moved - direct).max())
        worst = max(worst, err)
        assert err < 1e-6
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    print(f"\nACCEPTANCE 2: PASS - 50 toys, worst deviation {worst:.2e}, "
          f"{elapsed:.1f}s")


def test_criterion_3_em_monotonicity_and_recovery():
    """Two-component synthetic mixture: monotone likelihood, recovered
    weights within 0.05 and covariances within 15% Frobenius."""
    start = time.perf_counter()
    rng = np.random.default_rng(303)
    n, m = 16, 8
    cov_a = np.eye(n)
    cov_b = 100.0 * np.eye(n)
    groups = np.concatenate([compensated_groups(rng, cov_a, 1000, m),
                             compensated_groups(rng, cov_b, 1000, m)])
    data = grcs.ResidualTrainingSet(groups=groups, patch_size=4,
                                    group_size=m)
    model = grcs.train_gmm(data, 2, em_iters=100, ridge=1e-8, seed=5)

    trace = model.loglik_trace
    assert len(trace) >= 2
    for before, after in zip(trace, trace[1:]):
        assert after >= before - 1e-9 * abs(before)

    # order recovered components by total variance to match ground truth
    comps = sorted(model.components, key=lambda c: c.eigvals.sum())
    weights = [c.weight for c in comps]
    assert abs(weights[0] - 0.5) <= 0.05
    assert abs(weights[1] - 0.5) <= 0.05
    err_a = np.linalg.norm(comps[0].covariance - cov_a) \
        / np.linalg.norm(cov_a)
    err_b = np.linalg.norm(comps[1].covariance - cov_b) \
        / np.linalg.norm(cov_b)
    assert err_a <= 0.15
    assert err_b <= 0.15
    elapsed = time.perf_counter() - start
    assert elapsed < 300.0
    print(f"\nACCEPTANCE 3: PASS - weights ({weights[0]:.3f}, "
          f"{weights[1]:.3f}), cov errors ({err_a:.3f}, {err_b:.3f}), "
          f"{len(trace)} LL evaluations, {elapsed:.1f}s")


def test_criterion_4_aggregation_identity():
    """gather -> identity coding -> scatter reproduces the image."""
    rng = np.random.default_rng(404)
    worst = 0.0
    for _ in range(10):
        img = rng.uniform(0, 255, (64, 64))
        pairs = []
        for pos in grcs.reference_positions(64, 64, 8, 4):
            idx = grcs.block_match(img, pos, 8, 8, 40)
            pairs.append((grcs.gather_group(img, idx).data, idx))
        out, uncovered = grcs.scatter_accumulate(pairs, 64, 64)
        assert not uncovered.any()
        err = float(np.abs(out - img).max())
        worst = max(worst, err)
        assert err < 1e-10
    print(f"\nACCEPTANCE 4: PASS - 10 images, worst deviation {worst:.2e}")


def test_criterion_5_full_sampling_sanity(tiny_model):
    """Subrate 1.0 with vanishing thresholds recovers the image
    beyond 100 dB."""
    img = center_crop(cameraman_256(), 64)
    meas = grcs.sample_image(img, grcs.generate_measurement_matrix(
        32, 1.0, 505))
    cfg = grcs.SolverConfig(subrate=1.0, block_dim=32, patch_size=4,
                            group_size=6, stride=2, window=12,
                            sigma_n=0.0, lam=1e-12, max_iter=10)
    out, trace = grcs.reconstruct(meas, tiny_model, cfg, reference=img)
    value = grcs.psnr(img, out)
    assert value >= 100.0
    print(f"\nACCEPTANCE 5: PASS - PSNR {value:.1f} dB after "
          f"{trace[-1].iteration} iterations")


def test_criterion_6_desk_scale_end_to_end(desk_model):
    """Cameraman 128x128 crop at subrate 0.3 with the published
    operating point: at least +4 dB over the initial estimate and a
    stable tail."""
    start = time.perf_counter()
    img = center_crop(cameraman_256(), 128)
    meas = grcs.sample_image(img, grcs.generate_measurement_matrix(
        32, 0.3, 606))
    init = np.clip(grcs.initial_estimate(meas), 0.0, 255.0)
    psnr_init = grcs.psnr(img, init)

    cfg = grcs.SolverConfig.for_subrate(0.3, seed=606, stop_tol=0.0)
    assert cfg.patch_size == 8 and cfg.lam == 0.146
    assert cfg.mu == 0.0025 and cfg.group_size == 60
    assert cfg.components == 64 and cfg.max_iter == 120
    out, trace = grcs.reconstruct(meas, desk_model, cfg, reference=img)
    elapsed = time.perf_counter() - start

    psnr_final = grcs.psnr(img, out)
    tail = [rec.psnr for rec in trace[-10:]]
    spread = max(tail) - min(tail)
    assert len(trace) >= 10
    assert psnr_final - psnr_init >= 4.0
    assert spread < 0.1
    assert elapsed < 900.0
    print(f"\nACCEPTANCE 6: PASS - init {psnr_init:.2f} dB -> final "
          f"{psnr_final:.2f} dB (gain {psnr_final - psnr_init:.2f}), "
          f"tail spread {spread:.3f} dB over last 10 of {len(trace)} "
          f"iterations, {elapsed:.0f}s")


@pytest.mark.stretch
def test_criterion_7_cameraman_full_scale(desk_model):
    """Full 256x256 Cameraman at subrate 0.3 against the published
    29.54 dB +/- 1.0 (non-gating reproduction target)."""
    start = time.perf_counter()
    img = cameraman_256()
    meas = grcs.sample_image(img, grcs.generate_measurement_matrix(
        32, 0.3, 707))
    cfg = grcs.SolverConfig.for_subrate(0.3, seed=707)
    out, trace = grcs.reconstruct(meas, desk_model, cfg, reference=img)
    elapsed = time.perf_counter() - start
    value = grcs.psnr(img, out)
    print(f"\nACCEPTANCE 7 (cameraman): PSNR {value:.2f} dB vs published "
          f"29.54 +/- 1.0, {trace[-1].iteration} iterations, {elapsed:.0f}s")
    assert abs(value - 29.54) <= 1.0


@pytest.mark.stretch
def test_criterion_7_house_full_scale(desk_model):
    """House at subrate 0.2 against 37.18 dB +/- 1.5; needs the classic
    256x256 House dropped in at tests/data/house.pgm (not shipped)."""
    path = Path(DATA_DIR) / "house.pgm"
    if not path.exists():
        pytest.skip("tests/data/house.pgm not available in this "
                    "environment; drop in the classic 256x256 House "
                    "image to run this half of criterion 7")
    img = grcs.load_pgm(path)
    meas = grcs.sample_image(img, grcs.generate_measurement_matrix(
        32, 0.2, 708))
    cfg = grcs.SolverConfig.for_subrate(0.2, seed=708)
    out, _ = grcs.reconstruct(meas, desk_model, cfg, reference=img)
    value = grcs.psnr(img, out)
    print(f"\nACCEPTANCE 7 (house): PSNR {value:.2f} dB vs published "
          f"37.18 +/- 1.5")
    assert abs(value - 37.18) <= 1.5


def test_criterion_8_reconstruct_determinism(tmp_path, tiny_model):
    """Identical inputs and seeds give byte-identical images and traces."""
    from grcs.cli import main

    rng = np.random.default_rng(808)
    coarse = rng.uniform(0, 255, (4, 4))
    img = np.clip(np.kron(coarse, np.ones((4, 4)))
                  + rng.normal(0, 2, (16, 16)), 0, 255)
    scene = tmp_path / "scene.pgm"
    grcs.save_pgm(img, scene)
    model_path = tmp_path / "model.jgmm"
    grcs.save_model(tiny_model, model_path)
    run_cfg = tmp_path / "run.cfg"
    run_cfg.write_text("patch_size = 4\ngroup_size = 6\nstride = 2\n"
                       "window = 12\nsigma_n = 6.0\nmu = 0.01\n"
                       "inner_grad_steps = 30\nmax_iter = 3\nstop_tol = 0\n")
    meas = tmp_path / "m.jcsm"
    assert main(["sample", "--image", str(scene), "--subrate", "0.5",
                 "--block", "8", "--seed", "9", "--out", str(meas)]) == 0

    outputs = []
    for tag in ("first", "second"):
        out = tmp_path / f"rec_{tag}.pgm"
        trace = tmp_path / f"trace_{tag}.csv"
        rc = main(["reconstruct", "--meas", str(meas),
                   "--model", str(model_path), "--config", str(run_cfg),
                   "--out", str(out), "--reference", str(scene),
                   "--trace", str(trace)])
        assert rc == 0
        outputs.append((out.read_bytes(), trace.read_bytes()))
    assert outputs[0][0] == outputs[1][0]
    assert outputs[0][1] == outputs[1][1]
    print("\nACCEPTANCE 8: PASS - byte-identical images and traces")
