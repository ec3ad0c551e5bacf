"""Shared test utilities: hand-built mixture models and independent
oracles (kept free of the library code paths they check)."""

import numpy as np

from grcs import GmmComponent, GmmModel

LOG_2PI = np.log(2.0 * np.pi)


def make_model(covariances, weights, patch_size, group_size=8):
    """Assemble a GmmModel directly from covariances."""
    comps = []
    for cov, w in zip(covariances, weights):
        vals, vecs = np.linalg.eigh(cov)
        order = np.argsort(-vals, kind="stable")
        vals, vecs = vals[order], vecs[:, order]
        idx = np.abs(vecs).argmax(axis=0)
        signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
        signs[signs == 0] = 1.0
        comps.append(GmmComponent(weight=float(w), covariance=cov,
                                  eigvecs=vecs * signs, eigvals=vals))
    return GmmModel(components=comps, patch_size=patch_size,
                    group_size=group_size)


def compensated_groups(rng, cov, num_groups, group_size):
    """Zero-mean groups whose per-column covariance equals `cov` exactly
    in expectation: draw i.i.d. with cov * M/(M-1), then centre."""
    n = cov.shape[0]
    scale = group_size / (group_size - 1.0)
    chol = np.linalg.cholesky(scale * cov)
    raw = rng.standard_normal((num_groups, n, group_size))
    raw = np.einsum("ij,gjm->gim", chol, raw)
    return raw - raw.mean(axis=2, keepdims=True)


def oracle_select(residual, model, sigma_n):
    """Direct slogdet/solve evaluation of the component selection rule."""
    n, m = residual.shape
    best, best_score = None, -np.inf
    for k, comp in enumerate(model.components):
        cov = comp.covariance + sigma_n ** 2 * np.eye(n)
        sign, logdet = np.linalg.slogdet(cov)
        assert sign > 0
        quad = float(np.sum(residual * np.linalg.solve(cov, residual)))
        score = np.log(comp.weight) - 0.5 * (
            m * (n * LOG_2PI + logdet) + quad)
        if score > best_score:
            best, best_score = k, score
    return best


def golden_section_prox(a, t, tol=1e-9):
    """Independent 1-D minimizer of 0.5*(a - v)^2 + t*|v| by coarse grid
    plus golden-section refinement."""
    span = abs(a) + 1.0
    grid = np.linspace(-span, span, 2001)
    objective = lambda v: 0.5 * (a - v) ** 2 + t * np.abs(v)
    best = grid[np.argmin(objective(grid))]
    lo, hi = best - span / 1000.0, best + span / 1000.0
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    c = hi - phi * (hi - lo)
    d = lo + phi * (hi - lo)
    while hi - lo > tol:
        if objective(c) < objective(d):
            hi, d = d, c
            c = hi - phi * (hi - lo)
        else:
            lo, c = c, d
            d = lo + phi * (hi - lo)
    return 0.5 * (lo + hi)
