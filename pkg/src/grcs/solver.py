"""Split Bregman reconstruction loop.

Each outer iteration alternates three steps on the padded canvas:

  1. a handful of gradient-descent steps on the quadratic
     data-consistency subproblem (blockwise sensing operators),
  2. regrouping of the current denoising target x - b, joint coding of
     every group, and aggregation of the coded groups into z,
  3. the Bregman correction b <- b - (x - z).

The hard-threshold weight of the coder is tied to the fidelity and
splitting weights by hard_weight = lam * (n*m*num_groups) / (mu *
num_pixels), which keeps the groupwise penalties equivalent to a global
one when every pixel appears in roughly the same number of groups.

With row-orthonormal sensing matrices the data Hessian has spectrum in
[mu, 1 + mu], so the default step size 1/(1 + mu) makes the inner
gradient descent a contraction.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .coder import CoderParams, code_group
from .gmm import GmmModel
from .image_io import psnr
from .patches import block_match, gather_group, reference_positions, \
    scatter_accumulate
from .sensing import Measurements, initial_estimate, merge_blocks, \
    split_blocks


class DivergenceError(RuntimeError):
    """The inner gradient descent produced non-finite values (bad eta)."""


# Default assumed noise level of the iterate handed to the coder, on the
# [0, 255] intensity scale.  Chosen empirically; see README.
DEFAULT_SIGMA_N = 12.0

# Inner gradient steps per outer iteration.  The null space of the
# sensing operator only contracts by a factor (1 - mu/(1+mu)) per step,
# so with mu ~ 2.5e-3 a few hundred cheap steps are needed for the x
# subproblem to track its exact solution.
DEFAULT_INNER_GRAD_STEPS = 400


@dataclass
class SolverConfig:
    """All tuning knobs of the reconstruction.

    Defaults follow the reference operating points: patch size 6 with
    lam 0.082 at subrate 0.1, patch size 8 with lam 0.146 at subrates
    0.2 and 0.3, mu 0.0025, 60 patches per group, 64 mixture
    components, at most 120 iterations.  eta None means 1/(1 + mu).
    """

    subrate: float
    block_dim: int = 32
    patch_size: int = 8
    group_size: int = 60
    stride: int = 4
    window: int = 40
    components: int = 64
    sigma_n: float = DEFAULT_SIGMA_N
    lam: float = 0.146
    mu: float = 0.0025
    eta: float = None
    inner_grad_steps: int = DEFAULT_INNER_GRAD_STEPS
    max_iter: int = 120
    stop_tol: float = 5e-4
    seed: int = 0
    early_stop_on_reference: bool = False

    def __post_init__(self):
        if not 0.0 < self.subrate <= 1.0:
            raise ValueError("subrate must lie in (0, 1]")
        if self.block_dim < 2:
            raise ValueError("block_dim must be >= 2")
        if self.patch_size < 2:
            raise ValueError("patch_size must be >= 2")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.window < self.patch_size:
            raise ValueError("window must be >= patch_size")
        if self.components < 1:
            raise ValueError("components must be >= 1")
        if self.sigma_n < 0:
            raise ValueError("sigma_n must be >= 0")
        if self.lam <= 0 or self.mu <= 0:
            raise ValueError("lam and mu must be > 0")
        if self.eta is not None and self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.inner_grad_steps < 0:
            raise ValueError("inner_grad_steps must be >= 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.stop_tol < 0:
            raise ValueError("stop_tol must be >= 0")

    @property
    def step_size(self) -> float:
        return self.eta if self.eta is not None else 1.0 / (1.0 + self.mu)

    @classmethod
    def for_subrate(cls, subrate: float, seed: int = 0, **overrides):
        """Config with the published operating point for this subrate."""
        if subrate <= 0.15:
            defaults = {"patch_size": 6, "lam": 0.082}
        else:
            defaults = {"patch_size": 8, "lam": 0.146}
        defaults.update(overrides)
        return cls(subrate=subrate, seed=seed, **defaults)


@dataclass
class IterationRecord:
    iteration: int
    rel_change: float
    psnr: float = None


@dataclass
class SolverState:
    """Padded-canvas iterates: estimate x, coded aggregate z, Bregman b."""

    x: np.ndarray
    z: np.ndarray
    b: np.ndarray
    iteration: int = 0
    trace: list = field(default_factory=list)

    def __post_init__(self):
        if not (self.x.shape == self.z.shape == self.b.shape):
            raise ValueError("x, z, b must share dimensions")


def hard_weight_from_config(cfg: SolverConfig, num_groups: int,
                            num_pixels: int) -> float:
    """Rank-penalty weight lam * (n*m*num_groups) / (mu * num_pixels)."""
    if num_groups < 1 or num_pixels < 1:
        raise ValueError("num_groups and num_pixels must be >= 1")
    n = cfg.patch_size * cfg.patch_size
    return cfg.lam * (n * cfg.group_size * num_groups) / (cfg.mu * num_pixels)


def x_gradient(x: np.ndarray, meas: Measurements, cfg: SolverConfig,
               z: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gradient of 1/2||y - Phi x||^2 + mu/2||x - z - b||^2 at x."""
    phi = meas.matrix.entries
    vecs = split_blocks(x, meas.matrix.block_dim)
    resid = vecs @ phi.T - meas.blocks
    data_grad = merge_blocks(resid @ phi, x.shape[0], x.shape[1],
                             meas.matrix.block_dim)
    return data_grad + cfg.mu * (x - z - b)


def x_update(state: SolverState, meas: Measurements,
             cfg: SolverConfig) -> np.ndarray:
    """Descend the data-consistency objective for inner_grad_steps steps."""
    x = state.x.copy()
    eta = cfg.step_size
    for _ in range(cfg.inner_grad_steps):
        x -= eta * x_gradient(x, meas, cfg, state.z, state.b)
    if not np.isfinite(x).all():
        raise DivergenceError("x update diverged; reduce eta")
    return x


def alpha_update(state: SolverState, model: GmmModel,
                 cfg: SolverConfig) -> np.ndarray:
    """Code every patch group of x - b and aggregate into a new z."""
    x_n = state.x - state.b
    height, width = x_n.shape
    positions = reference_positions(width, height, cfg.patch_size,
                                    cfg.stride)
    params = CoderParams(
        sigma_n=cfg.sigma_n,
        hard_weight=hard_weight_from_config(cfg, len(positions), x_n.size))
    pairs = []
    for pos in positions:
        idx = block_match(x_n, pos, cfg.patch_size, cfg.group_size,
                          cfg.window)
        group = gather_group(x_n, idx)
        coded, _ = code_group(group.data, model, params)
        pairs.append((coded, idx))
    z, _ = scatter_accumulate(pairs, width, height)
    return z


def b_update(state: SolverState) -> np.ndarray:
    """Bregman correction b - (x - z)."""
    return state.b - (state.x - state.z)


def _finalize(x: np.ndarray, meas: Measurements) -> np.ndarray:
    return np.clip(x[:meas.orig_height, :meas.orig_width], 0.0, 255.0)


def reconstruct(meas: Measurements, model: GmmModel, cfg: SolverConfig,
                reference: np.ndarray = None):
    """Run the full split Bregman loop.

    Stops when the relative change of x drops below stop_tol (checked
    from the second iteration on: the initial estimate is already
    measurement-consistent, so the very first x update is always a
    no-op) or, when a reference image is supplied and
    early_stop_on_reference is set, when its PSNR has dropped three
    iterations in a row - in that case the best-PSNR iterate is
    returned.  The result is cropped to the original size and clamped to
    [0, 255].

    Returns (image, list of IterationRecord).
    """
    if model.patch_size != cfg.patch_size:
        raise ValueError(
            f"model patch size {model.patch_size} != config patch size "
            f"{cfg.patch_size}")
    if reference is not None:
        reference = np.asarray(reference, dtype=np.float64)
        if reference.shape != (meas.orig_height, meas.orig_width):
            raise ValueError("reference dimensions do not match measurements")

    x0 = initial_estimate(meas, crop=False)
    state = SolverState(x=x0, z=x0.copy(), b=np.zeros_like(x0))
    best_psnr = -math.inf
    best_x = None
    prev_psnr = None
    drops = 0
    stopped_on_psnr = False

    for it in range(1, cfg.max_iter + 1):
        x_prev = state.x
        state.x = x_update(state, meas, cfg)
        state.z = alpha_update(state, model, cfg)
        state.b = b_update(state)
        state.iteration = it

        denom = float(np.linalg.norm(x_prev))
        delta = float(np.linalg.norm(state.x - x_prev))
        rel = delta / denom if denom > 0 else (0.0 if delta == 0 else math.inf)

        value = None
        if reference is not None:
            value = psnr(reference, _finalize(state.x, meas))
            if value > best_psnr:
                best_psnr = value
                best_x = state.x.copy()
            drops = drops + 1 if (prev_psnr is not None
                                  and value < prev_psnr) else 0
            prev_psnr = value
        state.trace.append(IterationRecord(iteration=it, rel_change=rel,
                                           psnr=value))

        if cfg.early_stop_on_reference and reference is not None \
                and drops >= 3:
            stopped_on_psnr = True
            break
        if it >= 2 and rel < cfg.stop_tol:
            break

    out = best_x if stopped_on_psnr and best_x is not None else state.x
    return _finalize(out, meas), state.trace


def trace_to_csv(trace) -> str:
    """CSV with columns iter, rel_change, psnr (psnr empty without a
    reference)."""
    lines = ["iter,rel_change,psnr"]
    for rec in trace:
        tail = "" if rec.psnr is None else repr(rec.psnr)
        lines.append(f"{rec.iteration},{rec.rel_change!r},{tail}")
    return "\n".join(lines) + "\n"
