"""Joint coding of one noisy patch group.

A group is split into its mean patch and a residual matrix.  The
residual is soft-thresholded in the eigenbasis of the best-matching
mixture component (an external dictionary learned from clean images);
the recomposed group is then hard-thresholded in its own singular value
basis (the internal, self-adaptive dictionary).  The denoised group is
rebuilt from the surviving singular values.

Per-coefficient soft thresholds are 2*sqrt(2)*sigma_n^2 / sigma_i with
sigma_i the prior standard deviation of that coefficient (square root of
the component eigenvalue, floored).  Singular values survive the hard
threshold only if strictly larger than sqrt(2*hard_weight); a value
exactly at the threshold is zeroed.
"""

from dataclasses import dataclass

import numpy as np

from .gmm import GmmModel, component_dictionary, select_component

SOFT_COEF = 2.0 * np.sqrt(2.0)


@dataclass
class CoderParams:
    sigma_n: float              # assumed noise level of the group
    hard_weight: float          # weight of the rank penalty
    sigma_floor: float = 1e-4   # floor for prior standard deviations

    def __post_init__(self):
        if self.sigma_n < 0:
            raise ValueError("sigma_n must be >= 0")
        if self.hard_weight <= 0:
            raise ValueError("hard_weight must be > 0")
        if self.sigma_floor <= 0:
            raise ValueError("sigma_floor must be > 0")


@dataclass
class GroupSplit:
    mean_patch: np.ndarray  # (n,)
    residual: np.ndarray    # (n, m), rows sum to zero


@dataclass
class GroupCodes:
    residual_codes: np.ndarray    # (n, m) soft-thresholded coefficients
    selected_component: int
    singular_codes: np.ndarray    # hard-thresholded singular values
    u: np.ndarray                 # left singular vectors (n, r)
    vt: np.ndarray                # right singular vectors transposed (r, m)


def split_group(group: np.ndarray) -> GroupSplit:
    """Split a group into its mean patch and residual; the sum of the two
    reproduces the group exactly."""
    group = np.asarray(group, dtype=np.float64)
    if group.ndim != 2 or group.shape[1] < 1:
        raise ValueError("group must be an (n, m) matrix with m >= 1")
    mean = group.mean(axis=1)
    return GroupSplit(mean_patch=mean, residual=group - mean[:, None])


def code_residual(residual: np.ndarray, eigvecs: np.ndarray,
                  eigvals: np.ndarray, params: CoderParams) -> np.ndarray:
    """Soft-threshold the residual coefficients in the component basis.

    Coefficient i of every column is shrunk by 2*sqrt(2)*sigma_n^2 /
    max(sqrt(eigvals[i]), sigma_floor).
    """
    coef = eigvecs.T @ np.asarray(residual, dtype=np.float64)
    sig = np.maximum(np.sqrt(np.maximum(eigvals, 0.0)), params.sigma_floor)
    thresh = SOFT_COEF * params.sigma_n ** 2 / sig
    return np.sign(coef) * np.maximum(np.abs(coef) - thresh[:, None], 0.0)


def internal_dictionary(recomposed: np.ndarray):
    """Thin SVD of the recomposed group, singular values descending.

    Left singular vectors follow the same sign convention as the mixture
    eigenvectors (largest-magnitude entry positive); the matching rows of
    vt are flipped with them so u @ diag(s) @ vt is unchanged.
    """
    recomposed = np.asarray(recomposed, dtype=np.float64)
    if not np.isfinite(recomposed).all():
        raise ValueError("group contains non-finite values")
    u, s, vt = np.linalg.svd(recomposed, full_matrices=False)
    idx = np.abs(u).argmax(axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, s, vt * signs[:, None]


def code_group_internal(singulars: np.ndarray, hard_weight: float) -> np.ndarray:
    """Hard-threshold singular values at sqrt(2 * hard_weight).

    Strict comparison: values equal to the threshold are zeroed.
    """
    if hard_weight <= 0:
        raise ValueError("hard_weight must be > 0")
    singulars = np.asarray(singulars, dtype=np.float64)
    thresh = np.sqrt(2.0 * hard_weight)
    return np.where(np.abs(singulars) > thresh, singulars, 0.0)


def code_group(group: np.ndarray, model: GmmModel, params: CoderParams):
    """Run the full coding pipeline on one group.

    split -> component selection -> residual soft threshold -> recompose
    mean + coded residual -> SVD -> singular hard threshold -> rebuild.
    Returns (coded group, GroupCodes).  One pass; the outer solver
    provides the iteration.
    """
    split = split_group(group)
    k = select_component(split.residual, model, params.sigma_n)
    eigvecs, eigvals = component_dictionary(model, k)
    residual_codes = code_residual(split.residual, eigvecs, eigvals, params)
    recomposed = split.mean_patch[:, None] + eigvecs @ residual_codes
    u, s, vt = internal_dictionary(recomposed)
    singular_codes = code_group_internal(s, params.hard_weight)
    coded = (u * singular_codes) @ vt
    codes = GroupCodes(residual_codes=residual_codes, selected_component=k,
                       singular_codes=singular_codes, u=u, vt=vt)
    return coded, codes
