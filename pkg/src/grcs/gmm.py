"""Zero-mean Gaussian mixture prior over residual patch groups.

Training data are groups of similar patches with the group mean patch
subtracted, so every component is zero-mean and only covariances and
mixing weights are learned.  All patches of one group are tied to the
same component, which makes the group (not the patch) the EM unit: the
responsibility of component k for group g multiplies the k-densities of
all of g's columns.

Every density is evaluated in the log domain through the component
eigendecompositions; with 60-patch groups the plain product of
per-patch densities underflows long before float64 runs out.

Covariance updates divide by (group_size * soft count) so that each
component stays a per-patch covariance, and a small ridge is added at
every M step to keep the components invertible.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .patches import block_match, gather_group
from .util import CorruptFileError, atomic_write_bytes

JGMM_MAGIC = b"JGMM"
JGMM_VERSION = 1

LOG_2PI = float(np.log(2.0 * np.pi))

# relative log-likelihood change that counts as EM convergence
EM_REL_TOL = 1e-6
# soft count under which a component is considered dead and reseeded
EMPTY_COMPONENT_TOL = 1e-8


@dataclass
class ResidualTrainingSet:
    """Mean-subtracted patch groups stacked as an (N, n, M) array."""

    groups: np.ndarray
    patch_size: int
    group_size: int

    def __post_init__(self):
        self.groups = np.ascontiguousarray(self.groups, dtype=np.float64)
        n = self.patch_size * self.patch_size
        if self.groups.ndim != 3 or self.groups.shape[1:] != (n, self.group_size):
            raise ValueError(
                f"groups shape {self.groups.shape}, expected (N, {n}, "
                f"{self.group_size})")
        col_means = self.groups.mean(axis=2)
        worst = np.abs(col_means).max() if col_means.size else 0.0
        if worst > 1e-10:
            raise ValueError(
                f"groups are not mean-subtracted (max column mean {worst:g})")

    def __len__(self):
        return self.groups.shape[0]

    @property
    def patch_dim(self) -> int:
        return self.groups.shape[1]


@dataclass
class GmmComponent:
    """One zero-mean Gaussian: weight, covariance, and its eigensystem.

    eigvecs columns are the eigenvectors (descending eigenvalues); each
    column's largest-magnitude entry is positive so decompositions are
    reproducible across runs.
    """

    weight: float
    covariance: np.ndarray
    eigvecs: np.ndarray
    eigvals: np.ndarray

    def __post_init__(self):
        self.covariance = np.asarray(self.covariance, dtype=np.float64)
        self.eigvecs = np.asarray(self.eigvecs, dtype=np.float64)
        self.eigvals = np.asarray(self.eigvals, dtype=np.float64)
        n = self.covariance.shape[0]
        if not 0.0 < self.weight <= 1.0:
            raise ValueError(f"weight must lie in (0, 1], got {self.weight}")
        if np.any(np.diff(self.eigvals) > 0):
            raise ValueError("eigenvalues must be descending")
        if self.eigvals[-1] < -1e-12:
            raise ValueError("covariance has a negative eigenvalue")
        if np.linalg.norm(self.eigvecs.T @ self.eigvecs - np.eye(n)) > 1e-10 * n:
            raise ValueError("eigenvectors are not orthonormal")
        recon = (self.eigvecs * self.eigvals) @ self.eigvecs.T
        if np.linalg.norm(recon - self.covariance) > 1e-8 * max(
                1.0, float(np.linalg.norm(self.covariance))):
            raise ValueError("eigendecomposition does not reproduce covariance")


@dataclass
class GmmModel:
    components: list
    patch_size: int
    group_size: int
    seed: int = 0
    sample_count: int = 0
    em_iters_run: int = 0
    loglik_trace: list = field(default_factory=list)

    def __post_init__(self):
        total = sum(c.weight for c in self.components)
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"mixing weights sum to {total!r}, not 1")

    @property
    def num_components(self) -> int:
        return len(self.components)

    @property
    def patch_dim(self) -> int:
        return self.components[0].covariance.shape[0]

    def stacks(self):
        """(log_weights, eigvecs (K,n,n), eigvals (K,n)) cached views."""
        cached = self.__dict__.get("_stacks")
        if cached is None:
            cached = (
                np.log([c.weight for c in self.components]),
                np.stack([c.eigvecs for c in self.components]),
                np.stack([c.eigvals for c in self.components]),
            )
            self.__dict__["_stacks"] = cached
        return cached


@dataclass
class EmState:
    """Per-iteration E-step output."""

    responsibilities: np.ndarray  # (N, K), rows sum to 1
    counts: np.ndarray            # (K,) soft group counts
    log_likelihood: float


def _fix_eigvector_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip eigenvector columns so each largest-magnitude entry is positive."""
    idx = np.abs(vecs).argmax(axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _eigh_descending(cov: np.ndarray):
    vals, vecs = np.linalg.eigh(cov)
    # stable sort on -vals keeps the natural order of tied eigenvalues
    order = np.argsort(-vals, kind="stable")
    return np.maximum(vals[order], 0.0), _fix_eigvector_signs(vecs[:, order])


def collect_residual_groups(images, patch_size: int, group_size: int,
                            window: int, count: int,
                            seed: int) -> ResidualTrainingSet:
    """Sample residual groups from clean images.

    Reference positions are drawn uniformly (image, row, col) with the
    given seed; each group is matched, gathered, and centred by
    subtracting its mean patch.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if not images:
        raise ValueError("need at least one training image")
    images = [np.asarray(img, dtype=np.float64) for img in images]
    for img in images:
        if min(img.shape) < patch_size:
            raise ValueError("every training image must fit one patch")
    rng = np.random.Generator(np.random.PCG64(seed))
    n = patch_size * patch_size
    out = np.empty((count, n, group_size), dtype=np.float64)
    for i in range(count):
        img = images[int(rng.integers(len(images)))]
        h, w = img.shape
        r = int(rng.integers(h - patch_size + 1))
        c = int(rng.integers(w - patch_size + 1))
        idx = block_match(img, (r, c), patch_size, group_size, window)
        data = gather_group(img, idx).data
        out[i] = data - data.mean(axis=1, keepdims=True)
    return ResidualTrainingSet(groups=out, patch_size=patch_size,
                               group_size=group_size)


def _flatten_patches(data: ResidualTrainingSet) -> np.ndarray:
    """(n, N*M) column view of all patches, group-major."""
    n = data.patch_dim
    return np.ascontiguousarray(
        data.groups.transpose(1, 0, 2).reshape(n, -1))


def _group_log_densities(x_flat, num_groups, group_size, log_w, vecs, vals):
    """log [pi_k * prod_m N(x_m | 0, Sigma_k)] for every (group, component)."""
    n = x_flat.shape[0]
    k_total = len(log_w)
    scores = np.empty((num_groups, k_total), dtype=np.float64)
    for k in range(k_total):
        z = vecs[k].T @ x_flat
        quad = (z * z / vals[k][:, None]).sum(axis=0)
        quad = quad.reshape(num_groups, group_size).sum(axis=1)
        logdet = float(np.log(vals[k]).sum())
        scores[:, k] = log_w[k] - 0.5 * (
            group_size * (n * LOG_2PI + logdet) + quad)
    return scores


def responsibilities(data: ResidualTrainingSet, model: GmmModel) -> EmState:
    """E step: posterior component probabilities for every group."""
    log_w, vecs, vals = model.stacks()
    scores = _group_log_densities(_flatten_patches(data), len(data),
                                  data.group_size, log_w, vecs, vals)
    top = scores.max(axis=1, keepdims=True)
    shifted = np.exp(scores - top)
    norm = shifted.sum(axis=1, keepdims=True)
    gamma = shifted / norm
    loglik = float((top[:, 0] + np.log(norm[:, 0])).sum())
    return EmState(responsibilities=gamma, counts=gamma.sum(axis=0),
                   log_likelihood=loglik)


def log_likelihood(data: ResidualTrainingSet, model: GmmModel) -> float:
    """Total mixture log-likelihood of the training set."""
    if data.patch_dim != model.patch_dim:
        raise ValueError("patch dimension mismatch between data and model")
    return responsibilities(data, model).log_likelihood


def _init_parameters(data: ResidualTrainingSet, num_components, ridge, rng):
    """k-means++ seeding on per-group second-moment signatures, then one
    hard assignment to form the starting covariances."""
    num_groups = len(data)
    signatures = (data.groups ** 2).mean(axis=2)  # (N, n)

    centers = [int(rng.integers(num_groups))]
    d2 = ((signatures - signatures[centers[0]]) ** 2).sum(axis=1)
    for _ in range(1, num_components):
        total = d2.sum()
        if total <= 0.0:
            centers.append(int(rng.integers(num_groups)))
        else:
            probs = d2 / total
            centers.append(int(rng.choice(num_groups, p=probs)))
        d2 = np.minimum(d2, ((signatures - signatures[centers[-1]]) ** 2)
                        .sum(axis=1))

    center_sig = signatures[centers]
    dists = ((signatures[:, None, :] - center_sig[None, :, :]) ** 2).sum(axis=2)
    assign = dists.argmin(axis=1)

    n = data.patch_dim
    m = data.group_size
    x_flat = _flatten_patches(data)
    weights = np.empty(num_components)
    covs = np.empty((num_components, n, n))
    for k in range(num_components):
        members = assign == k
        if not members.any():
            members = np.zeros(num_groups, dtype=bool)
            members[centers[k]] = True
        cols = np.repeat(members, m)
        xk = x_flat[:, cols]
        scatter = xk @ xk.T / (m * members.sum())
        covs[k] = 0.5 * (scatter + scatter.T) + ridge * np.eye(n)
        weights[k] = members.sum()
    weights /= weights.sum()
    return weights, covs


def train_gmm(data: ResidualTrainingSet, num_components: int,
              em_iters: int = 100, ridge: float = 1e-3,
              seed: int = 0) -> GmmModel:
    """Fit the zero-mean mixture by EM.

    Components whose soft count collapses are reseeded from the group
    the current model explains worst.  Training stops after `em_iters`
    parameter updates or when the relative log-likelihood change drops
    below 1e-6.  The recorded trace holds the log-likelihood of the
    parameters at the start of every iteration plus the final model.
    """
    if num_components < 1:
        raise ValueError("need at least one component")
    if len(data) < num_components:
        raise ValueError("need at least as many groups as components")
    if em_iters < 1:
        raise ValueError("em_iters must be >= 1")
    if ridge <= 0:
        raise ValueError("ridge must be positive")

    rng = np.random.Generator(np.random.PCG64(seed))
    weights, covs = _init_parameters(data, num_components, ridge, rng)
    eigs = [_eigh_descending(c) for c in covs]
    vals = np.stack([e[0] for e in eigs])
    vecs = np.stack([e[1] for e in eigs])

    num_groups = len(data)
    m = data.group_size
    n = data.patch_dim
    x_flat = _flatten_patches(data)
    eye = np.eye(n)
    trace = []
    iters_run = 0

    for _ in range(em_iters):
        scores = _group_log_densities(x_flat, num_groups, m,
                                      np.log(weights), vecs, vals)
        top = scores.max(axis=1, keepdims=True)
        shifted = np.exp(scores - top)
        norm = shifted.sum(axis=1, keepdims=True)
        gamma = shifted / norm
        loglik = float((top[:, 0] + np.log(norm[:, 0])).sum())
        trace.append(loglik)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < \
                EM_REL_TOL * abs(trace[-2]):
            break

        counts = gamma.sum(axis=0)
        dead = np.flatnonzero(counts < EMPTY_COMPONENT_TOL)
        if dead.size:
            # hand each dead component a group the model explains worst
            order = np.argsort(gamma.max(axis=1), kind="stable")
            for j, k in enumerate(dead):
                g = int(order[j % len(order)])
                gamma[g, :] = 0.0
                gamma[g, k] = 1.0
            counts = gamma.sum(axis=0)

        weights = counts / counts.sum()
        for k in range(num_components):
            wk = np.repeat(gamma[:, k], m)
            scatter = (x_flat * wk) @ x_flat.T / (m * counts[k])
            covs[k] = 0.5 * (scatter + scatter.T) + ridge * eye
            vals[k], vecs[k] = _eigh_descending(covs[k])
        iters_run += 1

    components = [
        GmmComponent(weight=float(weights[k]), covariance=covs[k],
                     eigvecs=vecs[k], eigvals=vals[k])
        for k in range(num_components)
    ]
    model = GmmModel(components=components, patch_size=data.patch_size,
                     group_size=data.group_size, seed=int(seed),
                     sample_count=num_groups, em_iters_run=iters_run,
                     loglik_trace=trace)
    # final log-likelihood so the trace covers the returned parameters
    if iters_run and iters_run == len(trace):
        model.loglik_trace = trace + [log_likelihood(data, model)]
    return model


def select_component(residual: np.ndarray, model: GmmModel,
                     sigma_n: float) -> int:
    """Most probable component for a residual group under noise sigma_n.

    Maximizes weight_k * prod_i N(column_i | 0, Sigma_k + sigma_n^2 I) in
    the log domain; ties resolve to the lowest index.
    """
    if sigma_n < 0:
        raise ValueError("sigma_n must be >= 0")
    residual = np.asarray(residual, dtype=np.float64)
    log_w, vecs, vals = model.stacks()
    z = np.matmul(vecs.transpose(0, 2, 1), residual[None, :, :])  # (K,n,m)
    noisy = vals + sigma_n ** 2  # (K, n)
    quad = (z * z / noisy[:, :, None]).sum(axis=(1, 2))
    logdet = np.log(noisy).sum(axis=1)
    m = residual.shape[1]
    scores = log_w - 0.5 * (m * (residual.shape[0] * LOG_2PI + logdet) + quad)
    return int(scores.argmax())


def component_dictionary(model: GmmModel, k: int):
    """Eigenvectors (columns) and descending eigenvalues of component k."""
    if not 0 <= k < model.num_components:
        raise IndexError(f"component index {k} out of range")
    comp = model.components[k]
    return comp.eigvecs, comp.eigvals


def save_model(model: GmmModel, path) -> None:
    """Serialize to the little-endian `.jgmm` layout (eigensystem only;
    covariances are rebuilt on load)."""
    n = model.patch_dim
    parts = [struct.pack("<4sIIIIQ", JGMM_MAGIC, JGMM_VERSION, n,
                         model.num_components, model.group_size,
                         model.seed)]
    for comp in model.components:
        parts.append(struct.pack("<d", comp.weight))
        parts.append(comp.eigvals.astype("<f8").tobytes())
        parts.append(comp.eigvecs.astype("<f8").tobytes(order="F"))
    atomic_write_bytes(path, b"".join(parts))


def load_model(path) -> GmmModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    header_size = struct.calcsize("<4sIIIIQ")
    if len(raw) < header_size:
        raise CorruptFileError(f"{path}: truncated header")
    magic, version, n, k_total, group_size, seed = struct.unpack_from(
        "<4sIIIIQ", raw, 0)
    if magic != JGMM_MAGIC:
        raise CorruptFileError(f"{path}: bad magic {magic!r}")
    if version != JGMM_VERSION:
        raise CorruptFileError(f"{path}: unsupported version {version}")
    if n < 1 or k_total < 1:
        raise CorruptFileError(f"{path}: bad dimensions n={n} K={k_total}")
    per_comp = 8 * (1 + n + n * n)
    expected = header_size + k_total * per_comp
    if len(raw) != expected:
        raise CorruptFileError(
            f"{path}: payload is {len(raw)} bytes, expected {expected}")
    patch_size = int(round(np.sqrt(n)))
    if patch_size * patch_size != n:
        raise CorruptFileError(f"{path}: patch dimension {n} is not square")

    components = []
    offset = header_size
    for _ in range(k_total):
        (weight,) = struct.unpack_from("<d", raw, offset)
        offset += 8
        vals = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).copy()
        offset += 8 * n
        vecs = np.frombuffer(raw, dtype="<f8", count=n * n,
                             offset=offset).reshape((n, n), order="F").copy()
        offset += 8 * n * n
        if np.linalg.norm(vecs.T @ vecs - np.eye(n)) > 1e-6:
            raise CorruptFileError(f"{path}: stored eigenvectors are not "
                                   "orthonormal")
        cov = (vecs * vals) @ vecs.T
        cov = 0.5 * (cov + cov.T)
        try:
            components.append(GmmComponent(weight=weight, covariance=cov,
                                           eigvecs=vecs, eigvals=vals))
        except ValueError as exc:
            raise CorruptFileError(f"{path}: {exc}") from exc
    try:
        return GmmModel(components=components, patch_size=patch_size,
                        group_size=group_size, seed=seed)
    except ValueError as exc:
        raise CorruptFileError(f"{path}: {exc}") from exc
