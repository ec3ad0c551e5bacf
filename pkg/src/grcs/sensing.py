"""Block-based compressive sampling.

Images are sampled block by block: the image is padded by edge
replication until both sides divide `block_dim`, every block is
vectorized column-major, and each block vector is projected by a shared
row-orthonormal Gaussian matrix.  Blocks are traversed in row-major
order.  The vectorization and traversal orders are part of the `.jcsm`
file contract and must not change.

Randomness comes from numpy's PCG64 generator seeded with the 64-bit
`seed`; rows are drawn i.i.d. standard normal and then orthonormalized
by QR with the sign convention diag(R) > 0.  The measurement file stores
the matrix explicitly, so replaying a file never depends on the RNG.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .util import CorruptFileError, atomic_write_bytes

JCSM_MAGIC = b"JCSM"
JCSM_VERSION = 1

ORTHONORMALITY_TOL = 1e-10


@dataclass
class MeasurementMatrix:
    """Row-orthonormal sensing operator for one block.

    entries has shape (rows, block_dim**2) with rows = round(subrate *
    block_dim**2); entries @ entries.T must equal the identity to within
    1e-10 Frobenius.
    """

    block_dim: int
    subrate: float
    seed: int
    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.ascontiguousarray(self.entries, dtype=np.float64)
        n = self.block_dim * self.block_dim
        if self.entries.ndim != 2 or self.entries.shape[1] != n:
            raise ValueError(
                f"matrix shape {self.entries.shape} does not match "
                f"block_dim {self.block_dim}")
        if not 1 <= self.rows <= n:
            raise ValueError(f"rows must lie in [1, {n}], got {self.rows}")
        gram = self.entries @ self.entries.T
        err = np.linalg.norm(gram - np.eye(self.rows))
        if err > ORTHONORMALITY_TOL * max(1.0, self.rows):
            raise ValueError(f"matrix rows are not orthonormal (defect {err:g})")

    @property
    def rows(self) -> int:
        return self.entries.shape[0]


@dataclass
class Measurements:
    """Per-block measurement vectors plus the matrix that produced them."""

    matrix: MeasurementMatrix
    orig_width: int
    orig_height: int
    padded_width: int
    padded_height: int
    blocks: np.ndarray  # (num_blocks, rows), row-major block order

    def __post_init__(self):
        self.blocks = np.ascontiguousarray(self.blocks, dtype=np.float64)
        bd = self.matrix.block_dim
        if self.padded_width % bd or self.padded_height % bd:
            raise ValueError("padded dimensions must divide block_dim")
        expected = (self.padded_width // bd) * (self.padded_height // bd)
        if self.blocks.shape != (expected, self.matrix.rows):
            raise ValueError(
                f"blocks shape {self.blocks.shape}, expected "
                f"({expected}, {self.matrix.rows})")


def generate_measurement_matrix(block_dim: int, subrate: float,
                                seed: int) -> MeasurementMatrix:
    """Draw the seeded Gaussian block operator and orthonormalize its rows.

    rows = round(subrate * block_dim**2).  Identical arguments give a
    bit-identical matrix.
    """
    if block_dim < 2:
        raise ValueError(f"block_dim must be >= 2, got {block_dim}")
    if not 0.0 < subrate <= 1.0:
        raise ValueError(f"subrate must lie in (0, 1], got {subrate}")
    n = block_dim * block_dim
    rows = int(round(subrate * n))
    if rows == 0:
        raise ValueError(f"subrate {subrate} rounds to zero rows for "
                         f"block_dim {block_dim}")
    rng = np.random.Generator(np.random.PCG64(seed))
    gauss = rng.standard_normal((rows, n))
    # QR of the transpose orthonormalizes the rows; fixing diag(R) > 0
    # makes the result unique and reproducible.
    q, r = np.linalg.qr(gauss.T)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    entries = (q * signs).T
    return MeasurementMatrix(block_dim=block_dim, subrate=float(subrate),
                             seed=int(seed), entries=entries)


def pad_to_blocks(img: np.ndarray, block_dim: int) -> np.ndarray:
    """Edge-replicate the bottom/right borders until both dims divide
    block_dim."""
    h, w = img.shape
    pad_h = (-h) % block_dim
    pad_w = (-w) % block_dim
    if pad_h == 0 and pad_w == 0:
        return np.asarray(img, dtype=np.float64)
    return np.pad(np.asarray(img, dtype=np.float64),
                  ((0, pad_h), (0, pad_w)), mode="edge")


def split_blocks(img: np.ndarray, block_dim: int) -> np.ndarray:
    """Cut a padded image into block vectors.

    Returns shape (num_blocks, block_dim**2); blocks row-major, pixels
    column-major within each block.
    """
    h, w = img.shape
    if h % block_dim or w % block_dim:
        raise ValueError("image dimensions must divide block_dim")
    by, bx = h // block_dim, w // block_dim
    tiles = img.reshape(by, block_dim, bx, block_dim).transpose(0, 2, 1, 3)
    return tiles.transpose(0, 1, 3, 2).reshape(by * bx, block_dim * block_dim)


def merge_blocks(vecs: np.ndarray, height: int, width: int,
                 block_dim: int) -> np.ndarray:
    """Inverse of split_blocks."""
    by, bx = height // block_dim, width // block_dim
    tiles = vecs.reshape(by, bx, block_dim, block_dim).transpose(0, 1, 3, 2)
    return tiles.transpose(0, 2, 1, 3).reshape(height, width)


def sample_image(img: np.ndarray, mat: MeasurementMatrix) -> Measurements:
    """Measure every block of `img` with `mat` (padding as needed)."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    padded = pad_to_blocks(img, mat.block_dim)
    vecs = split_blocks(padded, mat.block_dim)
    blocks = vecs @ mat.entries.T
    return Measurements(matrix=mat, orig_width=w, orig_height=h,
                        padded_width=padded.shape[1],
                        padded_height=padded.shape[0], blocks=blocks)


def adjoint(meas: Measurements, crop: bool = True) -> np.ndarray:
    """Apply the transposed operator blockwise and reassemble the image."""
    vecs = meas.blocks @ meas.matrix.entries
    img = merge_blocks(vecs, meas.padded_height, meas.padded_width,
                       meas.matrix.block_dim)
    if crop:
        return img[:meas.orig_height, :meas.orig_width]
    return img


def initial_estimate(meas: Measurements, crop: bool = True) -> np.ndarray:
    """Minimum-energy estimate consistent with the measurements.

    With row-orthonormal sensing this is simply the adjoint applied to
    the block measurements, and it reproduces them exactly when
    re-sampled.
    """
    return adjoint(meas, crop=crop)


def save_measurements(meas: Measurements, path) -> None:
    """Serialize to the little-endian `.jcsm` layout."""
    mat = meas.matrix
    header = struct.pack(
        "<4sIIIIIIIQd", JCSM_MAGIC, JCSM_VERSION, mat.block_dim, mat.rows,
        meas.orig_width, meas.orig_height, meas.padded_width,
        meas.padded_height, mat.seed, mat.subrate)
    body = (mat.entries.astype("<f8").tobytes()
            + meas.blocks.astype("<f8").tobytes())
    atomic_write_bytes(path, header + body)


def load_measurements(path) -> Measurements:
    """Read a `.jcsm` file, validating magic, version, and payload size."""
    with open(path, "rb") as fh:
        raw = fh.read()
    header_size = struct.calcsize("<4sIIIIIIIQd")
    if len(raw) < header_size:
        raise CorruptFileError(f"{path}: truncated header")
    (magic, version, block_dim, rows, orig_w, orig_h, pad_w, pad_h, seed,
     subrate) = struct.unpack_from("<4sIIIIIIIQd", raw, 0)
    if magic != JCSM_MAGIC:
        raise CorruptFileError(f"{path}: bad magic {magic!r}")
    if version != JCSM_VERSION:
        raise CorruptFileError(f"{path}: unsupported version {version}")
    n = block_dim * block_dim
    if block_dim < 2 or pad_w % block_dim or pad_h % block_dim:
        raise CorruptFileError(f"{path}: inconsistent block geometry")
    num_blocks = (pad_w // block_dim) * (pad_h // block_dim)
    expected = header_size + 8 * rows * n + 8 * num_blocks * rows
    if len(raw) != expected:
        raise CorruptFileError(
            f"{path}: payload is {len(raw)} bytes, expected {expected}")
    entries = np.frombuffer(raw, dtype="<f8", count=rows * n,
                            offset=header_size).reshape(rows, n)
    blocks = np.frombuffer(raw, dtype="<f8", count=num_blocks * rows,
                           offset=header_size + 8 * rows * n)
    try:
        mat = MeasurementMatrix(block_dim=block_dim, subrate=subrate,
                                seed=seed, entries=entries.copy())
    except ValueError as exc:
        raise CorruptFileError(f"{path}: {exc}") from exc
    return Measurements(matrix=mat, orig_width=orig_w, orig_height=orig_h,
                        padded_width=pad_w, padded_height=pad_h,
                        blocks=blocks.reshape(num_blocks, rows).copy())
