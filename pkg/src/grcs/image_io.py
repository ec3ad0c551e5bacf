"""Binary PGM (P5) image I/O and the PSNR metric.

Only 8-bit maxval-255 P5 files are supported; that keeps every pixel
bit-exact without any external decoder.  Images are float64 arrays of
shape (height, width) on the [0, 255] scale.
"""

import math

import numpy as np

from .util import CorruptFileError, atomic_write_bytes


def _read_header_tokens(buf: bytes, count: int, start: int):
    """Read `count` whitespace-separated ASCII tokens, skipping
    '#'-comments, starting at `start`.  Returns (tokens, next_offset)."""
    tokens = []
    pos = start
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos] != 0x0A:
                pos += 1
            continue
        end = pos
        while end < len(buf) and not buf[end:end + 1].isspace():
            end += 1
        if end == pos:
            raise CorruptFileError("truncated PGM header")
        tokens.append(buf[pos:end])
        pos = end
    return tokens, pos


def load_pgm(path) -> np.ndarray:
    """Read a binary PGM file into a float64 image."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic = buf[:2]
    if magic == b"P2":
        raise CorruptFileError(f"{path}: ASCII PGM (P2) is not supported")
    if magic != b"P5":
        raise CorruptFileError(f"{path}: not a PGM file (magic {magic!r})")
    try:
        tokens, pos = _read_header_tokens(buf, 3, 2)
        width, height, maxval = (int(t) for t in tokens)
    except (CorruptFileError, ValueError) as exc:
        raise CorruptFileError(f"{path}: bad PGM header ({exc})") from exc
    if width < 1 or height < 1:
        raise CorruptFileError(f"{path}: bad dimensions {width}x{height}")
    if maxval != 255:
        raise CorruptFileError(f"{path}: only maxval 255 is supported, "
                               f"got {maxval}")
    pos += 1  # single whitespace byte after maxval
    payload = buf[pos:]
    if len(payload) != width * height:
        raise CorruptFileError(
            f"{path}: payload is {len(payload)} bytes, expected "
            f"{width * height}")
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    return pixels.reshape(height, width)


def save_pgm(img: np.ndarray, path) -> None:
    """Write a binary PGM file, rounding to the nearest integer and
    clamping to [0, 255]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("image must be 2-D")
    quantized = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + quantized.tobytes())


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB against peak 255.

    Identical images return +inf.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)
