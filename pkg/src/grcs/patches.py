"""Overlapping patch extraction, similarity grouping, and re-aggregation.

A patch group stacks a reference patch and its most similar neighbours
as the columns of an n x m matrix (n = patch_size**2, patches vectorized
column-major).  Aggregation averages every coded patch back into the
image, dividing each pixel by the number of patch instances covering it.

All tie-breaks and accumulation orders are fixed so that outputs are
bit-reproducible: candidates are enumerated row-major, distance ties
keep enumeration order, and aggregation adds groups in list order with
members in stored order.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass
class GroupIndex:
    """Patch positions of one group; member_pos[0] is the reference."""

    reference_pos: tuple
    member_pos: np.ndarray  # (m, 2) int array of (row, col) top-lefts
    patch_size: int
    widened: bool = False   # search fell back to the whole image

    def __post_init__(self):
        self.member_pos = np.asarray(self.member_pos, dtype=np.int64)
        if self.member_pos.ndim != 2 or self.member_pos.shape[1] != 2:
            raise ValueError("member_pos must have shape (m, 2)")
        if tuple(self.member_pos[0]) != tuple(self.reference_pos):
            raise ValueError("first member must equal reference_pos")


@dataclass
class PatchGroup:
    data: np.ndarray  # (patch_size**2, m)
    index: GroupIndex


def reference_positions(width: int, height: int, patch_size: int,
                        stride: int):
    """Row-major grid of patch top-lefts with the given stride.

    The last valid row/column is always included so the whole image is
    covered.  Returns an (count, 2) int array of (row, col).
    """
    if patch_size > min(width, height):
        raise ValueError(
            f"patch_size {patch_size} exceeds image {width}x{height}")
    if stride < 1:
        raise ValueError("stride must be >= 1")

    def axis_positions(extent):
        last = extent - patch_size
        pos = list(range(0, last + 1, stride))
        if pos[-1] != last:
            pos.append(last)
        return pos

    rows = axis_positions(height)
    cols = axis_positions(width)
    grid = [(r, c) for r in rows for c in cols]
    return np.asarray(grid, dtype=np.int64)


def _window_bounds(ref: int, window: int, limit: int):
    """Top-left range [lo, hi] of a window-wide span around ref.

    Near a border the span slides inward (it does not shrink) as long as
    [0, limit] is wide enough to hold it.
    """
    lo = max(0, ref - window // 2)
    hi = min(limit, lo + window - 1)
    lo = max(0, min(lo, hi - window + 1))
    return lo, hi


def block_match(img: np.ndarray, ref, patch_size: int, group_size: int,
                window: int) -> GroupIndex:
    """Find the group_size-1 nearest patches to the reference patch.

    Candidates are every fully-inside patch whose top-left lies in the
    window x window span centred on the reference top-left (slid inward
    at the borders), excluding the reference itself.  Similarity is squared
    Euclidean distance; ties keep row-major candidate order.  If the
    window holds fewer than group_size-1 candidates the search widens to
    the whole image; if the image itself has too few, the member list is
    padded with the reference position.  Both fallbacks set `widened`.
    """
    if group_size < 2:
        raise ValueError("group_size must be >= 2")
    if window < patch_size:
        raise ValueError("window must be >= patch_size")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    ref_r, ref_c = int(ref[0]), int(ref[1])
    if not (0 <= ref_r <= h - patch_size and 0 <= ref_c <= w - patch_size):
        raise ValueError(f"reference {ref} out of bounds")

    views = sliding_window_view(img, (patch_size, patch_size))
    ref_patch = views[ref_r, ref_c]
    needed = group_size - 1

    def candidates_in(r_lo, r_hi, c_lo, c_hi):
        slab = views[r_lo:r_hi + 1, c_lo:c_hi + 1]
        diff = slab - ref_patch
        dists = np.einsum("ijkl,ijkl->ij", diff, diff).ravel()
        rr, cc = np.meshgrid(np.arange(r_lo, r_hi + 1),
                             np.arange(c_lo, c_hi + 1), indexing="ij")
        pos = np.column_stack([rr.ravel(), cc.ravel()])
        keep = ~((pos[:, 0] == ref_r) & (pos[:, 1] == ref_c))
        return dists[keep], pos[keep]

    r_lo, r_hi = _window_bounds(ref_r, window, h - patch_size)
    c_lo, c_hi = _window_bounds(ref_c, window, w - patch_size)
    dists, pos = candidates_in(r_lo, r_hi, c_lo, c_hi)
    widened = False
    if len(dists) < needed:
        dists, pos = candidates_in(0, h - patch_size, 0, w - patch_size)
        widened = True

    if len(dists) >= needed:
        # stable sort keeps row-major enumeration order on distance ties
        order = np.argsort(dists, kind="stable")[:needed]
        members = pos[order]
    else:
        pad = np.tile([[ref_r, ref_c]], (needed - len(dists), 1))
        order = np.argsort(dists, kind="stable")
        members = np.vstack([pos[order], pad]) if len(dists) else pad
        widened = True

    member_pos = np.vstack([[[ref_r, ref_c]], members])
    return GroupIndex(reference_pos=(ref_r, ref_c), member_pos=member_pos,
                      patch_size=patch_size, widened=widened)


def gather_group(img: np.ndarray, idx: GroupIndex) -> PatchGroup:
    """Stack the indexed patches as columns (column-major within a patch)."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    p = idx.patch_size
    data = np.empty((p * p, len(idx.member_pos)), dtype=np.float64)
    for j, (r, c) in enumerate(idx.member_pos):
        if not (0 <= r <= h - p and 0 <= c <= w - p):
            raise ValueError(f"member position ({r}, {c}) out of bounds")
        data[:, j] = img[r:r + p, c:c + p].flatten(order="F")
    return PatchGroup(data=data, index=idx)


def scatter_accumulate(groups, width: int, height: int):
    """Average coded groups back into an image.

    `groups` is an iterable of (data, GroupIndex) pairs with data of
    shape (patch_size**2, m).  Every pixel becomes the sum of all patch
    values covering it divided by the coverage count; uncovered pixels
    are 0 and flagged in the returned boolean mask.

    Accumulation visits groups in iteration order and members in stored
    order, so the result is bit-reproducible.
    """
    total = np.zeros(height * width, dtype=np.float64)
    count = np.zeros(height * width, dtype=np.float64)
    for data, idx in groups:
        p = idx.patch_size
        rows = idx.member_pos[:, 0]
        cols = idx.member_pos[:, 1]
        if (rows < 0).any() or (cols < 0).any() or \
                (rows > height - p).any() or (cols > width - p).any():
            raise ValueError("group member out of bounds")
        # column-major patch entry (rr, cc) -> flat offset rr*width + cc
        rr = np.tile(np.arange(p), p)            # runs fast within a column
        cc = np.repeat(np.arange(p), p)
        entry_off = rr * width + cc
        base = rows * width + cols               # (m,)
        flat = base[None, :] + entry_off[:, None]  # (n, m)
        vals = np.asarray(data, dtype=np.float64)
        # ravel column-major so per-pixel addition order is member order
        total += np.bincount(flat.ravel(order="F"),
                             weights=vals.ravel(order="F"),
                             minlength=height * width)
        count += np.bincount(flat.ravel(order="F"),
                             minlength=height * width)
    uncovered = count == 0
    out = np.divide(total, count, out=np.zeros_like(total),
                    where=~uncovered)
    return out.reshape(height, width), uncovered.reshape(height, width)
