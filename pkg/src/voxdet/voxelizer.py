"""Two-phase deterministic voxelization of point clouds.

Phase A quantizes every point to a cell and accumulates per-voxel feature
sums and counts (dense buffers under a memory budget, keyed accumulation
above it). Phase B deduplicates voxel indices in order of first appearance
and divides sums by counts. ``voxelize`` is the vectorized implementation,
``voxelize_serial`` a plain-dict reference with identical semantics that
doubles as the determinism oracle.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, InternalError

# Feature layout of a point row: x, y, z, clamped intensity, elongation,
# time lag vs. the current frame.
POINT_DIM = 6

# Above this many grid cells phase A switches from dense accumulation
# buffers to keyed (hash-map) accumulation; outputs are identical.
DENSE_CELL_BUDGET = 1 << 20


@dataclass(frozen=True)
class VoxelGrid:
    """Detection volume: per-axis range, cell size and cell counts."""

    range_min: tuple[float, float, float]
    range_max: tuple[float, float, float]
    cell: tuple[float, float, float]
    dims: tuple[int, int, int] = field(init=False)

    def __post_init__(self):
        dims = []
        for a in range(3):
            lo, hi, g = self.range_min[a], self.range_max[a], self.cell[a]
            if g <= 0:
                raise InputError(f"cell size must be strictly positive, got {g} on axis {a}")
            if hi <= lo:
                raise InputError(f"range min must be below max, got [{lo}, {hi}) on axis {a}")
            n = round((hi - lo) / g)
            if n < 1 or abs(lo + n * g - hi) > 1e-6:
                raise InputError(
                    f"range [{lo}, {hi}) is not an integer number of {g} cells on axis {a}"
                )
            dims.append(int(n))
        object.__setattr__(self, "dims", tuple(dims))

    @property
    def num_cells(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]


@dataclass
class SparseVoxels:
    """Non-empty voxels: integer coords, mean features and point counts.

    Voxels are ordered by first appearance of their cell in the input
    stream. ``dropped_points`` / ``dropped_voxels`` count what the
    training-time caps discarded (always 0 when uncapped).
    """

    coords: np.ndarray  # (M, 3) int32 cell indices
    features: np.ndarray  # (M, D) float64 per-voxel means
    counts: np.ndarray  # (M,) int64
    dropped_points: int = 0
    dropped_voxels: int = 0

    def __len__(self) -> int:
        return self.coords.shape[0]


def quantize(point, grid: VoxelGrid):
    """Cell (c_x, c_y, c_z) of a single point, or None when out of range."""
    cells, ok = quantize_points(np.asarray(point, dtype=np.float64).reshape(1, -1), grid)
    if not ok[0]:
        return None
    return tuple(int(c) for c in cells[0])


def quantize_points(points: np.ndarray, grid: VoxelGrid):
    """Vectorized quantization of (N, >=3) points.

    Returns (cells, in_range): cells is (N, 3) int64 with
    c_a = floor((coord_a - range_min_a) / g_a); rows where in_range is
    False hold no meaningful cell. The range test is half-open
    [min, max) and done on the raw coordinates so the boundary behavior
    does not depend on floating-point division.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] < 3:
        raise InputError("points must be an (N, >=3) array")
    lo = np.array(grid.range_min)
    hi = np.array(grid.range_max)
    xyz = pts[:, :3]
    in_range = np.all((xyz >= lo) & (xyz < hi), axis=1)
    cells = np.floor((xyz - lo) / np.array(grid.cell)).astype(np.int64)
    np.clip(cells, 0, np.array(grid.dims, dtype=np.int64) - 1, out=cells)
    return cells, in_range


def voxel_index(cell, grid: VoxelGrid) -> int:
    """Linear index i_v = c_x + c_y * v_x + c_z * v_x * v_y."""
    cx, cy, cz = (int(c) for c in cell)
    vx, vy, vz = grid.dims
    if not (0 <= cx < vx and 0 <= cy < vy and 0 <= cz < vz):
        raise InternalError(f"cell {cell} outside grid dims {grid.dims}")
    return cx + cy * vx + cz * vx * vy


def voxel_cell(index: int, grid: VoxelGrid) -> tuple[int, int, int]:
    """Inverse of :func:`voxel_index`."""
    vx, vy, vz = grid.dims
    if not (0 <= index < vx * vy * vz):
        raise InternalError(f"linear index {index} outside grid {grid.dims}")
    cz, rem = divmod(index, vx * vy)
    cy, cx = divmod(rem, vx)
    return int(cx), int(cy), int(cz)


def _linear_indices(cells: np.ndarray, grid: VoxelGrid) -> np.ndarray:
    vx, vy, _ = grid.dims
    return cells[:, 0] + cells[:, 1] * vx + cells[:, 2] * (vx * vy)


def _first_appearance(iv: np.ndarray):
    """Unique linear ids in order of first appearance plus per-point slot."""
    uniq, first_idx, inverse = np.unique(iv, return_index=True, return_inverse=True)
    order = np.argsort(first_idx, kind="stable")
    rank = np.empty(uniq.shape[0], dtype=np.int64)
    rank[order] = np.arange(uniq.shape[0])
    return uniq[order], rank[inverse]


def _occurrence_within_voxel(slot: np.ndarray) -> np.ndarray:
    """For every point, how many earlier input points share its voxel."""
    n = slot.shape[0]
    perm = np.argsort(slot, kind="stable")
    s = slot[perm]
    new_group = np.concatenate(([True], s[1:] != s[:-1]))
    starts = np.flatnonzero(new_group)
    sizes = np.diff(np.concatenate((starts, [n])))
    occ_sorted = np.arange(n) - np.repeat(starts, sizes)
    occ = np.empty(n, dtype=np.int64)
    occ[perm] = occ_sorted
    return occ


def _accumulate(feats: np.ndarray, slot: np.ndarray, iv: np.ndarray, num_voxels: int,
                grid: VoxelGrid, workers: int | None):
    """Phase A feature sums, dense-buffer or keyed, optionally chunked."""
    dim = feats.shape[1]
    if workers is not None and workers > 1:
        # Contiguous chunks accumulated independently, merged in chunk
        # order: counts stay exact, feature sums only reassociate.
        bounds = np.linspace(0, feats.shape[0], workers + 1).astype(np.int64)

        def chunk_sum(k):
            part = np.zeros((num_voxels, dim))
            np.add.at(part, slot[bounds[k]:bounds[k + 1]], feats[bounds[k]:bounds[k + 1]])
            return part

        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(chunk_sum, range(workers)))
        sums = partials[0]
        for part in partials[1:]:
            sums += part
        return sums
    if grid.num_cells <= DENSE_CELL_BUDGET:
        dense = np.zeros((grid.num_cells, dim))
        np.add.at(dense, iv, feats)
        uniq = np.empty(num_voxels, dtype=np.int64)
        uniq[slot] = iv
        return dense[uniq]
    sums = np.zeros((num_voxels, dim))
    np.add.at(sums, slot, feats)
    return sums


def _empty(dim: int) -> SparseVoxels:
    return SparseVoxels(
        coords=np.zeros((0, 3), dtype=np.int32),
        features=np.zeros((0, dim)),
        counts=np.zeros(0, dtype=np.int64),
    )


def voxelize(points, grid: VoxelGrid, max_points_per_voxel: int | None = None,
             max_voxels: int | None = None, workers: int | None = None) -> SparseVoxels:
    """Group in-range points by cell and average their features.

    Args:
        points: (N, D) array, rows are point feature vectors whose first
            three entries are x, y, z. Every dimension is averaged.
        grid: detection volume.
        max_points_per_voxel: training-time cap; only the first m points
            of each voxel (in input order) contribute.
        max_voxels: training-time cap; only the first M distinct voxels
            (in order of first appearance) are emitted.
        workers: chunk the accumulation across this many workers. Counts
            and coords are identical to the serial path; feature sums may
            differ by float reassociation only.

    Returns:
        SparseVoxels ordered by first appearance. Out-of-range points are
        skipped silently; cap-induced drops are counted in the
        ``dropped_*`` diagnostics.
    """
    if max_points_per_voxel is not None and max_points_per_voxel < 1:
        raise InputError("max_points_per_voxel must be positive")
    if max_voxels is not None and max_voxels < 1:
        raise InputError("max_voxels must be positive")
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        pts = pts.reshape(0, POINT_DIM) if pts.size == 0 else pts
    if pts.ndim != 2 or pts.shape[1] < 3:
        raise InputError("points must be an (N, >=3) array")
    dim = pts.shape[1]
    if pts.shape[0] == 0:
        return _empty(dim)

    cells, in_range = quantize_points(pts, grid)
    pts = pts[in_range]
    if pts.shape[0] == 0:
        return _empty(dim)
    iv = _linear_indices(cells[in_range], grid)
    uniq, slot = _first_appearance(iv)

    dropped_points = 0
    dropped_voxels = 0
    if max_voxels is not None and uniq.shape[0] > max_voxels:
        dropped_voxels = uniq.shape[0] - max_voxels
        keep = slot < max_voxels
        dropped_points += int(np.count_nonzero(~keep))
        pts, iv, slot = pts[keep], iv[keep], slot[keep]
        uniq = uniq[:max_voxels]
    if max_points_per_voxel is not None:
        occ = _occurrence_within_voxel(slot)
        keep = occ < max_points_per_voxel
        dropped_points += int(np.count_nonzero(~keep))
        pts, iv, slot = pts[keep], iv[keep], slot[keep]

    num_voxels = uniq.shape[0]
    counts = np.bincount(slot, minlength=num_voxels)
    sums = _accumulate(pts, slot, iv, num_voxels, grid, workers)
    features = sums / counts[:, None]

    vx, vy, _ = grid.dims
    coords = np.empty((num_voxels, 3), dtype=np.int32)
    coords[:, 2], rem = np.divmod(uniq, vx * vy)
    coords[:, 1], coords[:, 0] = np.divmod(rem, vx)
    return SparseVoxels(coords, features, counts.astype(np.int64),
                        dropped_points, dropped_voxels)


def voxelize_serial(points, grid: VoxelGrid, max_points_per_voxel: int | None = None,
                    max_voxels: int | None = None) -> SparseVoxels:
    """Plain-dict reference implementation of :func:`voxelize`.

    Deliberately written as a per-point loop; serves as the semantics
    oracle for the vectorized and the chunked/parallel paths.
    """
    if max_points_per_voxel is not None and max_points_per_voxel < 1:
        raise InputError("max_points_per_voxel must be positive")
    if max_voxels is not None and max_voxels < 1:
        raise InputError("max_voxels must be positive")
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return _empty(pts.shape[1] if pts.ndim == 2 else POINT_DIM)
    dim = pts.shape[1]
    sums: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    order: list[int] = []
    dropped_points = 0
    dropped_voxels = 0
    for row in pts:
        cell = quantize(row[:3], grid)
        if cell is None:
            continue
        iv = voxel_index(cell, grid)
        if iv not in sums:
            if max_voxels is not None and len(order) >= max_voxels:
                if iv not in counts:
                    dropped_voxels += 1
                    counts[iv] = -1  # mark the voxel as rejected
                dropped_points += 1
                continue
            sums[iv] = np.zeros(dim)
            counts[iv] = 0
            order.append(iv)
        if max_points_per_voxel is not None and counts[iv] >= max_points_per_voxel:
            dropped_points += 1
            continue
        sums[iv] += row
        counts[iv] += 1
    coords = np.zeros((len(order), 3), dtype=np.int32)
    features = np.zeros((len(order), dim))
    out_counts = np.zeros(len(order), dtype=np.int64)
    for i, iv in enumerate(order):
        coords[i] = voxel_cell(iv, grid)
        out_counts[i] = counts[iv]
        features[i] = sums[iv] / counts[iv]
    return SparseVoxels(coords, features, out_counts, dropped_points, dropped_voxels)
