"""Voxel occupancy grids, the binvox codec, and the IoU metric.

A grid is a cubic binary occupancy array indexed ``occupancy[x, y, z]``.
The binvox file payload nests its runs as [x][z][y] (y varies fastest);
the codec converts to/from the internal x,y,z order at the boundary so
all in-package math uses one convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BinvoxFormatError, DimensionError

BINVOX_MAGIC = b"#binvox 1"

# Longest run a single (value, count) byte pair can encode.
_RLE_MAX_RUN = 255


@dataclass
class VoxelGrid:
    """Cubic binary occupancy grid.

    occupancy is an R x R x R uint8 array with values in {0, 1},
    indexed [x, y, z].
    """

    occupancy: np.ndarray
    resolution: int = 0

    def __post_init__(self):
        self.occupancy = np.asarray(self.occupancy, dtype=np.uint8)
        if self.resolution == 0:
            self.resolution = int(self.occupancy.shape[0])
        r = self.resolution
        if r <= 0:
            raise DimensionError(f"resolution must be positive, got {r}")
        if self.occupancy.shape != (r, r, r):
            raise DimensionError(
                f"occupancy shape {self.occupancy.shape} is not cubic of side {r}"
            )
        bad = (self.occupancy > 1).any()
        if bad:
            raise ValueError("occupancy values must be 0 or 1")

    @classmethod
    def empty(cls, resolution: int) -> "VoxelGrid":
        return cls(np.zeros((resolution,) * 3, dtype=np.uint8))

    @classmethod
    def full(cls, resolution: int) -> "VoxelGrid":
        return cls(np.ones((resolution,) * 3, dtype=np.uint8))

    def count(self) -> int:
        """Number of occupied voxels."""
        return int(self.occupancy.sum())

    def copy(self) -> "VoxelGrid":
        return VoxelGrid(self.occupancy.copy())

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, VoxelGrid)
            and self.resolution == other.resolution
            and np.array_equal(self.occupancy, other.occupancy)
        )


@dataclass
class ProbGrid:
    """Cubic grid of per-voxel occupancy confidences in [0, 1]."""

    probs: np.ndarray
    resolution: int = 0

    def __post_init__(self):
        self.probs = np.asarray(self.probs)
        if self.resolution == 0:
            self.resolution = int(self.probs.shape[0])
        r = self.resolution
        if self.probs.shape != (r, r, r):
            raise DimensionError(
                f"probs shape {self.probs.shape} is not cubic of side {r}"
            )
        if (self.probs < 0).any() or (self.probs > 1).any():
            raise ValueError("probabilities must lie in [0, 1]")


@dataclass
class BinvoxMeta:
    """Header fields of a binvox file."""

    dims: tuple[int, int, int]
    translate: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: float = 1.0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.translate = tuple(float(t) for t in self.translate)
        self.scale = float(self.scale)
        if len(self.dims) != 3:
            raise DimensionError("dims must have 3 entries")
        if len(set(self.dims)) != 1:
            raise BinvoxFormatError(f"non-cubic dims {self.dims} are not supported")


def iou(a: VoxelGrid, b: VoxelGrid) -> float:
    """Intersection over union of two occupancy grids.

    Two empty grids are equal sets, so their IoU is defined as 1.0.
    """
    if a.resolution != b.resolution:
        raise DimensionError(
            f"resolution mismatch: {a.resolution} vs {b.resolution}"
        )
    x = a.occupancy.view(bool)
    y = b.occupancy.view(bool)
    union = np.count_nonzero(x | y)
    if union == 0:
        return 1.0
    inter = np.count_nonzero(x & y)
    return inter / union


def binarize(p: ProbGrid, threshold: float = 0.5) -> VoxelGrid:
    """Threshold a probability grid into a binary one (occupied iff p >= t)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie strictly in (0, 1), got {threshold}")
    return VoxelGrid((p.probs >= threshold).astype(np.uint8))


def _parse_header(data: bytes):
    """Parse binvox header lines; returns (meta, payload offset)."""
    pos = 0

    def next_line():
        nonlocal pos
        end = data.find(b"\n", pos)
        if end < 0:
            raise BinvoxFormatError("truncated header", offset=pos)
        line = data[pos:end]
        start = pos
        pos = end + 1
        return line.strip(), start

    line, start = next_line()
    if line != BINVOX_MAGIC:
        raise BinvoxFormatError(f"bad magic {line!r}", offset=start)

    dims = translate = scale = None
    while True:
        line, start = next_line()
        parts = line.split()
        if not parts:
            continue
        key = parts[0]
        if key == b"data":
            break
        try:
            if key == b"dim":
                dims = tuple(int(v) for v in parts[1:])
            elif key == b"translate":
                translate = tuple(float(v) for v in parts[1:])
            elif key == b"scale":
                scale = float(parts[1])
            else:
                raise BinvoxFormatError(
                    f"unknown header line {line!r}", offset=start
                )
        except (ValueError, IndexError) as exc:
            if isinstance(exc, BinvoxFormatError):
                raise
            raise BinvoxFormatError(
                f"malformed header line {line!r}", offset=start
            ) from exc
    if dims is None or len(dims) != 3:
        raise BinvoxFormatError("missing or malformed dim line", offset=pos)
    meta = BinvoxMeta(
        dims=dims,
        translate=translate if translate is not None else (0.0, 0.0, 0.0),
        scale=scale if scale is not None else 1.0,
    )
    return meta, pos


def binvox_decode(data: bytes) -> tuple[VoxelGrid, BinvoxMeta]:
    """Decode binvox v1 bytes into a grid (internal x,y,z order) plus metadata."""
    meta, pos = _parse_header(data)
    d = meta.dims[0]
    total = d ** 3

    payload = np.frombuffer(data, dtype=np.uint8, offset=pos)
    if payload.size % 2 != 0:
        raise BinvoxFormatError(
            "payload has an odd number of bytes", offset=pos + payload.size - 1
        )
    values, counts = payload[::2], payload[1::2]
    bad = np.nonzero(values > 1)[0]
    if bad.size:
        raise BinvoxFormatError(
            f"run value {values[bad[0]]} not in {{0, 1}}",
            offset=pos + 2 * int(bad[0]),
        )
    csum = int(counts.sum())
    if csum != total:
        raise BinvoxFormatError(
            f"run lengths sum to {csum}, expected {total}",
            offset=pos + 2 * len(values),
        )
    flat = np.repeat(values, counts)
    # payload nests [x][z][y]; swap to internal [x][y][z]
    grid = flat.reshape((d, d, d)).transpose(0, 2, 1)
    return VoxelGrid(np.ascontiguousarray(grid)), meta


def binvox_encode(grid: VoxelGrid, meta: BinvoxMeta | None = None) -> bytes:
    """Encode a grid as canonical binvox v1 bytes (runs capped at 255)."""
    r = grid.resolution
    if meta is None:
        meta = BinvoxMeta(dims=(r, r, r))
    if meta.dims != (r, r, r):
        raise DimensionError(f"meta dims {meta.dims} do not match grid side {r}")

    header = (
        BINVOX_MAGIC
        + b"\n"
        + f"dim {r} {r} {r}\n".encode()
        + ("translate %r %r %r\n" % meta.translate).encode()
        + ("scale %r\n" % meta.scale).encode()
        + b"data\n"
    )

    flat = grid.occupancy.transpose(0, 2, 1).ravel()
    # run boundaries, then split runs longer than the one-byte cap
    change = np.nonzero(np.diff(flat))[0] + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [flat.size]))
    pairs = bytearray()
    for s, e in zip(starts, ends):
        v = int(flat[s])
        n = int(e - s)
        while n > 0:
            run = min(n, _RLE_MAX_RUN)
            pairs.append(v)
            pairs.append(run)
            n -= run
    return header + bytes(pairs)
