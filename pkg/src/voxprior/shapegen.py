"""Procedural multi-class voxel shape dataset with rendered views.

Stands in for a large shape corpus at desk scale: a handful of parametric
shape families with intra-class variability, deterministic orthographic
depth-map rendering, an 80-20 train/test split, and nested few-shot
support sampling. Shape classes can also be backed by a directory of
binvox files instead of a generator.

Persistence formats (all little-endian):
  manifest.txt  key/value header plus one table line per instance
  *.binvox      voxel grids (see voxelgrid)
  *.views       "#views 1" header with count/size lines, then a float32
                block of per-view (azimuth, elevation) pairs followed by
                the float32 image stack [count, H, W]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError, GenerationError
from .voxelgrid import BinvoxMeta, VoxelGrid, binvox_decode, binvox_encode

TRAIN_FRACTION = 0.8
ELEVATION_RANGE = (-30.0, 60.0)

VIEWS_MAGIC = b"#views 1"


@dataclass
class ShapeClassSpec:
    """One shape class: a family name plus parameter ranges in grid fractions."""

    class_id: str
    family: str
    ranges: dict[str, tuple[float, float]] = field(default_factory=dict)
    binvox_dir: str | None = None

    def __post_init__(self):
        if self.binvox_dir is None:
            if self.family not in FAMILIES:
                raise ValueError(f"unknown family {self.family!r}")
            defaults = FAMILY_RANGES[self.family]
            merged = dict(defaults)
            merged.update(self.ranges)
            unknown = set(merged) - set(defaults)
            if unknown:
                raise ValueError(f"unknown parameters {sorted(unknown)} for {self.family}")
            for k, (lo, hi) in merged.items():
                if hi < lo:
                    raise ValueError(f"empty range for {k}: ({lo}, {hi})")
            self.ranges = merged


@dataclass
class RenderedView:
    image: np.ndarray  # [H, W] float32 in [0, 1]
    azimuth: float
    elevation: float


@dataclass
class ShapeInstance:
    instance_id: str
    class_id: str
    grid: VoxelGrid
    views: list[RenderedView]


@dataclass
class EpisodeSpec:
    """K-shot episode over the manifest's novel classes."""

    k: int
    seed: int = 0
    novel_classes: list[str] | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class Episode:
    support: dict[str, list[ShapeInstance]]
    queries: dict[str, list[ShapeInstance]]


@dataclass
class DatasetManifest:
    base_classes: list[str]
    novel_classes: list[str]
    instances: dict[str, list[ShapeInstance]]
    split: dict[str, str]  # instance_id -> "train" | "test"
    seed: int
    resolution: int
    image_size: int
    n_views: int

    @property
    def all_classes(self) -> list[str]:
        return list(self.base_classes) + list(self.novel_classes)

    def class_index(self, class_id: str) -> int:
        return self.all_classes.index(class_id)

    def train_instances(self, class_id: str) -> list[ShapeInstance]:
        return [i for i in self.instances[class_id] if self.split[i.instance_id] == "train"]

    def test_instances(self, class_id: str) -> list[ShapeInstance]:
        return [i for i in self.instances[class_id] if self.split[i.instance_id] == "test"]


# ---------------------------------------------------------------------------
# shape families

def _coords(resolution: int):
    ax = np.arange(resolution) + 0.5
    return np.meshgrid(ax, ax, ax, indexing="ij")


def _box(X, Y, Z, cx, cy, half_x, half_y, z_lo, z_hi):
    return (
        (np.abs(X - cx) < half_x)
        & (np.abs(Y - cy) < half_y)
        & (Z >= z_lo)
        & (Z < z_hi)
    )


def _build_box_table(p, r):
    X, Y, Z = _coords(r)
    c = r / 2.0
    w, d = p["width"] * r, p["depth"] * r
    top = max(p["top_thickness"] * r, 1.0)
    h = p["height"] * r
    leg = max(p["leg_size"] * r, 1.0)
    occ = _box(X, Y, Z, c, c, w / 2, d / 2, h - top, h)
    lx = w / 2 - leg / 2
    ly = d / 2 - leg / 2
    for sx in (-1, 1):
        for sy in (-1, 1):
            occ |= _box(X, Y, Z, c + sx * lx, c + sy * ly, leg / 2, leg / 2, 0, h - top)
    return occ


def _build_winged_slab(p, r):
    X, Y, Z = _coords(r)
    c = r / 2.0
    body_l = p["body_length"] * r
    body_w = max(p["body_width"] * r, 1.5)
    body_h = max(p["body_height"] * r, 1.5)
    occ = (
        (np.abs(X - c) < body_l / 2)
        & (np.abs(Y - c) < body_w / 2)
        & (Z >= c - body_h / 2)
        & (Z < c + body_h / 2)
    )
    span = p["wing_span"] * r
    chord = p["wing_chord"] * r
    wt = max(p["wing_thickness"] * r, 1.0)
    wx = c + (p["wing_position"] - 0.5) * body_l
    occ |= (
        (np.abs(X - wx) < chord / 2)
        & (np.abs(Y - c) < span / 2)
        & (Z >= c - wt / 2)
        & (Z < c + wt / 2)
    )
    return occ


def _build_cylinder_stack(p, r):
    X, Y, Z = _coords(r)
    c = r / 2.0
    rad = p["base_radius"] * r
    heights = [p["h1"] * r, p["h2"] * r, p["h3"] * r]
    shrink = [1.0, p["shrink2"], p["shrink3"]]
    occ = np.zeros((r, r, r), dtype=bool)
    z0 = 0.0
    cur = rad
    for h, s in zip(heights, shrink):
        cur = max(cur * s, 1.2)
        occ |= ((X - c) ** 2 + (Y - c) ** 2 < cur ** 2) & (Z >= z0) & (Z < z0 + h)
        z0 += h
    return occ


def _build_l_bracket(p, r):
    X, Y, Z = _coords(r)
    c = r / 2.0
    height = p["height"] * r
    length = p["length"] * r
    tv = max(p["thickness_v"] * r, 1.0)
    th = max(p["thickness_h"] * r, 1.0)
    width = p["width"] * r
    x0 = c - length / 2
    occ = (
        (X >= x0) & (X < x0 + tv) & (np.abs(Y - c) < width / 2)
        & (Z >= 0) & (Z < height)
    )
    occ |= (
        (X >= x0) & (X < x0 + length) & (np.abs(Y - c) < width / 2)
        & (Z >= 0) & (Z < th)
    )
    return occ


def _build_sphere_blob(p, r):
    # ball count is derived from the continuous "count" parameter
    X, Y, Z = _coords(r)
    c = r / 2.0
    n_balls = 2 + int(p["count"] * 2.999)
    occ = np.zeros((r, r, r), dtype=bool)
    jit = p["jitter"] * r
    # deterministic ball layout from the sampled offsets
    offsets = [
        (p["ox1"], p["oy1"], p["oz1"]),
        (p["ox2"], p["oy2"], p["oz2"]),
        (p["ox3"], p["oy3"], p["oz3"]),
        (p["ox4"], p["oy4"], p["oz4"]),
    ]
    for i in range(n_balls):
        ox, oy, oz = offsets[i]
        rad = p["radius"] * r
        cx = c + (ox - 0.5) * 2 * jit
        cy = c + (oy - 0.5) * 2 * jit
        cz = c + (oz - 0.5) * 2 * jit
        occ |= (X - cx) ** 2 + (Y - cy) ** 2 + (Z - cz) ** 2 < rad ** 2
    return occ


FAMILIES = {
    "box_table": _build_box_table,
    "winged_slab": _build_winged_slab,
    "cylinder_stack": _build_cylinder_stack,
    "l_bracket": _build_l_bracket,
    "sphere_blob": _build_sphere_blob,
}

FAMILY_RANGES = {
    "box_table": {
        "width": (0.55, 0.85),
        "depth": (0.55, 0.85),
        "height": (0.55, 0.85),
        "top_thickness": (0.08, 0.16),
        "leg_size": (0.08, 0.16),
    },
    "winged_slab": {
        "body_length": (0.7, 0.92),
        "body_width": (0.1, 0.18),
        "body_height": (0.1, 0.18),
        "wing_span": (0.7, 0.95),
        "wing_chord": (0.2, 0.35),
        "wing_thickness": (0.06, 0.12),
        "wing_position": (0.35, 0.6),
    },
    "cylinder_stack": {
        "base_radius": (0.3, 0.44),
        "shrink2": (0.55, 0.8),
        "shrink3": (0.5, 0.8),
        "h1": (0.2, 0.32),
        "h2": (0.2, 0.32),
        "h3": (0.2, 0.32),
    },
    "l_bracket": {
        "height": (0.6, 0.9),
        "length": (0.5, 0.85),
        "thickness_v": (0.1, 0.2),
        "thickness_h": (0.1, 0.2),
        "width": (0.5, 0.9),
    },
    "sphere_blob": {
        "count": (0.0, 1.0),
        "radius": (0.16, 0.28),
        "jitter": (0.12, 0.3),
        "ox1": (0.0, 1.0), "oy1": (0.0, 1.0), "oz1": (0.0, 1.0),
        "ox2": (0.0, 1.0), "oy2": (0.0, 1.0), "oz2": (0.0, 1.0),
        "ox3": (0.0, 1.0), "oy3": (0.0, 1.0), "oz3": (0.0, 1.0),
        "ox4": (0.0, 1.0), "oy4": (0.0, 1.0), "oz4": (0.0, 1.0),
    },
}

# named presets usable from config files; the *_wide / *_tower entries are
# parameter-shifted variants of a base family (high-proximity novel classes)
CLASS_PRESETS: dict[str, dict] = {
    "box_table": {"family": "box_table", "ranges": {}},
    "winged_slab": {"family": "winged_slab", "ranges": {}},
    "cylinder_stack": {"family": "cylinder_stack", "ranges": {}},
    "l_bracket": {"family": "l_bracket", "ranges": {}},
    "sphere_blob": {"family": "sphere_blob", "ranges": {}},
    "box_table_wide": {
        "family": "box_table",
        "ranges": {
            "width": (0.7, 0.95),
            "depth": (0.7, 0.95),
            "height": (0.6, 0.85),
            "top_thickness": (0.1, 0.2),
            "leg_size": (0.1, 0.2),
        },
    },
    "cylinder_tower": {
        "family": "cylinder_stack",
        "ranges": {
            "base_radius": (0.16, 0.24),
            "shrink2": (0.75, 0.95),
            "shrink3": (0.75, 0.95),
            "h1": (0.28, 0.33),
            "h2": (0.28, 0.33),
            "h3": (0.28, 0.33),
        },
    },
}


def class_spec(class_id: str, **overrides) -> ShapeClassSpec:
    """Build a ShapeClassSpec from a named preset."""
    if class_id not in CLASS_PRESETS:
        raise KeyError(
            f"unknown class preset {class_id!r}; available: {sorted(CLASS_PRESETS)}"
        )
    preset = CLASS_PRESETS[class_id]
    ranges = dict(preset["ranges"])
    ranges.update(overrides.pop("ranges", {}))
    return ShapeClassSpec(class_id=class_id, family=preset["family"],
                          ranges=ranges, **overrides)


def generate_shape(spec: ShapeClassSpec, resolution: int, rng) -> VoxelGrid:
    """Sample parameters from the spec's ranges and voxelize the shape."""
    names = sorted(spec.ranges)
    params = {}
    for name in names:
        lo, hi = spec.ranges[name]
        params[name] = float(rng.uniform(lo, hi))
    occ = FAMILIES[spec.family](params, resolution)
    if not occ.any():
        raise GenerationError(
            f"family {spec.family} produced an empty grid for {params}"
        )
    return VoxelGrid(occ.astype(np.uint8))


# ---------------------------------------------------------------------------
# rendering

def _camera_basis(azimuth: float, elevation: float):
    az = math.radians(azimuth)
    el = math.radians(elevation)
    fwd = np.array(
        [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)]
    )
    right = np.cross([0.0, 0.0, 1.0], fwd)
    right /= np.linalg.norm(right)
    up = np.cross(fwd, right)
    return fwd, right, up


def render_depth(grid: VoxelGrid, azimuth: float, elevation: float,
                 image_size: int) -> np.ndarray:
    """Orthographic normalized depth map of the nearest occupied voxel.

    Pixels whose rays miss every voxel are 0; hits are in (0, 1], larger
    meaning nearer to the camera. The camera looks at the grid center
    from the given azimuth/elevation; the window covers the full grid at
    any rotation.
    """
    r = grid.resolution
    occ = grid.occupancy.view(bool)
    fwd, right, up = _camera_basis(azimuth, elevation)
    center = np.full(3, r / 2.0)
    rs = r * math.sqrt(3.0) / 2.0 * 1.001  # bounding-sphere radius

    px = ((np.arange(image_size) + 0.5) / image_size * 2.0 - 1.0) * rs
    U, V = np.meshgrid(px, -px, indexing="xy")  # row 0 is the top of the image
    origins = (
        center
        + rs * fwd
        + U.reshape(-1, 1) * right
        + V.reshape(-1, 1) * up
    )  # [P, 3]
    d = -fwd

    # slab intersection with the cube [0, r]^3; axis-parallel rays become
    # (-inf, inf) when inside the slab and NaN (a miss) otherwise
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(d != 0, 1.0 / d, np.inf)
        t0 = (0.0 - origins) * inv
        t1 = (r - origins) * inv
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    par = d == 0
    inside_slab = (origins >= 0) & (origins <= r)
    tmin = np.where(par, np.where(inside_slab, -np.inf, np.nan), tmin)
    tmax = np.where(par, np.where(inside_slab, np.inf, np.nan), tmax)
    t_near = tmin.max(axis=1)
    t_far = tmax.min(axis=1)
    hit_box = (t_far > t_near) & (t_far > 0)
    t_near = np.maximum(t_near, 0.0)

    image = np.zeros(image_size * image_size, dtype=np.float32)
    idx = np.nonzero(hit_box)[0]
    if idx.size:
        n_steps = int(math.ceil(3.5 * r))
        span = t_far[idx] - t_near[idx]
        offs = (np.arange(n_steps) + 0.5) / n_steps
        ts = t_near[idx, None] + offs[None, :] * span[:, None]  # [P', S]
        pts = origins[idx, None, :] + ts[..., None] * d  # [P', S, 3]
        vox = np.floor(pts).astype(np.int64)
        inside = np.all((vox >= 0) & (vox < r), axis=-1)
        np.clip(vox, 0, r - 1, out=vox)
        occupied = occ[vox[..., 0], vox[..., 1], vox[..., 2]] & inside
        any_hit = occupied.any(axis=1)
        first = np.argmax(occupied, axis=1)
        t_hit = np.take_along_axis(ts, first[:, None], axis=1)[:, 0]
        depth = 1.0 - t_hit / (2.0 * rs)
        image[idx[any_hit]] = depth[any_hit].astype(np.float32)
    return image.reshape(image_size, image_size)


def render_views(grid: VoxelGrid, n_views: int, image_size: int, seed) -> list[RenderedView]:
    """Render n_views depth maps from random viewpoints (deterministic in seed)."""
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    rng = np.random.default_rng(seed)
    azimuths = rng.uniform(0.0, 360.0, n_views)
    elevations = rng.uniform(*ELEVATION_RANGE, n_views)
    return [
        RenderedView(
            image=render_depth(grid, float(a), float(e), image_size),
            azimuth=float(a),
            elevation=float(e),
        )
        for a, e in zip(azimuths, elevations)
    ]


# ---------------------------------------------------------------------------
# manifest building

def _split_counts(n: int) -> int:
    train = int(round(TRAIN_FRACTION * n))
    return max(1, min(n - 1, train))


def _load_binvox_dir(path: str, n: int, resolution: int) -> list[VoxelGrid]:
    files = sorted(Path(path).glob("*.binvox"))
    if len(files) < n:
        raise DataError(f"{path} has {len(files)} binvox files, need {n}")
    grids = []
    for f in files[:n]:
        try:
            grid, _ = binvox_decode(f.read_bytes())
        except OSError as exc:
            raise DataError(f"cannot read {f}: {exc}") from exc
        if grid.resolution != resolution:
            raise DimensionError(
                f"{f} has resolution {grid.resolution}, expected {resolution}"
            )
        grids.append(grid)
    return grids


def build_manifest(
    specs: list[ShapeClassSpec],
    n_per_class: int,
    base_classes: list[str],
    novel_classes: list[str],
    seed: int,
    resolution: int = 32,
    image_size: int = 32,
    n_views: int = 24,
) -> DatasetManifest:
    """Generate (or load) instances for every class, render views, and split."""
    if not specs:
        raise ValueError("specs must be nonempty")
    if n_per_class < 2:
        raise ValueError("n_per_class must be >= 2 for an 80-20 split")
    overlap = set(base_classes) & set(novel_classes)
    if overlap:
        raise ValueError(f"classes assigned to both base and novel: {sorted(overlap)}")
    by_id = {s.class_id: s for s in specs}
    ordered = list(base_classes) + list(novel_classes)
    missing = [c for c in ordered if c not in by_id]
    if missing:
        raise ValueError(f"no spec for classes {missing}")

    instances: dict[str, list[ShapeInstance]] = {}
    split: dict[str, str] = {}
    for ci, class_id in enumerate(ordered):
        spec = by_id[class_id]
        if spec.binvox_dir is not None:
            grids = _load_binvox_dir(spec.binvox_dir, n_per_class, resolution)
        else:
            grids = [
                generate_shape(spec, resolution, np.random.default_rng([seed, ci, i]))
                for i in range(n_per_class)
            ]
        insts = []
        for i, grid in enumerate(grids):
            views = render_views(grid, n_views, image_size, [seed, ci, i, 1])
            insts.append(
                ShapeInstance(
                    instance_id=f"{class_id}_{i:04d}",
                    class_id=class_id,
                    grid=grid,
                    views=views,
                )
            )
        instances[class_id] = insts

        rng = np.random.default_rng([seed, ci, 2])
        perm = rng.permutation(n_per_class)
        train_idx = set(perm[: _split_counts(n_per_class)].tolist())
        for i, inst in enumerate(insts):
            split[inst.instance_id] = "train" if i in train_idx else "test"

    return DatasetManifest(
        base_classes=list(base_classes),
        novel_classes=list(novel_classes),
        instances=instances,
        split=split,
        seed=seed,
        resolution=resolution,
        image_size=image_size,
        n_views=n_views,
    )


def sample_support(manifest: DatasetManifest, episode: EpisodeSpec) -> Episode:
    """Draw K support pairs per novel class from the train split; queries are
    the full test split. Supports are nested across K for a fixed seed."""
    classes = episode.novel_classes or manifest.novel_classes
    support: dict[str, list[ShapeInstance]] = {}
    queries: dict[str, list[ShapeInstance]] = {}
    for class_id in classes:
        if class_id not in manifest.novel_classes:
            raise ValueError(f"{class_id!r} is not a novel class of this manifest")
        train = manifest.train_instances(class_id)
        if episode.k > len(train):
            raise ValueError(
                f"k={episode.k} exceeds the {len(train)} train instances of {class_id}"
            )
        ci = manifest.class_index(class_id)
        rng = np.random.default_rng([episode.seed, ci, 7])
        order = rng.permutation(len(train))
        support[class_id] = [train[j] for j in order[: episode.k]]
        queries[class_id] = manifest.test_instances(class_id)
    return Episode(support=support, queries=queries)


# ---------------------------------------------------------------------------
# persistence

def save_views(views: list[RenderedView], path: Path) -> None:
    h, w = views[0].image.shape
    header = VIEWS_MAGIC + b"\n"
    header += f"count {len(views)}\n".encode()
    header += f"size {h} {w}\n".encode()
    header += b"data\n"
    angles = np.array(
        [[v.azimuth, v.elevation] for v in views], dtype="<f4"
    ).tobytes()
    imgs = np.stack([v.image for v in views]).astype("<f4").tobytes()
    path.write_bytes(header + angles + imgs)


def load_views(path: Path) -> list[RenderedView]:
    data = path.read_bytes()
    if not data.startswith(VIEWS_MAGIC + b"\n"):
        raise DataError(f"{path} is not a views file")
    pos = len(VIEWS_MAGIC) + 1
    fields = {}
    while True:
        end = data.index(b"\n", pos)
        line = data[pos:end].decode()
        pos = end + 1
        if line == "data":
            break
        key, *vals = line.split()
        fields[key] = [int(v) for v in vals]
    n = fields["count"][0]
    h, w = fields["size"]
    angles = np.frombuffer(data, dtype="<f4", count=2 * n, offset=pos).reshape(n, 2)
    imgs = np.frombuffer(
        data, dtype="<f4", count=n * h * w, offset=pos + angles.nbytes
    ).reshape(n, h, w)
    return [
        RenderedView(image=imgs[i].copy(), azimuth=float(angles[i, 0]),
                     elevation=float(angles[i, 1]))
        for i in range(n)
    ]


def save_manifest(manifest: DatasetManifest, directory) -> None:
    directory = Path(directory)
    (directory / "voxels").mkdir(parents=True, exist_ok=True)
    (directory / "views").mkdir(parents=True, exist_ok=True)
    lines = [
        "# voxprior dataset manifest v1",
        f"seed {manifest.seed}",
        f"resolution {manifest.resolution}",
        f"image_size {manifest.image_size}",
        f"n_views {manifest.n_views}",
        "base_classes " + ",".join(manifest.base_classes),
        "novel_classes " + ",".join(manifest.novel_classes),
        "[instances]",
    ]
    meta = BinvoxMeta((manifest.resolution,) * 3)
    for class_id in manifest.all_classes:
        for inst in manifest.instances[class_id]:
            vox_rel = f"voxels/{inst.instance_id}.binvox"
            views_rel = f"views/{inst.instance_id}.views"
            (directory / vox_rel).write_bytes(binvox_encode(inst.grid, meta))
            save_views(inst.views, directory / views_rel)
            lines.append(
                f"{inst.instance_id} {inst.class_id} "
                f"{manifest.split[inst.instance_id]} {vox_rel} {views_rel}"
            )
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_manifest(directory) -> DatasetManifest:
    directory = Path(directory)
    path = directory / "manifest.txt"
    if not path.exists():
        raise DataError(f"no manifest.txt under {directory}")
    header: dict[str, str] = {}
    rows = []
    in_table = False
    for line in path.read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        if line == "[instances]":
            in_table = True
            continue
        if in_table:
            rows.append(line.split())
        else:
            key, _, value = line.partition(" ")
            header[key] = value

    base = [c for c in header["base_classes"].split(",") if c]
    novel = [c for c in header["novel_classes"].split(",") if c]
    instances: dict[str, list[ShapeInstance]] = {c: [] for c in base + novel}
    split: dict[str, str] = {}
    for iid, class_id, part, vox_rel, views_rel in rows:
        grid, _ = binvox_decode((directory / vox_rel).read_bytes())
        views = load_views(directory / views_rel)
        instances[class_id].append(
            ShapeInstance(instance_id=iid, class_id=class_id, grid=grid, views=views)
        )
        split[iid] = part
    return DatasetManifest(
        base_classes=base,
        novel_classes=novel,
        instances=instances,
        split=split,
        seed=int(header["seed"]),
        resolution=int(header["resolution"]),
        image_size=int(header["image_size"]),
        n_views=int(header["n_views"]),
    )
