"""Procedural off-road scenes: terrain heightmap, obstacles, roads, and spatial queries.

Three presets (meadow, landscape, canyon) stand in for visually distinct
off-road settings: near-flat grassland, rolling hills, and ridged canyon
walls. Worlds are deterministic functions of (seed, spec) and immutable
after generation, so any number of environment instances may share one
read-only World.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .classes import PALETTE_ARRAY, ClassId

log = logging.getLogger(__name__)

PRESETS = ("meadow", "landscape", "canyon")

# Obstacles never intrude into a disc of this radius around the episode
# start cell (the world center).
START_CLEARANCE = 3.0

# Terrain character per preset: (amplitude m, octaves, base lattice cells, ridged)
_TERRAIN_PARAMS = {
    "meadow": (0.25, 3, 2, False),
    "landscape": (2.5, 4, 3, False),
    "canyon": (8.0, 4, 4, True),
}

# Default obstacle densities per preset, in count per 100 m^2.
_DEFAULT_DENSITIES = {
    "meadow": {ClassId.TREES: 0.30, ClassId.ROCKS: 0.08, ClassId.LOGS: 0.04},
    "landscape": {ClassId.TREES: 0.60, ClassId.ROCKS: 0.25, ClassId.LOGS: 0.08},
    "canyon": {ClassId.TREES: 0.08, ClassId.ROCKS: 0.90, ClassId.LOGS: 0.04},
}

# Seed-stream identifiers so terrain / obstacles / road draw from
# independent deterministic generators.
_STREAM_TERRAIN = 0
_STREAM_OBSTACLES = 1
_STREAM_ROAD = 2

_MAGIC = b"S2SW"
_FORMAT_VERSION = 1


@dataclass
class RoadSpec:
    width: float = 4.0
    waypoints: int = 5


@dataclass
class WorldSpec:
    """Recipe for a procedural world. Densities default to the preset mix."""

    seed: int = 0
    preset: str = "meadow"
    extent: float = 60.0
    grid_resolution: float = 0.5
    obstacle_density: Optional[dict[ClassId, float]] = None
    road: Optional[RoadSpec] = None

    def validate(self) -> None:
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}, expected one of {PRESETS}")
        if not (self.extent > 0):
            raise ValueError(f"extent must be positive, got {self.extent}")
        if not (self.grid_resolution > 0):
            raise ValueError(f"grid_resolution must be positive, got {self.grid_resolution}")
        for cls, dens in (self.obstacle_density or {}).items():
            if dens < 0:
                raise ValueError(f"negative obstacle density for {cls}: {dens}")

    def densities(self) -> dict[ClassId, float]:
        base = dict(_DEFAULT_DENSITIES[self.preset])
        if self.obstacle_density:
            base.update(self.obstacle_density)
        return base


@dataclass
class Obstacle:
    """A vertical cylinder primitive. Logs are chains of overlapping discs."""

    cls: ClassId
    cx: float
    cy: float
    radius: float
    height: float


@dataclass
class World:
    """Immutable-after-generation scene: share freely across env instances."""

    spec: WorldSpec
    heightmap: np.ndarray  # (n, n) float64 elevation in meters; node (iy, ix) at (ix*res, iy*res)
    road_mask: np.ndarray  # (n, n) bool
    obstacles: list[Obstacle]

    # Flat obstacle arrays for vectorized queries, built once post-generation.
    _obs_xy: np.ndarray = field(default=None, repr=False)
    _obs_r: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self._obs_xy = np.array([[o.cx, o.cy] for o in self.obstacles], dtype=np.float64).reshape(-1, 2)
        self._obs_r = np.array([o.radius for o in self.obstacles], dtype=np.float64)

    @property
    def extent(self) -> float:
        return self.spec.extent

    @property
    def grid_resolution(self) -> float:
        return self.spec.grid_resolution

    @property
    def size(self) -> int:
        return self.heightmap.shape[0]

    def max_gradient(self) -> float:
        """Largest slope magnitude between adjacent heightmap nodes."""
        res = self.grid_resolution
        gx = np.abs(np.diff(self.heightmap, axis=1)) / res
        gy = np.abs(np.diff(self.heightmap, axis=0)) / res
        return float(max(gx.max(initial=0.0), gy.max(initial=0.0)))


def _smooth_lattice_sample(lattice: np.ndarray, n: int) -> np.ndarray:
    """Sample a (c+1, c+1) lattice on an n x n grid with smoothstep bilinear blending."""
    cells = lattice.shape[0] - 1
    u = np.arange(n, dtype=np.float64) * cells / n
    i0 = np.minimum(u.astype(np.int64), cells - 1)
    f = u - i0
    f = f * f * (3.0 - 2.0 * f)  # smoothstep
    fy, fx = f[:, None], f[None, :]
    iy, ix = i0[:, None], i0[None, :]
    v00 = lattice[iy, ix]
    v01 = lattice[iy, ix + 1]
    v10 = lattice[iy + 1, ix]
    v11 = lattice[iy + 1, ix + 1]
    return (v00 * (1 - fx) * (1 - fy) + v01 * fx * (1 - fy)
            + v10 * (1 - fx) * fy + v11 * fx * fy)


def _terrain_heightmap(spec: WorldSpec, n: int) -> np.ndarray:
    amplitude, octaves, base_cells, ridged = _TERRAIN_PARAMS[spec.preset]
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed & 0xFFFFFFFFFFFFFFFF, _STREAM_TERRAIN]))
    noise = np.zeros((n, n), dtype=np.float64)
    amp = 1.0
    cells = base_cells
    for _ in range(octaves):
        lattice = rng.uniform(-1.0, 1.0, size=(cells + 1, cells + 1))
        sample = _smooth_lattice_sample(lattice, n)
        if ridged:
            sample = 1.0 - 2.0 * np.abs(sample)
        noise += amp * sample
        amp *= 0.5
        cells *= 2
    peak = np.abs(noise).max()
    if peak > 0:
        noise /= peak
    return amplitude * noise


def _road_mask(spec: WorldSpec, n: int) -> np.ndarray:
    mask = np.zeros((n, n), dtype=bool)
    if spec.road is None:
        return mask
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed & 0xFFFFFFFFFFFFFFFF, _STREAM_ROAD]))
    k = max(2, spec.road.waypoints)
    xs = np.linspace(0.0, spec.extent, k)
    ys = rng.uniform(0.2, 0.8, size=k) * spec.extent
    res = spec.grid_resolution
    half_w = spec.road.width / 2.0
    coords = np.arange(n) * res
    gx, gy = np.meshgrid(coords, coords)  # gx[iy, ix] = x of node
    dist2 = np.full((n, n), np.inf)
    for a in range(k - 1):
        p = np.array([xs[a], ys[a]])
        q = np.array([xs[a + 1], ys[a + 1]])
        seg = q - p
        seg_len2 = float(seg @ seg)
        if seg_len2 == 0:
            continue
        t = ((gx - p[0]) * seg[0] + (gy - p[1]) * seg[1]) / seg_len2
        t = np.clip(t, 0.0, 1.0)
        dx = gx - (p[0] + t * seg[0])
        dy = gy - (p[1] + t * seg[1])
        dist2 = np.minimum(dist2, dx * dx + dy * dy)
    mask |= dist2 <= half_w * half_w
    return mask


def _place_obstacles(spec: WorldSpec, extent: float) -> list[Obstacle]:
    """Poisson-count dart-throwing placement with overlap rejection.

    Draw order per class (trees, rocks, logs): one Poisson count, then per
    instance up to 30 attempts, each drawing position then shape parameters.
    Tests re-derive placements by transcribing this exact recipe.
    """
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed & 0xFFFFFFFFFFFFFFFF, _STREAM_OBSTACLES]))
    densities = spec.densities()
    center = extent / 2.0
    placed: list[Obstacle] = []
    px: list[float] = []
    py: list[float] = []
    pr: list[float] = []

    def conflicts(discs: list[tuple[float, float, float]]) -> bool:
        for cx, cy, r in discs:
            if not (0.0 <= cx <= extent and 0.0 <= cy <= extent):
                return True
            if math.hypot(cx - center, cy - center) < r + START_CLEARANCE:
                return True
            if px:
                d2 = (np.array(px) - cx) ** 2 + (np.array(py) - cy) ** 2
                if np.any(d2 < (np.array(pr) + r) ** 2):
                    return True
        return False

    for cls in (ClassId.TREES, ClassId.ROCKS, ClassId.LOGS):
        lam = densities.get(cls, 0.0) * extent * extent / 100.0
        count = int(rng.poisson(lam)) if lam > 0 else 0
        for _ in range(count):
            for _attempt in range(30):
                cx = float(rng.uniform(0.0, extent))
                cy = float(rng.uniform(0.0, extent))
                if cls == ClassId.TREES:
                    radius = float(rng.uniform(0.5, 2.0))
                    height = float(rng.uniform(1.5, 6.0))
                    discs = [(cx, cy, radius)]
                elif cls == ClassId.ROCKS:
                    radius = float(rng.uniform(0.4, 1.6))
                    height = radius * float(rng.uniform(0.6, 1.2))
                    discs = [(cx, cy, radius)]
                else:  # logs: a chain of 3 overlapping discs along a random direction
                    radius = float(rng.uniform(0.3, 0.6))
                    length = float(rng.uniform(2.0, 5.0))
                    angle = float(rng.uniform(0.0, 2.0 * math.pi))
                    height = 2.0 * radius
                    step = length / 2.0
                    discs = [
                        (cx + i * step * math.cos(angle), cy + i * step * math.sin(angle), radius)
                        for i in range(3)
                    ]
                if conflicts(discs):
                    continue
                for dcx, dcy, dr in discs:
                    placed.append(Obstacle(cls, dcx, dcy, dr, height))
                    px.append(dcx)
                    py.append(dcy)
                    pr.append(dr)
                break
    return placed


def generate_world(spec: WorldSpec) -> World:
    """Generate a World deterministically from (seed, spec)."""
    spec.validate()
    n = math.ceil(spec.extent / spec.grid_resolution)
    heightmap = _terrain_heightmap(spec, n)
    road_mask = _road_mask(spec, n)
    obstacles = _place_obstacles(spec, spec.extent)
    return World(spec=spec, heightmap=heightmap, road_mask=road_mask, obstacles=obstacles)


def flat_world(extent: float = 60.0, grid_resolution: float = 0.5,
               obstacles: Optional[list[Obstacle]] = None) -> World:
    """Perfectly flat world with hand-placed obstacles, for constructed scenes."""
    spec = WorldSpec(seed=0, preset="meadow", extent=extent,
                     grid_resolution=grid_resolution,
                     obstacle_density={ClassId.TREES: 0.0, ClassId.ROCKS: 0.0,
                                       ClassId.LOGS: 0.0})
    n = math.ceil(extent / grid_resolution)
    return World(spec=spec, heightmap=np.zeros((n, n)),
                 road_mask=np.zeros((n, n), dtype=bool),
                 obstacles=list(obstacles or []))


def height_at(world: World, x, y, debug: bool = False):
    """Bilinear terrain elevation at (x, y); accepts scalars or arrays.

    Out-of-bounds queries clamp to the boundary value (logged when debug).
    """
    res = world.grid_resolution
    n = world.size
    gx = np.asarray(x, dtype=np.float64) / res
    gy = np.asarray(y, dtype=np.float64) / res
    if debug and (np.any(gx < 0) or np.any(gy < 0) or np.any(gx > n - 1) or np.any(gy > n - 1)):
        log.warning("height_at query outside [0, %.3f]^2 clamped", (n - 1) * res)
    gx = np.clip(gx, 0.0, n - 1)
    gy = np.clip(gy, 0.0, n - 1)
    ix = np.minimum(gx.astype(np.int64), n - 2)
    iy = np.minimum(gy.astype(np.int64), n - 2)
    fx = gx - ix
    fy = gy - iy
    h = world.heightmap
    v = (h[iy, ix] * (1 - fx) * (1 - fy) + h[iy, ix + 1] * fx * (1 - fy)
         + h[iy + 1, ix] * (1 - fx) * fy + h[iy + 1, ix + 1] * fx * fy)
    if np.isscalar(x) or (isinstance(x, float) or isinstance(x, int)):
        return float(v)
    return v


def terrain_normal(world: World, x, y):
    """Unit surface normal(s) from central height differences."""
    eps = world.grid_resolution / 2.0
    dzdx = (height_at(world, np.asarray(x) + eps, y) - height_at(world, np.asarray(x) - eps, y)) / (2 * eps)
    dzdy = (height_at(world, x, np.asarray(y) + eps) - height_at(world, x, np.asarray(y) - eps)) / (2 * eps)
    nx = -np.asarray(dzdx)
    ny = -np.asarray(dzdy)
    nz = np.ones_like(nx)
    norm = np.sqrt(nx * nx + ny * ny + nz * nz)
    return np.stack([nx / norm, ny / norm, nz / norm], axis=-1)


# Footprint half-length (along heading) and half-width used for attitude.
_FOOT_HALF_LENGTH = 1.45
_FOOT_HALF_WIDTH = 0.8


def surface_attitude(world: World, x: float, y: float, yaw: float) -> tuple[float, float]:
    """(roll, pitch) in degrees of a yaw-aligned footprint resting on the terrain.

    Least-squares plane over the four footprint corners. Pitch is positive
    uphill along the heading; roll is positive when the left side sits higher.
    Both lie in (-90, 90).
    """
    c, s = math.cos(yaw), math.sin(yaw)
    corners_local = np.array([
        [_FOOT_HALF_LENGTH, _FOOT_HALF_WIDTH],
        [_FOOT_HALF_LENGTH, -_FOOT_HALF_WIDTH],
        [-_FOOT_HALF_LENGTH, _FOOT_HALF_WIDTH],
        [-_FOOT_HALF_LENGTH, -_FOOT_HALF_WIDTH],
    ])
    wx = x + corners_local[:, 0] * c - corners_local[:, 1] * s
    wy = y + corners_local[:, 0] * s + corners_local[:, 1] * c
    z = height_at(world, wx, wy)
    # Least-squares plane fit; the corner design is orthogonal and centered,
    # so each slope is a normalized correlation with the corner offsets.
    slope_fwd = (z[0] + z[1] - z[2] - z[3]) / (4.0 * _FOOT_HALF_LENGTH)
    slope_left = (z[0] - z[1] + z[2] - z[3]) / (4.0 * _FOOT_HALF_WIDTH)
    pitch = math.degrees(math.atan(slope_fwd))
    roll = math.degrees(math.atan(slope_left))
    return roll, pitch


def query_collision(world: World, x: float, y: float, footprint_radius: float) -> bool:
    """True iff any obstacle disc strictly overlaps the vehicle disc."""
    if footprint_radius <= 0:
        raise ValueError("footprint_radius must be positive")
    if world._obs_xy.shape[0] == 0:
        return False
    d2 = (world._obs_xy[:, 0] - x) ** 2 + (world._obs_xy[:, 1] - y) ** 2
    rsum = world._obs_r + footprint_radius
    return bool(np.any(d2 < rsum * rsum))


def point_in_obstacle(world: World, x, y) -> np.ndarray:
    """Boolean array: is each (x, y) inside some obstacle disc interior."""
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
    ys = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if world._obs_xy.shape[0] == 0:
        return np.zeros(xs.shape, dtype=bool)
    d2 = (xs[:, None] - world._obs_xy[None, :, 0]) ** 2 + (ys[:, None] - world._obs_xy[None, :, 1]) ** 2
    return np.any(d2 < world._obs_r[None, :] ** 2, axis=1)


_PRESET_CODES = {name: i for i, name in enumerate(PRESETS)}


def save_world(world: World, path) -> None:
    """Write the versioned little-endian binary format (magic "S2SW")."""
    spec = world.spec
    dens = spec.densities()
    n = world.size
    parts = [
        _MAGIC,
        struct.pack("<H", _FORMAT_VERSION),
        struct.pack("<q", spec.seed),
        struct.pack("<B", _PRESET_CODES[spec.preset]),
        struct.pack("<dd", spec.extent, spec.grid_resolution),
        struct.pack("<ddd", dens[ClassId.TREES], dens[ClassId.ROCKS], dens[ClassId.LOGS]),
    ]
    if spec.road is not None:
        parts.append(struct.pack("<BdI", 1, spec.road.width, spec.road.waypoints))
    else:
        parts.append(struct.pack("<B", 0))
    parts.append(struct.pack("<I", n))
    parts.append(world.heightmap.astype("<f8").tobytes())
    parts.append(world.road_mask.astype(np.uint8).tobytes())
    parts.append(struct.pack("<I", len(world.obstacles)))
    for o in world.obstacles:
        parts.append(struct.pack("<Bdddd", int(o.cls), o.cx, o.cy, o.radius, o.height))
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_world(path) -> World:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != _MAGIC:
        raise ValueError(f"{path}: not a world file (bad magic)")
    off = 4
    (version,) = struct.unpack_from("<H", buf, off)
    off += 2
    if version != _FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported world format version {version}")
    (seed,) = struct.unpack_from("<q", buf, off)
    off += 8
    (preset_code,) = struct.unpack_from("<B", buf, off)
    off += 1
    extent, grid_res = struct.unpack_from("<dd", buf, off)
    off += 16
    d_trees, d_rocks, d_logs = struct.unpack_from("<ddd", buf, off)
    off += 24
    (has_road,) = struct.unpack_from("<B", buf, off)
    off += 1
    road = None
    if has_road:
        width, waypoints = struct.unpack_from("<dI", buf, off)
        off += 12
        road = RoadSpec(width=width, waypoints=waypoints)
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    heightmap = np.frombuffer(buf, dtype="<f8", count=n * n, offset=off).reshape(n, n).copy()
    off += n * n * 8
    road_mask = np.frombuffer(buf, dtype=np.uint8, count=n * n, offset=off).reshape(n, n).astype(bool)
    off += n * n
    (n_obs,) = struct.unpack_from("<I", buf, off)
    off += 4
    obstacles = []
    for _ in range(n_obs):
        cls, cx, cy, radius, height = struct.unpack_from("<Bdddd", buf, off)
        off += 33
        obstacles.append(Obstacle(ClassId(cls), cx, cy, radius, height))
    spec = WorldSpec(
        seed=seed,
        preset=PRESETS[preset_code],
        extent=extent,
        grid_resolution=grid_res,
        obstacle_density={ClassId.TREES: d_trees, ClassId.ROCKS: d_rocks, ClassId.LOGS: d_logs},
        road=road,
    )
    return World(spec=spec, heightmap=heightmap, road_mask=road_mask, obstacles=obstacles)


def topdown_image(world: World, trajectories: Optional[Sequence[np.ndarray]] = None,
                  goal: Optional[tuple[float, float]] = None) -> np.ndarray:
    """Top-down class-palette image (row 0 = max y). Optional path/goal overlay."""
    n = world.size
    img = np.empty((n, n, 3), dtype=np.uint8)
    img[:, :] = PALETTE_ARRAY[ClassId.GROUND]
    img[world.road_mask] = PALETTE_ARRAY[ClassId.ROAD]
    res = world.grid_resolution
    coords = np.arange(n) * res
    for o in world.obstacles:
        ix0 = max(0, int((o.cx - o.radius) / res) - 1)
        ix1 = min(n, int((o.cx + o.radius) / res) + 2)
        iy0 = max(0, int((o.cy - o.radius) / res) - 1)
        iy1 = min(n, int((o.cy + o.radius) / res) + 2)
        if ix0 >= ix1 or iy0 >= iy1:
            continue
        sub_x = coords[ix0:ix1][None, :]
        sub_y = coords[iy0:iy1][:, None]
        disc = (sub_x - o.cx) ** 2 + (sub_y - o.cy) ** 2 <= o.radius ** 2
        block = img[iy0:iy1, ix0:ix1]
        block[disc] = PALETTE_ARRAY[int(o.cls)]

    def paint(x, y, color):
        ix = int(round(x / res))
        iy = int(round(y / res))
        if 0 <= ix < n and 0 <= iy < n:
            img[iy, ix] = color

    for traj in trajectories or []:
        for p in np.asarray(traj):
            paint(p[0], p[1], (255, 255, 0))
    if goal is not None:
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                paint(goal[0] + dx * res, goal[1] + dy * res, (255, 0, 255))
    return img[::-1]  # flip so +y points up in the image


def save_topdown_png(world: World, path, **overlay) -> None:
    from PIL import Image

    Image.fromarray(topdown_image(world, **overlay)).save(path)
