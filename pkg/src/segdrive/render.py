"""Vehicle-camera rendering by per-pixel raycasting.

Produces paired observations — domain-randomized RGB, ground-truth class
map, metric depth, obstacle mask — from one camera pose. Rays march the
terrain heightfield (with bisection refinement) and intersect obstacle
cylinders analytically, so depth is exact up to the bisection tolerance.

Randomization is split into four independently seeded axes: class colors,
lighting, procedural texture, and camera geometry. The first three only
touch RGB; only the geometry axis may move the class/depth images. That
separation is the property the downstream translation learner relies on.
"""

from __future__ import annotations

import colorsys
import json
import math
import os
import struct
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional

import numpy as np

from .classes import NUM_CLASSES, PALETTE_ARRAY, ClassId, is_obstacle_class
from .world import World, height_at, surface_attitude, terrain_normal

_BISECT_ITERS = 16
_MARCH_BLOCK = 8  # terrain samples evaluated per marching round
_T_EPS = 1e-6

# Axis-specific child seed streams so enabling one randomization axis can
# never shift the draws of another.
_STREAM_COLOR = 10
_STREAM_LIGHT = 11
_STREAM_TEXTURE = 12
_STREAM_GEOMETRY = 13


@dataclass
class CameraModel:
    mount_offset: tuple[float, float, float] = (0.0, 0.0, 1.5)  # vehicle frame: x fwd, y left, z up
    mount_pitch: float = 0.0  # rad, positive tilts the view down
    fov: float = math.pi / 2  # horizontal, rad
    resolution: int = 256     # square images
    max_range: float = 100.0  # m; sky depth is exactly this

    def __post_init__(self):
        if not (0.0 < self.fov < math.pi):
            raise ValueError(f"fov must be in (0, pi), got {self.fov}")
        if self.resolution < 16:
            raise ValueError(f"resolution must be >= 16, got {self.resolution}")
        if not self.max_range > 0:
            raise ValueError(f"max_range must be > 0, got {self.max_range}")


# Muted natural base colors (RGB in [0,1]); deliberately distinct from the
# saturated canonical palette so the translation problem is non-trivial.
_BASE_COLORS = {
    ClassId.TREES: (0.10, 0.35, 0.12),
    ClassId.GROUND: (0.45, 0.36, 0.25),
    ClassId.SKY: (0.55, 0.70, 0.90),
    ClassId.ROCKS: (0.45, 0.44, 0.42),
    ClassId.ROAD: (0.35, 0.33, 0.31),
    ClassId.LOGS: (0.35, 0.23, 0.12),
}


@dataclass
class RandomizationConfig:
    """Jitter ranges per axis; zero range or a cleared flag disables an axis."""

    base_colors: dict = field(default_factory=lambda: dict(_BASE_COLORS))
    hue_jitter: float = 0.06         # fraction of the hue circle
    brightness_jitter: float = 0.35  # relative value scale
    light_direction_jitter: float = 0.5  # rad
    light_color_jitter: float = 0.25     # relative per-channel scale
    texture_noise: float = 0.25          # speckle amplitude
    texture_frequency: float = 3.0       # cells per meter
    fov_jitter: float = 0.12             # rad
    camera_pos_jitter: float = 0.15      # m
    camera_rot_jitter: float = 0.05      # rad
    enable_color: bool = True
    enable_light: bool = True
    enable_texture: bool = True
    enable_geometry: bool = True

    def __post_init__(self):
        for name in ("hue_jitter", "brightness_jitter", "light_direction_jitter",
                     "light_color_jitter", "texture_noise", "fov_jitter",
                     "camera_pos_jitter", "camera_rot_jitter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def canonical(cls) -> "RandomizationConfig":
        """No randomization at all: fixed colors, light, texture, and camera."""
        return cls(enable_color=False, enable_light=False,
                   enable_texture=False, enable_geometry=False)

    @classmethod
    def appearance_only(cls) -> "RandomizationConfig":
        """Color/light/texture vary; geometry stays fixed (paired-image mode)."""
        return cls(enable_geometry=False)


@dataclass
class RenderOutput:
    rgb: np.ndarray          # (H, W, 3) uint8
    class_map: np.ndarray    # (H, W) uint8, values are ClassId
    depth: np.ndarray        # (H, W) float32 meters; sky pixels = max_range
    obstacle_mask: np.ndarray  # (H, W) bool

    def one_hot(self) -> np.ndarray:
        """(C, H, W) float32 one-hot view of the class map."""
        return np.eye(NUM_CLASSES, dtype=np.float32)[self.class_map].transpose(2, 0, 1)


def _rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


@lru_cache(maxsize=16)
def _pixel_directions(fov: float, resolution: int) -> np.ndarray:
    """Unit ray directions in the camera frame (x fwd, y left, z up), row-major."""
    half = math.tan(fov / 2.0)
    lin = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    ys = -half * lin          # column 0 = left of view = +y
    zs = -half * lin          # row 0 = top of view = +z
    zz, yy = np.meshgrid(zs, ys, indexing="ij")
    dirs = np.stack([np.ones_like(yy), yy, zz], axis=-1).reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs.setflags(write=False)  # cached; callers must not mutate
    return dirs


def _bilinear_raw(hm: np.ndarray, res: float, n: int, x: np.ndarray,
                  y: np.ndarray) -> np.ndarray:
    """height_at's bilinear core without scalar-dispatch overhead."""
    gx = np.clip(x / res, 0.0, n - 1.0)
    gy = np.clip(y / res, 0.0, n - 1.0)
    ix = np.minimum(gx.astype(np.int64), n - 2)
    iy = np.minimum(gy.astype(np.int64), n - 2)
    fx = gx - ix
    fy = gy - iy
    return (hm[iy, ix] * (1 - fx) * (1 - fy) + hm[iy, ix + 1] * fx * (1 - fy)
            + hm[iy + 1, ix] * (1 - fx) * fy + hm[iy + 1, ix + 1] * fx * fy)


def _march_terrain(world: World, origin: np.ndarray, dirs: np.ndarray,
                   max_range: float) -> np.ndarray:
    """First terrain intersection per ray; inf where none within max_range."""
    n_rays = dirs.shape[0]
    t_hit = np.full(n_rays, np.inf)
    step = max(world.grid_resolution, 0.05)
    hm = world.heightmap
    res = world.grid_resolution
    n = world.size
    h_max = float(hm.max())

    # Upward rays starting above the highest terrain can never hit.
    active = ~((dirs[:, 2] >= 0) & (origin[2] > h_max))
    idx = np.flatnonzero(active)
    if idx.size == 0:
        return t_hit
    d = dirs[idx]
    # No intersection is possible while a descending ray is still above the
    # global terrain maximum, so start marching at that analytic distance.
    with np.errstate(divide="ignore"):
        t0 = np.where((d[:, 2] < 0) & (origin[2] > h_max),
                      (origin[2] - h_max) / -d[:, 2], _T_EPS)
    t_cur = np.maximum(t0, _T_EPS)
    alive = t_cur < max_range
    idx, d, t_cur = idx[alive], d[alive], t_cur[alive]
    lookahead = step * np.arange(1, _MARCH_BLOCK + 1)
    while idx.size:
        # Sample a block of future points per ray in one bilinear evaluation.
        ts = np.minimum(t_cur[:, None] + lookahead, max_range)
        px = origin[0] + d[:, 0:1] * ts
        py = origin[1] + d[:, 1:2] * ts
        pz = origin[2] + d[:, 2:3] * ts
        below = pz <= _bilinear_raw(hm, res, n, px, py)
        hit_any = below.any(axis=1)
        rows = np.arange(idx.size)
        first = np.where(hit_any, below.argmax(axis=1), _MARCH_BLOCK - 1)
        t_next = ts[rows, first]
        if np.any(hit_any):
            hl = np.flatnonzero(hit_any)
            lo = np.where(first[hl] > 0, ts[hl, first[hl] - 1], t_cur[hl])
            hi = t_next[hl].copy()
            dh = d[hl]
            for _ in range(_BISECT_ITERS):
                mid = 0.5 * (lo + hi)
                mx = origin[0] + dh[:, 0] * mid
                my = origin[1] + dh[:, 1] * mid
                mz = origin[2] + dh[:, 2] * mid
                above = mz > _bilinear_raw(hm, res, n, mx, my)
                lo = np.where(above, mid, lo)
                hi = np.where(above, hi, mid)
            t_hit[idx[hl]] = hi
        keep = ~hit_any & (t_next < max_range)
        idx, d, t_cur = idx[keep], d[keep], t_next[keep]
    return t_hit


def _obstacle_z_spans(world: World) -> tuple[np.ndarray, np.ndarray]:
    if not world.obstacles:
        return np.zeros(0), np.zeros(0)
    cx = np.array([o.cx for o in world.obstacles])
    cy = np.array([o.cy for o in world.obstacles])
    base = np.atleast_1d(height_at(world, cx, cy)) - 0.5  # sink slightly into slopes
    top = base + 0.5 + np.array([o.height for o in world.obstacles])
    return base, top


def _intersect_obstacles(world: World, origin: np.ndarray, dirs: np.ndarray,
                         depth: np.ndarray, cls: np.ndarray, fov: float,
                         resolution: int, rot: np.ndarray, max_range: float) -> np.ndarray:
    """Update depth/cls in place with nearest cylinder hits; returns cap-hit mask."""
    cap_hit = np.zeros(dirs.shape[0], dtype=bool)
    if not world.obstacles:
        return cap_hit
    z_base, z_top = _obstacle_z_spans(world)
    half = math.tan(fov / 2.0)
    inv_rot = rot.T
    ox, oy, oz = origin

    for k, o in enumerate(world.obstacles):
        # Conservative image-space bounding box from the bounding sphere.
        center = np.array([o.cx - ox, o.cy - oy, 0.5 * (z_base[k] + z_top[k]) - oz])
        cam = inv_rot @ center
        rad = math.hypot(o.radius, 0.5 * (z_top[k] - z_base[k])) + 0.05
        dist = np.linalg.norm(cam)
        if cam[0] + rad <= _T_EPS or dist - rad > max_range:
            continue
        if dist <= rad * 1.2:
            rows = cols = slice(0, resolution)
            sub = np.arange(dirs.shape[0])
        else:
            fwd = max(cam[0] - rad, 1e-3)
            margin = (rad / fwd / half) * 1.6 + 2.0 / resolution
            u_c = (-cam[1] / max(cam[0], 1e-3)) / half
            v_c = (-cam[2] / max(cam[0], 1e-3)) / half
            c0 = int(max(0, math.floor((u_c - margin + 1) / 2 * resolution)))
            c1 = int(min(resolution, math.ceil((u_c + margin + 1) / 2 * resolution)))
            r0 = int(max(0, math.floor((v_c - margin + 1) / 2 * resolution)))
            r1 = int(min(resolution, math.ceil((v_c + margin + 1) / 2 * resolution)))
            if c0 >= c1 or r0 >= r1:
                continue
            rr, cc = np.meshgrid(np.arange(r0, r1), np.arange(c0, c1), indexing="ij")
            sub = (rr * resolution + cc).ravel()

        d = dirs[sub]
        exr = ox - o.cx
        eyr = oy - o.cy
        a = d[:, 0] ** 2 + d[:, 1] ** 2
        b = 2.0 * (exr * d[:, 0] + eyr * d[:, 1])
        c = exr * exr + eyr * eyr - o.radius * o.radius
        disc = b * b - 4.0 * a * c
        valid = (disc >= 0) & (a > 1e-12)
        if not np.any(valid):
            continue
        sq = np.sqrt(np.where(valid, disc, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-b - sq) / (2.0 * a)
            t2 = (-b + sq) / (2.0 * a)
        best = np.full(d.shape[0], np.inf)
        is_cap = np.zeros(d.shape[0], dtype=bool)
        for tt in (t1, t2):
            z = oz + d[:, 2] * tt
            ok = valid & (tt > _T_EPS) & (z >= z_base[k]) & (z <= z_top[k])
            best = np.where(ok & (tt < best), tt, best)
        # Top cap.
        dz = d[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_cap = (z_top[k] - oz) / dz
        px = ox + d[:, 0] * t_cap
        py = oy + d[:, 1] * t_cap
        ok = (np.abs(dz) > 1e-12) & (t_cap > _T_EPS) \
            & ((px - o.cx) ** 2 + (py - o.cy) ** 2 <= o.radius ** 2)
        better = ok & (t_cap < best)
        is_cap = np.where(better, True, is_cap)
        best = np.where(better, t_cap, best)

        improved = best < depth[sub]
        if np.any(improved):
            tgt = sub[improved]
            depth[tgt] = best[improved]
            cls[tgt] = int(o.cls)
            cap_hit[tgt] = is_cap[improved]
    return cap_hit


def _hash_noise(px: np.ndarray, py: np.ndarray, phase: float) -> np.ndarray:
    """Deterministic speckle in [0, 1) from quantized position (GLSL-style hash)."""
    v = np.sin(px * 12.9898 + py * 78.233 + phase) * 43758.5453
    return v - np.floor(v)


def _draw_color_jitter(rand: RandomizationConfig, seed: int) -> np.ndarray:
    colors = np.array([rand.base_colors[ClassId(i)] for i in range(NUM_CLASSES)], dtype=np.float64)
    if not rand.enable_color:
        return colors
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, _STREAM_COLOR]))
    out = np.empty_like(colors)
    for i in range(NUM_CLASSES):
        h, s, v = colorsys.rgb_to_hsv(*colors[i])
        h = (h + rng.uniform(-rand.hue_jitter, rand.hue_jitter)) % 1.0
        v = float(np.clip(v * rng.uniform(1 - rand.brightness_jitter, 1 + rand.brightness_jitter), 0, 1))
        out[i] = colorsys.hsv_to_rgb(h, s, v)
    return out


def _draw_light(rand: RandomizationConfig, seed: int) -> tuple[np.ndarray, np.ndarray]:
    azimuth, elevation = 0.6, 0.9
    color = np.ones(3)
    if rand.enable_light:
        rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, _STREAM_LIGHT]))
        azimuth += rng.uniform(-rand.light_direction_jitter, rand.light_direction_jitter)
        elevation = float(np.clip(
            elevation + rng.uniform(-rand.light_direction_jitter / 2, rand.light_direction_jitter / 2),
            0.15, math.pi / 2))
        color = rng.uniform(max(0.0, 1 - rand.light_color_jitter), 1 + rand.light_color_jitter, 3)
    direction = np.array([
        math.cos(elevation) * math.cos(azimuth),
        math.cos(elevation) * math.sin(azimuth),
        math.sin(elevation),
    ])
    return direction, color


def _draw_texture(rand: RandomizationConfig, seed: int) -> Optional[np.ndarray]:
    if not rand.enable_texture or rand.texture_noise <= 0:
        return None
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, _STREAM_TEXTURE]))
    return rng.uniform(0.0, 1000.0, NUM_CLASSES)


def _draw_geometry(rand: RandomizationConfig, seed: int,
                   camera: CameraModel) -> tuple[CameraModel, np.ndarray]:
    if not rand.enable_geometry:
        return camera, np.zeros(3)
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, _STREAM_GEOMETRY]))
    fov = float(np.clip(camera.fov + rng.uniform(-rand.fov_jitter, rand.fov_jitter),
                        0.2, math.pi - 0.1))
    offset = tuple(np.asarray(camera.mount_offset)
                   + rng.uniform(-rand.camera_pos_jitter, rand.camera_pos_jitter, 3))
    rot_jit = rng.uniform(-rand.camera_rot_jitter, rand.camera_rot_jitter, 3)
    return replace(camera, fov=fov, mount_offset=offset), rot_jit


def render(world: World, vehicle_pose, camera: Optional[CameraModel] = None,
           rand: Optional[RandomizationConfig] = None, rng_seed: int = 0) -> RenderOutput:
    """Render one camera frame from a vehicle at (x, y, yaw) resting on terrain."""
    camera = camera or CameraModel()
    rand = rand or RandomizationConfig.canonical()
    x, y, yaw = float(vehicle_pose[0]), float(vehicle_pose[1]), float(vehicle_pose[2])

    colors = _draw_color_jitter(rand, rng_seed)
    light_dir, light_color = _draw_light(rand, rng_seed)
    tex_phases = _draw_texture(rand, rng_seed)
    camera, rot_jit = _draw_geometry(rand, rng_seed, camera)

    roll_deg, pitch_deg = surface_attitude(world, x, y, yaw)
    roll, pitch = math.radians(roll_deg), math.radians(pitch_deg)
    veh_rot = _rot_z(yaw + rot_jit[0]) @ _rot_y(-(pitch + rot_jit[1])) @ _rot_x(roll + rot_jit[2])
    cam_rot = veh_rot @ _rot_y(camera.mount_pitch)
    base_z = float(height_at(world, x, y))
    origin = np.array([x, y, base_z]) + veh_rot @ np.asarray(camera.mount_offset, dtype=np.float64)

    res = camera.resolution
    dirs = (_pixel_directions(camera.fov, res) @ cam_rot.T)

    depth = _march_terrain(world, origin, dirs, camera.max_range)
    cls = np.full(dirs.shape[0], int(ClassId.SKY), dtype=np.uint8)
    terrain_hit = np.isfinite(depth)
    if np.any(terrain_hit):
        hx = origin[0] + dirs[terrain_hit, 0] * depth[terrain_hit]
        hy = origin[1] + dirs[terrain_hit, 1] * depth[terrain_hit]
        n = world.size
        ixg = np.clip((hx / world.grid_resolution).astype(np.int64), 0, n - 1)
        iyg = np.clip((hy / world.grid_resolution).astype(np.int64), 0, n - 1)
        on_road = world.road_mask[iyg, ixg]
        cls[terrain_hit] = np.where(on_road, int(ClassId.ROAD), int(ClassId.GROUND))

    cap_hit = _intersect_obstacles(world, origin, dirs, depth, cls, camera.fov, res,
                                   cam_rot, camera.max_range)

    hit = np.isfinite(depth) & (depth <= camera.max_range)
    cls[~hit] = int(ClassId.SKY)
    depth_out = np.where(hit, depth, camera.max_range)

    # Shading: Lambertian from per-surface normals, flat for sky.
    shade = np.ones(dirs.shape[0])
    ambient = 0.35
    if np.any(hit):
        hx = origin[0] + dirs[hit, 0] * depth[hit]
        hy = origin[1] + dirs[hit, 1] * depth[hit]
        normals = np.asarray(terrain_normal(world, hx, hy)).reshape(-1, 3)
        obstacle_pix = is_obstacle_class(cls[hit])
        if np.any(obstacle_pix):
            # Side normals are radial; cap normals point up.
            ox_arr = np.zeros(int(obstacle_pix.sum()))
            oy_arr = np.zeros_like(ox_arr)
            # Nearest obstacle center per hit pixel (small count, fine to brute force).
            pxo = hx[obstacle_pix]
            pyo = hy[obstacle_pix]
            if world._obs_xy.shape[0]:
                d2 = (pxo[:, None] - world._obs_xy[None, :, 0]) ** 2 \
                    + (pyo[:, None] - world._obs_xy[None, :, 1]) ** 2
                nearest = np.argmin(d2, axis=1)
                ox_arr = pxo - world._obs_xy[nearest, 0]
                oy_arr = pyo - world._obs_xy[nearest, 1]
            norm = np.hypot(ox_arr, oy_arr)
            norm[norm < 1e-9] = 1.0
            obs_normals = np.stack([ox_arr / norm, oy_arr / norm, np.zeros_like(norm)], axis=-1)
            cap_sel = cap_hit[hit][obstacle_pix]
            obs_normals[cap_sel] = (0.0, 0.0, 1.0)
            normals[obstacle_pix] = obs_normals
        lambert = np.clip(normals @ light_dir, 0.0, 1.0)
        shade[hit] = ambient + (1.0 - ambient) * lambert

    rgb = colors[cls] * shade[:, None] * light_color[None, :]
    if tex_phases is not None:
        hx_full = origin[0] + dirs[:, 0] * depth_out
        hy_full = origin[1] + dirs[:, 1] * depth_out
        qx = np.floor(hx_full * rand.texture_frequency)
        qy = np.floor(hy_full * rand.texture_frequency)
        speckle = 1.0 + rand.texture_noise * (2.0 * _hash_noise(qx, qy, 0.0) - 1.0)
        phase_per_pix = tex_phases[cls]
        speckle *= 1.0 + 0.5 * rand.texture_noise * (2.0 * _hash_noise(qx, qy, phase_per_pix) - 1.0)
        speckle[cls == int(ClassId.SKY)] = 1.0
        rgb *= speckle[:, None]

    rgb8 = (np.clip(rgb, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    class_map = cls.reshape(res, res)
    return RenderOutput(
        rgb=rgb8.reshape(res, res, 3),
        class_map=class_map,
        depth=depth_out.reshape(res, res).astype(np.float32),
        obstacle_mask=obstacle_mask(class_map),
    )


def colorize_segmentation(class_map: np.ndarray) -> np.ndarray:
    """Map class indices to the fixed palette; rejects out-of-range values."""
    cm = np.asarray(class_map)
    if cm.size and (cm.min() < 0 or cm.max() >= NUM_CLASSES):
        raise ValueError(f"class indices must be in [0, {NUM_CLASSES}), got "
                         f"[{cm.min()}, {cm.max()}]")
    return PALETTE_ARRAY[cm.astype(np.int64)]


def obstacle_mask(class_map: np.ndarray) -> np.ndarray:
    """True exactly where the class is an obstacle (trees, rocks, logs)."""
    return is_obstacle_class(class_map)


def save_pair(directory, pair_id: str, out: RenderOutput, meta: Optional[dict] = None) -> None:
    """Write one paired sample: RGB + grayscale class PNGs, raw f32 depth, meta line."""
    from PIL import Image

    Image.fromarray(out.rgb).save(os.path.join(directory, f"{pair_id}_rgb.png"))
    Image.fromarray(out.class_map, mode="L").save(os.path.join(directory, f"{pair_id}_seg.png"))
    with open(os.path.join(directory, f"{pair_id}_depth.f32"), "wb") as f:
        f.write(out.depth.astype("<f4").tobytes())
    if meta is not None:
        with open(os.path.join(directory, "meta.jsonl"), "a") as f:
            f.write(json.dumps({"id": pair_id, **meta}) + "\n")


def load_pair(directory, pair_id: str) -> dict:
    """Read back one paired sample as arrays (depth reshaped square)."""
    from PIL import Image

    rgb = np.asarray(Image.open(os.path.join(directory, f"{pair_id}_rgb.png")))
    seg = np.asarray(Image.open(os.path.join(directory, f"{pair_id}_seg.png")))
    raw = open(os.path.join(directory, f"{pair_id}_depth.f32"), "rb").read()
    depth = np.frombuffer(raw, dtype="<f4")
    side = int(math.isqrt(depth.size))
    if side * side != depth.size:
        raise ValueError(f"depth file for {pair_id} is not square ({depth.size} floats)")
    return {"rgb": rgb, "seg": seg, "depth": depth.reshape(side, side)}
