"""
Ground-truth simulator: a line-segment world with convex non-permanent
objects and search targets, planar robot poses, the 360 degree LiDAR and the
cone-shaped visual sensor.

All geometry is exact: rays and sight lines are intersected analytically
against every edge at once with numpy.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Sequence

import numpy as np

from settings import check_keys

WORLD_FILE_VERSION = 1
WORLD_FILE_KEYS = ("version", "bounds", "segments", "objects", "targets", "start_pose")
TARGET_BODY_SIDES = 8
MIN_RANGE = 1e-3
_EPS = 1e-9


class DomainError(ValueError):
    """A precondition of a simulator, mapping or learning operation was violated."""


def wrap_angle(theta: float) -> float:
    """Normalize to (-pi, pi]."""
    t = math.remainder(theta, 2.0 * math.pi)
    if t <= -math.pi:
        t += 2.0 * math.pi
    return t


def wrap_angles(theta: np.ndarray) -> np.ndarray:
    t = np.mod(np.asarray(theta, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(t <= -np.pi, t + 2.0 * np.pi, t)


def scan_seed(seed: int, step: int) -> int:
    """Independent, reproducible noise seed for the scan taken at ``step``."""
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(step)]).generate_state(1)[0])


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Pose":
        return cls(float(values[0]), float(values[1]), float(values[2]))

    def distance_to(self, other: "Pose | Sequence[float] | np.ndarray") -> float:
        xy = other.xy if isinstance(other, Pose) else np.asarray(other, dtype=float)
        return float(math.hypot(xy[0] - self.x, xy[1] - self.y))

    def to_world(self, local_xy: np.ndarray) -> np.ndarray:
        """Apply the planar rigid transform of this pose to robot-frame points [N, 2]."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        pts = np.asarray(local_xy, dtype=float)
        return np.column_stack(
            (self.x + c * pts[:, 0] - s * pts[:, 1], self.y + s * pts[:, 0] + c * pts[:, 1])
        )


@dataclass(frozen=True)
class Bounds:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise DomainError(f"Degenerate bounds: {self.as_list()}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    def as_list(self) -> list[float]:
        return [self.xmin, self.ymin, self.xmax, self.ymax]

    def contains(self, x: float, y: float, strict: bool = False) -> bool:
        if strict:
            return self.xmin < x < self.xmax and self.ymin < y < self.ymax
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax

    def contains_points(self, pts: np.ndarray, strict: bool = False) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        if strict:
            return (
                (pts[:, 0] > self.xmin) & (pts[:, 0] < self.xmax)
                & (pts[:, 1] > self.ymin) & (pts[:, 1] < self.ymax)
            )
        return (
            (pts[:, 0] >= self.xmin) & (pts[:, 0] <= self.xmax)
            & (pts[:, 1] >= self.ymin) & (pts[:, 1] <= self.ymax)
        )


@dataclass(frozen=True)
class Target:
    x: float
    y: float
    radius: float

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def body(self, sides: int = TARGET_BODY_SIDES) -> np.ndarray:
        """Convex CCW polygon standing in for the physical target."""
        ang = np.arange(sides) * (2.0 * np.pi / sides)
        return np.column_stack((self.x + self.radius * np.cos(ang), self.y + self.radius * np.sin(ang)))


class HitSource(IntEnum):
    NONE = 0
    SEGMENT = 1
    OBJECT = 2


@dataclass(frozen=True)
class RayHit:
    range: float
    source: HitSource
    index: int = -1


def _polygon_edges(poly: np.ndarray) -> np.ndarray:
    return np.hstack((poly, np.roll(poly, -1, axis=0)))


def _signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _as_convex_ccw(vertices, label: str) -> np.ndarray:
    poly = np.array(vertices, dtype=float)
    if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
        raise DomainError(f"{label} needs at least 3 [x, y] vertices")
    if _signed_area(poly) < 0:
        poly = poly[::-1].copy()
    if abs(_signed_area(poly)) < _EPS:
        raise DomainError(f"{label} has zero area")
    e = np.roll(poly, -1, axis=0) - poly
    cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
    if np.any(cross < -_EPS):
        raise DomainError(f"{label} is not convex")
    return poly


def points_in_convex(poly: np.ndarray, pts: np.ndarray, strict: bool = True) -> np.ndarray:
    """Inside test of points [N, 2] against one CCW convex polygon."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    a = poly
    e = np.roll(poly, -1, axis=0) - poly
    rel = pts[:, None, :] - a[None, :, :]
    cross = e[None, :, 0] * rel[:, :, 1] - e[None, :, 1] * rel[:, :, 0]
    if strict:
        return np.all(cross > _EPS, axis=1)
    return np.all(cross >= -_EPS, axis=1)


@dataclass(frozen=True, eq=False)
class LineWorld:
    """Static map segments, non-permanent convex objects and search targets (meters)."""

    bounds: Bounds
    segments: np.ndarray
    objects: tuple = ()
    targets: tuple = ()
    start_pose: Pose | None = None
    object_edges: np.ndarray = field(init=False, repr=False)
    target_edges: np.ndarray = field(init=False, repr=False)
    occluder_edges: np.ndarray = field(init=False, repr=False)
    solid_edges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        segs = np.array(self.segments, dtype=float).reshape(-1, 4)
        segs.setflags(write=False)
        object.__setattr__(self, "segments", segs)

        objs = tuple(_as_convex_ccw(o, f"object {i}") for i, o in enumerate(self.objects))
        for i, poly in enumerate(objs):
            if not np.all(self.bounds.contains_points(poly, strict=True)):
                raise DomainError(f"object {i} is not strictly inside the bounds")
            poly.setflags(write=False)
        object.__setattr__(self, "objects", objs)

        tgts = tuple(t if isinstance(t, Target) else Target(*map(float, t)) for t in self.targets)
        for i, t in enumerate(tgts):
            if t.radius <= 0:
                raise DomainError(f"target {i} needs a positive radius")
            if not np.all(self.bounds.contains_points(t.body(), strict=True)):
                raise DomainError(f"target {i} is not strictly inside the bounds")
        object.__setattr__(self, "targets", tgts)

        start = self.start_pose
        if start is None:
            start = Pose((self.bounds.xmin + self.bounds.xmax) / 2.0, (self.bounds.ymin + self.bounds.ymax) / 2.0, 0.0)
        if not self.bounds.contains(start.x, start.y):
            raise DomainError("start pose lies outside the bounds")
        object.__setattr__(self, "start_pose", start)

        empty = np.zeros((0, 4))
        obj_edges = np.vstack([_polygon_edges(p) for p in objs]) if objs else empty
        tgt_edges = np.vstack([_polygon_edges(t.body()) for t in tgts]) if tgts else empty
        object.__setattr__(self, "object_edges", obj_edges)
        object.__setattr__(self, "target_edges", tgt_edges)
        # Walls and furniture block sight lines; target bodies never hide targets.
        object.__setattr__(self, "occluder_edges", np.vstack((segs, obj_edges)))
        object.__setattr__(self, "solid_edges", np.vstack((segs, obj_edges, tgt_edges)))

    def bodies(self) -> list[np.ndarray]:
        """Every solid non-permanent polygon: furniture followed by target bodies."""
        return list(self.objects) + [t.body() for t in self.targets]

    def edges(self, include_objects: bool) -> tuple[np.ndarray, np.ndarray]:
        """Edge array [E, 4] and the HitSource code of every edge."""
        if not include_objects:
            return self.segments, np.full(len(self.segments), HitSource.SEGMENT, dtype=np.int8)
        n_obj = len(self.object_edges) + len(self.target_edges)
        sources = np.concatenate(
            (np.full(len(self.segments), HitSource.SEGMENT, dtype=np.int8), np.full(n_obj, HitSource.OBJECT, dtype=np.int8))
        )
        return self.solid_edges, sources

    def inside_solid(self, x: float, y: float) -> bool:
        pt = np.array([[x, y]])
        return any(bool(points_in_convex(poly, pt, strict=True)[0]) for poly in self.bodies())


# ===== Ray casting =====

def _ray_edge_params(origin: np.ndarray, dirs: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Distance along each unit ray [N] to each edge [E]; inf where they miss."""
    p1 = edges[:, 0:2]
    wall = edges[:, 2:4] - p1
    to_start = p1[None, :, :] - origin[None, None, :]  # [1, E, 2]
    det = dirs[:, None, 0] * wall[None, :, 1] - dirs[:, None, 1] * wall[None, :, 0]  # [N, E]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (to_start[..., 0] * wall[None, :, 1] - to_start[..., 1] * wall[None, :, 0]) / det
        u = (to_start[..., 0] * dirs[:, None, 1] - to_start[..., 1] * dirs[:, None, 0]) / det
    valid = (np.abs(det) > 1e-12) & (t > _EPS) & (u >= -_EPS) & (u <= 1.0 + _EPS)
    return np.where(valid, t, np.inf)


def cast_rays(
    world: LineWorld,
    origin_xy: Sequence[float] | np.ndarray,
    angles: np.ndarray,
    max_range: float,
    include_objects: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch ray cast. Returns (ranges, HitSource codes, edge index or -1) per angle."""
    origin = np.asarray(origin_xy, dtype=float)
    angles = np.asarray(angles, dtype=float).reshape(-1)
    edges, sources = world.edges(include_objects)
    n = len(angles)
    if len(edges) == 0 or n == 0:
        return np.full(n, float(max_range)), np.zeros(n, dtype=np.int8), np.full(n, -1, dtype=np.int64)
    dirs = np.column_stack((np.cos(angles), np.sin(angles)))
    t = _ray_edge_params(origin, dirs, edges)
    idx = np.argmin(t, axis=1)
    t_min = t[np.arange(n), idx]
    hit = t_min <= max_range
    ranges = np.where(hit, t_min, float(max_range))
    src = np.where(hit, sources[idx], HitSource.NONE).astype(np.int8)
    return ranges, src, np.where(hit, idx, -1)


def ray_cast(world: LineWorld, origin: Pose, angle: float, max_range: float, include_objects: bool = True) -> RayHit:
    """Nearest intersection of one ray with the map segments (and object edges)."""
    if not world.bounds.contains(origin.x, origin.y):
        raise DomainError(f"ray origin ({origin.x:.3f}, {origin.y:.3f}) is outside the world bounds")
    ranges, src, idx = cast_rays(world, origin.xy, np.array([angle]), max_range, include_objects)
    source = HitSource(int(src[0]))
    index = int(idx[0])
    if source == HitSource.OBJECT:
        index -= len(world.segments)
    return RayHit(float(ranges[0]), source, index)


# ===== Sensors =====

@dataclass(frozen=True)
class SensorSpec:
    n_beams: int = 897
    lidar_max_range: float = 10.0
    lidar_noise_sigma: float = 0.01
    visual_fov_angle: float = math.radians(60.0)
    visual_max_range: float = 4.0
    scan_rate_hz: float = 5.0

    def __post_init__(self):
        if self.n_beams < 1:
            raise DomainError("n_beams must be positive")
        if not (0.0 < self.visual_fov_angle < math.pi):
            raise DomainError("visual_fov_angle must lie in (0, pi)")
        if min(self.lidar_max_range, self.visual_max_range, self.scan_rate_hz) <= 0:
            raise DomainError("sensor ranges and scan rate must be positive")
        if self.lidar_noise_sigma < 0:
            raise DomainError("lidar_noise_sigma must be non-negative")

    @property
    def period(self) -> float:
        return 1.0 / self.scan_rate_hz

    @property
    def beam_offsets(self) -> np.ndarray:
        """Beam j points at heading + 2*pi*j/n_beams (beam 0 along the heading, counter-clockwise)."""
        return np.arange(self.n_beams) * (2.0 * np.pi / self.n_beams)

    @classmethod
    def from_settings(cls, section: dict) -> "SensorSpec":
        check_keys("sensor", section, ("n_beams", "lidar_max_range", "lidar_noise_sigma", "visual_fov_deg", "visual_max_range", "scan_rate_hz"))
        kwargs = {k: v for k, v in section.items() if k != "visual_fov_deg"}
        if "visual_fov_deg" in section:
            kwargs["visual_fov_angle"] = math.radians(float(section["visual_fov_deg"]))
        if "n_beams" in kwargs:
            kwargs["n_beams"] = int(kwargs["n_beams"])
        return cls(**kwargs)


@dataclass(frozen=True)
class MotionSpec:
    v_robot: float = 0.5
    turn_rate: float = math.pi / 2.0

    def __post_init__(self):
        if self.v_robot <= 0 or self.turn_rate <= 0:
            raise DomainError("v_robot and turn_rate must be positive")

    @classmethod
    def from_settings(cls, section: dict) -> "MotionSpec":
        check_keys("motion", section, ("v_robot", "turn_rate"))
        return cls(**section)


@dataclass(frozen=True, eq=False)
class Scan:
    ranges: np.ndarray
    hit: np.ndarray
    max_range: float
    timestamp: int = 0

    def __post_init__(self):
        ranges = np.asarray(self.ranges, dtype=float)
        hit = np.asarray(self.hit, dtype=bool)
        if ranges.ndim != 1 or hit.shape != ranges.shape:
            raise DomainError("scan ranges and hit flags must be 1-D arrays of equal length")
        if np.any(ranges <= 0) or np.any(ranges > self.max_range + _EPS):
            raise DomainError("scan ranges must lie in (0, max_range]")
        object.__setattr__(self, "ranges", ranges)
        object.__setattr__(self, "hit", hit)

    @property
    def n_beams(self) -> int:
        return len(self.ranges)

    def beam_angles(self, pose: Pose) -> np.ndarray:
        return pose.theta + np.arange(self.n_beams) * (2.0 * np.pi / self.n_beams)

    def points_world(self, pose: Pose) -> np.ndarray:
        """End point of every beam in the world frame [n_beams, 2]."""
        ang = self.beam_angles(pose)
        return np.column_stack((pose.x + self.ranges * np.cos(ang), pose.y + self.ranges * np.sin(ang)))


def simulate_scan(world: LineWorld, pose: Pose, spec: SensorSpec, rng_seed: int = 0, timestamp: int = 0) -> Scan:
    if not world.bounds.contains(pose.x, pose.y):
        raise DomainError(f"pose ({pose.x:.3f}, {pose.y:.3f}) is outside the world bounds")
    if world.inside_solid(pose.x, pose.y):
        raise DomainError(f"pose ({pose.x:.3f}, {pose.y:.3f}) is inside an object")
    angles = pose.theta + spec.beam_offsets
    ranges, src, _ = cast_rays(world, pose.xy, angles, spec.lidar_max_range, include_objects=True)
    hit = src != HitSource.NONE
    rng = np.random.default_rng(rng_seed)
    noise = rng.normal(0.0, spec.lidar_noise_sigma, spec.n_beams) if spec.lidar_noise_sigma > 0 else np.zeros(spec.n_beams)
    noisy = np.where(hit, np.clip(ranges + noise, MIN_RANGE, spec.lidar_max_range), spec.lidar_max_range)
    return Scan(noisy, hit, spec.lidar_max_range, timestamp)


def in_visual_cone(pose: Pose, pts: np.ndarray, spec: SensorSpec) -> np.ndarray:
    """Cone membership of points [N, 2]; range and angle boundaries are inclusive."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    d = pts - pose.xy[None, :]
    dist = np.hypot(d[:, 0], d[:, 1])
    bearing = wrap_angles(np.arctan2(d[:, 1], d[:, 0]) - pose.theta)
    inside = (dist <= spec.visual_max_range + _EPS) & (np.abs(bearing) <= spec.visual_fov_angle / 2.0 + _EPS)
    return inside | (dist < _EPS)


def segments_blocked(origin_xy: np.ndarray, pts: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """True where the sight line origin -> point crosses an edge before reaching the point."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    if len(edges) == 0 or len(pts) == 0:
        return np.zeros(len(pts), dtype=bool)
    origin = np.asarray(origin_xy, dtype=float)
    r = pts - origin[None, :]  # [M, 2], t in [0, 1] along the sight line
    p1 = edges[:, 0:2]
    s = edges[:, 2:4] - p1
    q = p1[None, :, :] - origin[None, None, :]
    det = r[:, None, 0] * s[None, :, 1] - r[:, None, 1] * s[None, :, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (q[..., 0] * s[None, :, 1] - q[..., 1] * s[None, :, 0]) / det
        u = (q[..., 0] * r[:, None, 1] - q[..., 1] * r[:, None, 0]) / det
    crossing = (np.abs(det) > 1e-12) & (t > _EPS) & (t < 1.0 - _EPS) & (u >= -_EPS) & (u <= 1.0 + _EPS)
    return np.any(crossing, axis=1)


def grid_geometry(bounds: Bounds, resolution: float) -> tuple[np.ndarray, tuple[int, int]]:
    """Origin and (ny, nx) shape of a grid covering the bounds."""
    nx = int(math.ceil(bounds.width / resolution - 1e-9))
    ny = int(math.ceil(bounds.height / resolution - 1e-9))
    return np.array([bounds.xmin, bounds.ymin]), (ny, nx)


def cone_cells(
    pose: Pose, spec: SensorSpec, resolution: float, origin: np.ndarray, shape: tuple[int, int]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cells (ix, iy) whose centers fall inside the visual cone, and those centers."""
    ny, nx = shape
    r = spec.visual_max_range
    ix0 = max(int(math.floor((pose.x - r - origin[0]) / resolution)), 0)
    ix1 = min(int(math.floor((pose.x + r - origin[0]) / resolution)), nx - 1)
    iy0 = max(int(math.floor((pose.y - r - origin[1]) / resolution)), 0)
    iy1 = min(int(math.floor((pose.y + r - origin[1]) / resolution)), ny - 1)
    if ix1 < ix0 or iy1 < iy0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros((0, 2))
    gx, gy = np.meshgrid(np.arange(ix0, ix1 + 1), np.arange(iy0, iy1 + 1))
    ix, iy = gx.ravel(), gy.ravel()
    centers = np.column_stack((origin[0] + (ix + 0.5) * resolution, origin[1] + (iy + 0.5) * resolution))
    inside = in_visual_cone(pose, centers, spec)
    return ix[inside], iy[inside], centers[inside]


def visible_cells(
    world: LineWorld,
    pose: Pose,
    spec: SensorSpec,
    resolution: float = 0.1,
    origin: np.ndarray | None = None,
    shape: tuple[int, int] | None = None,
) -> frozenset[tuple[int, int]]:
    """Cells (ix, iy) in the visual cone with an unobstructed sight line to their centers."""
    if origin is None or shape is None:
        origin, shape = grid_geometry(world.bounds, resolution)
    ix, iy, centers = cone_cells(pose, spec, resolution, origin, shape)
    blocked = segments_blocked(pose.xy, centers, world.occluder_edges)
    return frozenset(zip(ix[~blocked].tolist(), iy[~blocked].tolist()))


def target_cells(world: LineWorld, resolution: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Grid cell (ix, iy) holding each target center."""
    origin, (ny, nx) = grid_geometry(world.bounds, resolution)
    centers = np.array([t.center for t in world.targets]).reshape(-1, 2)
    ix = np.clip(np.floor((centers[:, 0] - origin[0]) / resolution).astype(np.int64), 0, nx - 1)
    iy = np.clip(np.floor((centers[:, 1] - origin[1]) / resolution).astype(np.int64), 0, ny - 1)
    return ix, iy


def check_detection(world: LineWorld, pose: Pose, spec: SensorSpec, resolution: float = 0.1) -> frozenset[int]:
    """Indices of targets whose cell center is in the cone and in line of sight, the ``visible_cells`` rule."""
    if not world.targets:
        return frozenset()
    origin, _ = grid_geometry(world.bounds, resolution)
    ix, iy = target_cells(world, resolution)
    centers = np.column_stack((origin[0] + (ix + 0.5) * resolution, origin[1] + (iy + 0.5) * resolution))
    inside = in_visual_cone(pose, centers, spec)
    blocked = segments_blocked(pose.xy, centers, world.occluder_edges)
    return frozenset(int(i) for i in np.flatnonzero(inside & ~blocked))


# ===== Motion =====

@dataclass(frozen=True)
class Trajectory:
    samples: tuple = ()
    times: tuple = ()
    elapsed: float = 0.0
    length: float = 0.0
    complete: bool = True

    @property
    def poses(self) -> list[Pose]:
        return [p for p, _ in self.samples]

    @property
    def scans(self) -> list[Scan]:
        return [s for _, s in self.samples]


def path_length(path: Sequence[Pose]) -> float:
    return float(sum(a.distance_to(b) for a, b in zip(path, path[1:])))


def first_contact(world: LineWorld, a: np.ndarray, b: np.ndarray) -> float | None:
    """Fraction along a -> b where the segment first touches solid geometry, or None."""
    edges = world.solid_edges
    if len(edges) == 0:
        return None
    r = b - a
    if float(np.hypot(*r)) < _EPS:
        return None
    p1 = edges[:, 0:2]
    s = edges[:, 2:4] - p1
    q = p1 - a[None, :]
    det = r[0] * s[:, 1] - r[1] * s[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (q[:, 0] * s[:, 1] - q[:, 1] * s[:, 0]) / det
        u = (q[:, 0] * r[1] - q[:, 1] * r[0]) / det
    ok = (np.abs(det) > 1e-12) & (t >= -_EPS) & (t <= 1.0 + _EPS) & (u >= -_EPS) & (u <= 1.0 + _EPS)
    if not np.any(ok):
        return None
    return float(max(np.min(t[ok]), 0.0))


def check_path_clear(world: LineWorld, path: Sequence[Pose]) -> None:
    for i, (a, b) in enumerate(zip(path, path[1:])):
        frac = first_contact(world, a.xy, b.xy)
        if frac is not None:
            hit = a.xy + frac * (b.xy - a.xy)
            raise DomainError(f"path leg {i} passes through occupied geometry at ({hit[0]:.3f}, {hit[1]:.3f})")


def safe_path_prefix(world: LineWorld, path: Sequence[Pose], standoff: float = 0.05) -> tuple[list[Pose], bool]:
    """Longest collision-free prefix of ``path``, stopping ``standoff`` meters short of contact."""
    path = list(path)
    for i, (a, b) in enumerate(zip(path, path[1:])):
        frac = first_contact(world, a.xy, b.xy)
        if frac is None:
            continue
        leg = b.xy - a.xy
        length = float(np.hypot(*leg))
        keep = frac * length - standoff
        prefix = path[: i + 1]
        if keep > _EPS:
            end = a.xy + leg * (keep / length)
            prefix.append(Pose(end[0], end[1], math.atan2(leg[1], leg[0])))
        return prefix, True
    return path, False


def _motion_phases(path: Sequence[Pose], motion: MotionSpec) -> list[tuple[float, Pose, Pose]]:
    """(duration, start, end) phases: turn to face each leg, drive it, finally turn to the last heading."""
    phases: list[tuple[float, Pose, Pose]] = []
    current = path[0]
    for nxt in path[1:]:
        leg = nxt.xy - current.xy
        length = float(np.hypot(*leg))
        if length > _EPS:
            heading = math.atan2(leg[1], leg[0])
            turn = abs(wrap_angle(heading - current.theta))
            if turn > _EPS:
                faced = Pose(current.x, current.y, heading)
                phases.append((turn / motion.turn_rate, current, faced))
                current = faced
            moved = Pose(nxt.x, nxt.y, current.theta)
            phases.append((length / motion.v_robot, current, moved))
            current = moved
    final_turn = abs(wrap_angle(path[-1].theta - current.theta))
    if final_turn > _EPS:
        phases.append((final_turn / motion.turn_rate, current, Pose(current.x, current.y, path[-1].theta)))
    return phases


def _interpolate(start: Pose, end: Pose, frac: float) -> Pose:
    dtheta = wrap_angle(end.theta - start.theta)
    return Pose(
        start.x + frac * (end.x - start.x),
        start.y + frac * (end.y - start.y),
        start.theta + frac * dtheta,
    )


def move_robot(
    world: LineWorld,
    path: Sequence[Pose],
    spec: SensorSpec,
    motion: MotionSpec = MotionSpec(),
    rng_seed: int = 0,
    start_step: int = 0,
    max_duration: float = math.inf,
) -> Trajectory:
    """
    Drive along ``path`` (path[0] is the current pose), scanning every
    1/scan_rate_hz seconds. With ``max_duration`` the drive stops at the last
    scan that fits, and the trajectory is marked incomplete.
    """
    path = list(path)
    if len(path) < 2:
        return Trajectory()
    check_path_clear(world, path)
    phases = _motion_phases(path, motion)
    total = float(sum(d for d, _, _ in phases))
    if total <= _EPS:
        return Trajectory()

    period = spec.period
    n_samples = int(math.ceil(total / period - 1e-9))
    complete = True
    if total > max_duration + 1e-9:
        n_fit = int(math.floor(max_duration / period + 1e-9))
        if n_fit < 1:
            raise DomainError(f"max_duration {max_duration:g} s is shorter than one scan period")
        if n_fit < n_samples:
            n_samples, complete = n_fit, False
    ends = np.cumsum([d for d, _, _ in phases])
    samples = []
    times = []
    for i in range(1, n_samples + 1):
        t = min(i * period, total)
        k = min(int(np.searchsorted(ends, t - 1e-12)), len(phases) - 1)
        duration, start, end = phases[k]
        phase_start = ends[k] - duration
        frac = 1.0 if duration <= _EPS else min(max((t - phase_start) / duration, 0.0), 1.0)
        pose = _interpolate(start, end, frac)
        step = start_step + i
        samples.append((pose, simulate_scan(world, pose, spec, scan_seed(rng_seed, step), timestamp=step)))
        times.append(t)
    if complete:
        return Trajectory(tuple(samples), tuple(times), total, path_length(path))
    driven = path_length([path[0], *(p for p, _ in samples)])
    return Trajectory(tuple(samples), tuple(times), times[-1], driven, complete=False)


# ===== World file =====

def world_to_dict(world: LineWorld) -> dict:
    return {
        "version": WORLD_FILE_VERSION,
        "bounds": world.bounds.as_list(),
        "segments": world.segments.tolist(),
        "objects": [poly.tolist() for poly in world.objects],
        "targets": [[t.x, t.y, t.radius] for t in world.targets],
        "start_pose": world.start_pose.as_array().tolist(),
    }


def world_from_dict(doc: dict) -> LineWorld:
    if not isinstance(doc, dict):
        raise DomainError("world document must be a JSON object")
    extra = sorted(set(doc) - set(WORLD_FILE_KEYS))
    missing = sorted(set(WORLD_FILE_KEYS) - set(doc))
    if extra:
        raise DomainError(f"unknown world field(s): {', '.join(extra)}")
    if missing:
        raise DomainError(f"missing world field(s): {', '.join(missing)}")
    if doc["version"] != WORLD_FILE_VERSION:
        raise DomainError(f"unsupported world file version {doc['version']!r}")
    try:
        bounds = Bounds(*map(float, doc["bounds"]))
        segments = np.asarray(doc["segments"], dtype=float).reshape(-1, 4)
        targets = tuple(Target(*map(float, t)) for t in doc["targets"])
        start = Pose(*map(float, doc["start_pose"]))
    except (TypeError, ValueError) as e:
        if isinstance(e, DomainError):
            raise
        raise DomainError(f"malformed world document: {e}") from e
    return LineWorld(bounds, segments, tuple(doc["objects"]), targets, start)


def save_world(world: LineWorld, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(world_to_dict(world), f, indent=2)
    return path


def load_world(path: str | Path) -> LineWorld:
    with open(path, "r", encoding="utf-8") as f:
        return world_from_dict(json.load(f))


def rectangle_segments(xmin: float, ymin: float, xmax: float, ymax: float) -> list[list[float]]:
    return [
        [xmin, ymin, xmax, ymin],
        [xmax, ymin, xmax, ymax],
        [xmax, ymax, xmin, ymax],
        [xmin, ymax, xmin, ymin],
    ]


def rectangle(xmin: float, ymin: float, xmax: float, ymax: float) -> np.ndarray:
    return np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]], dtype=float)
