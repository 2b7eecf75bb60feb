"""
Global search maps (one fed by the 360 degree LiDAR, one restricted to the
visual cone) and the frontiers extracted from them.

Grids are indexed ``cells[iy, ix]``; cell (ix, iy) has its center at
``origin + (i + 0.5) * resolution``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from world import Bounds, LineWorld, Pose, Scan, SensorSpec, cone_cells, grid_geometry, in_visual_cone, points_in_convex


class CellState(IntEnum):
    UNKNOWN = -1
    FREE = 0
    OCCUPIED = 1


class SensorKind(str, Enum):
    LIDAR = "lidar"
    VISUAL = "visual"


PGM_UNKNOWN = 205
PGM_FREE = 254
PGM_OCCUPIED = 0
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(eq=False)
class SearchMap:
    resolution: float
    origin: np.ndarray
    cells: np.ndarray
    sensor_kind: SensorKind = SensorKind.LIDAR

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.cells = np.asarray(self.cells, dtype=np.int8)
        self.sensor_kind = SensorKind(self.sensor_kind)

    @classmethod
    def empty(cls, bounds: Bounds, resolution: float = 0.1, sensor_kind: SensorKind = SensorKind.LIDAR) -> "SearchMap":
        origin, shape = grid_geometry(bounds, resolution)
        return cls(resolution, origin, np.full(shape, CellState.UNKNOWN, dtype=np.int8), sensor_kind)

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def copy(self) -> "SearchMap":
        return SearchMap(self.resolution, self.origin.copy(), self.cells.copy(), self.sensor_kind)

    def world_to_cell(self, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        ix = np.floor((xy[:, 0] - self.origin[0]) / self.resolution).astype(np.int64)
        iy = np.floor((xy[:, 1] - self.origin[1]) / self.resolution).astype(np.int64)
        return ix, iy

    def cell_center(self, ix, iy) -> np.ndarray:
        ix = np.asarray(ix, dtype=float)
        iy = np.asarray(iy, dtype=float)
        return np.stack(
            (self.origin[0] + (ix + 0.5) * self.resolution, self.origin[1] + (iy + 0.5) * self.resolution), axis=-1
        )

    def in_grid(self, ix, iy) -> np.ndarray:
        ny, nx = self.shape
        ix = np.asarray(ix)
        iy = np.asarray(iy)
        return (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)

    def state_at(self, xy) -> CellState:
        ix, iy = self.world_to_cell(xy)
        if not self.in_grid(ix, iy)[0]:
            return CellState.OCCUPIED
        return CellState(int(self.cells[iy[0], ix[0]]))

    def count(self, state: CellState) -> int:
        return int(np.sum(self.cells == state))


@dataclass(frozen=True, eq=False)
class Frontier:
    cells: np.ndarray  # [m, 2] of (ix, iy)
    centroid: np.ndarray
    source: SensorKind = field(default=SensorKind.LIDAR)

    @property
    def size(self) -> int:
        return len(self.cells)


def update_map(smap: SearchMap, pose: Pose, scan: Scan, spec: SensorSpec) -> SearchMap:
    """Raytrace one scan into the map in place: traversed cells free, hit cells occupied."""
    angles = scan.beam_angles(pose)
    ranges = scan.ranges.copy()
    hit = scan.hit.copy()
    if smap.sensor_kind == SensorKind.VISUAL:
        rel = np.abs(np.mod(angles - pose.theta + np.pi, 2.0 * np.pi) - np.pi)
        keep = rel <= spec.visual_fov_angle / 2.0 + 1e-9
        hit = hit & (ranges <= spec.visual_max_range)
        ranges = np.minimum(ranges, spec.visual_max_range)
        angles, ranges, hit = angles[keep], ranges[keep], hit[keep]
    if len(ranges) == 0:
        return smap

    step = smap.resolution / 2.0
    n_samples = int(math.ceil(float(ranges.max()) / step)) + 1
    d = np.arange(n_samples) * step
    valid = d[None, :] < ranges[:, None]
    cos, sin = np.cos(angles)[:, None], np.sin(angles)[:, None]
    sx = pose.x + d[None, :] * cos
    sy = pose.y + d[None, :] * sin
    ix, iy = smap.world_to_cell(np.column_stack((sx.ravel(), sy.ravel())))
    ix, iy = ix.reshape(sx.shape), iy.reshape(sx.shape)

    end = np.column_stack((pose.x + ranges * cos[:, 0], pose.y + ranges * sin[:, 0]))
    hx, hy = smap.world_to_cell(end)
    own_hit = hit[:, None] & (ix == hx[:, None]) & (iy == hy[:, None])
    free = valid & ~own_hit & smap.in_grid(ix, iy)
    fx, fy = ix[free], iy[free]
    ox, oy = hx[hit], hy[hit]
    keep_occ = smap.in_grid(ox, oy)
    ox, oy = ox[keep_occ], oy[keep_occ]

    if smap.sensor_kind == SensorKind.VISUAL:
        in_cone = in_visual_cone(pose, smap.cell_center(fx, fy).reshape(-1, 2), spec)
        fx, fy = fx[in_cone], fy[in_cone]
        in_cone = in_visual_cone(pose, smap.cell_center(ox, oy).reshape(-1, 2), spec)
        ox, oy = ox[in_cone], oy[in_cone]

    smap.cells[fy, fx] = CellState.FREE
    # Latest evidence wins: a hit this scan overrides free from any beam.
    smap.cells[oy, ox] = CellState.OCCUPIED
    return smap


def frontier_mask(cells: np.ndarray) -> np.ndarray:
    """Free cells with at least one 4-adjacent unknown cell."""
    unknown = np.pad(cells == CellState.UNKNOWN, 1, constant_values=False)
    near_unknown = unknown[:-2, 1:-1] | unknown[2:, 1:-1] | unknown[1:-1, :-2] | unknown[1:-1, 2:]
    return (cells == CellState.FREE) & near_unknown


def extract_frontiers(smap: SearchMap, min_frontier_size: int = 5) -> list[Frontier]:
    labels, n = ndimage.label(frontier_mask(smap.cells), structure=EIGHT_CONNECTED)
    frontiers = []
    for k in range(1, n + 1):
        iy, ix = np.nonzero(labels == k)
        if len(ix) < min_frontier_size:
            continue
        centers = smap.cell_center(ix, iy)
        frontiers.append(Frontier(np.column_stack((ix, iy)), centers.mean(axis=0), smap.sensor_kind))
    return frontiers


def los_clear(smap: SearchMap, origin_xy: np.ndarray, points: np.ndarray, exclude_radius: float = 0.0) -> np.ndarray:
    """
    Sampled sight lines from ``origin_xy`` to each point over the map: occupied
    cells block, unknown cells are transparent. The cell holding the point and
    any cell sampled within ``exclude_radius`` of it never block.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(points) == 0:
        return np.zeros(0, dtype=bool)
    origin = np.asarray(origin_xy, dtype=float)
    delta = points - origin[None, :]
    length = np.hypot(delta[:, 0], delta[:, 1])
    n = int(math.ceil(float(length.max()) / (smap.resolution / 4.0))) + 1
    frac = np.linspace(0.0, 1.0, max(n, 2))
    samples = origin[None, None, :] + frac[None, :, None] * delta[:, None, :]
    ix, iy = smap.world_to_cell(samples.reshape(-1, 2))
    ix, iy = ix.reshape(len(points), -1), iy.reshape(len(points), -1)
    inside = smap.in_grid(ix, iy)
    occupied = np.zeros(ix.shape, dtype=bool)
    occupied[inside] = smap.cells[iy[inside], ix[inside]] == CellState.OCCUPIED
    tx, ty = smap.world_to_cell(points)
    own = (ix == tx[:, None]) & (iy == ty[:, None])
    if exclude_radius > 0:
        own |= ((1.0 - frac)[None, :] * length[:, None]) <= exclude_radius
    return ~np.any(occupied & ~own, axis=1)


def count_unknown_visible(
    smap: SearchMap, candidate: Pose, spec: SensorSpec, occluders: SearchMap | None = None
) -> int:
    """
    Unknown cells of ``smap`` in the cone of ``candidate`` with a clear sight
    line. Occupied cells of ``occluders`` (``smap`` itself by default) block.
    """
    sight = smap if occluders is None else occluders
    if sight.shape != smap.shape:
        raise ValueError("occluder map must share the grid of the counted map")
    ix, iy, centers = cone_cells(candidate, spec, smap.resolution, smap.origin, smap.shape)
    unknown = smap.cells[iy, ix] == CellState.UNKNOWN
    if not np.any(unknown):
        return 0
    return int(np.sum(los_clear(sight, candidate.xy, centers[unknown])))


# ===== Ground-truth rasters =====

def rasterize_world(world: LineWorld, resolution: float = 0.1) -> np.ndarray:
    """Boolean occupancy [ny, nx] of walls, furniture and target bodies."""
    origin, shape = grid_geometry(world.bounds, resolution)
    occ = np.zeros(shape, dtype=bool)
    edges = world.solid_edges
    for x1, y1, x2, y2 in edges:
        n = max(int(math.ceil(math.hypot(x2 - x1, y2 - y1) / (resolution / 4.0))), 1)
        t = np.linspace(0.0, 1.0, n + 1)
        ix = np.floor((x1 + t * (x2 - x1) - origin[0]) / resolution).astype(np.int64)
        iy = np.floor((y1 + t * (y2 - y1) - origin[1]) / resolution).astype(np.int64)
        ok = (ix >= 0) & (ix < shape[1]) & (iy >= 0) & (iy < shape[0])
        occ[iy[ok], ix[ok]] = True
    for poly in world.bodies():
        lo = np.floor((poly.min(axis=0) - origin) / resolution).astype(int)
        hi = np.floor((poly.max(axis=0) - origin) / resolution).astype(int)
        x0, y0 = max(lo[0], 0), max(lo[1], 0)
        x1, y1 = min(hi[0], shape[1] - 1), min(hi[1], shape[0] - 1)
        if x1 < x0 or y1 < y0:
            continue
        gy, gx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
        centers = np.column_stack((origin[0] + (gx.ravel() + 0.5) * resolution, origin[1] + (gy.ravel() + 0.5) * resolution))
        inside = points_in_convex(poly, centers, strict=False).reshape(gx.shape)
        occ[y0 : y1 + 1, x0 : x1 + 1] |= inside
    return occ


def inflate(occupied: np.ndarray, radius: float, resolution: float) -> np.ndarray:
    r = int(math.ceil(radius / resolution))
    if r <= 0:
        return occupied.copy()
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    disk = (xx * xx + yy * yy) <= r * r
    return ndimage.binary_dilation(occupied, structure=disk)


# ===== Snapshot export =====

def snapshot_image(smap: SearchMap) -> Image.Image:
    """Greyscale image of the map, row 0 = max y."""
    img = np.full(smap.shape, PGM_UNKNOWN, dtype=np.uint8)
    img[smap.cells == CellState.FREE] = PGM_FREE
    img[smap.cells == CellState.OCCUPIED] = PGM_OCCUPIED
    return Image.fromarray(np.ascontiguousarray(np.flipud(img)))


def export_snapshot(smap: SearchMap, path: str | Path) -> tuple[Path, Path]:
    """Write the map as a binary PGM plus a JSON sidecar with its geometry."""
    path = Path(path).with_suffix(".pgm")
    path.parent.mkdir(parents=True, exist_ok=True)
    snapshot_image(smap).save(path, format="PPM")
    sidecar = path.with_suffix(".json")
    meta = {
        "image": path.name,
        "resolution": smap.resolution,
        "origin": smap.origin.tolist(),
        "width": int(smap.shape[1]),
        "height": int(smap.shape[0]),
        "sensor_kind": smap.sensor_kind.value,
    }
    with open(sidecar, "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)
    return path, sidecar
