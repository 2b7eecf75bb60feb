"""
Procedural indoor worlds and the random trajectories used to record datasets.

Floor plans are laid out on a 0.5 m module grid: every module belongs to a
room (or corridor) or is solid. Walls are the module edges between different
rooms, minus the door openings, merged into long segments.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import ndimage

from mapping import CellState, SearchMap, inflate, rasterize_world
from planner import ReachabilityField, plan_path
from world import Bounds, DomainError, LineWorld, MotionSpec, Pose, Target, grid_geometry, rectangle

MODULE = 0.5
DOOR_MODULES = 2
SOLID = -1
MIN_SIZE = 10.0
MAX_SIZE = 50.0
TARGET_RADIUS = 0.15
ORACLE_CLEARANCE = 0.2


class GenerationError(DomainError):
    """Procedural generation could not satisfy its constraints."""


class Archetype(str, Enum):
    APARTMENT = "apartment"
    OFFICE = "office"
    HALLWAY = "hallway"


class TargetHalf(str, Enum):
    SAME = "same"
    OPPOSITE = "opposite"


@dataclass
class Floorplan:
    ids: np.ndarray  # [ny, nx] room id per module
    hub: int = 0
    doors: set = field(default_factory=set)

    @property
    def shape(self) -> tuple[int, int]:
        return self.ids.shape

    def room_at(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        ix = np.floor(xy[:, 0] / MODULE).astype(int)
        iy = np.floor(xy[:, 1] / MODULE).astype(int)
        ny, nx = self.shape
        ok = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        out = np.full(len(xy), SOLID)
        out[ok] = self.ids[iy[ok], ix[ok]]
        return out

    def door_centers(self) -> np.ndarray:
        if not self.doors:
            return np.zeros((0, 2))
        pts = []
        for kind, iy, ix in self.doors:
            if kind == "h":
                pts.append(((ix + 0.5) * MODULE, iy * MODULE))
            else:
                pts.append((ix * MODULE, (iy + 0.5) * MODULE))
        return np.array(pts)


# ===== Layouts =====

def _bsp_rooms(rect, rng: np.random.Generator, out: list, min_side: int = 7, max_side: int = 14) -> None:
    x0, y0, x1, y1 = rect
    w, h = x1 - x0, y1 - y0
    small = w <= max_side and h <= max_side
    if small and (w * h <= 120 or rng.random() < 0.3):
        out.append(rect)
        return
    if w >= h:
        if w < 2 * min_side:
            out.append(rect)
            return
        cut = int(rng.integers(x0 + min_side, x1 - min_side + 1))
        _bsp_rooms((x0, y0, cut, y1), rng, out, min_side, max_side)
        _bsp_rooms((cut, y0, x1, y1), rng, out, min_side, max_side)
    else:
        if h < 2 * min_side:
            out.append(rect)
            return
        cut = int(rng.integers(y0 + min_side, y1 - min_side + 1))
        _bsp_rooms((x0, y0, x1, cut), rng, out, min_side, max_side)
        _bsp_rooms((x0, cut, x1, y1), rng, out, min_side, max_side)


def _apartment(nx: int, ny: int, rng: np.random.Generator) -> Floorplan:
    rects: list = []
    _bsp_rooms((0, 0, nx, ny), rng, rects)
    ids = np.full((ny, nx), SOLID, dtype=np.int64)
    for i, (x0, y0, x1, y1) in enumerate(rects):
        ids[y0:y1, x0:x1] = i
    areas = [(x1 - x0) * (y1 - y0) for x0, y0, x1, y1 in rects]
    return Floorplan(ids, hub=int(np.argmax(areas)))


def _split_long(length: int, rng: np.random.Generator, lo: int = 6, hi: int = 12) -> list[tuple[int, int]]:
    cuts, pos = [], 0
    while length - pos > hi:
        step = int(rng.integers(lo, hi + 1))
        if length - (pos + step) < lo:
            break
        cuts.append((pos, pos + step))
        pos += step
    cuts.append((pos, length))
    return cuts


def _office(n_short: int, n_long: int, rng: np.random.Generator) -> np.ndarray:
    """Corridor along the long axis, rooms on both sides; returns ids as [long, short]."""
    ids = np.full((n_long, n_short), SOLID, dtype=np.int64)
    c0 = n_short // 2 - 2
    ids[:, c0 : c0 + 4] = 0
    next_id = 1
    for a0, a1 in ((0, c0), (c0 + 4, n_short)):
        depth = a1 - a0
        for b0, b1 in _split_long(n_long, rng):
            if depth > 16:
                mid = a0 + depth // 2
                front, back = ((mid, a1), (a0, mid)) if a0 == 0 else ((a0, mid), (mid, a1))
                for s0, s1 in (front, back):
                    ids[b0:b1, s0:s1] = next_id
                    next_id += 1
            else:
                ids[b0:b1, a0:a1] = next_id
                next_id += 1
    return ids


def _hallway(n_short: int, n_long: int, rng: np.random.Generator, width: int = 4) -> np.ndarray:
    """Ring corridor with cross corridors; interior blocks become rooms or stay solid. Ids as [long, short]."""
    ids = np.full((n_long, n_short), SOLID, dtype=np.int64)
    ids[:width, :] = 0
    ids[-width:, :] = 0
    ids[:, :width] = 0
    ids[:, -width:] = 0
    n_cross = int(rng.integers(1, 4))
    inner = n_long - 2 * width
    slots = np.linspace(width, n_long - width, n_cross + 2)[1:-1]
    for s in slots:
        p = int(np.clip(round(s + rng.integers(-2, 3)) - width // 2, width + 4, n_long - 2 * width - 4))
        if inner > 3 * width:
            ids[p : p + width, :] = 0
    labels, n = ndimage.label(ids == SOLID)
    next_id = 1
    for k in range(1, n + 1):
        block = labels == k
        touches_edge = block[0, :].any() or block[-1, :].any() or block[:, 0].any() or block[:, -1].any()
        if not touches_edge and rng.random() < 0.6:
            ids[block] = next_id
            next_id += 1
    return ids


def _adjacency(ids: np.ndarray) -> dict[tuple[int, int], list[tuple[str, int, int]]]:
    """Shared module edges between every pair of adjacent rooms."""
    pairs: dict[tuple[int, int], list[tuple[str, int, int]]] = {}
    below, above = ids[:-1, :], ids[1:, :]
    for iy, ix in zip(*np.nonzero((below != above) & (below >= 0) & (above >= 0))):
        key = tuple(sorted((int(below[iy, ix]), int(above[iy, ix]))))
        pairs.setdefault(key, []).append(("h", int(iy) + 1, int(ix)))
    left, right = ids[:, :-1], ids[:, 1:]
    for iy, ix in zip(*np.nonzero((left != right) & (left >= 0) & (right >= 0))):
        key = tuple(sorted((int(left[iy, ix]), int(right[iy, ix]))))
        pairs.setdefault(key, []).append(("v", int(iy), int(ix) + 1))
    return pairs


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate(([False], mask, [False]))
    edges = np.flatnonzero(np.diff(padded.astype(int)))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def _door_for(edges: list[tuple[str, int, int]], rng: np.random.Generator) -> list[tuple[str, int, int]] | None:
    """DOOR_MODULES consecutive edges along one shared wall, away from its ends when possible."""
    lines: dict[tuple[str, int], list[int]] = {}
    for kind, iy, ix in edges:
        line, pos = (iy, ix) if kind == "h" else (ix, iy)
        lines.setdefault((kind, line), []).append(pos)
    options = []
    for (kind, line), positions in sorted(lines.items()):
        positions = sorted(positions)
        mask = np.zeros(positions[-1] + 1, dtype=bool)
        mask[positions] = True
        for a, b in _runs(mask):
            margin = 1 if b - a >= DOOR_MODULES + 2 else 0
            if b - a - 2 * margin >= DOOR_MODULES:
                options.append((kind, line, a + margin, b - margin))
    if not options:
        return None
    kind, line, a, b = options[int(rng.integers(len(options)))]
    start = int(rng.integers(a, b - DOOR_MODULES + 1))
    if kind == "h":
        return [("h", line, start + i) for i in range(DOOR_MODULES)]
    return [("v", start + i, line) for i in range(DOOR_MODULES)]


def _connect(plan: Floorplan, rng: np.random.Generator, loop_prob: float) -> None:
    """Doors along a random spanning tree grown from the hub, plus extra doors that close loops."""
    pairs = _adjacency(plan.ids)
    neighbours: dict[int, list[int]] = {}
    for a, b in pairs:
        neighbours.setdefault(a, []).append(b)
        neighbours.setdefault(b, []).append(a)
    rooms = sorted(int(r) for r in np.unique(plan.ids) if r >= 0)
    reached = {plan.hub}
    queue = deque([plan.hub])
    tree: set[tuple[int, int]] = set()
    while queue:
        room = queue.popleft()
        options = list(neighbours.get(room, []))
        rng.shuffle(options)
        for other in options:
            if other in reached:
                continue
            door = _door_for(pairs[tuple(sorted((room, other)))], rng)
            if door is None:
                continue
            plan.doors.update(door)
            tree.add(tuple(sorted((room, other))))
            reached.add(other)
            queue.append(other)
    if len(reached) != len(rooms):
        raise GenerationError(f"{len(rooms) - len(reached)} room(s) could not be connected")
    for key in sorted(pairs):
        if key not in tree and rng.random() < loop_prob:
            door = _door_for(pairs[key], rng)
            if door is not None:
                plan.doors.update(door)


def wall_segments(plan: Floorplan) -> np.ndarray:
    """Module edges between different rooms (or a room and solid space), minus doors, merged per line."""
    ny, nx = plan.shape
    pad = np.pad(plan.ids, 1, constant_values=SOLID)
    below, above = pad[0 : ny + 1, 1 : nx + 1], pad[1 : ny + 2, 1 : nx + 1]
    wall_h = (below != above) & ((below >= 0) | (above >= 0))
    left, right = pad[1 : ny + 1, 0 : nx + 1], pad[1 : ny + 1, 1 : nx + 2]
    wall_v = (left != right) & ((left >= 0) | (right >= 0))
    for kind, iy, ix in plan.doors:
        if kind == "h":
            wall_h[iy, ix] = False
        else:
            wall_v[iy, ix] = False
    segs = []
    for iy in range(ny + 1):
        for a, b in _runs(wall_h[iy]):
            segs.append([a * MODULE, iy * MODULE, b * MODULE, iy * MODULE])
    for ix in range(nx + 1):
        for a, b in _runs(wall_v[:, ix]):
            segs.append([ix * MODULE, a * MODULE, ix * MODULE, b * MODULE])
    return np.array(segs, dtype=float).reshape(-1, 4)


def build_floorplan(archetype: Archetype, nx: int, ny: int, rng: np.random.Generator, loop_prob: float) -> Floorplan:
    long_is_y = ny >= nx
    n_short, n_long = (nx, ny) if long_is_y else (ny, nx)
    if archetype == Archetype.APARTMENT:
        plan = _apartment(nx, ny, rng)
    else:
        ids = _office(n_short, n_long, rng) if archetype == Archetype.OFFICE else _hallway(n_short, n_long, rng)
        plan = Floorplan(ids if long_is_y else ids.T.copy(), hub=0)
    _connect(plan, rng, loop_prob)
    return plan


# ===== Furniture, start and targets =====

def _box_ok(plan: Floorplan, box: tuple[float, float, float, float], margin: float) -> int | None:
    """Room id when the expanded box lies inside a single room, else None."""
    x0, y0, x1, y1 = box[0] - margin, box[1] - margin, box[2] + margin, box[3] + margin
    xs = np.linspace(x0, x1, max(int(math.ceil((x1 - x0) / (MODULE / 2))) + 1, 2))
    ys = np.linspace(y0, y1, max(int(math.ceil((y1 - y0) / (MODULE / 2))) + 1, 2))
    gx, gy = np.meshgrid(xs, ys)
    rooms = plan.room_at(np.column_stack((gx.ravel(), gy.ravel())))
    if rooms[0] < 0 or np.any(rooms != rooms[0]):
        return None
    return int(rooms[0])


def _box_distance(box, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    dx = np.maximum(np.maximum(box[0] - pts[:, 0], 0.0), pts[:, 0] - box[2])
    dy = np.maximum(np.maximum(box[1] - pts[:, 1], 0.0), pts[:, 1] - box[3])
    return np.hypot(dx, dy)


def _boxes_apart(a, b, gap: float) -> bool:
    return a[2] + gap <= b[0] or b[2] + gap <= a[0] or a[3] + gap <= b[1] or b[3] + gap <= a[1]


def _furniture_shape(rng: np.random.Generator, cx: float, cy: float) -> np.ndarray:
    if rng.random() < 0.25:
        r = float(rng.uniform(0.25, 0.5))
        sides = int(rng.choice([6, 8]))
        ang = np.arange(sides) * (2 * np.pi / sides)
        return np.column_stack((cx + r * np.cos(ang), cy + r * np.sin(ang)))
    w, h = rng.uniform(0.4, 1.4, size=2)
    return rectangle(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def _long_coord(xy, long_is_y: bool) -> float:
    return float(xy[1] if long_is_y else xy[0])


def _pick_start(plan: Floorplan, rng: np.random.Generator, long_is_y: bool) -> Pose:
    ny, nx = plan.shape
    interior = plan.ids >= 0
    # Module and all eight neighbours in the same room.
    same = np.ones_like(interior)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            shifted = np.full_like(plan.ids, -2)
            ys = slice(max(dy, 0), ny + min(dy, 0))
            xs = slice(max(dx, 0), nx + min(dx, 0))
            yd = slice(max(-dy, 0), ny + min(-dy, 0))
            xd = slice(max(-dx, 0), nx + min(-dx, 0))
            shifted[yd, xd] = plan.ids[ys, xs]
            same &= shifted == plan.ids
    iy, ix = np.nonzero(interior & same)
    centers = np.column_stack(((ix + 0.5) * MODULE, (iy + 0.5) * MODULE))
    long_len = (ny if long_is_y else nx) * MODULE
    first_quarter = (centers[:, 1] if long_is_y else centers[:, 0]) < long_len / 4.0
    pool = centers[first_quarter] if np.any(first_quarter) else centers
    if len(pool) == 0:
        raise GenerationError("no free module for the start pose")
    x, y = pool[int(rng.integers(len(pool)))]
    return Pose(x, y, float(rng.uniform(-np.pi, np.pi)))


def _place_furniture(plan, rng, n_objects, start: Pose, max_attempts: int) -> list[np.ndarray]:
    ny, nx = plan.shape
    doors = plan.door_centers()
    placed: list[np.ndarray] = []
    boxes: list[tuple] = []
    attempts = 0
    while len(placed) < n_objects and attempts < max_attempts:
        attempts += 1
        cx, cy = rng.uniform(0.3, nx * MODULE - 0.3), rng.uniform(0.3, ny * MODULE - 0.3)
        poly = _furniture_shape(rng, cx, cy)
        box = (*poly.min(axis=0), *poly.max(axis=0))
        if _box_ok(plan, box, 0.1) is None:
            continue
        if len(doors) and np.min(_box_distance(box, doors)) < 1.0:
            continue
        if _box_distance(box, start.xy)[0] < 0.8:
            continue
        if not all(_boxes_apart(box, other, 0.5) for other in boxes):
            continue
        placed.append(poly)
        boxes.append(box)
    return placed


def _place_targets(plan, rng, objects, start: Pose, n_targets: int, half: TargetHalf, long_is_y: bool,
                   near_object: float, max_attempts: int) -> list[Target]:
    ny, nx = plan.shape
    long_len = (ny if long_is_y else nx) * MODULE
    start_in_first = _long_coord(start.xy, long_is_y) < long_len / 2.0
    want_first = start_in_first if half == TargetHalf.SAME else not start_in_first

    def in_half(xy) -> bool:
        return (_long_coord(xy, long_is_y) < long_len / 2.0) == want_first

    boxes = [(*o.min(axis=0), *o.max(axis=0)) for o in objects]
    anchors = [o for o in objects if in_half(o.mean(axis=0))]
    doors = plan.door_centers()
    targets: list[Target] = []
    attempts = 0
    while len(targets) < n_targets and attempts < max_attempts:
        attempts += 1
        if anchors and rng.random() < near_object:
            poly = anchors[int(rng.integers(len(anchors)))]
            i = int(rng.integers(len(poly)))
            a, b = poly[i], poly[(i + 1) % len(poly)]
            edge = b - a
            normal = np.array([edge[1], -edge[0]]) / max(np.hypot(*edge), 1e-9)
            xy = a + rng.uniform(0.2, 0.8) * edge + normal * (TARGET_RADIUS + rng.uniform(0.1, 0.3))
        else:
            xy = np.array([rng.uniform(0.3, nx * MODULE - 0.3), rng.uniform(0.3, ny * MODULE - 0.3)])
        if not in_half(xy):
            continue
        box = (xy[0] - TARGET_RADIUS, xy[1] - TARGET_RADIUS, xy[0] + TARGET_RADIUS, xy[1] + TARGET_RADIUS)
        if _box_ok(plan, box, 0.1) is None:
            continue
        if not all(_boxes_apart(box, other, 0.05) for other in boxes):
            continue
        if start.distance_to(xy) < 2.0:
            continue
        if len(doors) and np.min(_box_distance(box, doors)) < 0.6:
            continue
        targets.append(Target(float(xy[0]), float(xy[1]), TARGET_RADIUS))
        boxes.append(box)
    if len(targets) < n_targets:
        raise GenerationError(f"placed {len(targets)} of {n_targets} target(s) in the {half.value} half")
    return targets


def reachable_targets(world: LineWorld, resolution: float = 0.1, clearance: float = ORACLE_CLEARANCE) -> bool:
    """True-map oracle: every target has free, clearance-inflated space connected to the start."""
    occ = inflate(rasterize_world(world, resolution), clearance, resolution)
    labels, _ = ndimage.label(~occ)
    origin, (ny, nx) = grid_geometry(world.bounds, resolution)
    sx = int((world.start_pose.x - origin[0]) // resolution)
    sy = int((world.start_pose.y - origin[1]) // resolution)
    if not (0 <= sx < nx and 0 <= sy < ny) or labels[sy, sx] == 0:
        return False
    start_label = labels[sy, sx]
    gy, gx = np.mgrid[0:ny, 0:nx]
    cx = origin[0] + (gx + 0.5) * resolution
    cy = origin[1] + (gy + 0.5) * resolution
    for t in world.targets:
        ring = np.hypot(cx - t.x, cy - t.y) <= t.radius + clearance + 0.3
        if not np.any(ring & (labels == start_label)):
            return False
    return True


def generate_world(
    archetype: Archetype | str,
    size: tuple[float, float],
    object_density: float,
    seed: int,
    target_half: TargetHalf | str = TargetHalf.SAME,
    n_targets: int = 1,
    loop_prob: float = 0.3,
    target_near_object: float = 0.7,
    max_retries: int = 20,
) -> LineWorld:
    """
    Indoor world of ``size`` meters (rounded down to the 0.5 m module) with
    ``object_density`` furniture objects per 10 m^2 of floor, the start in the
    first quarter of the long axis and targets in the same or opposite half.
    """
    archetype = Archetype(archetype)
    target_half = TargetHalf(target_half)
    width, height = float(size[0]), float(size[1])
    if not (MIN_SIZE <= width <= MAX_SIZE and MIN_SIZE <= height <= MAX_SIZE):
        raise DomainError(f"world size {width:g} x {height:g} m is outside [{MIN_SIZE:g}, {MAX_SIZE:g}] m")
    if object_density < 0 or n_targets < 1:
        raise DomainError("object_density must be non-negative and n_targets at least 1")
    nx, ny = int(width // MODULE), int(height // MODULE)
    long_is_y = ny >= nx
    rng = np.random.default_rng(seed)
    last_error = "no attempt made"
    for _ in range(max_retries):
        try:
            plan = build_floorplan(archetype, nx, ny, rng, loop_prob)
            start = _pick_start(plan, rng, long_is_y)
            floor_area = float(np.sum(plan.ids >= 0)) * MODULE * MODULE
            n_objects = int(round(object_density * floor_area / 10.0))
            objects = _place_furniture(plan, rng, n_objects, start, max_attempts=50 * max(n_objects, 1))
            targets = _place_targets(
                plan, rng, objects, start, n_targets, target_half, long_is_y, target_near_object, max_attempts=2000
            )
            world = LineWorld(Bounds(0.0, 0.0, nx * MODULE, ny * MODULE), wall_segments(plan), tuple(objects), tuple(targets), start)
        except GenerationError as e:
            last_error = str(e)
            continue
        if reachable_targets(world):
            return world
        last_error = "a target is not reachable from the start"
    raise GenerationError(f"{archetype.value} world (seed {seed}) failed after {max_retries} attempts: {last_error}")


# ===== Dataset trajectories =====

def truth_map(world: LineWorld, resolution: float = 0.1, clearance: float = 0.3) -> SearchMap:
    """Fully known map of the true geometry, inflated by ``clearance``."""
    occ = inflate(rasterize_world(world, resolution), clearance, resolution)
    smap = SearchMap.empty(world.bounds, resolution)
    smap.cells[:] = np.where(occ, CellState.OCCUPIED, CellState.FREE)
    return smap


def start_region(world: LineWorld, smap: SearchMap) -> np.ndarray:
    """
    Free cells of ``smap`` connected to the world start pose; the largest free
    region when the start itself is not free.
    """
    labels, n = ndimage.label(smap.cells == CellState.FREE)
    if n == 0:
        raise GenerationError("world has no free space for a trajectory")
    sx, sy = smap.world_to_cell(world.start_pose.xy)
    inside = bool(smap.in_grid(sx, sy)[0])
    label = int(labels[sy[0], sx[0]]) if inside else 0
    if label == 0:
        label = int(np.argmax(np.bincount(labels.ravel())[1:])) + 1
    return labels == label


def sample_trajectory(
    world: LineWorld,
    duration: float,
    seed: int,
    motion: MotionSpec = MotionSpec(),
    smap: SearchMap | None = None,
) -> list[Pose]:
    """Random tour of reachable goals from a random start connected to the world start, about ``duration`` seconds of driving."""
    if duration <= 0:
        raise DomainError("trajectory duration must be positive")
    smap = smap if smap is not None else truth_map(world)
    rng = np.random.default_rng(seed)
    iy, ix = np.nonzero(start_region(world, smap))
    k = int(rng.integers(len(ix)))
    sx, sy = smap.cell_center(ix[k], iy[k])
    path = [Pose(sx, sy, float(rng.uniform(-np.pi, np.pi)))]
    target_length = duration * motion.v_robot
    travelled = 0.0
    failures = 0
    while travelled < target_length:
        current = path[-1]
        reach = ReachabilityField(smap, current.xy)
        reachable = np.flatnonzero(np.isfinite(reach.dist) & (reach.dist > 1.0))
        if len(reachable) == 0:
            raise GenerationError("trajectory start is enclosed")
        node = int(reachable[int(rng.integers(len(reachable)))])
        gx, gy = node % smap.shape[1], node // smap.shape[1]
        planned = plan_path(smap, current, smap.cell_center(gx, gy), reach)
        if planned is None:
            failures += 1
            if failures > 20:
                raise GenerationError("could not extend the trajectory")
            continue
        for prev, cur in zip(planned.points[:-1], planned.points[1:]):
            leg = cur - prev
            length = float(np.hypot(*leg))
            if length <= 1e-9:
                continue
            if travelled + length > target_length:
                cur = prev + leg * ((target_length - travelled) / length)
                length = target_length - travelled
            path.append(Pose(cur[0], cur[1], math.atan2(leg[1], leg[0])))
            travelled += length
            if travelled >= target_length:
                break
    return path
