"""
Next-best-view search planner.

Candidate viewpoints sit at frontier centroids of both search maps, four
headings each. A candidate's utility trades the path length against the
unknown area it would reveal, the frontiers passed on the way and the
uninspected non-map points it would look at. With the non-map term removed
the planner is the plain multi-sensor frontier explorer.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from mapping import (
    CellState,
    Frontier,
    SearchMap,
    SensorKind,
    count_unknown_visible,
    extract_frontiers,
    los_clear,
    update_map,
)
from reporting import LogEmit, emit
from scan_classify_gt import NON_MAP_LABEL, ClassifierParams, GroundTruthLabeler
from settings import check_keys
from world import (
    DomainError,
    LineWorld,
    MotionSpec,
    Pose,
    Scan,
    SensorSpec,
    check_detection,
    in_visual_cone,
    move_robot,
    safe_path_prefix,
    scan_seed,
    simulate_scan,
)

ORIENTATION_HEADINGS = (0.0, math.pi / 2.0, math.pi, -math.pi / 2.0)
TIE_TOLERANCE = 1e-9


class LabelMode(str, Enum):
    GROUND_TRUTH = "ground_truth"
    LEARNED = "learned"
    NONE = "none"


class Termination(str, Enum):
    DETECTED = "detected"
    EXHAUSTED = "exhausted"
    BUDGET = "budget"
    PLANNING_LIMIT = "planning_limit"


@dataclass(frozen=True)
class UtilityWeights:
    w_dist: float = 1.0
    w_unknown: float = 0.5
    w_frontier_path: float = 2.0
    w_nonmap: float = 5.0
    frontier_path_radius: float = 1.5

    def __post_init__(self):
        weights = (self.w_dist, self.w_unknown, self.w_frontier_path, self.w_nonmap)
        if min(weights) < 0:
            raise DomainError("utility weights must be non-negative")
        if max(weights) <= 0:
            raise DomainError("at least one utility weight must be positive")
        if self.frontier_path_radius <= 0:
            raise DomainError("frontier_path_radius must be positive")

    def scaled(self, c: float) -> "UtilityWeights":
        return UtilityWeights(self.w_dist * c, self.w_unknown * c, self.w_frontier_path * c, self.w_nonmap * c, self.frontier_path_radius)

    @classmethod
    def from_settings(cls, section: dict) -> "UtilityWeights":
        keys = ("w_dist", "w_unknown", "w_frontier_path", "w_nonmap", "frontier_path_radius")
        return cls(**{k: float(section[k]) for k in keys if k in section})


@dataclass(frozen=True)
class PlannerConfig:
    resolution: float = 0.1
    min_frontier_size: int = 5
    registry_bin: float = 0.2
    max_plan_steps: int = 400
    require_all_targets: bool = False
    standoff: float = 0.05
    replan_period: float = 2.0  # seconds of driving per plan; 0 replans only on arrival

    def __post_init__(self):
        if self.replan_period < 0:
            raise DomainError("replan_period must be non-negative")

    @classmethod
    def from_settings(cls, mapping: dict, planner: dict) -> "PlannerConfig":
        check_keys("mapping", mapping, ("resolution", "min_frontier_size"))
        check_keys(
            "planner",
            planner,
            ("w_dist", "w_unknown", "w_frontier_path", "w_nonmap", "frontier_path_radius",
             "registry_bin", "max_plan_steps", "require_all_targets", "replan_period"),
        )
        return cls(
            resolution=float(mapping.get("resolution", cls.resolution)),
            min_frontier_size=int(mapping.get("min_frontier_size", cls.min_frontier_size)),
            registry_bin=float(planner.get("registry_bin", cls.registry_bin)),
            max_plan_steps=int(planner.get("max_plan_steps", cls.max_plan_steps)),
            require_all_targets=bool(planner.get("require_all_targets", cls.require_all_targets)),
            replan_period=float(planner.get("replan_period", cls.replan_period)),
        )

    def horizon(self, spec: SensorSpec) -> float:
        """Driving time per plan: at least one scan period, unbounded when replanning only on arrival."""
        if self.replan_period <= 0:
            return math.inf
        return max(self.replan_period, spec.period)


# ===== Non-map registry =====

class NonMapRegistry:
    """One representative non-map point per bin, each flagged once it has been looked at."""

    def __init__(self, bin_size: float = 0.2):
        if bin_size <= 0:
            raise DomainError("registry bin size must be positive")
        self.bin_size = bin_size
        self._bins: set[tuple[int, int]] = set()
        self._points = np.zeros((0, 2))
        self._inspected = np.zeros(0, dtype=bool)

    def __len__(self) -> int:
        return len(self._points)

    @property
    def points(self) -> np.ndarray:
        return self._points.copy()

    @property
    def inspected(self) -> np.ndarray:
        return self._inspected.copy()

    def uninspected_points(self) -> np.ndarray:
        return self._points[~self._inspected]

    def n_uninspected(self) -> int:
        return int(np.count_nonzero(~self._inspected))

    def add(self, points: np.ndarray) -> int:
        """Register points; returns how many new bins were opened."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        bins = np.floor(points / self.bin_size).astype(np.int64)
        fresh = []
        for key, pt in zip(map(tuple, bins.tolist()), points):
            if key in self._bins:
                continue
            self._bins.add(key)
            fresh.append(pt)
        if fresh:
            self._points = np.vstack((self._points, fresh))
            self._inspected = np.concatenate((self._inspected, np.zeros(len(fresh), dtype=bool)))
        return len(fresh)

    def visible_mask(self, pose: Pose, spec: SensorSpec, lidar_map: SearchMap, points: np.ndarray) -> np.ndarray:
        """Points inside the visual cone of ``pose`` with a clear sight line over the LiDAR map."""
        if len(points) == 0:
            return np.zeros(0, dtype=bool)
        mask = in_visual_cone(pose, points, spec)
        if np.any(mask):
            # Non-map points sit on occupied cells; the cells right around the point never hide it.
            idx = np.flatnonzero(mask)
            mask[idx] = los_clear(lidar_map, pose.xy, points[idx], exclude_radius=1.5 * lidar_map.resolution)
        return mask

    def inspect(self, pose: Pose, spec: SensorSpec, lidar_map: SearchMap) -> int:
        pending = np.flatnonzero(~self._inspected)
        if len(pending) == 0:
            return 0
        seen = pending[self.visible_mask(pose, spec, lidar_map, self._points[pending])]
        self._inspected[seen] = True
        return len(seen)


# ===== Paths =====

@dataclass(frozen=True, eq=False)
class PlannedPath:
    points: np.ndarray  # [m, 2], first point is the robot position
    length: float
    grid_length: float

    def poses(self, start: Pose, final_heading: float) -> list[Pose]:
        """Waypoint poses: the start pose, then each waypoint facing along its incoming leg."""
        out = [start]
        for prev, cur in zip(self.points[:-1], self.points[1:]):
            heading = math.atan2(cur[1] - prev[1], cur[0] - prev[0])
            out.append(Pose(cur[0], cur[1], heading))
        if len(out) == 1:
            out.append(Pose(start.x, start.y, final_heading))
        else:
            out[-1] = Pose(out[-1].x, out[-1].y, final_heading)
        return out


def polyline_length(points: np.ndarray) -> float:
    return float(np.sum(np.hypot(*np.diff(points, axis=0).T))) if len(points) > 1 else 0.0


class ReachabilityField:
    """Single-source shortest paths over 8-connected known-free cells of the LiDAR map."""

    def __init__(self, lidar_map: SearchMap, start_xy: np.ndarray):
        self.map = lidar_map
        ny, nx = lidar_map.shape
        self.shape = (ny, nx)
        sx, sy = lidar_map.world_to_cell(start_xy)
        self.start = (int(sx[0]), int(sy[0]))
        traversable = lidar_map.cells == CellState.FREE
        if lidar_map.in_grid(sx, sy)[0]:
            traversable[self.start[1], self.start[0]] = True
        self.traversable = traversable

        iy, ix = np.nonzero(traversable)
        rows, cols, weights = [], [], []
        res = lidar_map.resolution
        for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
            jy, jx = iy + dy, ix + dx
            ok = (jy < ny) & (jx >= 0) & (jx < nx)
            ok[ok] &= traversable[jy[ok], jx[ok]]
            if dx and dy:
                # No corner cutting between two blocked orthogonal neighbours.
                ok[ok] &= traversable[iy[ok], jx[ok]] & traversable[jy[ok], ix[ok]]
            rows.append(iy[ok] * nx + ix[ok])
            cols.append(jy[ok] * nx + jx[ok])
            weights.append(np.full(int(ok.sum()), res * (math.sqrt(2.0) if dx and dy else 1.0)))
        graph = csr_matrix(
            (np.concatenate(weights), (np.concatenate(rows), np.concatenate(cols))), shape=(ny * nx, ny * nx)
        )
        if lidar_map.in_grid(sx, sy)[0]:
            self.dist, self.pred = dijkstra(graph, directed=False, indices=self.start[1] * nx + self.start[0], return_predecessors=True)
        else:
            self.dist = np.full(ny * nx, np.inf)
            self.pred = np.full(ny * nx, -9999)

    def distance(self, ix: int, iy: int) -> float:
        ny, nx = self.shape
        if not (0 <= ix < nx and 0 <= iy < ny):
            return math.inf
        return float(self.dist[iy * nx + ix])

    def cell_path(self, ix: int, iy: int) -> list[tuple[int, int]] | None:
        if not math.isfinite(self.distance(ix, iy)):
            return None
        nx = self.shape[1]
        node = iy * nx + ix
        out = []
        while node >= 0:
            out.append((node % nx, node // nx))
            node = int(self.pred[node])
        return out[::-1]

    def segment_clear(self, a: np.ndarray, b: np.ndarray) -> bool:
        """Every cell the segment a -> b passes through is traversable."""
        ix, iy = crossed_cells(self.map, a, b)
        if not np.all(self.map.in_grid(ix, iy)):
            return False
        return bool(np.all(self.traversable[iy, ix]))


def crossed_cells(smap: SearchMap, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cells whose interior the segment a -> b enters; touching a corner does not count."""
    a = np.asarray(a, dtype=float)
    d = np.asarray(b, dtype=float) - a
    cuts = [np.array([0.0, 1.0])]
    for axis in (0, 1):
        if abs(d[axis]) <= 1e-12:
            continue
        lo, hi = sorted((a[axis], a[axis] + d[axis]))
        first = math.ceil((lo - smap.origin[axis]) / smap.resolution)
        last = math.floor((hi - smap.origin[axis]) / smap.resolution)
        lines = smap.origin[axis] + np.arange(first, last + 1) * smap.resolution
        cuts.append((lines - a[axis]) / d[axis])
    t = np.unique(np.clip(np.concatenate(cuts), 0.0, 1.0))
    # Crossings closer than this are one grid corner.
    t = t[np.concatenate(([True], np.diff(t) > 1e-9))]
    mid = (t[:-1] + t[1:]) / 2.0 if len(t) > 1 else np.zeros(1)
    return smap.world_to_cell(a[None, :] + mid[:, None] * d[None, :])


def _turning_points(points: np.ndarray) -> np.ndarray:
    """The polyline without its collinear interior vertices."""
    if len(points) <= 2:
        return points
    d = np.diff(points, axis=0)
    cross = d[:-1, 0] * d[1:, 1] - d[:-1, 1] * d[1:, 0]
    dot = np.sum(d[:-1] * d[1:], axis=1)
    turns = (np.abs(cross) > 1e-12) | (dot <= 0.0)
    return points[np.concatenate(([True], turns, [True]))]


def plan_path(lidar_map: SearchMap, start: Pose, goal_xy, field: ReachabilityField | None = None) -> PlannedPath | None:
    """Shortest free-cell path to ``goal_xy``, shortcut greedily by line of sight; None when unreachable."""
    goal = np.asarray(goal_xy, dtype=float)
    if field is None:
        field = ReachabilityField(lidar_map, start.xy)
    gx, gy = lidar_map.world_to_cell(goal)
    cells = field.cell_path(int(gx[0]), int(gy[0]))
    if cells is None:
        return None
    grid_length = field.distance(int(gx[0]), int(gy[0]))
    inner = np.array(cells[1:-1], dtype=np.int64).reshape(-1, 2)
    raw = _turning_points(np.vstack((start.xy, lidar_map.cell_center(inner[:, 0], inner[:, 1]).reshape(-1, 2), goal)))

    smoothed = [raw[0]]
    i = 0
    while i < len(raw) - 1:
        j = len(raw) - 1
        while j > i + 1 and not field.segment_clear(raw[i], raw[j]):
            j -= 1
        smoothed.append(raw[j])
        i = j
    pts = np.array(smoothed)
    return PlannedPath(pts, polyline_length(pts), grid_length)


# ===== Candidates and utility =====

@dataclass(frozen=True)
class UtilityTerms:
    dist_penalty: float
    unknown_reward: float
    frontier_path_reward: float
    nonmap_reward: float


@dataclass(frozen=True, eq=False)
class Viewpoint:
    pose: Pose
    source_centroid: np.ndarray
    orientation_index: int
    path: PlannedPath | None = None
    terms: UtilityTerms | None = None
    utility: float = float("nan")
    source: SensorKind = SensorKind.LIDAR

    @property
    def path_length(self) -> float:
        return self.path.length if self.path is not None else math.inf


def _snap_position(frontier: Frontier, lidar_map: SearchMap) -> np.ndarray | None:
    """The centroid when it is a free LiDAR cell, else the nearest free member cell of the frontier."""
    if lidar_map.state_at(frontier.centroid) == CellState.FREE:
        return frontier.centroid.copy()
    ix, iy = frontier.cells[:, 0], frontier.cells[:, 1]
    free = lidar_map.cells[iy, ix] == CellState.FREE
    if not np.any(free):
        return None
    centers = lidar_map.cell_center(ix[free], iy[free])
    d = np.hypot(*(centers - frontier.centroid[None, :]).T)
    return centers[int(np.argmin(d))]


def generate_candidates(
    lidar_frontiers: list[Frontier],
    visual_frontiers: list[Frontier],
    lidar_map: SearchMap,
    field: ReachabilityField | None = None,
) -> list[Viewpoint]:
    """Four cardinal viewpoints per frontier centroid; occupied or unreachable positions are dropped."""
    out: list[Viewpoint] = []
    for frontier in list(lidar_frontiers) + list(visual_frontiers):
        pos = _snap_position(frontier, lidar_map)
        if pos is None or lidar_map.state_at(pos) == CellState.OCCUPIED:
            continue
        if field is not None:
            ix, iy = lidar_map.world_to_cell(pos)
            if not math.isfinite(field.distance(int(ix[0]), int(iy[0]))):
                continue
        for j, heading in enumerate(ORIENTATION_HEADINGS):
            out.append(Viewpoint(Pose(pos[0], pos[1], heading), frontier.centroid.copy(), j, source=frontier.source))
    return out


def point_polyline_distance(points: np.ndarray, polyline: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(polyline) == 1:
        return np.hypot(*(points - polyline[0][None, :]).T)
    a = polyline[:-1][None, :, :]
    ab = (polyline[1:] - polyline[:-1])[None, :, :]
    ap = points[:, None, :] - a
    denom = np.sum(ab * ab, axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(denom > 0, np.sum(ap * ab, axis=2) / denom, 0.0)
    closest = a + np.clip(t, 0.0, 1.0)[..., None] * ab
    return np.min(np.hypot(*(points[:, None, :] - closest).transpose(2, 0, 1)), axis=1)


def compute_utility(
    candidate: Viewpoint,
    robot: Pose,
    lidar_map: SearchMap,
    visual_map: SearchMap,
    registry: NonMapRegistry,
    centroids: np.ndarray,
    weights: UtilityWeights,
    spec: SensorSpec,
    unknown_cells: int | None = None,
) -> Viewpoint:
    """
    Score a reachable candidate; its ``path`` must already be planned from ``robot``.
    ``unknown_cells`` is a precomputed visual-map unknown count for the candidate pose.
    """
    if candidate.path is None:
        raise DomainError(f"candidate at ({candidate.pose.x:.2f}, {candidate.pose.y:.2f}) is unreachable")
    dist = candidate.path.length
    if unknown_cells is None:
        unknown_cells = count_unknown_visible(visual_map, candidate.pose, spec, occluders=lidar_map)
    unknown = unknown_cells * visual_map.resolution ** 2
    centroids = np.asarray(centroids, dtype=float).reshape(-1, 2)
    near_path = 0
    if len(centroids):
        near_path = int(np.sum(point_polyline_distance(centroids, candidate.path.points) <= weights.frontier_path_radius))
    pending = registry.uninspected_points()
    nonmap = int(np.sum(registry.visible_mask(candidate.pose, spec, lidar_map, pending))) if len(pending) else 0
    utility = (
        -weights.w_dist * dist
        + weights.w_unknown * unknown
        + weights.w_frontier_path * near_path
        + weights.w_nonmap * nonmap
    )
    terms = UtilityTerms(dist, unknown, float(near_path), float(nonmap))
    return Viewpoint(candidate.pose, candidate.source_centroid, candidate.orientation_index, candidate.path, terms, float(utility), candidate.source)


class UnknownGainCache:
    """
    Per-pose visual unknown counts kept across planning steps. A count is
    reused until a cell within sensing range of its pose changes, either a
    visual-map cell leaving unknown or a LiDAR-map cell turning occupied or free.
    """

    def __init__(self, lidar_map: SearchMap, visual_map: SearchMap, spec: SensorSpec):
        self.lidar_map = lidar_map
        self.visual_map = visual_map
        self.spec = spec
        self.reach = int(math.ceil(spec.visual_max_range / visual_map.resolution)) + 1
        self.stamp = 0
        self._changed = np.zeros(visual_map.shape, dtype=np.int64)
        self._unknown = visual_map.cells == CellState.UNKNOWN
        self._occupied = lidar_map.cells == CellState.OCCUPIED
        self._counts: dict[tuple[float, float, float], tuple[int, int]] = {}

    def refresh(self) -> None:
        unknown = self.visual_map.cells == CellState.UNKNOWN
        occupied = self.lidar_map.cells == CellState.OCCUPIED
        changed = (unknown != self._unknown) | (occupied != self._occupied)
        if np.any(changed):
            self.stamp += 1
            self._changed[changed] = self.stamp
        self._unknown, self._occupied = unknown, occupied

    def count(self, pose: Pose) -> int:
        ix, iy = self.visual_map.world_to_cell(pose.xy)
        ix, iy, r = int(ix[0]), int(iy[0]), self.reach
        key = (pose.x, pose.y, pose.theta)
        cached = self._counts.get(key)
        if cached is not None:
            window = self._changed[max(iy - r, 0) : iy + r + 1, max(ix - r, 0) : ix + r + 1]
            if window.size == 0 or int(window.max()) <= cached[1]:
                return cached[0]
        value = count_unknown_visible(self.visual_map, pose, self.spec, occluders=self.lidar_map)
        self._counts[key] = (value, self.stamp)
        return value


def select_viewpoint(candidates: list[Viewpoint]) -> Viewpoint | None:
    """Arg-max utility; near-ties go to the shorter path, then the lower orientation index. None when empty."""
    if not candidates:
        return None
    best = max(c.utility for c in candidates)
    tied = [c for c in candidates if abs(c.utility - best) <= TIE_TOLERANCE * abs(best) or c.utility == best]
    return min(tied, key=lambda c: (c.path_length, c.orientation_index))


# ===== Episode =====

@dataclass(frozen=True)
class StepLog:
    step: int
    time: float
    pose: tuple
    target: tuple
    utility: float
    terms: dict
    n_candidates: int
    truncated: bool
    registry_size: int
    registry_uninspected: int

    def record(self) -> dict:
        return asdict(self)

    def trace_key(self) -> tuple:
        return (self.step, self.time, self.pose, self.target, self.n_candidates, self.truncated)


@dataclass(eq=False)
class EpisodeResult:
    found: bool
    detection_time: float | None
    elapsed: float
    termination: Termination
    path: list[Pose]
    detected: list[int]
    steps: list[StepLog] = field(default_factory=list)
    lidar_map: SearchMap | None = None
    visual_map: SearchMap | None = None
    registry_size: int = 0

    def trace(self) -> tuple:
        """Everything that defines the executed behaviour, excluding non-map bookkeeping."""
        return (
            self.found,
            self.detection_time,
            self.elapsed,
            self.termination.value,
            tuple(tuple(np.round(p.as_array(), 12)) for p in self.path),
            tuple(s.trace_key() for s in self.steps),
        )

    def step_records(self) -> list[dict]:
        return [s.record() for s in self.steps]

    def summary(self) -> dict:
        return {
            "found": self.found,
            "detection_time": self.detection_time,
            "elapsed": self.elapsed,
            "termination": self.termination.value,
            "plan_steps": len(self.steps),
            "detected": list(self.detected),
            "registry_size": self.registry_size,
        }


def _make_labeler(world: LineWorld, label_mode: LabelMode, model, gt_params: ClassifierParams):
    if label_mode == LabelMode.GROUND_TRUTH:
        return GroundTruthLabeler(world, gt_params)
    if label_mode == LabelMode.LEARNED:
        if model is None:
            raise DomainError("learned label mode needs a trained model")
        from scan_classify_learned import LearnedLabeler

        return LearnedLabeler(model)
    return None


def search_episode(
    world: LineWorld,
    spec: SensorSpec,
    weights: UtilityWeights,
    label_mode: LabelMode | str = LabelMode.GROUND_TRUTH,
    budget: float = 180.0,
    seed: int = 0,
    model=None,
    config: PlannerConfig = PlannerConfig(),
    motion: MotionSpec = MotionSpec(),
    gt_params: ClassifierParams = ClassifierParams(),
    start_pose: Pose | None = None,
    log_emit: LogEmit | None = None,
) -> EpisodeResult:
    """Scan, label, map, plan and move until the target is seen, nothing is left to explore, or time runs out."""
    label_mode = LabelMode(label_mode)
    labeler = _make_labeler(world, label_mode, model, gt_params)
    pose = start_pose if start_pose is not None else world.start_pose
    lidar_map = SearchMap.empty(world.bounds, config.resolution, SensorKind.LIDAR)
    visual_map = SearchMap.empty(world.bounds, config.resolution, SensorKind.VISUAL)
    registry = NonMapRegistry(config.registry_bin)
    n_targets = len(world.targets)
    wanted = n_targets if config.require_all_targets else min(n_targets, 1)
    detected: set[int] = set()

    def observe(p: Pose, scan: Scan) -> bool:
        if labeler is not None:
            labels = labeler.step(p, scan)
            registry.add(scan.points_world(p)[scan.hit & (labels == NON_MAP_LABEL)])
        update_map(lidar_map, p, scan, spec)
        update_map(visual_map, p, scan, spec)
        registry.inspect(p, spec, lidar_map)
        detected.update(check_detection(world, p, spec, config.resolution))
        return wanted > 0 and len(detected) >= wanted

    def finish(found: bool, t_found, elapsed: float, reason: Termination) -> EpisodeResult:
        emit(log_emit, f"[DONE] episode {reason.value} after {elapsed:.1f} s ({len(steps)} plan steps)")
        return EpisodeResult(
            found, t_found, elapsed, reason, executed, sorted(detected), steps,
            lidar_map, visual_map, len(registry),
        )

    steps: list[StepLog] = []
    executed = [pose]
    visited: set[tuple[int, int, int]] = set()
    gains = UnknownGainCache(lidar_map, visual_map, spec)
    horizon = config.horizon(spec)
    t = 0.0
    scan_step = 0
    emit(log_emit, f"[START] episode label_mode={label_mode.value} budget={budget:.0f} s seed={seed}")
    if observe(pose, simulate_scan(world, pose, spec, scan_seed(seed, 0), timestamp=0)):
        return finish(True, 0.0, 0.0, Termination.DETECTED)

    while True:
        if len(steps) >= config.max_plan_steps:
            return finish(False, None, t, Termination.PLANNING_LIMIT)
        if t >= budget:
            return finish(False, None, budget, Termination.BUDGET)

        lidar_frontiers = extract_frontiers(lidar_map, config.min_frontier_size)
        visual_frontiers = extract_frontiers(visual_map, config.min_frontier_size)
        reach = ReachabilityField(lidar_map, pose.xy)
        gains.refresh()
        # The four headings at one position share a path.
        paths: dict[tuple[float, float], PlannedPath | None] = {}
        candidates = []
        for c in generate_candidates(lidar_frontiers, visual_frontiers, lidar_map, reach):
            ix, iy = lidar_map.world_to_cell(c.pose.xy)
            if (int(ix[0]), int(iy[0]), c.orientation_index) in visited:
                continue
            at = (c.pose.x, c.pose.y)
            if at not in paths:
                paths[at] = plan_path(lidar_map, pose, c.pose.xy, reach)
            if paths[at] is not None:
                candidates.append(Viewpoint(c.pose, c.source_centroid, c.orientation_index, paths[at], source=c.source))
        centroids = np.array([f.centroid for f in lidar_frontiers + visual_frontiers]).reshape(-1, 2)
        scored = [
            compute_utility(c, pose, lidar_map, visual_map, registry, centroids, weights, spec, gains.count(c.pose))
            for c in candidates
        ]
        best = select_viewpoint(scored)
        if best is None:
            return finish(False, None, t, Termination.EXHAUSTED)

        plan = best.path.poses(pose, best.pose.theta)
        safe, truncated = safe_path_prefix(world, plan, config.standoff)
        steps.append(
            StepLog(
                len(steps), round(t, 9), tuple(pose.as_array().tolist()), tuple(best.pose.as_array().tolist()),
                best.utility, asdict(best.terms), len(scored), truncated, len(registry), registry.n_uninspected(),
            )
        )
        traj = move_robot(world, safe, spec, motion, rng_seed=seed, start_step=scan_step, max_duration=horizon)
        if traj.complete or truncated:
            # Reached, or blocked by geometry the map did not show yet.
            bx, by = lidar_map.world_to_cell(best.pose.xy)
            visited.add((int(bx[0]), int(by[0]), best.orientation_index))
        for (p, scan), ts in zip(traj.samples, traj.times):
            now = t + ts
            if now > budget + 1e-9:
                return finish(False, None, budget, Termination.BUDGET)
            executed.append(p)
            pose = p
            if observe(p, scan):
                return finish(True, now, now, Termination.DETECTED)
        t += traj.elapsed
        scan_step += len(traj.samples)
