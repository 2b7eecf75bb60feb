"""
Map-based ground-truth labelling of scan points.

Every hit is compared with the expected scan against the permanent map: close
to its expected line it is a long-term feature (map, +1); otherwise it is a
short-term feature when a recent non-map observation lies nearby, or a
dynamic feature when nothing corroborates it (both non-map, -1).
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from typing import Protocol

import numpy as np
from scipy.spatial import cKDTree

from settings import check_keys
from world import DomainError, LineWorld, Pose, Scan, cast_rays

MAP_LABEL = 1
NON_MAP_LABEL = -1


class FineLabel(IntEnum):
    NO_HIT = 0
    LTF = 1
    STF = 2
    DF = 3


@dataclass(frozen=True)
class ClassifierParams:
    sigma_s: float = 0.0025
    tau_ltf: float = 0.5
    tau_stf: float = 0.5
    history_window: int = 10

    def __post_init__(self):
        if self.sigma_s <= 0:
            raise DomainError("sigma_s must be positive")
        if not (0.0 < self.tau_ltf < 1.0 and 0.0 < self.tau_stf < 1.0):
            raise DomainError("thresholds must lie in (0, 1)")
        if self.history_window < 1:
            raise DomainError("history_window must be at least 1")

    @classmethod
    def from_settings(cls, section: dict) -> "ClassifierParams":
        check_keys("ground_truth", section, ("sigma_s", "tau_ltf", "tau_stf", "history_window"))
        kwargs = dict(section)
        if "history_window" in kwargs:
            kwargs["history_window"] = int(kwargs["history_window"])
        return cls(**kwargs)


@dataclass(frozen=True, eq=False)
class ClassifiedScan:
    scan: Scan
    labels: np.ndarray
    fine_labels: np.ndarray

    @property
    def non_map_mask(self) -> np.ndarray:
        return self.labels == NON_MAP_LABEL

    def counts(self) -> dict[str, int]:
        return {label.name: int(np.sum(self.fine_labels == label)) for label in FineLabel}


class ObservationHistory:
    """Ring buffer of the non-LTF world points of the last ``window`` scans."""

    def __init__(self, window: int = 10, n_beams: int | None = None):
        self.window = int(window)
        self.n_beams = n_beams
        self._entries: deque[tuple[int, np.ndarray]] = deque(maxlen=self.window)
        self._tree: cKDTree | None = None
        self._points: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def steps(self) -> list[int]:
        return [step for step, _ in self._entries]

    def check_beams(self, n_beams: int) -> None:
        if self.n_beams is None:
            self.n_beams = n_beams
        elif self.n_beams != n_beams:
            raise DomainError(f"scan has {n_beams} beams but the history was built with {self.n_beams}")

    def push(self, step: int, points: np.ndarray) -> None:
        self._entries.append((int(step), np.asarray(points, dtype=float).reshape(-1, 2)))
        self._tree = None
        self._points = None

    def clear(self) -> None:
        self._entries.clear()
        self._tree = None
        self._points = None

    def points(self) -> np.ndarray:
        if self._points is None:
            chunks = [pts for _, pts in self._entries if len(pts)]
            self._points = np.vstack(chunks) if chunks else np.zeros((0, 2))
        return self._points

    def nearest(self, query: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Distance to and index of the nearest stored point for each query [M, 2]."""
        pts = self.points()
        query = np.asarray(query, dtype=float).reshape(-1, 2)
        if len(pts) == 0:
            return np.full(len(query), np.inf), np.full(len(query), -1, dtype=np.int64)
        if self._tree is None:
            self._tree = cKDTree(pts)
        dist, idx = self._tree.query(query, k=1)
        return np.asarray(dist, dtype=float), np.asarray(idx, dtype=np.int64)


def point_segment_distance(points: np.ndarray, segments: np.ndarray) -> np.ndarray:
    """Row-wise distance from points [N, 2] to segments [N, 4]."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    segments = np.asarray(segments, dtype=float).reshape(-1, 4)
    a = segments[:, 0:2]
    ab = segments[:, 2:4] - a
    denom = np.einsum("ij,ij->i", ab, ab)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(denom > 0, np.einsum("ij,ij->i", points - a, ab) / denom, 0.0)
    closest = a + np.clip(t, 0.0, 1.0)[:, None] * ab
    return np.hypot(*(points - closest).T)


def ltf_probability(point_world, expected_line, sigma_s: float) -> float:
    """
    exp(-dist^2 / sigma_s) of a point against the segment its beam is expected to hit.
    The distance is to the segment itself, clipped at its endpoints: a point past an
    end is measured to that endpoint, never to the line extended beyond it.
    """
    if sigma_s <= 0:
        raise DomainError("sigma_s must be positive")
    if expected_line is None:
        return 0.0
    d = float(point_segment_distance(np.asarray(point_world, dtype=float), np.asarray(expected_line, dtype=float))[0])
    return float(np.exp(-(d * d) / sigma_s))


def stf_likelihood(point_now_world, history: ObservationHistory, sigma_s: float) -> tuple[float, np.ndarray | None]:
    """Correspondence likelihood of a point with its nearest earlier non-map observation."""
    if sigma_s <= 0:
        raise DomainError("sigma_s must be positive")
    dist, idx = history.nearest(np.asarray(point_now_world, dtype=float))
    if idx[0] < 0:
        return 0.0, None
    return float(np.exp(-(dist[0] ** 2) / sigma_s)), history.points()[idx[0]].copy()


def classify_scan_gt(
    world: LineWorld,
    pose: Pose,
    scan: Scan,
    params: ClassifierParams,
    history: ObservationHistory,
) -> tuple[ClassifiedScan, ObservationHistory]:
    """Label every beam and push the scan's non-LTF points into ``history``."""
    history.check_beams(scan.n_beams)
    angles = scan.beam_angles(pose)
    points = scan.points_world(pose)

    # Expected scan against the permanent map only; the match may lie beyond the sensor range.
    _, _, seg_idx = cast_rays(world, pose.xy, angles, 2.0 * scan.max_range, include_objects=False)
    p_ltf = np.zeros(scan.n_beams)
    matched = scan.hit & (seg_idx >= 0)
    if np.any(matched):
        d = point_segment_distance(points[matched], world.segments[seg_idx[matched]])
        p_ltf[matched] = np.exp(-(d * d) / params.sigma_s)
    is_ltf = scan.hit & (p_ltf >= params.tau_ltf)

    candidates = scan.hit & ~is_ltf
    p_stf = np.zeros(scan.n_beams)
    if np.any(candidates):
        dist, _ = history.nearest(points[candidates])
        p_stf[candidates] = np.exp(-(dist * dist) / params.sigma_s)
    is_stf = candidates & (p_stf >= params.tau_stf)

    fine = np.full(scan.n_beams, FineLabel.DF, dtype=np.int8)
    fine[~scan.hit] = FineLabel.NO_HIT
    fine[is_ltf] = FineLabel.LTF
    fine[is_stf] = FineLabel.STF
    labels = np.where((fine == FineLabel.LTF) | (fine == FineLabel.NO_HIT), MAP_LABEL, NON_MAP_LABEL).astype(np.int8)

    history.push(scan.timestamp, points[candidates])
    return ClassifiedScan(scan, labels, fine), history


class Labeler(Protocol):
    def reset(self) -> None: ...

    def step(self, pose: Pose, scan: Scan) -> np.ndarray: ...


class GroundTruthLabeler:
    """Stateful ground-truth labelling of one run."""

    def __init__(self, world: LineWorld, params: ClassifierParams = ClassifierParams()):
        self.world = world
        self.params = params
        self.history = ObservationHistory(params.history_window)
        self.last: ClassifiedScan | None = None

    def reset(self) -> None:
        self.history = ObservationHistory(self.params.history_window)
        self.last = None

    def step(self, pose: Pose, scan: Scan) -> np.ndarray:
        self.last, self.history = classify_scan_gt(self.world, pose, scan, self.params, self.history)
        return self.last.labels
