import math

import numpy as np
import pytest

from conftest import cluttered_room
from world import (
    Bounds,
    DomainError,
    HitSource,
    LineWorld,
    MotionSpec,
    Pose,
    SensorSpec,
    check_detection,
    load_world,
    move_robot,
    ray_cast,
    rectangle,
    rectangle_segments,
    safe_path_prefix,
    save_world,
    simulate_scan,
    target_cells,
    visible_cells,
    world_from_dict,
    world_to_dict,
    wrap_angle,
)


def _wall_world(with_object: bool) -> LineWorld:
    objects = (rectangle(2.0, -0.5, 3.0, 0.5),) if with_object else ()
    return LineWorld(Bounds(-1.0, -2.0, 6.0, 2.0), [[5.0, -1.0, 5.0, 1.0]], objects, start_pose=Pose(0.0, 0.0, 0.0))


def _inside_convex(poly: np.ndarray, pts: np.ndarray) -> np.ndarray:
    a = poly
    b = np.roll(poly, -1, axis=0)
    cross = (b[None, :, 0] - a[None, :, 0]) * (pts[:, None, 1] - a[None, :, 1]) - (
        b[None, :, 1] - a[None, :, 1]
    ) * (pts[:, None, 0] - a[None, :, 0])
    return np.all(cross > 0, axis=1) | np.all(cross < 0, axis=1)


def _march_range(world: LineWorld, origin, angle: float, max_range: float, step: float = 1e-3) -> float:
    """First 1 mm step that leaves the walled room or enters a furniture polygon."""
    t = np.arange(step, max_range + step, step)
    pts = np.column_stack((origin[0] + t * math.cos(angle), origin[1] + t * math.sin(angle)))
    b = world.bounds
    solid = (pts[:, 0] <= b.xmin) | (pts[:, 0] >= b.xmax) | (pts[:, 1] <= b.ymin) | (pts[:, 1] >= b.ymax)
    for poly in world.objects:
        solid |= _inside_convex(poly, pts)
    hits = np.flatnonzero(solid)
    return float(t[hits[0]]) if len(hits) else max_range


class TestAngles:
    @pytest.mark.parametrize(
        "theta, expected",
        [(0.0, 0.0), (math.pi, math.pi), (-math.pi, math.pi), (3 * math.pi, math.pi), (2.5 * math.pi, 0.5 * math.pi)],
    )
    def test_wrap_angle_half_open_interval(self, theta, expected):
        assert wrap_angle(theta) == pytest.approx(expected)

    def test_pose_normalizes_heading(self):
        assert Pose(0, 0, -3 * math.pi / 2).theta == pytest.approx(math.pi / 2)


class TestRayCast:
    def test_axis_aligned_wall(self):
        hit = ray_cast(_wall_world(False), Pose(0.0, 0.0), 0.0, 10.0, include_objects=True)
        assert hit.range == pytest.approx(5.0)
        assert hit.source == HitSource.SEGMENT

    def test_nearer_object_wins(self):
        world = _wall_world(True)
        hit = ray_cast(world, Pose(0.0, 0.0), 0.0, 10.0, include_objects=True)
        assert hit.range == pytest.approx(2.0)
        assert hit.source == HitSource.OBJECT
        assert hit.index >= 0

    def test_objects_ignored_when_excluded(self):
        hit = ray_cast(_wall_world(True), Pose(0.0, 0.0), 0.0, 10.0, include_objects=False)
        assert hit.range == pytest.approx(5.0)
        assert hit.source == HitSource.SEGMENT

    def test_no_hit_reads_max_range(self):
        hit = ray_cast(_wall_world(False), Pose(0.0, 0.0), math.pi, 0.5)
        assert hit.range == 0.5
        assert hit.source == HitSource.NONE
        assert hit.index == -1

    def test_origin_outside_bounds_raises(self):
        with pytest.raises(DomainError):
            ray_cast(_wall_world(False), Pose(10.0, 0.0), 0.0, 10.0)

    @pytest.mark.parametrize("seed", [0, 1])
    def test_matches_ray_march_oracle(self, seed):
        world = cluttered_room(seed)
        rng = np.random.default_rng(seed + 100)
        for _ in range(150):
            origin = rng.uniform(4.5, 5.5, 2)
            angle = float(rng.uniform(-math.pi, math.pi))
            hit = ray_cast(world, Pose(origin[0], origin[1]), angle, 10.0)
            assert hit.range == pytest.approx(_march_range(world, origin, angle, 10.0), abs=1.5e-3)


class TestSimulateScan:
    def test_empty_world_reads_max_range(self):
        world = LineWorld(Bounds(0.0, 0.0, 10.0, 10.0), np.zeros((0, 4)))
        scan = simulate_scan(world, Pose(5.0, 5.0), SensorSpec(n_beams=32, lidar_noise_sigma=0.0))
        assert np.all(scan.ranges == 10.0)
        assert not scan.hit.any()

    def test_room_center_reads_half_width(self, square_room):
        scan = simulate_scan(square_room, Pose(5.0, 5.0, 0.0), SensorSpec(n_beams=4, lidar_noise_sigma=0.0))
        np.testing.assert_allclose(scan.ranges, 5.0)
        assert scan.hit.all()

    def test_fixed_seed_is_deterministic(self, square_room):
        spec = SensorSpec(n_beams=128)
        a = simulate_scan(square_room, Pose(3.0, 4.0, 0.3), spec, rng_seed=7)
        b = simulate_scan(square_room, Pose(3.0, 4.0, 0.3), spec, rng_seed=7)
        c = simulate_scan(square_room, Pose(3.0, 4.0, 0.3), spec, rng_seed=8)
        np.testing.assert_array_equal(a.ranges, b.ranges)
        assert not np.array_equal(a.ranges, c.ranges)

    def test_pose_inside_object_raises(self):
        world = LineWorld(Bounds(0.0, 0.0, 10.0, 10.0), rectangle_segments(0, 0, 10, 10), (rectangle(4, 4, 6, 6),))
        with pytest.raises(DomainError):
            simulate_scan(world, Pose(5.0, 5.0), SensorSpec(n_beams=8))

    def test_targets_are_seen_by_the_lidar(self, square_room):
        world = LineWorld(square_room.bounds, square_room.segments, targets=((7.0, 5.0, 0.15),))
        scan = simulate_scan(world, Pose(5.0, 5.0, 0.0), SensorSpec(n_beams=8, lidar_noise_sigma=0.0))
        assert scan.ranges[0] == pytest.approx(1.85, abs=0.02)


class TestVisibility:
    def test_cells_ahead_and_behind(self, square_room):
        cells = visible_cells(square_room, Pose(5.0, 5.0, 0.0), SensorSpec(), resolution=0.1)
        assert (60, 50) in cells
        assert (40, 50) not in cells

    def test_occluder_hides_cell(self, square_room):
        world = LineWorld(square_room.bounds, np.vstack((square_room.segments, [[5.5, 4.0, 5.5, 6.0]])))
        cells = visible_cells(world, Pose(5.0, 5.0, 0.0), SensorSpec(), resolution=0.1)
        assert (60, 50) not in cells
        assert (52, 50) in cells

    def test_matches_ray_cast_oracle(self):
        world = cluttered_room(3, n_objects=8)
        pose = Pose(5.0, 5.0, 0.7)
        spec = SensorSpec()
        res = 0.1
        cells = visible_cells(world, pose, spec, resolution=res)
        checked = 0
        for ix in range(100):
            for iy in range(100):
                c = np.array([(ix + 0.5) * res, (iy + 0.5) * res])
                d = c - pose.xy
                dist = float(np.hypot(*d))
                bearing = wrap_angle(math.atan2(d[1], d[0]) - pose.theta)
                if dist > spec.visual_max_range or abs(bearing) > spec.visual_fov_angle / 2 or dist < 1e-9:
                    assert (ix, iy) not in cells or dist < 1e-9
                    continue
                hit = ray_cast(world, pose, math.atan2(d[1], d[0]), dist + 1.0, include_objects=True)
                if abs(hit.range - dist) < 1e-6:
                    continue
                assert ((ix, iy) in cells) == (hit.range > dist)
                checked += 1
        assert checked > 100


class TestDetection:
    def test_target_ahead_detected(self, square_room):
        world = LineWorld(square_room.bounds, square_room.segments, targets=((6.0, 5.0, 0.15),))
        assert check_detection(world, Pose(5.0, 5.0, 0.0), SensorSpec()) == frozenset({0})

    def test_target_behind_wall(self, square_room):
        segs = np.vstack((square_room.segments, [[5.5, 4.0, 5.5, 6.0]]))
        world = LineWorld(square_room.bounds, segs, targets=((6.0, 5.0, 0.15),))
        assert check_detection(world, Pose(5.0, 5.0, 0.0), SensorSpec()) == frozenset()

    def test_cone_boundary_is_inclusive(self, square_room):
        # Robot and target both on cell centers, target exactly on the 45 degree edge.
        world = LineWorld(square_room.bounds, square_room.segments, targets=((5.55, 5.55, 0.15),))
        spec = SensorSpec(visual_fov_angle=math.radians(90.0))
        assert check_detection(world, Pose(5.05, 5.05, 0.0), spec) == frozenset({0})

    def test_detection_uses_the_target_cell(self, square_room):
        # The target center is 28 degrees off the heading, its cell center 31.
        world = LineWorld(square_room.bounds, square_room.segments, targets=((6.09, 5.61, 0.15),))
        spec = SensorSpec(visual_fov_angle=math.radians(60.0))
        assert check_detection(world, Pose(5.05, 5.05, 0.0), spec) == frozenset()

    def test_target_out_of_range(self, square_room):
        world = LineWorld(square_room.bounds, square_room.segments, targets=((9.5, 5.0, 0.15),))
        assert check_detection(world, Pose(5.0, 5.0, 0.0), SensorSpec(visual_max_range=4.0)) == frozenset()


class TestRayCastMonotone:
    @pytest.mark.parametrize("seed", range(5))
    def test_extra_segment_never_lengthens_a_ray(self, seed):
        rng = np.random.default_rng(seed)
        base = cluttered_room(seed, n_objects=4)
        origin = base.start_pose
        angles = np.linspace(-math.pi, math.pi, 72, endpoint=False)
        before = [ray_cast(base, origin, a, 10.0).range for a in angles]
        for _ in range(5):
            seg = rng.uniform(0.2, 9.8, 4)
            world = LineWorld(base.bounds, np.vstack((base.segments, seg)), base.objects, start_pose=origin)
            after = [ray_cast(world, origin, a, 10.0).range for a in angles]
            assert all(b <= a + 1e-12 for a, b in zip(before, after))


class TestNoiselessScan:
    @pytest.mark.parametrize("seed", range(3))
    def test_every_beam_matches_ray_cast(self, seed):
        world = cluttered_room(seed, n_objects=6)
        world = LineWorld(world.bounds, world.segments, world.objects, ((2.0, 8.0, 0.15),), world.start_pose)
        pose = Pose(5.0, 5.0, 0.4 * seed)
        spec = SensorSpec(n_beams=90, lidar_noise_sigma=0.0)
        scan = simulate_scan(world, pose, spec, rng_seed=seed)
        for i, offset in enumerate(spec.beam_offsets):
            hit = ray_cast(world, pose, pose.theta + offset, spec.lidar_max_range, include_objects=True)
            assert scan.ranges[i] == pytest.approx(hit.range, abs=1e-9)
            assert bool(scan.hit[i]) == (hit.source != HitSource.NONE)


class TestDetectionNearConeEdge:
    def test_detected_targets_sit_in_visible_cells(self, square_room):
        rng = np.random.default_rng(11)
        pose = Pose(5.0, 5.0, 0.3)
        spec = SensorSpec()
        half = spec.visual_fov_angle / 2.0
        side = rng.choice([-1.0, 1.0], 300)
        bearing = pose.theta + side * half * rng.uniform(0.97, 1.03, 300)
        dist = rng.uniform(0.5, 3.8, 300)
        targets = tuple((5.0 + d * math.cos(b), 5.0 + d * math.sin(b), 0.05) for d, b in zip(dist, bearing))
        occluder = rectangle(6.2, 6.25, 6.6, 6.65)
        world = LineWorld(square_room.bounds, square_room.segments, (occluder,), targets)

        detected = check_detection(world, pose, spec, resolution=0.1)
        cells = visible_cells(world, pose, spec, resolution=0.1)
        ix, iy = target_cells(world, resolution=0.1)
        for i in range(len(targets)):
            assert (i in detected) == ((int(ix[i]), int(iy[i])) in cells)
        assert 0 < len(detected) < len(targets)


class TestMotion:
    def test_empty_path(self, square_room):
        traj = move_robot(square_room, [], SensorSpec(n_beams=8))
        assert traj.samples == ()
        assert traj.elapsed == 0.0

    def test_two_meters_at_one_meter_per_second(self, square_room):
        spec = SensorSpec(n_beams=8, scan_rate_hz=5.0)
        traj = move_robot(square_room, [Pose(1.0, 5.0, 0.0), Pose(3.0, 5.0, 0.0)], spec, MotionSpec(v_robot=1.0))
        assert len(traj.samples) == 10
        assert traj.elapsed == pytest.approx(2.0)
        assert traj.poses[-1].x == pytest.approx(3.0)
        assert [s.timestamp for s in traj.scans] == list(range(1, 11))

    def test_turning_adds_time(self, square_room):
        motion = MotionSpec(v_robot=1.0, turn_rate=math.pi / 2)
        traj = move_robot(square_room, [Pose(1.0, 5.0, math.pi / 2), Pose(3.0, 5.0, 0.0)], SensorSpec(n_beams=8), motion)
        assert traj.elapsed == pytest.approx(3.0)

    def test_collision_raises(self):
        world = LineWorld(Bounds(0, 0, 10, 10), [[5.0, 0.0, 5.0, 10.0]])
        with pytest.raises(DomainError):
            move_robot(world, [Pose(1.0, 5.0), Pose(9.0, 5.0)], SensorSpec(n_beams=8))

    def test_max_duration_stops_early(self, square_room):
        spec = SensorSpec(n_beams=8, scan_rate_hz=5.0)
        traj = move_robot(
            square_room, [Pose(1.0, 5.0, 0.0), Pose(5.0, 5.0, 0.0)], spec, MotionSpec(v_robot=1.0), max_duration=1.5
        )
        assert not traj.complete
        assert len(traj.samples) == 7
        assert traj.elapsed == pytest.approx(1.4)
        assert traj.length == pytest.approx(1.4)
        assert traj.poses[-1].x == pytest.approx(2.4)

    def test_max_duration_longer_than_the_drive(self, square_room):
        spec = SensorSpec(n_beams=8, scan_rate_hz=5.0)
        traj = move_robot(
            square_room, [Pose(1.0, 5.0, 0.0), Pose(3.0, 5.0, 0.0)], spec, MotionSpec(v_robot=1.0), max_duration=10.0
        )
        assert traj.complete
        assert traj.elapsed == pytest.approx(2.0)

    def test_max_duration_below_one_period(self, square_room):
        with pytest.raises(DomainError):
            move_robot(
                square_room, [Pose(1.0, 5.0, 0.0), Pose(3.0, 5.0, 0.0)], SensorSpec(n_beams=8), max_duration=0.1
            )

    def test_safe_prefix_stops_short_of_contact(self):
        world = LineWorld(Bounds(0, 0, 10, 10), [[5.0, 0.0, 5.0, 10.0]])
        prefix, truncated = safe_path_prefix(world, [Pose(1.0, 5.0), Pose(9.0, 5.0)], standoff=0.05)
        assert truncated
        assert prefix[-1].x == pytest.approx(4.95)

    def test_clear_path_is_untouched(self, square_room):
        path = [Pose(1.0, 5.0), Pose(2.0, 5.0)]
        prefix, truncated = safe_path_prefix(square_room, path)
        assert not truncated
        assert prefix == path


class TestWorldFile:
    def test_save_and_load(self, tmp_path):
        world = cluttered_room(4)
        world = LineWorld(world.bounds, world.segments, world.objects, ((1.0, 1.0, 0.15),), Pose(5.0, 5.0, 0.5))
        loaded = load_world(save_world(world, tmp_path / "world.json"))
        assert world_to_dict(loaded) == world_to_dict(world)
        assert loaded.start_pose.theta == pytest.approx(0.5)
        assert len(loaded.objects) == len(world.objects)

    def test_unknown_field_rejected(self, square_room):
        doc = world_to_dict(square_room)
        doc["doors"] = []
        with pytest.raises(DomainError, match="doors"):
            world_from_dict(doc)

    def test_missing_field_rejected(self, square_room):
        doc = world_to_dict(square_room)
        del doc["targets"]
        with pytest.raises(DomainError, match="targets"):
            world_from_dict(doc)

    def test_object_outside_bounds_rejected(self):
        with pytest.raises(DomainError):
            LineWorld(Bounds(0, 0, 10, 10), [], (rectangle(9.0, 9.0, 11.0, 11.0),))
