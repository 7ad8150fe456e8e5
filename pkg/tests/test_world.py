import math

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from cfnav.world import N_RAYS, WorldMap


def test_empty_world():
    w = WorldMap()
    assert w.empty
    assert np.all(w.raycast([0, 0, 0]) == 5.0)
    length, path = w.shortest_path([0, 0], [3, 4])
    assert abs(length - 5.0) < 1e-12 and len(path) == 2
    pts, mask = w.local_points([0, 0, 0])
    assert not mask.any()


def test_circle_clearance_and_rays():
    w = WorldMap(circles=[[3.0, 0.0, 1.0]])
    d, near = w.nearest(np.array([[0.0, 0.0], [3.0, 3.0]]))
    assert np.allclose(d, [2.0, 2.0]) and np.allclose(near, [[2.0, 0.0], [3.0, 1.0]])
    r = w.raycast([0.0, 0.0, 0.0])
    assert abs(r[0] - 2.0) < 1e-12 and r[N_RAYS // 2] == 5.0
    # rotating the robot by a quarter turn rotates which ray sees the circle
    r2 = w.raycast([0.0, 0.0, math.pi / 2])
    assert abs(r2[3 * N_RAYS // 4] - 2.0) < 1e-9


def test_segment_ray_and_distance():
    w = WorldMap(segments=[[2.0, -1.0, 2.0, 1.0]])
    assert abs(w.raycast([0, 0, 0])[0] - 2.0) < 1e-12
    assert abs(w.clearance([0.0, 3.0]) - math.hypot(2.0, 2.0)) < 1e-12


def test_shortest_path_detours_around_obstacle():
    w = WorldMap(circles=[[0.0, 0.0, 1.0]])
    length, path = w.shortest_path([-3, 0], [3, 0], inflate=0.25)
    # the exact detour around a 1.25 m disc: two tangents plus the arc
    R, d = 1.25, 3.0
    tangent = math.sqrt(d * d - R * R)
    arc = R * (math.pi - 2 * math.acos(R / d))
    assert length > 6.0
    assert abs(length - (2 * tangent + arc)) < 0.05
    assert np.all(w.clearance(np.linspace(path[0], path[1], 20)) >= 0.25 - 1e-6)


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_clearance_is_distance_to_nearest_point(x, y):
    w = WorldMap(circles=[[1.0, 1.0, 0.5]], segments=[[-2.0, -2.0, 2.0, -2.0]])
    d, near = w.nearest(np.array([x, y]))
    assert abs(np.linalg.norm(near - [x, y]) - abs(d)) < 1e-9


def test_jitter_and_serialization(rng):
    w = WorldMap(circles=[[1, 1, 0.3]], segments=[[0, 0, 1, 0]])
    assert np.array_equal(w.jittered(np.random.default_rng(0), 0.0).circles, w.circles)
    a = w.jittered(np.random.default_rng(4), 0.2)
    b = w.jittered(np.random.default_rng(4), 0.2)
    assert np.array_equal(a.circles, b.circles) and np.array_equal(a.segments, b.segments)
    back = WorldMap.from_dict(w.to_dict())
    assert np.array_equal(back.circles, w.circles) and np.array_equal(back.segments, w.segments)


def test_local_points_are_in_robot_frame():
    w = WorldMap(circles=[[2.0, 0.0, 0.2]])
    pts, mask = w.local_points([1.0, 0.0, math.pi])
    assert mask.any()
    # the obstacle is behind a robot facing -x
    assert np.all(pts[mask, 0] < 0)
