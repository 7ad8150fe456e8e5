import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cfnav.autonomy import (AnchorTag, RecoveryState, Sequence, TopoGraph, after_rescue, backup_twists,
                            chain_relative_pose, localize_with_anchor, relative, rescue_maneuver,
                            sample_chained_pair, sightings_from_poses)
from cfnav.geometry import DT, Pose2, compose, integrate_unicycle, inverse
from conftest import angle_diff, from_matrix, matrix

coord = st.floats(-20, 20, allow_nan=False)
angle = st.floats(-math.pi, math.pi, allow_nan=False)
poses = st.builds(Pose2, coord, coord, angle)


# --- recovery ------------------------------------------------------------------


@pytest.mark.parametrize("side,heading", [("left", -math.pi / 4), ("right", math.pi / 4)])
def test_rescue_maneuver_geometry(side, heading):
    tw, state, event = rescue_maneuver(RecoveryState(), Pose2.identity(), 0.0, side)
    assert event is None and state.phase == "backing_up" and state.bumper_side == side
    end = integrate_unicycle(Pose2.identity(), tw, DT)[-1]
    assert abs(end.x + 0.5) < 1e-9 and abs(end.y) < 1e-9
    assert abs(end.theta - heading) < 1e-9


@given(poses, st.sampled_from(["left", "right"]))
def test_maneuver_is_relative_to_pose(p, side):
    end = integrate_unicycle(p, backup_twists(side), DT)[-1]
    rel = relative(p, end)
    assert abs(rel.x + 0.5) < 1e-9 and abs(rel.y) < 1e-9
    assert angle_diff(rel.theta, -math.pi / 4 if side == "left" else math.pi / 4) < 1e-9


def test_stuck_on_fourth_collision_within_window():
    s = RecoveryState()
    for k, t in enumerate([0.0, 3.0, 6.0]):
        tw, s, ev = rescue_maneuver(s, Pose2(1, 2, 0.3), t, "left")
        assert ev is None and tw
    tw, s, ev = rescue_maneuver(s, Pose2(1, 2, 0.3), 9.0, "right")
    assert s.phase == "stuck" and tw == []
    assert ev["collision_history"] == [0.0, 3.0, 6.0, 9.0]
    assert np.allclose(ev["pose"], [1, 2, 0.3]) and ev["t"] == 9.0
    assert after_rescue(s).phase == "normal" and after_rescue(s).collision_times == []


def test_old_collisions_fall_out_of_window():
    s = RecoveryState()
    for t in [0.0, 10.0, 20.0, 31.0, 40.0]:
        _, s, ev = rescue_maneuver(s, Pose2.identity(), t, "left")
        assert ev is None


@given(st.lists(st.floats(0.0, 300.0), min_size=1, max_size=25))
def test_never_stuck_with_three_or_fewer_in_window(times):
    times = sorted(times)
    s = RecoveryState()
    history = []  # reference: collisions since the last rescue
    for t in times:
        history.append(t)
        _, s, ev = rescue_maneuver(s, Pose2.identity(), t, "left")
        in_window = sum(1 for u in history if u > t - 30.0)
        assert (ev is not None) == (in_window > 3)
        if ev is not None:
            s, history = after_rescue(s), []


# --- anchor localization -----------------------------------------------------


def corridor(n=30):
    g = TopoGraph.from_path(np.array([[0.0, 0.0], [n - 1.0, 0.0]]), spacing=1.0)
    g.place_anchors(every=6.0, offset=1.0, first=2.0)
    assert len(g) == n
    return g


def expected_node(g, pose, n_ar):
    """Geometric oracle: nearest registration, bumped forward when its node is behind the robot."""
    reg = min(g.registrations(n_ar), key=lambda a: (math.hypot(a.p_ar.x, a.p_ar.y), a.n_node))
    rel = relative(pose, g.node_pose(reg.n_node))
    return reg.n_node + 1 if rel.x < 0 else reg.n_node


def test_localization_examples():
    g = TopoGraph(np.column_stack([np.arange(20.0), np.zeros(20), np.zeros(20)]))
    tag = Pose2(12.0, 1.0, -math.pi / 2)
    g.anchors = [AnchorTag(5, relative(g.node_pose(12), tag), 12)]
    approaching = Pose2(11.5, 0.0, 0.0)
    assert localize_with_anchor(g, 7, 5, relative(approaching, tag)) == 12
    passing = Pose2(12.5, 0.0, 0.0)
    assert localize_with_anchor(g, 7, 5, relative(passing, tag)) == 13
    assert localize_with_anchor(g, 7, 99, relative(approaching, tag)) == 7


def test_drifted_walk_is_restored_at_every_detection(rng):
    g = corridor()
    est = 0
    detections = 0
    for s in np.arange(0.0, 29.0, 0.25):
        pose = Pose2(s, rng.normal(0, 0.05), rng.normal(0, 0.05))
        est = int(np.clip(est + rng.integers(-3, 4), 0, 29))  # drifting node estimate
        for k, tag in g.anchor_poses.items():
            if math.hypot(tag.x - pose.x, tag.y - pose.y) <= 2.0:
                got = localize_with_anchor(g, est, k, relative(pose, tag))
                assert got == expected_node(g, pose, k)
                est = got
                detections += 1
    assert detections > 20


@given(st.floats(0.0, 28.0), st.integers(0, 29), st.integers(0, 29))
def test_localization_ignores_estimate_and_is_idempotent(s, a, b):
    g = corridor()
    pose = Pose2(s, 0.0, 0.0)
    for k, tag in g.anchor_poses.items():
        if math.hypot(tag.x - pose.x, tag.y - pose.y) <= 2.0:
            obs = relative(pose, tag)
            first = localize_with_anchor(g, a, k, obs)
            assert first == localize_with_anchor(g, b, k, obs)
            assert localize_with_anchor(g, first, k, obs) == first


def test_graph_json_round_trip(tmp_path):
    g = corridor()
    g.save(tmp_path / "g.json")
    back = TopoGraph.load(tmp_path / "g.json")
    assert np.allclose(back.nodes, g.nodes)
    assert back.anchors == g.anchors
    assert np.allclose(back.edges, np.ones(29) / 0.6)
    with pytest.raises(ValueError):
        TopoGraph.from_dict({"nodes": [{"id": 1, "x": 0, "y": 0, "theta": 0}]})


# --- chaining ------------------------------------------------------------------


def test_chain_identity_case():
    p = Pose2(1.0, -2.0, 0.4)
    out = chain_relative_pose(Pose2.identity(), p, p, Pose2.identity())
    assert np.allclose(out.as_array(), 0.0, atol=1e-12)


@given(poses, poses, poses, poses)
def test_chain_matches_matrix_oracle(a, b, c, d):
    m = matrix(a.as_array()) @ matrix(b.as_array()) @ np.linalg.inv(matrix(c.as_array())) @ matrix(d.as_array())
    want = from_matrix(m)
    got = chain_relative_pose(a, b, c, d).as_array()
    assert np.allclose(got[:2], want[:2], atol=1e-8)
    assert angle_diff(got[2], want[2]) < 1e-9


def traversal(rng, n=60):
    """True poses along a wavy path and odometry in a random frame of its own."""
    x = np.linspace(0.0, 20.0, n)
    y = 0.5 * np.sin(x / 3.0 + rng.uniform(0, 1)) + rng.normal(0, 0.1)
    th = np.arctan2(np.gradient(y), np.gradient(x))
    true = np.column_stack([x, y, th])
    origin = Pose2(*rng.uniform([-5, -5, -math.pi], [5, 5, math.pi]))
    odom = np.array([compose(inverse(origin), Pose2(*p)).as_array() for p in true])
    return true, odom


def test_noise_free_chaining_recovers_ground_truth(rng):
    tags = {0: Pose2(10.0, 1.2, -math.pi / 2)}
    for _ in range(50):
        true_c, odom_c = traversal(rng)
        true_g, odom_g = traversal(rng)
        sc = Sequence(odom_c, sightings_from_poses(true_c, tags), 0)
        sg = Sequence(odom_g, sightings_from_poses(true_g, tags), 1)
        cur, goal, T = sample_chained_pair(sc, sg, 0, rng, n_m=18)
        want = relative(Pose2(*true_c[cur]), Pose2(*true_g[goal]))
        assert np.allclose(T.as_array()[:2], want.as_array()[:2], atol=1e-9)
        assert angle_diff(T.theta, want.theta) < 1e-9


def test_degenerate_pair_is_identity(rng):
    tags = {0: Pose2(10.0, 1.2, -math.pi / 2)}
    true, odom = traversal(rng)
    s = Sequence(odom, sightings_from_poses(true, tags))
    _, _, T = sample_chained_pair(s, s, 0, rng, offsets=(0, 0))
    assert np.allclose(T.as_array(), 0.0, atol=1e-12)
    with pytest.raises(KeyError):
        sample_chained_pair(s, s, 7, rng)
