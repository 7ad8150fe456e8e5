import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cfnav import objectives as obj
from cfnav.geometry import DT, Twist, rollout_batch
from cfnav.objectives import ObjectiveWeights
from cfnav.predictor import N_FUTURE, N_PAST, PedestrianPredictor
from conftest import central_difference, relative_error


@pytest.fixture(scope="module")
def pred():
    return PedestrianPredictor(hidden=32, embed=16, seed=11).eval()


def ped_inputs(rng):
    h_past = np.array([1.5, 0.8]) + np.cumsum(rng.normal(0, 0.1, size=(N_PAST, 2)), axis=0)
    r_past = np.cumsum(rng.normal(0, 0.1, size=(N_PAST, 2)), axis=0)
    return h_past, r_past - r_past[-1]


# --- worked examples ---------------------------------------------------------


def test_ps_literal_min_examples():
    v, _ = obj.ps_penalty(np.array([0.5, 0.9, 1.2, 2.0]), 0.7, "literal_min")
    assert abs(v - 0.0) <= 1e-12
    v, _ = obj.ps_penalty(np.array([0.5, 0.6]), 0.7, "literal_min")
    assert abs(v - 0.1) <= 1e-12
    v, _ = obj.ps_penalty(np.array([0.7, 0.9, 3.0]), 0.7, "literal_min")
    assert v == 0.0


def test_ps_variants():
    d = np.array([0.5, 0.6, 1.0])
    assert abs(obj.ps_penalty(d, 0.7, "mean")[0] - 0.1) < 1e-12
    assert abs(obj.ps_penalty(d, 0.7, "max_penetration")[0] - 0.2) < 1e-12
    with pytest.raises(ValueError):
        obj.ps_penalty(d, 0.7, "median")


def test_total_loss_arithmetic():
    w = ObjectiveWeights(w_cp=10, w_ps=100)
    assert obj.total_loss_social(1, 2, 3, w) == 321
    assert obj.total_loss_social(0, 0, 0, w) == 0
    ablation = ObjectiveWeights(w_cp=0, w_ps=0)
    assert obj.total_loss_social(4.5, 2, 3, ablation) == 4.5
    assert obj.total_loss_collect(1, 2, ObjectiveWeights(w_i=1.5)) == 4.0
    assert obj.j_nav(1, 2, 3, ObjectiveWeights(w_c=10, w_r=5)) == 36


def test_weights_reject_negative():
    with pytest.raises(ValueError):
        ObjectiveWeights(w_c=-1)


def test_j_pose_examples():
    tw = np.tile([0.5, 0.0], (8, 1))
    assert obj.j_pose(tw, [8 * 0.5 * DT, 0.0, 0.0])[0] < 1e-24
    v, _ = obj.j_pose(np.zeros((8, 2)), [1.2, -0.5, 0.0])
    assert abs(v - (1.2 ** 2 + 0.5 ** 2)) < 1e-12


def test_j_col_examples():
    tw = np.tile([0.5, 0.0], (8, 1))
    far = np.array([[0.0, 3.0], [5.0, -3.0]])
    assert obj.j_col(tw, far)[0] == 0.0
    on_path = np.array([[0.66, 0.0]])
    assert obj.j_col(tw, on_path)[0] > 0.0
    # no points at all
    assert obj.j_col(tw, np.zeros((0, 2)))[0] == 0.0
    # masked points are ignored
    assert obj.j_col(tw, on_path, np.array([False]))[0] == 0.0


def test_j_reg_examples():
    assert obj.j_reg(np.tile([0.4, 0.0], (8, 1)))[0] == 0.0
    alt = np.column_stack([np.full(8, 0.4), np.tile([1.0, -1.0], 4)])
    const = np.column_stack([np.full(8, 0.4), np.ones(8)])
    diff_alt = np.sum(np.diff(alt, axis=0) ** 2)
    diff_const = np.sum(np.diff(const, axis=0) ** 2)
    assert obj.j_reg(alt)[0] > 0 and diff_alt > diff_const
    assert obj.j_reg(alt)[0] > obj.j_reg(const)[0]


def test_j_int_examples():
    tw = np.tile([0.5, 0.0], (8, 1))
    path = rollout_batch(tw[None]).pos[0]
    crossing = path + np.array([0.0, 3.0])
    crossing[4] = path[4]
    assert obj.j_int(tw, crossing)[0] == 0.0
    assert abs(obj.j_int(tw, path + np.array([0.0, 2.0]))[0] - 2.0) < 1e-12
    assert obj.j_int(tw, crossing, np.array([False]))[0] == 0.0


def test_twist_objects_are_accepted():
    tw = [Twist(0.5, 0.0)] * 8
    assert obj.j_reg(tw)[0] == 0.0


def test_j_cp_zero_for_zero_twists(pred, rng):
    h_past, r_past = ped_inputs(rng)
    v, g = obj.j_cp(pred, h_past, r_past, np.zeros((8, 2)))
    assert v == 0.0


def test_j_cp_zero_when_plan_is_ignored(rng):
    p = PedestrianPredictor(hidden=16, embed=8, seed=2).eval()
    first = p.fc2.layers[0]
    first.w[-2 * N_FUTURE:] = 0.0  # rows fed by the robot plan
    h_past, r_past = ped_inputs(rng)
    tw = rng.uniform([0, -1], [0.6, 1], size=(8, 2))
    assert obj.j_cp(p, h_past, r_past, tw)[0] == 0.0


def test_invalid_pedestrian_gives_zero(pred, rng):
    h_past, r_past = ped_inputs(rng)
    tw = rng.uniform([0, -1], [0.6, 1], size=(2, 8, 2))
    jcp, jps, g, _ = obj.counterfactual_terms(pred, np.stack([h_past] * 2), np.stack([r_past] * 2), tw,
                                              valid=np.array([False, False]))
    assert np.all(jcp == 0) and np.all(jps == 0) and np.all(g == 0)


@given(st.lists(st.floats(0.7, 10.0), min_size=1, max_size=8))
def test_ps_saturated_is_zero(d):
    for variant in obj.PS_VARIANTS:
        assert obj.ps_penalty(np.array(d), 0.7, variant)[0] == 0.0


@given(st.integers(0, 10_000))
def test_objectives_are_non_negative(seed):
    rng = np.random.default_rng(seed)
    tw = rng.uniform([-0.2, -1.5], [0.8, 1.5], size=(4, 8, 2))
    goal = rng.normal(size=(4, 3))
    pts = rng.normal(0, 1, size=(4, 6, 2))
    hf = rng.normal(0, 1, size=(4, 8, 2))
    for v in (obj.j_pose(tw, goal)[0], obj.j_col(tw, pts)[0], obj.j_reg(tw)[0], obj.j_int(tw, hf)[0]):
        assert np.all(v >= 0)
    for variant in obj.PS_VARIANTS:
        assert np.all(obj.j_ps(tw, hf, variant=variant)[0] >= 0)


# --- gradients -----------------------------------------------------------------


def random_case(rng):
    tw = rng.uniform([0.05, -0.9], [0.6, 0.9], size=(8, 2))
    goal = np.array([rng.uniform(0.5, 3), rng.uniform(-1.5, 1.5), rng.uniform(-1, 1)])
    pts = rng.uniform([-0.5, -1.0], [2.0, 1.0], size=(10, 2))
    ped = rollout_batch(tw[None]).pos[0] + rng.normal(0, 0.4, size=(8, 2))
    return tw, goal, pts, ped


@pytest.mark.parametrize("name", ["pose", "col", "reg", "int", "ps_fixed"])
def test_closed_form_gradients(name, rng):
    for _ in range(20):
        tw, goal, pts, ped = random_case(rng)
        f = {
            "pose": lambda t: obj.j_pose(t, goal),
            "col": lambda t: obj.j_col(t, pts),
            "reg": lambda t: obj.j_reg(t),
            "int": lambda t: obj.j_int(t, ped),
            "ps_fixed": lambda t: obj.j_ps(t, ped, variant="mean"),
        }[name]
        assert relative_error(f(tw)[1], central_difference(lambda t: f(t)[0], tw)) <= 1e-3


@pytest.mark.parametrize("variant", obj.PS_VARIANTS)
def test_gradients_through_frozen_predictor(pred, rng, variant):
    for _ in range(10):
        h_past, r_past = ped_inputs(rng)
        tw = rng.uniform([0.05, -0.9], [0.6, 0.9], size=(8, 2))

        def total(t):
            jcp, jps, _, _ = obj.counterfactual_terms(pred, h_past, r_past, t, w_cp=10.0, w_ps=100.0,
                                                      variant=variant)
            return 10.0 * jcp + 100.0 * jps

        _, _, g, _ = obj.counterfactual_terms(pred, h_past, r_past, tw, w_cp=10.0, w_ps=100.0, variant=variant)
        assert relative_error(g, central_difference(total, tw)) <= 1e-3


def test_predictor_is_not_modified(pred, rng):
    before = pred.checksum()
    h_past, r_past = ped_inputs(rng)
    obj.counterfactual_terms(pred, h_past, r_past, rng.uniform(0, 0.6, size=(8, 2)))
    assert pred.checksum() == before
