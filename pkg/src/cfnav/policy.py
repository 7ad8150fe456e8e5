"""Navigation and data-collection policies trained on model-based objectives.

Both policies share one architecture: a state observation (relative subgoal,
odometry history, the nearest moving pedestrian's recent track and obstacle
ranges) goes through three dense layers to eight bounded (v, omega) pairs.
Only the first pair is executed each tick.

``mode="social"`` trains against navigation + counterfactual perturbation +
personal space through a frozen pedestrian predictor; ``mode="collect"``
trains against navigation + pedestrian approach.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import objectives as obj
from .autonomy import Sequence, sample_chained_pair, sightings_from_poses
from .geometry import DT, Pose2, Twist, points_to_frame, poses_to_frame, wrap_angle
from .predictor import MIN_PED_SPEED, N_FUTURE, N_PAST, PedestrianPredictor, write_curve
from .tinynet import (CHECKPOINT_VERSION, CREATED_BY, Adam, CheckpointError, Network, load_json, mlp,
                      save_json)
from .world import MAX_RANGE, N_RAYS

log = logging.getLogger(__name__)

N_S = 8
N_P = 5
V_MAX = 0.6
W_MAX = 1.0
SENSE_RANGE = 6.0
N_FEATURES = 4 + (N_P + 1) * 3 + N_PAST * 2 + 1 + N_RAYS
# chaining offsets per side; keeps goals within reach of one 8-step horizon at 3 Hz
CHAIN_N_M = 8
CURVE_FIELDS = ["epoch", "loss", "j_pose", "j_col", "j_reg", "j_cp", "j_ps", "j_int"]


@dataclass
class PolicyObservation:
    goal_rel: Pose2
    odom_past: np.ndarray  # (N_P + 1, 3), current robot frame, oldest first
    ped_past: np.ndarray  # (8, 2), current robot frame
    ped_valid: bool
    ranges: np.ndarray  # (16,)

    def __post_init__(self):
        if not (np.all(np.isfinite(self.odom_past)) and np.all(np.isfinite(self.ped_past))
                and np.all(np.isfinite(self.ranges)) and np.isfinite(self.goal_rel.as_array()).all()):
            raise ValueError("observation contains non-finite values")


def features(goal, odom, ped, valid, ranges) -> np.ndarray:
    goal = np.asarray(goal, dtype=float).reshape(-1, 3)
    b = len(goal)
    valid = np.asarray(valid, dtype=float).reshape(b, 1)
    ped = np.asarray(ped, dtype=float).reshape(b, -1) * valid
    return np.concatenate([
        goal[:, :2], np.cos(goal[:, 2:3]), np.sin(goal[:, 2:3]),
        np.asarray(odom, dtype=float).reshape(b, -1),
        ped, valid,
        np.asarray(ranges, dtype=float).reshape(b, -1),
    ], axis=1)


def obs_features(obs: PolicyObservation) -> np.ndarray:
    return features(obs.goal_rel.as_array(), obs.odom_past, obs.ped_past, obs.ped_valid, obs.ranges)


class PolicyNet:
    """Dense network with tanh outputs decoded to bounded twists."""

    def __init__(self, hidden: int = 256, seed: int = 0, v_max: float = V_MAX, w_max: float = W_MAX,
                 n_s: int = N_S):
        self.net = mlp([N_FEATURES, hidden, hidden, 2 * n_s], seed=seed, out_scale=1.0)
        self.v_max, self.w_max, self.n_s = v_max, w_max, n_s
        self.meta: dict = {}

    def parameters(self):
        return self.net.parameters()

    def decode(self, u):
        u = u.reshape(len(u), self.n_s, 2)
        return np.stack([self.v_max * (u[..., 0] + 1.0) / 2.0, self.w_max * u[..., 1]], axis=-1)

    def forward(self, feats) -> np.ndarray:
        return self.decode(self.net.forward(feats))

    def backward(self, dtwists):
        du = np.stack([dtwists[..., 0] * self.v_max / 2.0, dtwists[..., 1] * self.w_max], axis=-1)
        grads, _ = self.net.backward(du.reshape(len(du), -1))
        return grads

    def act(self, obs: PolicyObservation) -> np.ndarray:
        self.net.eval()
        return self.forward(obs_features(obs))[0]

    def to_dict(self, meta=None) -> dict:
        d = self.net.to_dict({**self.meta, **(meta or {})})
        d["meta"].update({"model": "policy", "v_max": self.v_max, "w_max": self.w_max, "n_s": self.n_s})
        return d

    @classmethod
    def from_dict(cls, d) -> "PolicyNet":
        net = Network.from_dict(d)
        meta = d.get("meta", {})
        if meta.get("model") != "policy":
            raise CheckpointError(f"not a policy checkpoint (model={meta.get('model')!r})")
        p = cls.__new__(cls)
        p.net = net
        p.v_max, p.w_max, p.n_s = float(meta["v_max"]), float(meta["w_max"]), int(meta["n_s"])
        p.meta = {k: v for k, v in meta.items() if k not in ("created",)}
        return p

    def save(self, path, meta=None) -> None:
        save_json(self.to_dict(meta), path)

    @classmethod
    def load(cls, path) -> "PolicyNet":
        return cls.from_dict(load_json(path))


def policy_forward(net: PolicyNet, obs: PolicyObservation) -> list[Twist]:
    return [Twist(float(v), float(w)) for v, w in net.act(obs)]


# --- observation assembly ---------------------------------------------------


def window(arr, t: int, n: int) -> np.ndarray:
    """Frames t-n+1..t, repeating frame 0 where history is missing."""
    idx = np.clip(np.arange(t - n + 1, t + 1), 0, None)
    return arr[idx]


def future(arr, t: int, n: int) -> np.ndarray:
    idx = np.clip(np.arange(t + 1, t + n + 1), None, len(arr) - 1)
    return arr[idx]


def select_ped(robot_xy, peds, t: int, sense_range: float = SENSE_RANGE) -> int:
    """Nearest pedestrian within range whose mean recent speed exceeds 0.1 m/s, or -1."""
    if peds.shape[1] == 0:
        return -1
    speed = np.linalg.norm(window(peds, t, N_PAST)[..., 2:4], axis=-1).mean(axis=0)
    d = np.linalg.norm(peds[t, :, :2] - robot_xy, axis=-1)
    d = np.where((speed > MIN_PED_SPEED) & (d < sense_range), d, np.inf)
    return int(np.argmin(d)) if np.isfinite(d).any() else -1


def observe(robot, odom, peds, world, t: int, goal_world: Pose2 | None = None,
            goal_rel: Pose2 | None = None):
    """Build the observation and predictor inputs at tick ``t`` of a recording.

    ``robot`` holds true poses (T, 3), ``odom`` the odometry estimate and
    ``peds`` pedestrian states (T, P, 4).  Returns (observation, r_past, ped index).
    """
    pose = robot[t]
    if goal_rel is None:
        goal_rel = Pose2.from_array(poses_to_frame(goal_world.as_array(), pose))
    odom_past = poses_to_frame(window(odom, t, N_P + 1), odom[t])
    r_past = points_to_frame(window(odom, t, N_PAST)[:, :2], odom[t])
    j = select_ped(pose[:2], peds, t)
    if j >= 0:
        ped_past = points_to_frame(window(peds[:, j, :2], t, N_PAST), pose)
    else:
        ped_past = np.zeros((N_PAST, 2))
    ranges = world.raycast(pose)
    return PolicyObservation(goal_rel, odom_past, ped_past, j >= 0, ranges), r_past, j


# --- training corpus ----------------------------------------------------------


@dataclass
class PolicySamples:
    goal: np.ndarray
    odom: np.ndarray
    ped: np.ndarray
    valid: np.ndarray
    ranges: np.ndarray
    r_past: np.ndarray
    h_future: np.ndarray
    pts: np.ndarray
    pmask: np.ndarray
    seq: np.ndarray
    t: np.ndarray

    FIELDS = ("goal", "odom", "ped", "valid", "ranges", "r_past", "h_future", "pts", "pmask", "seq", "t")

    def __len__(self):
        return len(self.goal)

    def take(self, idx) -> "PolicySamples":
        return PolicySamples(*(getattr(self, f)[idx] for f in self.FIELDS))

    @classmethod
    def concat(cls, parts) -> "PolicySamples":
        parts = [p for p in parts if p is not None and len(p)]
        if not parts:
            raise ValueError("no policy samples")
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in cls.FIELDS))

    def features(self) -> np.ndarray:
        return features(self.goal, self.odom, self.ped, self.valid, self.ranges)


def samples_from_log(ep, seq_id: int, rng: np.random.Generator, stride: int = 1,
                     goal_steps: tuple[int, int] = (4, 16)) -> PolicySamples:
    """Same-trajectory samples: the goal is the robot's own pose a few ticks later."""
    T = len(ep.robot)
    ts = np.arange(0, T - 1, stride)
    rows = {f: [] for f in PolicySamples.FIELDS}
    for t in ts:
        k = min(T - 1, t + int(rng.integers(goal_steps[0], goal_steps[1] + 1)))
        goal_rel = Pose2.from_array(poses_to_frame(ep.odom[k], ep.odom[t]))
        o, r_past, j = observe(ep.robot, ep.odom, ep.peds, ep.world, t, goal_rel=goal_rel)
        if j >= 0:
            hf = points_to_frame(future(ep.peds[:, j, :2], t, N_FUTURE), ep.robot[t])
        else:
            hf = np.zeros((N_FUTURE, 2))
        pts, pmask = ep.world.local_points(ep.robot[t])
        for f, v in zip(PolicySamples.FIELDS, (goal_rel.as_array(), o.odom_past, o.ped_past, o.ped_valid,
                                               o.ranges, r_past, hf, pts, pmask, seq_id, t)):
            rows[f].append(v)
    return PolicySamples(*(np.array(rows[f]) for f in PolicySamples.FIELDS))


def chained_samples(logs, same: PolicySamples, rng: np.random.Generator, per_pair: int = 20,
                    n_m: int = 18) -> PolicySamples | None:
    """Cross-trajectory samples built by chaining traversals of the same route through tags."""
    by_route: dict = {}
    for i, ep in enumerate(logs):
        if ep.graph is not None and ep.graph.anchor_poses:
            by_route.setdefault(ep.route_id, []).append(i)
    seqs = {}
    for route, idx in by_route.items():
        for i in idx:
            ep = logs[i]
            seqs[i] = Sequence(ep.odom, sightings_from_poses(ep.robot, ep.graph.anchor_poses), id=i)
    picks, goals = [], []
    lookup = {(int(s), int(t)): k for k, (s, t) in enumerate(zip(same.seq, same.t))}
    for route, idx in by_route.items():
        for c in idx:
            for g in idx:
                if c == g:
                    continue
                shared = sorted(set(seqs[c].sightings) & set(seqs[g].sightings))
                for _ in range(per_pair if shared else 0):
                    tag = shared[int(rng.integers(len(shared)))]
                    cur, _, T_gt = sample_chained_pair(seqs[c], seqs[g], tag, rng, n_m)
                    k = lookup.get((c, cur))
                    if k is not None:
                        picks.append(k)
                        goals.append(T_gt.as_array())
    if not picks:
        return None
    out = same.take(np.array(picks))
    out.goal = np.array(goals)
    return out


def build_policy_corpus(logs, seed: int = 0, stride: int = 1, chain: bool = True, n_m: int = CHAIN_N_M):
    """Return (same-trajectory samples, cross-trajectory samples or None)."""
    rng = np.random.default_rng(seed)
    same = PolicySamples.concat([samples_from_log(ep, i, rng, stride) for i, ep in enumerate(logs)])
    cross = chained_samples(logs, same, rng, n_m=n_m) if chain else None
    return same, cross


# --- objectives over a batch ----------------------------------------------------


def policy_loss(twists, b: PolicySamples, mode: str, w: obj.ObjectiveWeights,
                predictor: PedestrianPredictor | None = None, ps_variant: str = "literal_min",
                dt: float = DT):
    """Mean total loss over the batch, its components and d(loss)/d(twists)."""
    B = len(twists)
    jp, gp = obj.j_pose(twists, b.goal, dt=dt)
    jc, gc = obj.j_col(twists, b.pts, b.pmask, dt=dt, radius=w.r_r)
    jr, gr = obj.j_reg(twists)
    total = jp + w.w_c * jc + w.w_r * jr
    grad = gp + w.w_c * gc + w.w_r * gr
    comps = {"j_pose": jp.mean(), "j_col": jc.mean(), "j_reg": jr.mean(), "j_cp": 0.0, "j_ps": 0.0, "j_int": 0.0}
    if mode == "social":
        if (w.w_cp > 0 or w.w_ps > 0) and b.valid.any():
            if predictor is None:
                raise ValueError("social mode needs a predictor")
            v = b.valid.astype(bool)
            jcp, jps, gcf, _ = obj.counterfactual_terms(
                predictor, b.ped[v], b.r_past[v], twists[v], w_cp=w.w_cp, w_ps=w.w_ps, dt=dt,
                bound=w.personal_bound, variant=ps_variant)
            total[v] += w.w_cp * jcp + w.w_ps * jps
            grad[v] += gcf
            comps["j_cp"] = jcp.sum() / B
            comps["j_ps"] = jps.sum() / B
    elif mode == "collect":
        if w.w_i > 0:
            ji, gi = obj.j_int(twists, b.h_future, b.valid, dt=dt)
            total = total + w.w_i * ji
            grad = grad + w.w_i * gi
            comps["j_int"] = ji.mean()
        else:
            comps["j_int"] = obj.j_int(twists, b.h_future, b.valid, dt=dt)[0].mean()
    else:
        raise ValueError(f"unknown policy mode {mode!r}")
    return float(total.mean()), {k: float(v) for k, v in comps.items()}, grad / B


def train_policy(mode: str, samples: PolicySamples, cross: PolicySamples | None = None, *,
                 predictor: PedestrianPredictor | None = None, epochs: int = 10, seed: int = 0,
                 weights: obj.ObjectiveWeights | None = None, batch: int = 80, lr: float = 1e-3,
                 ps_variant: str = "literal_min", hidden: int = 256, init: PolicyNet | None = None,
                 iters_per_epoch: int | None = None, curve_path=None, dt: float = DT) -> PolicyNet:
    """Minibatch training on the mode's total loss.

    Half of each batch pairs a frame with a later pose of the same run; the
    other half uses chained cross-run goals when ``cross`` is available.
    The predictor is only read, never updated.
    """
    if len(samples) == 0:
        raise ValueError("empty policy corpus")
    if mode == "social" and predictor is None:
        raise ValueError("social mode needs a frozen predictor")
    w = weights or obj.ObjectiveWeights()
    rng = np.random.default_rng(seed)
    pol = init or PolicyNet(hidden=hidden, seed=seed)
    pol.net.train()
    opt = Adam(pol.parameters(), lr=lr)
    checksum = predictor.checksum() if predictor is not None else None
    if predictor is not None:
        predictor.eval()
    half = batch // 2 if cross is not None and len(cross) else batch
    iters = iters_per_epoch or max(1, len(samples) // half)
    rows = []
    for epoch in range(1, epochs + 1):
        acc = {k: 0.0 for k in CURVE_FIELDS[1:]}
        for it in range(iters):
            idx = rng.integers(0, len(samples), size=half)
            b = samples.take(idx)
            if half < batch:
                b = PolicySamples.concat([b, cross.take(rng.integers(0, len(cross), size=batch - half))])
            pol.net.train()
            tw = pol.forward(b.features())
            loss, comps, g = policy_loss(tw, b, mode, w, predictor, ps_variant, dt)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite policy loss in batch {epoch}:{it}")
            opt.step(pol.backward(g))
            acc["loss"] += loss
            for k, v in comps.items():
                acc[k] += v
        row = {"epoch": epoch, **{k: v / iters for k, v in acc.items()}}
        rows.append(row)
        log.info("policy[%s] epoch %d loss %.5f", mode, epoch, row["loss"])
    if predictor is not None and predictor.checksum() != checksum:
        raise RuntimeError("predictor parameters changed during policy training")
    pol.net.eval()
    pol.meta.update({"mode": mode, "seed": seed, "ps_variant": ps_variant,
                     "weights": {k: getattr(w, k) for k in vars(w)}})
    pol.curve = rows
    if curve_path is not None:
        write_curve(rows, curve_path, CURVE_FIELDS)
    return pol


def evaluate_loss(pol: PolicyNet, samples: PolicySamples, mode: str, w: obj.ObjectiveWeights,
                  predictor=None, ps_variant="literal_min", dt=DT) -> float:
    pol.net.eval()
    tw = pol.forward(samples.features())
    return policy_loss(tw, samples, mode, w, predictor, ps_variant, dt)[0]
