"""Route graph, anchor-assisted localization, bump recovery and trajectory chaining."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import DT, Pose2, Twist, compose, inverse, relative

log = logging.getLogger(__name__)

BACKUP_DISTANCE = 0.5  # m
BACKUP_STEPS = 6
TURN_ANGLE = math.pi / 4
TURN_STEPS = 3
STUCK_WINDOW = 30.0  # s
STUCK_COUNT = 3  # stuck once more than this many collisions fall in the window
N_M = 18
DETECT_RANGE = 2.0


@dataclass(frozen=True)
class AnchorTag:
    n_ar: int
    p_ar: Pose2  # tag pose in the frame of the registering node
    n_node: int


@dataclass
class TopoGraph:
    nodes: np.ndarray  # (N, 3) x, y, theta
    anchors: list[AnchorTag] = field(default_factory=list)
    anchor_poses: dict[int, Pose2] = field(default_factory=dict)  # world poses, simulation only
    speed: float = 0.6

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 3)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def edges(self) -> np.ndarray:
        """Temporal distance between consecutive nodes at the nominal speed."""
        return np.linalg.norm(np.diff(self.nodes[:, :2], axis=0), axis=1) / self.speed

    def node_pose(self, i: int) -> Pose2:
        return Pose2.from_array(self.nodes[int(np.clip(i, 0, len(self) - 1))])

    @classmethod
    def from_path(cls, waypoints, spacing: float = 1.0, speed: float = 0.6) -> "TopoGraph":
        """Resample a polyline into nodes at (at most) ``spacing`` metres."""
        wp = np.asarray(waypoints, dtype=float)[:, :2]
        seg = np.linalg.norm(np.diff(wp, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        n = max(2, int(math.ceil(s[-1] / spacing)) + 1)
        q = np.linspace(0.0, s[-1], n)
        xy = np.stack([np.interp(q, s, wp[:, 0]), np.interp(q, s, wp[:, 1])], -1)
        d = np.diff(xy, axis=0)
        th = np.arctan2(d[:, 1], d[:, 0])
        th = np.concatenate([th, th[-1:]])
        return cls(np.column_stack([xy, th]), speed=speed)

    def place_anchors(self, every: float = 10.0, offset: float = 1.0, first: float = 3.0,
                      detect_range: float = DETECT_RANGE) -> None:
        """Put tags beside the route and register every node that can see them."""
        xy = self.nodes[:, :2]
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(xy, axis=0), axis=1))])
        self.anchors, self.anchor_poses = [], {}
        for k, at in enumerate(np.arange(first, s[-1], every)):
            i = int(np.searchsorted(s, at))
            base = self.node_pose(i)
            # tag on the left of the route, facing it
            tag = compose(base, Pose2(0.0, offset, -math.pi / 2))
            self.anchor_poses[k] = tag
            for j in range(len(self)):
                node = self.node_pose(j)
                if math.hypot(node.x - tag.x, node.y - tag.y) <= detect_range:
                    self.anchors.append(AnchorTag(k, relative(node, tag), j))

    def registrations(self, n_ar: int) -> list[AnchorTag]:
        return [a for a in self.anchors if a.n_ar == n_ar]

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": i, "x": float(x), "y": float(y), "theta": float(t)}
                      for i, (x, y, t) in enumerate(self.nodes)],
            "anchors": [{"n_ar": a.n_ar, "x": a.p_ar.x, "y": a.p_ar.y, "theta": a.p_ar.theta,
                         "n_node": a.n_node} for a in self.anchors],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TopoGraph":
        nodes = sorted(d["nodes"], key=lambda n: n["id"])
        if [n["id"] for n in nodes] != list(range(len(nodes))):
            raise ValueError("graph node ids must be dense 0..N-1")
        g = cls(np.array([[n["x"], n["y"], n["theta"]] for n in nodes]))
        g.anchors = [AnchorTag(int(a["n_ar"]), Pose2(a["x"], a["y"], a["theta"]), int(a["n_node"]))
                     for a in d.get("anchors", [])]
        return g

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "TopoGraph":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def localize_with_anchor(graph: TopoGraph, current: int, n_ar: int, observed: Pose2) -> int:
    """Override the node estimate from a tag detection.

    The registering node closest to the tag wins.  If that node already lies
    behind the robot (negative forward coordinate when chained through the
    observed tag pose) the robot is passing the tag and the next node is used.
    """
    regs = graph.registrations(n_ar)
    if not regs:
        log.info("tag %s is not registered; keeping node %d", n_ar, current)
        return current
    reg = min(regs, key=lambda a: (math.hypot(a.p_ar.x, a.p_ar.y), a.n_node))
    node_in_robot = compose(observed, inverse(reg.p_ar))
    if node_in_robot.x < 0.0:
        return min(reg.n_node + 1, len(graph) - 1)
    return reg.n_node


# --- help-and-rescue --------------------------------------------------------


@dataclass
class RecoveryState:
    phase: str = "normal"  # normal, backing_up, rotating, stuck
    bumper_side: str = "none"
    collision_times: list[float] = field(default_factory=list)


def backup_twists(side: str, dt: float = DT) -> list[Twist]:
    """Open-loop reverse of 0.5 m then a 45 degree turn away from the bumped side."""
    v = -BACKUP_DISTANCE / (BACKUP_STEPS * dt)
    w = TURN_ANGLE / (TURN_STEPS * dt)
    if side == "left":
        w = -w  # left bumper: rotate right (clockwise)
    return [Twist(v, 0.0)] * BACKUP_STEPS + [Twist(0.0, w)] * TURN_STEPS


def rescue_maneuver(state: RecoveryState, pose: Pose2, t: float, side: str, dt: float = DT):
    """React to a collision at time ``t``.

    Returns (twists, new_state, event).  ``event`` is a rescue request when
    more than three collisions fall within 30 s; the twist list is then empty.
    """
    times = [c for c in state.collision_times if c > t - STUCK_WINDOW] + [t]
    if len(times) > STUCK_COUNT:
        event = {"t": t, "pose": [pose.x, pose.y, pose.theta], "collision_history": times}
        return [], RecoveryState("stuck", side, times), event
    return backup_twists(side, dt), RecoveryState("backing_up", side, times), None


def after_rescue(state: RecoveryState) -> RecoveryState:
    return RecoveryState("normal", "none", [])


# --- trajectory chaining ----------------------------------------------------


def chain_relative_pose(T_oc: Pose2, T_mc: Pose2, T_mg: Pose2, T_og: Pose2) -> Pose2:
    return compose(compose(compose(T_oc, T_mc), inverse(T_mg)), T_og)


@dataclass
class Sequence:
    """One traversal: odometry poses plus the closest sighting of each tag."""

    odom: np.ndarray  # (T, 3), in the sequence's own odometry frame
    sightings: dict[int, tuple[int, Pose2]] = field(default_factory=dict)
    id: int = 0


def sightings_from_poses(poses, anchor_poses: dict[int, Pose2], detect_range=DETECT_RANGE,
                         rng: np.random.Generator | None = None, noise: float = 0.0):
    """Closest detection of each tag along true poses (T, 3)."""
    out = {}
    for k, tag in anchor_poses.items():
        d = np.hypot(poses[:, 0] - tag.x, poses[:, 1] - tag.y)
        i = int(np.argmin(d))
        if d[i] <= detect_range:
            obs = relative(Pose2.from_array(poses[i]), tag)
            if noise > 0 and rng is not None:
                e = rng.normal(0.0, noise, size=3)
                obs = Pose2(obs.x + e[0], obs.y + e[1], obs.theta + e[2] * 0.1)
            out[k] = (i, obs)
    return out


def sample_chained_pair(seq_c: Sequence, seq_g: Sequence, anchor: int, rng: np.random.Generator,
                        n_m: int = N_M, offsets: tuple[int, int] | None = None):
    """Pick a current frame before the shared tag in ``seq_c`` and a goal frame after it in ``seq_g``.

    Returns (current index, goal index, relative goal pose).
    """
    if anchor not in seq_c.sightings or anchor not in seq_g.sightings:
        raise KeyError(f"tag {anchor} is not observed in both sequences")
    n_c, T_mc = seq_c.sightings[anchor]
    n_g, T_mg = seq_g.sightings[anchor]
    n_cr, n_gr = offsets if offsets is not None else rng.integers(0, n_m + 1, size=2)
    cur = max(0, n_c - int(n_cr))
    goal = min(len(seq_g.odom) - 1, n_g + int(n_gr))
    T_oc = relative(Pose2.from_array(seq_c.odom[cur]), Pose2.from_array(seq_c.odom[n_c]))
    T_og = relative(Pose2.from_array(seq_g.odom[n_g]), Pose2.from_array(seq_g.odom[goal]))
    return cur, goal, chain_relative_pose(T_oc, T_mc, T_mg, T_og)
