"""Closed-loop episodes, social-navigation metrics and corpus collection.

An episode drives the robot along a route graph with a learned (or scripted)
controller while social-force pedestrians walk across or against the route
and react to the robot.  Only the first twist of each predicted horizon is
executed.  Bumps against static obstacles trigger the backup maneuver; repeated
bumps raise a rescue request.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .autonomy import (DETECT_RANGE, RecoveryState, TopoGraph, after_rescue, localize_with_anchor,
                       rescue_maneuver)
from .geometry import DT, Pose2, points_to_frame, relative, wrap_angle
from .policy import V_MAX, future, observe, select_ped, window
from .predictor import N_FUTURE, N_PAST, PedestrianPredictor
from .socialforce import (CSV_HEADER, PED_RADIUS, ROBOT_RADIUS, Rollout, SocialForceParams,
                          step_social_force, write_csv)
from .world import WorldMap

log = logging.getLogger(__name__)

GOAL_TOLERANCE = 0.5
LOOKAHEAD = 2  # nodes ahead of the localized node used as subgoal
ROUTE_INFLATE = 0.55
CARROT = 2.0  # m, minimum subgoal distance on the final approach


@dataclass
class PedSpec:
    start: tuple[float, float]
    goal: tuple[float, float]
    speed: float


@dataclass
class EpisodeConfig:
    seed: int
    world: WorldMap
    start: Pose2
    goal: Pose2
    peds: list[PedSpec]
    max_steps: int
    graph: TopoGraph
    route_id: int = 0
    goal_tolerance: float = GOAL_TOLERANCE
    odom_noise: float = 0.0
    dt: float = DT

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "route_id": self.route_id, "world": self.world.to_dict(),
            "start": [self.start.x, self.start.y, self.start.theta],
            "goal": [self.goal.x, self.goal.y, self.goal.theta],
            "peds": [asdict(p) for p in self.peds], "max_steps": self.max_steps,
            "graph": self.graph.to_dict(),
            "anchor_poses": {str(k): [p.x, p.y, p.theta] for k, p in self.graph.anchor_poses.items()},
            "goal_tolerance": self.goal_tolerance, "odom_noise": self.odom_noise, "dt": self.dt,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeConfig":
        g = TopoGraph.from_dict(d["graph"])
        g.anchor_poses = {int(k): Pose2(*v) for k, v in d.get("anchor_poses", {}).items()}
        return cls(int(d["seed"]), WorldMap.from_dict(d["world"]), Pose2(*d["start"]), Pose2(*d["goal"]),
                   [PedSpec(tuple(p["start"]), tuple(p["goal"]), p["speed"]) for p in d["peds"]],
                   int(d["max_steps"]), g, int(d.get("route_id", 0)), d.get("goal_tolerance", GOAL_TOLERANCE),
                   d.get("odom_noise", 0.0), d.get("dt", DT))


def make_route(route_seed: int, length_range=(8.0, 16.0), clutter: int = 0):
    """Random start/goal with circular and wall obstacles near the straight line.

    ``clutter`` adds that many extra circles right on the line, forcing detours.
    """
    rng = np.random.default_rng([route_seed, 1])
    for _ in range(100):
        L = rng.uniform(*length_range)
        phi = rng.uniform(-np.pi, np.pi)
        u = np.array([np.cos(phi), np.sin(phi)])
        n = np.array([-u[1], u[0]])
        start, goal = np.zeros(2), L * u
        circles = []
        n_circ = int(rng.integers(2, 5))
        for k in range(n_circ + clutter):
            lat = rng.uniform(-0.8, 0.8) if k < n_circ else rng.uniform(-0.3, 0.3)
            c = start + rng.uniform(0.2, 0.85) * L * u + lat * n
            r = rng.uniform(0.25, 0.6)
            if min(np.linalg.norm(c - start), np.linalg.norm(c - goal)) - r > 1.2:
                circles.append([c[0], c[1], r])
        segs = []
        for _ in range(rng.integers(0, 3)):
            mid = start + rng.uniform(0.2, 0.8) * L * u + rng.choice([-1, 1]) * rng.uniform(1.3, 2.5) * n
            half = rng.uniform(0.5, 1.5) * u
            segs.append([*(mid - half), *(mid + half)])
        world = WorldMap(circles, segs)
        length, path = world.shortest_path(start, goal, inflate=ROUTE_INFLATE)
        if np.isfinite(length) and length <= 20.0:
            return world, Pose2(*start, phi), Pose2(*goal, phi), path
    raise RuntimeError(f"could not build a route for seed {route_seed}")


def make_episode_config(seed: int, route_seed: int | None = None, n_peds: int | None = None,
                        jitter: float = 0.0, odom_noise: float = 0.0, clutter: int = 0) -> EpisodeConfig:
    """Route from ``route_seed`` (default: ``seed``), pedestrians from ``seed``."""
    route_seed = seed if route_seed is None else route_seed
    world, start, goal, path = make_route(route_seed, clutter=clutter)
    graph = TopoGraph.from_path(path, spacing=1.0, speed=V_MAX)
    graph.place_anchors()
    rng = np.random.default_rng([seed, 2])
    if jitter > 0:
        world = world.jittered(rng, jitter)
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    length = s[-1]

    def along(frac):
        q = frac * length
        p = np.array([np.interp(q, s, path[:, 0]), np.interp(q, s, path[:, 1])])
        k = min(int(np.searchsorted(s, q, side="right")) - 1, len(seg) - 1)
        d = (path[k + 1] - path[k]) / max(seg[k], 1e-9)
        return p, d

    peds = []
    for _ in range(n_peds if n_peds is not None else int(rng.integers(1, 4))):
        speed = float(rng.uniform(0.6, 1.0))
        if rng.uniform() < 0.7:
            frac = rng.uniform(0.3, 0.8)
            c, d = along(frac)
            t_arrive = max(2.0, frac * length / (0.9 * V_MAX) + rng.uniform(-1.5, 1.5))
            ang = rng.choice([-1, 1]) * np.pi / 2 + rng.uniform(-0.4, 0.4)
            rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
            e = rot @ d
            p0, p1 = c - e * speed * t_arrive, c + e * 4.0
        else:
            c, d = along(rng.uniform(0.75, 1.0))
            nrm = np.array([-d[1], d[0]])
            p0 = c + nrm * rng.uniform(-0.4, 0.4)
            p1 = start.as_array()[:2] + nrm * rng.uniform(-0.6, 0.6)
        peds.append(PedSpec((float(p0[0]), float(p0[1])), (float(p1[0]), float(p1[1])), speed))
    l_star = world.shortest_path(start.as_array(), goal.as_array(), inflate=ROBOT_RADIUS)[0]
    max_steps = int(math.ceil(2.5 * l_star / V_MAX / DT)) + 20
    start = Pose2(start.x, start.y, start.theta + rng.uniform(-0.3, 0.3))
    return EpisodeConfig(seed, world, start, goal, peds, max_steps, graph, route_seed,
                         odom_noise=odom_noise)


# --- controllers ------------------------------------------------------------


class PursuitController:
    """Proportional controller toward the subgoal; ignores pedestrians and obstacles.

    With ``explore`` set it behaves like a distracted driver: random pauses,
    speed changes and heading bias, so bootstrap corpora also contain slow and
    stopped odometry histories.
    """

    def __init__(self, v_max=V_MAX, w_max=1.0, k_v=0.8, k_w=1.5, n_s=8, explore: bool = False, seed: int = 0):
        self.v_max, self.w_max, self.k_v, self.k_w, self.n_s = v_max, w_max, k_v, k_w, n_s
        self.explore = explore
        self.rng = np.random.default_rng(seed)
        self.pause, self.scale, self.bias = 0, 1.0, 0.0

    def act(self, obs):
        g = obs.goal_rel
        bearing = math.atan2(g.y, g.x)
        dist = math.hypot(g.x, g.y)
        scale, bias = 1.0, 0.0
        if self.explore:
            r = self.rng.uniform(size=3)
            if self.pause == 0 and r[0] < 0.04:
                self.pause = int(self.rng.integers(2, 10))
            if r[1] < 0.1:
                self.scale = self.rng.uniform(0.3, 1.0)
            if r[2] < 0.1:
                self.bias = self.rng.normal(0.0, 0.3)
            scale, bias = self.scale, self.bias
            if self.pause > 0:
                self.pause -= 1
                scale = 0.0
        v = scale * min(self.v_max, self.k_v * dist) * max(0.0, math.cos(bearing))
        w = float(np.clip(self.k_w * (bearing + bias), -self.w_max, self.w_max))
        return np.tile([v, w], (self.n_s, 1))


def bootstrap_logs(configs, explore: bool = True) -> list:
    """Episodes driven by fresh exploratory pursuit controllers, one seed per config."""
    return [run_episode(PursuitController(explore=explore, seed=c.seed), c) for c in configs]


# --- episodes ----------------------------------------------------------------


@dataclass
class EpisodeLog:
    seed: int
    route_id: int
    world: WorldMap
    graph: TopoGraph
    goal: Pose2
    robot: np.ndarray  # (T, 3) true poses
    odom: np.ndarray  # (T, 3) odometry estimate
    peds: np.ndarray  # (T, P, 4)
    contact: np.ndarray  # (T,) bumper contact with static obstacles
    success: bool
    shortest: float
    events: list = field(default_factory=list)
    dt: float = DT
    cp_perturbation: float = 0.0

    @property
    def steps(self) -> int:
        return len(self.robot)

    @property
    def path_len(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.robot[:, :2], axis=0), axis=1)))

    @property
    def time(self) -> float:
        return (self.steps - 1) * self.dt

    def ped_distance(self) -> np.ndarray:
        """Robot-pedestrian centre distances (T, P)."""
        return np.linalg.norm(self.peds[:, :, :2] - self.robot[:, None, :2], axis=-1)

    def as_rollout(self, scenario_id: int) -> Rollout:
        T, P = self.steps, self.peds.shape[1]
        states = np.zeros((T, P + 1, 5))
        states[:, 0, :3] = self.robot
        vel = np.zeros((T, 2))
        vel[1:] = np.diff(self.robot[:, :2], axis=0) / self.dt
        states[:, 0, 3:] = vel
        states[:, 1:, :2] = self.peds[..., :2]
        states[:, 1:, 2] = np.arctan2(self.peds[..., 3], self.peds[..., 2])
        states[:, 1:, 3:] = self.peds[..., 2:]
        return Rollout(scenario_id, ["robot"] + ["ped"] * P, list(range(P + 1)), states, self.dt)


def _unicycle_step(pose, v, w, dt):
    x, y, th = pose
    return np.array([x + v * math.cos(th) * dt, y + v * math.sin(th) * dt, float(wrap_angle(th + w * dt))])


def _obstacle_accel(world: WorldMap, pos, params: SocialForceParams):
    if world.empty:
        return np.zeros_like(pos)
    d, near = world.nearest(pos)
    diff = pos - near
    u = diff / np.maximum(np.linalg.norm(diff, axis=-1), 1e-9)[:, None]
    return (params.A * np.exp((PED_RADIUS - d) / params.B))[:, None] * u


def run_episode(policy, config: EpisodeConfig, predictor: PedestrianPredictor | None = None, *,
                sf_params: SocialForceParams | None = None, recovery: bool = True,
                day: int | None = None) -> EpisodeLog:
    """Run one closed-loop episode; failures are recorded outcomes, not errors."""
    sf = sf_params or SocialForceParams()
    dt = config.dt
    rng = np.random.default_rng([config.seed, 3])
    world, graph = config.world, config.graph
    T = config.max_steps
    P = len(config.peds)
    robot = np.zeros((T, 3))
    odom = np.zeros((T, 3))
    peds = np.zeros((T, P, 4))
    contact = np.zeros(T, dtype=bool)
    pose = config.start.as_array()
    est = pose.copy()
    ped_state = np.array([[*p.start, 0.0, 0.0] for p in config.peds]).reshape(P, 4)
    ped_goal = np.array([p.goal for p in config.peds]).reshape(P, 2)
    ped_speed = np.array([p.speed for p in config.peds])
    # pedestrians start at their nominal walking velocity
    if P:
        to_goal = ped_goal - ped_state[:, :2]
        ped_state[:, 2:] = to_goal / np.linalg.norm(to_goal, axis=1, keepdims=True) * ped_speed[:, None]
    radii = np.concatenate([[ROBOT_RADIUS], np.full(P, PED_RADIUS)])
    node = 0
    rec = RecoveryState()
    queue: list = []
    events = []
    success = False
    n = 0
    for t in range(T):
        robot[t], odom[t], peds[t] = pose, est, ped_state
        n = t + 1
        if math.hypot(pose[0] - config.goal.x, pose[1] - config.goal.y) < config.goal_tolerance:
            success = True
            break
        if t == T - 1:
            break
        node = _localize(graph, node, est, pose)
        goal_world = _subgoal(graph, node, est, config.goal)
        if queue:
            v, w = queue.pop(0)
        else:
            obs, _, _ = observe(robot[:n], odom[:n], peds[:n], world, t, goal_world=goal_world)
            v, w = (float(a) for a in policy.act(obs)[0])
        new = _unicycle_step(pose, v, w, dt)
        if world.clearance(new[:2]) < ROBOT_RADIUS:
            contact[t] = True
            queue = []
            _, near = world.nearest(new[:2])
            side = "left" if points_to_frame(near, pose)[1] > 0 else "right"
            if recovery:
                tw, rec, event = rescue_maneuver(rec, Pose2.from_array(pose), t * dt, side, dt)
                queue = [(x.v, x.omega) for x in tw]
                if event is not None:
                    event["day"] = day
                    events.append(event)
                    pose, node = _operator_rescue(graph, world, node, pose)
                    est = pose.copy()
                    rec = after_rescue(rec)
        else:
            pose = new
            if rec.phase != "normal" and not queue:
                rec = RecoveryState("normal", "none", rec.collision_times)
            est = _unicycle_step(est, v, w, dt)
            if config.odom_noise > 0 and abs(v) > 1e-9:
                est[:2] += rng.normal(0.0, config.odom_noise, size=2)
        if P:
            speed = np.linalg.norm(ped_state[:, 2:], axis=1)
            all_state = np.vstack([[pose[0], pose[1], v * math.cos(pose[2]), v * math.sin(pose[2])], ped_state])
            goals = np.vstack([pose[:2], ped_goal])
            des = np.concatenate([[0.0], ped_speed])
            acc = np.vstack([np.zeros((1, 2)), _obstacle_accel(world, ped_state[:, :2], sf)])
            nxt = step_social_force(all_state, goals, sf, dt, desired_speed=des,
                                    max_speed=np.concatenate([[10.0], sf.max_speed_factor * ped_speed]),
                                    radii=radii, extra_accel=acc)
            ped_state = nxt[1:]
    ep = EpisodeLog(config.seed, config.route_id, world, graph, config.goal, robot[:n], odom[:n], peds[:n],
                    contact[:n], success, world.shortest_path(config.start.as_array(), config.goal.as_array(),
                                                              inflate=ROBOT_RADIUS)[0], events, dt)
    if predictor is not None:
        ep.cp_perturbation = counterfactual_perturbation(ep, predictor)
    return ep


def _subgoal(graph: TopoGraph, node: int, est, goal: Pose2) -> Pose2:
    """Node ``LOOKAHEAD`` ahead; near the end a carrot on the final heading that never gets closer
    than ``CARROT`` metres until the robot is level with the goal."""
    if node + LOOKAHEAD < len(graph) - 1:
        return graph.node_pose(node + LOOKAHEAD)
    phi = graph.nodes[-1, 2]
    u = np.array([math.cos(phi), math.sin(phi)])
    ahead = float(np.dot([goal.x - est[0], goal.y - est[1]], u))
    ext = max(0.0, CARROT - ahead) if ahead > 0 else 0.0
    return Pose2(goal.x + ext * u[0], goal.y + ext * u[1], phi)


def _localize(graph: TopoGraph, node: int, est, pose) -> int:
    lo, hi = max(0, node - 1), min(len(graph), node + 4)
    d = np.linalg.norm(graph.nodes[lo:hi, :2] - est[:2], axis=1)
    node = lo + int(np.argmin(d))
    for k, tag in graph.anchor_poses.items():
        if math.hypot(tag.x - pose[0], tag.y - pose[1]) <= DETECT_RANGE:
            node = localize_with_anchor(graph, node, k, relative(Pose2.from_array(pose), tag))
    return node


def _operator_rescue(graph, world, node, pose):
    """Remote teleoperation: put the robot on the first clear node ahead."""
    for j in range(node + 1, len(graph)):
        p = graph.nodes[j]
        if world.clearance(p[:2]) > ROBOT_RADIUS + 0.1:
            return p.copy(), j
    return pose, node


def counterfactual_perturbation(ep: EpisodeLog, predictor: PedestrianPredictor) -> float:
    """Mean give-way gap of the reference predictor along the executed robot path."""
    hp, rp, rf = [], [], []
    for t in range(ep.steps):
        j = select_ped(ep.robot[t, :2], ep.peds, t)
        if j < 0:
            continue
        frame = ep.robot[t]
        hp.append(points_to_frame(window(ep.peds[:, j, :2], t, N_PAST), frame))
        rp.append(points_to_frame(window(ep.odom, t, N_PAST)[:, :2], ep.odom[t]))
        rf.append(points_to_frame(future(ep.robot, t, N_FUTURE)[:, :2], frame))
    if not hp:
        return 0.0
    predictor.eval()
    hp, rp, rf = np.array(hp), np.array(rp), np.array(rf)
    h_hat = predictor.predict(hp, rp, rf)
    h_gw = predictor.predict(hp, rp, np.zeros_like(rf))
    return float(np.mean(np.sum((h_hat - h_gw) ** 2, axis=-1)))


# --- metrics -------------------------------------------------------------------


@dataclass
class MetricsReport:
    gr: float
    spl: float
    stl: float
    cp: int
    co: int
    psv: float
    mean_cp_perturbation: float = 0.0
    per_episode: list = field(default_factory=list)

    def aggregate(self) -> dict:
        return {"gr": self.gr, "spl": self.spl, "stl": self.stl, "cp": self.cp, "co": self.co,
                "psv": self.psv, "mean_cp_perturbation": self.mean_cp_perturbation}

    def to_dict(self, suite: str = "default") -> dict:
        return {"suite": suite, "n_episodes": len(self.per_episode), "per_episode": self.per_episode,
                "aggregate": self.aggregate()}


def count_intervals(flags) -> int:
    """Number of contiguous True runs."""
    f = np.asarray(flags, dtype=bool).astype(int)
    return int(np.sum(np.diff(np.concatenate([[0], f])) == 1))


def episode_metrics(ep: EpisodeLog, r_h=0.45, r_r=ROBOT_RADIUS, ped_radius=PED_RADIUS, v_max=V_MAX) -> dict:
    d = ep.ped_distance()
    cp = sum(count_intervals(d[:, k] < r_r + ped_radius) for k in range(d.shape[1]))
    psv = float(np.sum(d.min(axis=1) < r_h + r_r) * ep.dt) if d.shape[1] else 0.0
    s = 1.0 if ep.success else 0.0
    l_star, p = ep.shortest, ep.path_len
    t_star = l_star / v_max
    return {
        "seed": ep.seed, "success": bool(ep.success), "path_len": p, "time": ep.time,
        "cp": int(cp), "co": count_intervals(ep.contact), "psv": psv,
        "mean_cp_perturbation": ep.cp_perturbation,
        "spl": s * l_star / max(p, l_star), "stl": s * t_star / max(ep.time, t_star),
        "interventions": len(ep.events),
    }


def compute_metrics(results, r_h=0.45, r_r=ROBOT_RADIUS, ped_radius=PED_RADIUS, v_max=V_MAX) -> MetricsReport:
    """GR, SPL, STL as means; CP, CO and PSV summed over episodes."""
    if not results:
        raise ValueError("no episodes to score")
    rows = [r if isinstance(r, dict) else episode_metrics(r, r_h, r_r, ped_radius, v_max) for r in results]
    return MetricsReport(
        gr=float(np.mean([r["success"] for r in rows])),
        spl=float(np.mean([r["spl"] for r in rows])),
        stl=float(np.mean([r["stl"] for r in rows])),
        cp=int(sum(r["cp"] for r in rows)), co=int(sum(r["co"] for r in rows)),
        psv=float(sum(r["psv"] for r in rows)),
        mean_cp_perturbation=float(np.mean([r["mean_cp_perturbation"] for r in rows])),
        per_episode=rows)


def derive_seed(root: int, *path: int) -> int:
    return int(np.random.SeedSequence([root, *path]).generate_state(1)[0] % 2**31)


def eval_configs(n: int, seed: int, n_routes: int | None = None, **kw) -> list[EpisodeConfig]:
    """``n`` seeded configs; with ``n_routes`` the episodes cycle through a shared route pool."""
    out = []
    for i in range(n):
        route = None if n_routes is None else derive_seed(seed, 10**6 + i % n_routes)
        out.append(make_episode_config(derive_seed(seed, i), route_seed=route, **kw))
    return out


def ablation_compare(policies: dict, configs: list[EpisodeConfig], predictor: PedestrianPredictor | None = None,
                     **kw) -> dict:
    """Run every policy on the same configs; returns label -> MetricsReport."""
    if len(policies) < 2:
        raise ValueError("need at least two policies to compare")
    return {label: compute_metrics([run_episode(p, c, predictor, **kw) for c in configs])
            for label, p in policies.items()}


def comparison_json(reports: dict, suite: str = "ablation") -> dict:
    return {"suite": suite, "policies": {k: r.to_dict(f"{suite}/{k}") for k, r in reports.items()}}


# --- corpus collection --------------------------------------------------------


def collect_dataset(policy, configs: list[EpisodeConfig], n_episodes: int | None = None, *,
                    tag: str = "enriched", path=None, **kw) -> list[EpisodeLog]:
    """Run collection episodes and optionally export them as scenario CSV plus a config sidecar."""
    configs = configs[: n_episodes if n_episodes is not None else len(configs)]
    if not configs:
        log.warning("collect_dataset: no episodes requested; corpus is empty")
        return []
    logs = [run_episode(policy, c, **kw) for c in configs]
    for ep in logs:
        ep.tag = tag
    if path is not None:
        write_corpus(logs, configs, path, tag)
    return logs


def write_corpus(logs, configs, path, tag="enriched") -> None:
    write_csv([ep.as_rollout(i) for i, ep in enumerate(logs)], path)
    meta = {"tag": tag, "episodes": [c.to_dict() for c in configs]}
    try:
        with open(f"{path}.meta.json", "w") as fh:
            json.dump(meta, fh)
    except OSError as exc:
        raise OSError(f"cannot write corpus metadata {path}.meta.json: {exc}") from exc


def load_corpus(path) -> list[EpisodeLog]:
    """Rebuild episode logs from a corpus CSV and its sidecar (odometry = true poses)."""
    from .socialforce import read_csv

    rollouts = read_csv(path)
    with open(f"{path}.meta.json") as fh:
        meta = json.load(fh)
    logs = []
    for r, cd in zip(rollouts, meta["episodes"]):
        c = EpisodeConfig.from_dict(cd)
        rob = r.states[:, r.index("robot")[0], :3]
        pi = r.index("ped")
        peds = np.concatenate([r.states[:, pi, :2], r.states[:, pi, 3:5]], axis=-1)
        ok = np.isfinite(rob).all(axis=1)
        rob, peds = rob[ok], peds[ok]
        success = bool(math.hypot(rob[-1, 0] - c.goal.x, rob[-1, 1] - c.goal.y) < c.goal_tolerance)
        shortest = c.world.shortest_path(c.start.as_array(), c.goal.as_array(), inflate=ROBOT_RADIUS)[0]
        ep = EpisodeLog(c.seed, c.route_id, c.world, c.graph, c.goal, rob, rob.copy(), peds,
                        np.zeros(len(rob), dtype=bool), success, shortest)
        ep.tag = meta.get("tag", "")
        logs.append(ep)
    return logs


__all__ = ["CSV_HEADER", "EpisodeConfig", "EpisodeLog", "MetricsReport", "PursuitController", "ablation_compare",
           "bootstrap_logs", "collect_dataset", "derive_seed", "compute_metrics", "counterfactual_perturbation", "eval_configs",
           "make_episode_config", "run_episode"]
