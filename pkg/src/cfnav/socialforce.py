"""Social-force dynamics and the two-agent scenario corpus.

Every agent relaxes toward a desired velocity pointing at its goal and is
pushed away from every other agent by an exponential repulsion.  The scenario
generator places a robot on a 2.0 m circle and a pedestrian on a 5.3 m circle
(the nominal speed ratio 0.8/0.3 times the robot radius, rounded), so that both
reach the origin at about the same time.
"""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .geometry import DT, Pose2

log = logging.getLogger(__name__)

ROBOT_RADIUS = 0.25
PED_RADIUS = 0.2
STOP_RADIUS = 0.3  # agents hold position once this close to their goal
CSV_HEADER = ["scenario_id", "step", "agent_id", "kind", "x", "y", "theta", "vx", "vy"]


@dataclass(frozen=True)
class SocialForceParams:
    tau: float = 0.5
    A: float = 2.1
    B: float = 0.3
    ped_nominal: float = 0.8
    robot_nominal: float = 0.3
    max_speed_factor: float = 1.3

    def __post_init__(self):
        if not (self.tau > 0 and self.A >= 0 and self.B > 0):
            raise ValueError(f"invalid force constants: {self}")
        if not (self.ped_nominal > 0 and self.robot_nominal > 0 and self.max_speed_factor > 0):
            raise ValueError(f"speeds must be positive: {self}")

    def nominal(self, kind: str) -> float:
        return self.robot_nominal if kind == "robot" else self.ped_nominal


@dataclass(frozen=True)
class Agent:
    id: int
    kind: str  # "ped" or "robot"
    start: Pose2
    goal: tuple[float, float]

    @property
    def radius(self) -> float:
        return ROBOT_RADIUS if self.kind == "robot" else PED_RADIUS


@dataclass(frozen=True)
class Scenario:
    agents: tuple[Agent, ...]
    n_steps: int = 80
    dt: float = DT
    seed: int = 0
    id: int = 0


@dataclass
class Rollout:
    """Recorded states of one scenario.

    ``states`` has shape (n_steps, n_agents, 5) holding x, y, theta, vx, vy.
    """

    scenario_id: int
    kinds: list[str]
    agent_ids: list[int]
    states: np.ndarray
    dt: float = DT
    goals: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_steps(self) -> int:
        return self.states.shape[0]

    def index(self, kind: str) -> list[int]:
        return [i for i, k in enumerate(self.kinds) if k == kind]


def pairwise_repulsion(pos, radii, A, B):
    """Exponential repulsion on each agent from every other, (..., n, 2).

    Uses A * exp((r_i + r_j - d_ij) / B) along the unit separation vector.
    """
    diff = pos[..., :, None, :] - pos[..., None, :, :]
    d = np.linalg.norm(diff, axis=-1)
    n = pos.shape[-2]
    eye = np.eye(n, dtype=bool)
    safe = np.where(eye, 1.0, np.maximum(d, 1e-9))
    rsum = radii[..., :, None] + radii[..., None, :]
    mag = np.where(eye, 0.0, A * np.exp((rsum - d) / B))
    return np.sum((mag / safe)[..., None] * diff, axis=-2)


def desired_velocity(pos, goals, speed, stop_radius=STOP_RADIUS):
    to_goal = goals - pos
    dist = np.linalg.norm(to_goal, axis=-1)
    moving = dist > stop_radius
    unit = to_goal / np.where(moving, dist, 1.0)[..., None]
    return np.where(moving[..., None], unit * np.asarray(speed)[..., None], 0.0)


def step_social_force(states, goals, params: SocialForceParams, dt: float, *,
                      desired_speed, max_speed, radii, extra_accel=None,
                      stop_radius: float = STOP_RADIUS):
    """Advance (..., n, 4) states [x, y, vx, vy] by one semi-implicit Euler step."""
    states = np.asarray(states, dtype=float)
    if not np.all(np.isfinite(states)):
        raise ValueError("non-finite agent state")
    pos, vel = states[..., :2], states[..., 2:]
    v_des = desired_velocity(pos, goals, desired_speed, stop_radius)
    acc = (v_des - vel) / params.tau
    acc = acc + pairwise_repulsion(pos, np.broadcast_to(radii, pos.shape[:-1]), params.A, params.B)
    if extra_accel is not None:
        acc = acc + extra_accel
    vel = vel + acc * dt
    speed = np.linalg.norm(vel, axis=-1)
    cap = np.asarray(max_speed, dtype=float)
    scale = np.where(speed > cap, cap / np.maximum(speed, 1e-12), 1.0)
    vel = vel * scale[..., None]
    return np.concatenate([pos + vel * dt, vel], axis=-1)


def scenario_seed(root: int, index: int) -> int:
    """Per-scenario seed; independent of generation order."""
    return int(np.random.SeedSequence([root, index]).generate_state(1)[0])


def generate_scenario(seed: int, *, robot_radius_circle: float = 2.0, ped_radius_circle: float = 5.3,
                      params: SocialForceParams | None = None, n_steps: int = 80,
                      dt: float = DT, scenario_id: int = 0) -> Scenario:
    params = params or SocialForceParams()
    rng = np.random.default_rng(seed)
    ped_circle = ped_radius_circle
    a_r, a_p = rng.uniform(-np.pi, np.pi, size=2)
    shorten = rng.uniform(0.5, 1.0)
    r_start = robot_radius_circle * np.array([np.cos(a_r), np.sin(a_r)])
    p_start = ped_circle * np.array([np.cos(a_p), np.sin(a_p)])
    r_goal = r_start + shorten * (-2.0 * r_start)
    p_goal = -p_start
    robot = Agent(0, "robot", Pose2(r_start[0], r_start[1], a_r + np.pi), (float(r_goal[0]), float(r_goal[1])))
    ped = Agent(1, "ped", Pose2(p_start[0], p_start[1], a_p + np.pi), (float(p_goal[0]), float(p_goal[1])))
    return Scenario((robot, ped), n_steps=n_steps, dt=dt, seed=seed, id=scenario_id)


def _initial_states(scenarios: list[Scenario], params: SocialForceParams):
    pos = np.array([[[a.start.x, a.start.y] for a in s.agents] for s in scenarios])
    goals = np.array([[a.goal for a in s.agents] for s in scenarios], dtype=float)
    speed = np.array([[params.nominal(a.kind) for a in s.agents] for s in scenarios])
    radii = np.array([[a.radius for a in s.agents] for s in scenarios])
    heading = np.array([[a.start.theta for a in s.agents] for s in scenarios])
    vel = desired_velocity(pos, goals, speed)
    return np.concatenate([pos, vel], axis=-1), goals, speed, radii, heading


def rollout_many(scenarios: list[Scenario], params: SocialForceParams | None = None) -> list[Rollout]:
    """Roll out scenarios sharing agent layout and length in one vectorized pass."""
    params = params or SocialForceParams()
    if not scenarios:
        return []
    n_steps, dt = scenarios[0].n_steps, scenarios[0].dt
    if any(s.n_steps != n_steps or s.dt != dt or len(s.agents) != len(scenarios[0].agents) for s in scenarios):
        return [r for s in scenarios for r in rollout_many([s], params)]
    state, goals, speed, radii, heading = _initial_states(scenarios, params)
    max_speed = params.max_speed_factor * speed
    out = np.empty((len(scenarios), n_steps, state.shape[1], 5))
    for k in range(n_steps):
        if k > 0:
            state = step_social_force(state, goals, params, dt, desired_speed=speed,
                                      max_speed=max_speed, radii=radii)
        sp = np.linalg.norm(state[..., 2:], axis=-1)
        heading = np.where(sp > 1e-3, np.arctan2(state[..., 3], state[..., 2]), heading)
        out[:, k, :, 0:2] = state[..., :2]
        out[:, k, :, 2] = heading
        out[:, k, :, 3:5] = state[..., 2:]
    return [
        Rollout(s.id, [a.kind for a in s.agents], [a.id for a in s.agents], out[i], dt, goals[i])
        for i, s in enumerate(scenarios)
    ]


def rollout_scenario(s: Scenario, params: SocialForceParams | None = None) -> Rollout:
    return rollout_many([s], params)[0]


def generate_dataset(n: int, seed: int, *, params: SocialForceParams | None = None,
                     path: str | os.PathLike | None = None, n_steps: int = 80,
                     chunk: int = 2000) -> list[Rollout]:
    """Generate ``n`` independent scenarios and optionally write them as CSV."""
    if n < 1:
        raise ValueError("need at least one scenario")
    params = params or SocialForceParams()
    rollouts: list[Rollout] = []
    for lo in range(0, n, chunk):
        batch = [generate_scenario(scenario_seed(seed, i), params=params, n_steps=n_steps, scenario_id=i)
                 for i in range(lo, min(n, lo + chunk))]
        rollouts.extend(rollout_many(batch, params))
    if path is not None:
        write_csv(rollouts, path)
    return rollouts


# --- scenario CSV ------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def write_csv(rollouts: list[Rollout], path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(CSV_HEADER) + "\n")
            for r in rollouts:
                buf = io.StringIO()
                for k in range(r.n_steps):
                    for j, (aid, kind) in enumerate(zip(r.agent_ids, r.kinds)):
                        st = r.states[k, j]
                        buf.write(f"{r.scenario_id},{k},{aid},{kind},"
                                  + ",".join(_fmt(v) for v in st) + "\n")
                fh.write(buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write scenario CSV {path}: {exc}") from exc


def read_csv(path) -> list[Rollout]:
    """Read a scenario CSV back into rollouts, ordered by scenario id."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise OSError(f"cannot read scenario CSV {path}: {exc}") from exc
    rows: dict[int, dict] = {}
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        for row in reader:
            sid, step, aid = int(row[0]), int(row[1]), int(row[2])
            rec = rows.setdefault(sid, {})
            rec.setdefault(aid, {"kind": row[3], "steps": {}})["steps"][step] = [float(v) for v in row[4:9]]
    out = []
    for sid in sorted(rows):
        agents = rows[sid]
        ids = sorted(agents)
        n_steps = max(len(agents[a]["steps"]) for a in ids)
        states = np.full((n_steps, len(ids), 5), np.nan)
        for j, aid in enumerate(ids):
            for k, vals in agents[aid]["steps"].items():
                states[k, j] = vals
        out.append(Rollout(sid, [agents[a]["kind"] for a in ids], ids, states))
    return out
