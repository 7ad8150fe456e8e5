"""Day-by-day deployment of the collection policy with nightly fine-tuning.

Each simulated day drives the same deployment routes under that day's
disturbance (odometry noise, obstacle jitter), counts rescue requests and
then fine-tunes the policy on the day's episodes plus goals chained across
all traversals recorded so far.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np

from .harness import EpisodeLog, derive_seed, make_episode_config, run_episode
from .objectives import ObjectiveWeights
from .policy import CHAIN_N_M, PolicyNet, PolicySamples, chained_samples, samples_from_log, train_policy

log = logging.getLogger(__name__)

CURVE_FIELDS = ["day", "episodes", "sim_minutes", "interventions", "rate_per_10min", "success_rate",
                "odom_noise", "jitter"]


@dataclass(frozen=True)
class DayConfig:
    odom_noise: float = 0.0  # m per step, std of translation noise
    jitter: float = 0.0  # m, std of obstacle displacement
    episodes: int = 12
    clutter: int = 3


def default_schedule(n_days: int = 5, episodes: int = 30) -> list[DayConfig]:
    """Disturbance cycles between calm and rough days."""
    noise = [0.01, 0.02, 0.0, 0.02, 0.01]
    jitter = [0.15, 0.2, 0.1, 0.2, 0.15]
    return [DayConfig(noise[d % 5], jitter[d % 5], episodes) for d in range(n_days)]


def zero_schedule(n_days: int = 5, episodes: int = 30) -> list[DayConfig]:
    return [DayConfig(0.0, 0.0, episodes) for _ in range(n_days)]


def intervention_rate(events: int, seconds: float) -> float:
    """Rescue requests per 10 minutes of operation."""
    return 0.0 if seconds <= 0 else events / (seconds / 600.0)


@dataclass
class ContinualResult:
    rows: list[dict]
    policy: PolicyNet
    events: list[dict]

    @property
    def rates(self) -> list[float]:
        return [r["rate_per_10min"] for r in self.rows]

    def write_curve(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CURVE_FIELDS, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in r.items()})


def continual_loop(policy: PolicyNet, schedule: list[DayConfig], n_days: int | None = None, *,
                   routes: int = 4, seed: int = 0, weights: ObjectiveWeights | None = None,
                   epochs: int = 10, iters_per_epoch: int = 200, events_path=None,
                   finetune: bool = True) -> ContinualResult:
    """Run ``n_days`` (default: the whole schedule) and return per-day intervention rates."""
    n_days = len(schedule) if n_days is None else n_days
    if n_days < 2 or n_days > len(schedule):
        raise ValueError(f"need 2 <= n_days <= {len(schedule)}, got {n_days}")
    w = weights or ObjectiveWeights()
    if finetune:
        policy = PolicyNet.from_dict(policy.to_dict())  # fine-tune a copy, never the caller's network
    route_seeds = [derive_seed(seed, 7, r) for r in range(routes)]
    logs: list[EpisodeLog] = []
    per_log: list[PolicySamples] = []
    rows, events = [], []
    if events_path is not None:
        open(events_path, "w").close()
    for day in range(n_days):
        cfg = schedule[day]
        today = []
        for k in range(cfg.episodes):
            c = make_episode_config(derive_seed(seed, day, k), route_seed=route_seeds[k % routes],
                                    jitter=cfg.jitter, odom_noise=cfg.odom_noise, clutter=cfg.clutter)
            today.append(run_episode(policy, c, day=day + 1))
        seconds = sum(ep.time for ep in today)
        day_events = [{"day": day + 1, **{k: e[k] for k in ("t", "pose", "collision_history")}}
                      for ep in today for e in ep.events]
        events += day_events
        if events_path is not None:
            with open(events_path, "a") as fh:
                for e in day_events:
                    fh.write(json.dumps(e) + "\n")
        rows.append({"day": day + 1, "episodes": len(today), "sim_minutes": seconds / 60.0,
                     "interventions": len(day_events), "rate_per_10min": intervention_rate(len(day_events), seconds),
                     "success_rate": float(np.mean([ep.success for ep in today])),
                     "odom_noise": cfg.odom_noise, "jitter": cfg.jitter})
        log.info("day %d: %s", day + 1, rows[-1])
        if not finetune or day == n_days - 1:
            continue
        rng = np.random.default_rng(derive_seed(seed, 100 + day))
        for ep in today:
            per_log.append(samples_from_log(ep, len(logs), rng))
            logs.append(ep)
        same_all = PolicySamples.concat(per_log)
        same_today = PolicySamples.concat(per_log[-len(today):])
        cross = chained_samples(logs, same_all, rng, n_m=CHAIN_N_M)
        policy = train_policy("collect", same_today, cross, epochs=epochs, seed=derive_seed(seed, 200 + day),
                              weights=w, init=policy, iters_per_epoch=iters_per_epoch)
    return ContinualResult(rows, policy, events)
