"""End-to-end steps shared by the command line, the experiment scripts and the acceptance suite.

All randomness descends from one root seed.  Each component draws its own
stream as ``derive_seed(root, COMPONENT)`` so partial pipelines reproduce.
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np

from .continual import continual_loop, default_schedule
from .harness import (EpisodeLog, ablation_compare, bootstrap_logs, collect_dataset, derive_seed, eval_configs)
from .objectives import ObjectiveWeights
from .policy import PolicyNet, build_policy_corpus, train_policy
from .predictor import PedestrianPredictor, PredictorSamples, build_samples, eval_predictor, train_predictor
from .socialforce import Rollout, generate_dataset
from .world import WorldMap

# per-component seed streams
SIM, BOOTSTRAP, PREDICTOR, POLICY, COLLECT, EVAL, CONTINUAL, CORPUS = range(1, 9)


def bootstrap_corpus(n_episodes: int, seed: int, n_routes: int | None = None,
                     open_space: bool = False) -> list[EpisodeLog]:
    """Exploratory pursuit episodes used before any learned policy exists.

    ``open_space`` strips the static obstacles, giving a policy that has never
    seen clutter (the day-one baseline of the continual loop).
    """
    n_routes = n_routes if n_routes is not None else max(1, n_episodes // 4)
    cfgs = eval_configs(n_episodes, derive_seed(seed, BOOTSTRAP), n_routes=n_routes)
    if open_space:
        cfgs = [dataclasses.replace(c, world=WorldMap()) for c in cfgs]
    return bootstrap_logs(cfgs)


def policy_from_logs(mode: str, logs, seed: int, weights: ObjectiveWeights, *, predictor=None,
                     epochs: int = 20, iters_per_epoch: int = 200, batch: int = 80, lr: float = 1e-3,
                     ps_variant: str = "literal_min", init: PolicyNet | None = None, curve_path=None,
                     dt: float = 0.33) -> PolicyNet:
    same, cross = build_policy_corpus(logs, seed=derive_seed(seed, CORPUS))
    return train_policy(mode, same, cross, predictor=predictor, epochs=epochs, seed=derive_seed(seed, POLICY),
                        weights=weights, batch=batch, lr=lr, ps_variant=ps_variant, init=init,
                        iters_per_epoch=iters_per_epoch, curve_path=curve_path, dt=dt)


def logs_to_samples(logs, id_offset: int = 0) -> PredictorSamples:
    return build_samples([ep.as_rollout(i) for i, ep in enumerate(logs)], id_offset=id_offset)


def predictor_from_rollouts(primary: list[Rollout] | PredictorSamples, secondary=None, *, seed: int = 0,
                            epochs: int = 3, stride: int = 1, batch: int = 80, lr: float = 1e-3,
                            val_fraction: float = 0.0, curve_path=None):
    """Train on primary samples (optionally half-and-half with secondary); returns (net, val samples)."""
    p = primary if isinstance(primary, PredictorSamples) else build_samples(primary, stride=stride)
    val = None
    if val_fraction > 0:
        p, val = p.split(val_fraction, seed=derive_seed(seed, PREDICTOR, 1))
    net = train_predictor(p, secondary, epochs=epochs, seed=derive_seed(seed, PREDICTOR), batch=batch, lr=lr,
                          val=val, curve_path=curve_path)
    return net, val


def mean_nearest_distance(logs) -> float:
    """Mean over all recorded steps of the distance to the nearest pedestrian."""
    d = [ep.ped_distance().min(axis=1) for ep in logs if ep.peds.shape[1]]
    return float(np.mean(np.concatenate(d))) if d else float("nan")


def corpus_tag(policy: PolicyNet) -> str:
    w_i = policy.meta.get("weights", {}).get("w_i", 0.0)
    return "enriched" if policy.meta.get("mode") == "collect" and w_i > 0 else "naive"


def load_predictor(path) -> PedestrianPredictor:
    return PedestrianPredictor.load(path)


# --- experiments ------------------------------------------------------------------
# Each returns a plain result record; the acceptance suite gates on them and the
# scripts in scripts/ write them out as reports.


@dataclasses.dataclass
class PredictorResult:
    net: PedestrianPredictor
    val_mse: float
    val_cosine: float
    n_scenarios: int
    n_val: int
    seconds: float


def predictor_experiment(seed: int = 0, n_scenarios: int = 10000, *, stride: int = 4, epochs: int = 3,
                         val_fraction: float = 0.1, rollouts: list[Rollout] | None = None) -> PredictorResult:
    """Social-force corpus -> predictor, scored on held-out scenarios."""
    t0 = time.perf_counter()
    ro = rollouts if rollouts is not None else generate_dataset(n_scenarios, derive_seed(seed, SIM))
    net, val = predictor_from_rollouts(ro, seed=seed, epochs=epochs, stride=stride, val_fraction=val_fraction)
    mse, cos = eval_predictor(net, val)
    return PredictorResult(net, mse, cos, len(ro), len(val), time.perf_counter() - t0)


def mixed_predictor(seed: int = 0, sim: PredictorSamples | None = None, *, n_scenarios: int = 10000,
                    n_episodes: int = 400, n_routes: int = 100, epochs: int = 3) -> PedestrianPredictor:
    """Predictor trained half on the social-force corpus, half on closed-loop bootstrap episodes.

    Mixing in closed-loop data keeps the give-way gap small when the robot
    plan cannot plausibly affect the pedestrian (far away, walking off).
    """
    if sim is None:
        sim = build_samples(generate_dataset(n_scenarios, derive_seed(seed, SIM)), stride=4)
    logs = bootstrap_corpus(n_episodes, derive_seed(seed, PREDICTOR), n_routes=n_routes)
    closed = logs_to_samples(logs, id_offset=10**7)
    return train_predictor(sim, closed, epochs=epochs, seed=derive_seed(seed, PREDICTOR))


@dataclasses.dataclass
class AblationResult:
    full: object  # MetricsReport
    ablation: object
    ps_variant: str
    seconds: float

    @property
    def psv_reduction(self) -> float:
        return 1.0 - self.full.psv / self.ablation.psv if self.ablation.psv > 0 else float("nan")


def ablation_experiment(predictor: PedestrianPredictor, seed: int = 0, *, n_eval: int = 50, n_boot: int = 160,
                        n_routes: int = 40, epochs: int = 20, iters: int = 200, ps_variant: str = "mean",
                        weights: ObjectiveWeights | None = None) -> AblationResult:
    """Full social objective vs the same objective with w_cp = w_ps = 0, on paired seeds."""
    t0 = time.perf_counter()
    w = weights or ObjectiveWeights()
    logs = bootstrap_corpus(n_boot, seed, n_routes=n_routes)
    pols = {}
    for label, wl in (("full", w), ("ablation", dataclasses.replace(w, w_cp=0.0, w_ps=0.0))):
        pols[label] = policy_from_logs("social", logs, seed, wl, predictor=predictor, epochs=epochs,
                                       iters_per_epoch=iters, ps_variant=ps_variant)
    cfgs = eval_configs(n_eval, derive_seed(seed, EVAL))
    reports = ablation_compare(pols, cfgs, predictor)
    return AblationResult(reports["full"], reports["ablation"], ps_variant, time.perf_counter() - t0)


@dataclasses.dataclass
class EnrichmentResult:
    distance: dict  # label -> mean nearest-pedestrian distance over the paired corpus
    mse: dict  # label -> held-out MSE of the predictor trained on that corpus alone
    mse_sim_mixed: dict  # label -> same, with the social-force corpus mixed in
    n_samples: dict
    seconds: float


def enrichment_experiment(seed: int = 0, *, n_pairs: int = 50, n_eval: int = 30, n_boot: int = 160,
                          n_routes: int = 40, epochs: int = 20, iters: int = 200, pred_epochs: int = 10,
                          sim: PredictorSamples | None = None, w_i: float = 1.5) -> EnrichmentResult:
    """Collection policy with the interaction term vs without, and predictors trained on each corpus."""
    t0 = time.perf_counter()
    logs = bootstrap_corpus(n_boot, seed, n_routes=n_routes)
    pols = {lab: policy_from_logs("collect", logs, seed, ObjectiveWeights(w_i=wi), epochs=epochs,
                                  iters_per_epoch=iters)
            for lab, wi in (("enriched", w_i), ("naive", 0.0))}
    paired = eval_configs(n_pairs, derive_seed(seed, COLLECT))
    corpora = {lab: collect_dataset(p, paired, tag=lab) for lab, p in pols.items()}
    held = eval_configs(n_eval, derive_seed(seed, EVAL))
    test = logs_to_samples([ep for p in pols.values() for ep in collect_dataset(p, held)])
    samples = {lab: logs_to_samples(c) for lab, c in corpora.items()}
    mse = {lab: eval_predictor(train_predictor(s, epochs=pred_epochs, seed=derive_seed(seed, PREDICTOR)), test)[0]
           for lab, s in samples.items()}
    if sim is None:
        sim = build_samples(generate_dataset(3000, derive_seed(seed, SIM)), stride=4)
    mixed = {lab: eval_predictor(train_predictor(sim, s, epochs=3, seed=derive_seed(seed, PREDICTOR)), test)[0]
             for lab, s in samples.items()}
    return EnrichmentResult({lab: mean_nearest_distance(c) for lab, c in corpora.items()}, mse, mixed,
                            {lab: len(s) for lab, s in samples.items()}, time.perf_counter() - t0)


def open_space_baseline(seed: int = 0, *, n_episodes: int = 80, epochs: int = 10, iters: int = 200,
                        weights: ObjectiveWeights | None = None) -> PolicyNet:
    """Day-one collection policy that has only seen obstacle-free bootstrap runs."""
    logs = bootstrap_corpus(n_episodes, seed, open_space=True)
    return policy_from_logs("collect", logs, seed, weights or ObjectiveWeights(), epochs=epochs,
                            iters_per_epoch=iters)


def continual_experiment(seed: int = 0, policy: PolicyNet | None = None, *, days: int = 5, episodes: int = 30,
                         routes: int = 4, epochs: int = 10, iters: int = 200, base_epochs: int = 10, weights=None,
                         events_path=None):
    """Deploy, count rescues, fine-tune overnight; returns a ContinualResult.

    Without ``policy`` the day-one network is :func:`open_space_baseline`.
    """
    w = weights or ObjectiveWeights()
    pol = policy if policy is not None else open_space_baseline(seed, epochs=base_epochs, iters=iters, weights=w)
    return continual_loop(pol, default_schedule(days, episodes), seed=derive_seed(seed, CONTINUAL), routes=routes,
                          weights=w, epochs=epochs, iters_per_epoch=iters, events_path=events_path)


def non_increasing_transitions(rates) -> int:
    return int(sum(b <= a for a, b in zip(rates, rates[1:])))
