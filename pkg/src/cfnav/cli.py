"""Command-line pipeline: gen-data, train-predictor, train-policy, collect, eval, continual.

Exit codes: 0 success, 2 I/O failure, 3 bad flags or config, 4 missing prerequisite.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from . import pipeline as pl
from .config import ConfigError, RunConfig, load_config
from .harness import (collect_dataset, comparison_json, compute_metrics, derive_seed, eval_configs, load_corpus,
                      run_episode, write_corpus)
from .policy import PolicyNet
from .predictor import PedestrianPredictor, eval_predictor
from .socialforce import generate_dataset, read_csv
from .tinynet import CheckpointError

log = logging.getLogger("cfnav")

EXIT_OK, EXIT_IO, EXIT_FLAGS, EXIT_MISSING = 0, 2, 3, 4

UNITS = {
    "seed": "root seed", "dt": "s", "n_s": "steps", "n_p": "frames", "w_c": "weight", "w_r": "weight",
    "w_cp": "weight", "w_ps": "weight", "w_i": "weight", "r_h": "m", "r_r": "m", "batch": "samples",
    "lr": "Adam step size", "epochs": "policy epochs", "pred_epochs": "predictor epochs", "corpus": "path",
    "checkpoints": "dir", "reports": "dir", "ps_variant": "literal_min|mean|max_penetration",
}


class UsageError(Exception):
    pass


class MissingPrerequisite(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration (defaults < --config file < these flags)")
    g.add_argument("--config", help="[path] key = value file with # comments (default: none)")
    defaults = RunConfig()
    for f in fields(RunConfig):
        typ = {"int": int, "float": float}.get(f.type if isinstance(f.type, str) else f.type.__name__, str)
        g.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=typ, default=None,
                       help=f"[{UNITS.get(f.name, '')}] default {getattr(defaults, f.name)!r}")


def _positive(name):
    def check(v):
        try:
            x = int(v)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer") from None
        if x < 1:
            raise argparse.ArgumentTypeError(f"{name} must be at least 1, got {x}")
        return x
    return check


def build_parser() -> Parser:
    p = Parser(prog="cfnav", description="Counterfactual social navigation pipeline.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    g = sub.add_parser("gen-data", help="simulate social-force scenarios to a CSV corpus")
    g.add_argument("--scenarios", type=_positive("--scenarios"), default=10000, help="[count] default 10000")
    g.add_argument("--steps", type=_positive("--steps"), default=80, help="[steps of dt] default 80")
    g.add_argument("--out", default="sf.csv", help="[path] output CSV, default sf.csv")
    _config_flags(g)

    t = sub.add_parser("train-predictor", help="fit the conditioned pedestrian predictor")
    t.add_argument("--data", required=True, help="[path] social-force corpus CSV (required)")
    t.add_argument("--extra", help="[path] collected corpus CSV mixed half-and-half into each batch (default none)")
    t.add_argument("--stride", type=_positive("--stride"), default=1, help="[steps] sample stride, default 1")
    t.add_argument("--val-fraction", type=float, default=0.1, help="[fraction] held-out scenarios, default 0.1")
    t.add_argument("--out", default="predictor.json", help="[path] checkpoint, default predictor.json")
    _config_flags(t)

    tp = sub.add_parser("train-policy", help="train the navigation (social) or data-collection (collect) policy")
    tp.add_argument("--mode", choices=["social", "collect"], required=True, help="objective family")
    tp.add_argument("--predictor", help="[path] frozen predictor checkpoint (required for --mode social)")
    tp.add_argument("--data", help="[path] collected corpus CSV (+ .meta.json); default: fresh bootstrap episodes")
    tp.add_argument("--bootstrap-episodes", type=_positive("--bootstrap-episodes"), default=160,
                    help="[count] exploratory pursuit episodes when no corpus is given, default 160")
    tp.add_argument("--open-space", action="store_true", help="bootstrap without static obstacles")
    tp.add_argument("--init", help="[path] policy checkpoint to fine-tune (default: fresh network)")
    tp.add_argument("--iters", type=_positive("--iters"), default=200, help="[batches] per epoch, default 200")
    tp.add_argument("--out", default="policy.json", help="[path] checkpoint, default policy.json")
    _config_flags(tp)

    c = sub.add_parser("collect", help="run a collection policy and export its episodes")
    c.add_argument("--policy", help="[path] policy checkpoint (required)")
    c.add_argument("--episodes", type=int, default=50, help="[count] default 50")
    c.add_argument("--out", default="collected.csv", help="[path] scenario CSV (+ .meta.json), default collected.csv")
    _config_flags(c)

    e = sub.add_parser("eval", help="closed-loop metrics; two or more policies give a paired comparison")
    e.add_argument("--policy", action="append", default=[], help="[path] policy checkpoint, repeatable; at least one required")
    e.add_argument("--label", action="append", default=[], help="[text] label per --policy (default: file stem)")
    e.add_argument("--predictor", help="[path] frozen reference predictor for the perturbation metric (default none)")
    e.add_argument("--episodes", type=_positive("--episodes"), default=50, help="[count] default 50")
    e.add_argument("--compare", action="store_true", help="require a paired comparison of >= 2 policies")
    e.add_argument("--out", default="report.json", help="[path] JSON report, default report.json")
    _config_flags(e)

    k = sub.add_parser("continual", help="day-by-day deployment with nightly fine-tuning")
    k.add_argument("--days", type=int, default=5, help="[days] default 5")
    k.add_argument("--episodes-per-day", type=_positive("--episodes-per-day"), default=30, help="[count] default 30")
    k.add_argument("--policy", help="[path] day-one policy (default: train an open-space baseline)")
    k.add_argument("--base-epochs", type=_positive("--base-epochs"), default=10,
                   help="[epochs] open-space baseline training when --policy is absent, default 10")
    k.add_argument("--routes", type=_positive("--routes"), default=4, help="[count] deployment routes, default 4")
    k.add_argument("--finetune-epochs", type=_positive("--finetune-epochs"), default=10,
                   help="[epochs] nightly fine-tuning, default 10")
    k.add_argument("--iters", type=_positive("--iters"), default=200, help="[batches] per epoch, default 200")
    k.add_argument("--out", default="continual", help="[dir] curve CSV, rescue log and final policy, default continual")
    _config_flags(k)
    return p


def _require(path, what):
    if path is None:
        raise MissingPrerequisite(f"{what} is required")
    if not Path(path).exists():
        raise MissingPrerequisite(f"{what} not found: {path}")
    return path


def _load_policy(path) -> PolicyNet:
    return PolicyNet.load(_require(path, "policy checkpoint"))


def _out_dir(out: str, is_dir: bool = False) -> Path:
    d = Path(out) if is_dir else Path(out).resolve().parent
    d.mkdir(parents=True, exist_ok=True)
    return d


# --- commands -------------------------------------------------------------------


def cmd_gen_data(a, cfg: RunConfig) -> int:
    ro = generate_dataset(a.scenarios, cfg.seed, path=a.out, n_steps=a.steps)
    mins = []
    for r in ro:
        rob = r.states[:, r.index("robot")[0], None, :2]
        ped = r.states[:, r.index("ped"), :2]
        mins.append(np.linalg.norm(ped - rob, axis=-1).min())
    rows = sum(r.n_steps * len(r.kinds) for r in ro)
    print(f"scenarios={len(ro)} rows={rows} mean_min_distance_m={np.mean(mins):.4f} out={a.out}")
    return EXIT_OK


def cmd_train_predictor(a, cfg: RunConfig) -> int:
    data = read_csv(_require(a.data, "social-force corpus"))
    extra = None
    if a.extra is not None:
        extra = pl.logs_to_samples(load_corpus(_require(a.extra, "collected corpus")), id_offset=10**7)
    net, val = pl.predictor_from_rollouts(data, extra, seed=cfg.seed, epochs=cfg.pred_epochs, stride=a.stride,
                                          batch=cfg.batch, lr=cfg.lr, val_fraction=a.val_fraction,
                                          curve_path=a.out + ".curve.csv")
    net.save(a.out)
    if val is not None and len(val):
        mse, cos = eval_predictor(net, val)
        print(f"val_mse_m2={mse:.6f} val_cosine={cos:.4f} out={a.out}")
    else:
        print(f"out={a.out}")
    return EXIT_OK


def cmd_train_policy(a, cfg: RunConfig) -> int:
    pred = None
    if a.mode == "social":
        pred = PedestrianPredictor.load(_require(a.predictor, "--predictor (social mode)"))
    elif a.predictor is not None:
        pred = PedestrianPredictor.load(_require(a.predictor, "--predictor"))
    init = _load_policy(a.init) if a.init else None
    if a.data is not None:
        logs = load_corpus(_require(a.data, "collected corpus"))
    else:
        logs = pl.bootstrap_corpus(a.bootstrap_episodes, cfg.seed, open_space=a.open_space)
    pol = pl.policy_from_logs(a.mode, logs, cfg.seed, cfg.weights, predictor=pred, epochs=cfg.epochs,
                              iters_per_epoch=a.iters, batch=cfg.batch, lr=cfg.lr, ps_variant=cfg.ps_variant,
                              init=init, curve_path=a.out + ".curve.csv", dt=cfg.dt)
    pol.save(a.out)
    print(f"mode={a.mode} final_loss={pol.curve[-1]['loss']:.6f} out={a.out}")
    return EXIT_OK


def cmd_collect(a, cfg: RunConfig) -> int:
    pol = _load_policy(a.policy)
    if a.episodes < 0:
        raise UsageError("--episodes must be non-negative")
    cfgs = eval_configs(a.episodes, derive_seed(cfg.seed, pl.COLLECT)) if a.episodes else []
    tag = pl.corpus_tag(pol)
    logs = collect_dataset(pol, cfgs, a.episodes, tag=tag)
    write_corpus(logs, cfgs, a.out, tag)
    print(f"episodes={len(logs)} tag={tag} mean_nearest_ped_m={pl.mean_nearest_distance(logs):.4f} out={a.out}")
    return EXIT_OK


def cmd_eval(a, cfg: RunConfig) -> int:
    if not a.policy:
        raise MissingPrerequisite("at least one --policy checkpoint is required")
    if a.compare and len(a.policy) < 2:
        raise UsageError("--compare needs at least two --policy checkpoints")
    if a.label and len(a.label) != len(a.policy):
        raise UsageError("give one --label per --policy")
    pols = [_load_policy(p) for p in a.policy]
    labels = a.label or [Path(p).stem for p in a.policy]
    if len(set(labels)) != len(labels):
        labels = [f"{i}:{l}" for i, l in enumerate(labels)]
    pred = PedestrianPredictor.load(_require(a.predictor, "--predictor")) if a.predictor else None
    cfgs = eval_configs(a.episodes, derive_seed(cfg.seed, pl.EVAL))
    kw = dict(r_h=cfg.r_h, r_r=cfg.r_r)
    reports = {lab: compute_metrics([run_episode(p, c, pred) for c in cfgs], **kw) for lab, p in zip(labels, pols)}
    if len(pols) >= 2:
        out = comparison_json(reports, suite=f"eval/seed{cfg.seed}")
    else:
        out = reports[labels[0]].to_dict(suite=f"eval/seed{cfg.seed}")
    with open(a.out, "w") as fh:
        json.dump(out, fh, indent=1, sort_keys=True)
    for lab, r in reports.items():
        agg = r.aggregate()
        print(lab, " ".join(f"{k}={v:.4g}" for k, v in agg.items()))
    return EXIT_OK


def cmd_continual(a, cfg: RunConfig) -> int:
    if a.days < 2:
        raise UsageError("--days must be at least 2")
    out = Path(a.out)
    pol = _load_policy(a.policy) if a.policy else None
    res = pl.continual_experiment(cfg.seed, pol, days=a.days, episodes=a.episodes_per_day, routes=a.routes,
                                  epochs=a.finetune_epochs, iters=a.iters, base_epochs=a.base_epochs,
                                  weights=cfg.weights, events_path=out / "rescue_events.jsonl")
    res.write_curve(out / "curve.csv")
    res.policy.save(out / "policy_final.json")
    print("rates_per_10min=" + ",".join(f"{r:.3f}" for r in res.rates) + f" out={out}")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train-predictor": cmd_train_predictor, "train-policy": cmd_train_policy,
            "collect": cmd_collect, "eval": cmd_eval, "continual": cmd_continual}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
        overrides = {f.name: getattr(a, f.name) for f in fields(RunConfig)}
        cfg = load_config(a.config, overrides)
    except UsageError as exc:
        print(f"cfnav: error: {exc}", file=sys.stderr)
        return EXIT_FLAGS
    except ConfigError as exc:
        print(f"cfnav: config error: {exc}", file=sys.stderr)
        return EXIT_FLAGS
    except FileNotFoundError as exc:
        print(f"cfnav: config file not found: {exc.filename}", file=sys.stderr)
        return EXIT_MISSING
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        out_dir = _out_dir(a.out, is_dir=a.command == "continual")
        lock = FileLock(str(out_dir / ".cfnav.lock"), timeout=0)
        with lock:
            code = COMMANDS[a.command](a, cfg)
        try:
            os.remove(out_dir / ".cfnav.lock")
        except OSError:
            pass
        return code
    except UsageError as exc:
        print(f"cfnav: error: {exc}", file=sys.stderr)
        return EXIT_FLAGS
    except MissingPrerequisite as exc:
        print(f"cfnav: missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except Timeout:
        print(f"cfnav: output directory is locked by another run: {out_dir}", file=sys.stderr)
        return EXIT_IO
    except (CheckpointError, OSError) as exc:
        print(f"cfnav: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
