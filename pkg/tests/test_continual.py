import json

import numpy as np
import pytest

from cfnav.continual import (CURVE_FIELDS, DayConfig, continual_loop, default_schedule, intervention_rate,
                             zero_schedule)
from cfnav.harness import PursuitController
from cfnav.pipeline import bootstrap_corpus, policy_from_logs
from cfnav.objectives import ObjectiveWeights


def test_intervention_rate_unit():
    assert intervention_rate(3, 600.0) == 3.0
    assert intervention_rate(1, 300.0) == 2.0
    assert intervention_rate(0, 0.0) == 0.0


def test_default_schedule_shape():
    s = default_schedule(5, 10)
    assert len(s) == 5 and all(d.episodes == 10 for d in s)
    assert all(isinstance(d, DayConfig) and d.odom_noise >= 0 and d.jitter >= 0 for d in s)


def test_zero_disturbance_with_converged_controller_has_no_interventions(tmp_path):
    res = continual_loop(PursuitController(), zero_schedule(3, 8), finetune=False, seed=0,
                         events_path=tmp_path / "ev.jsonl")
    assert res.rates == [0.0, 0.0, 0.0]
    assert (tmp_path / "ev.jsonl").read_text() == ""


def test_loop_writes_curve_and_events(tmp_path):
    logs = bootstrap_corpus(8, 0, open_space=True)
    pol = policy_from_logs("collect", logs, 0, ObjectiveWeights(), epochs=1, iters_per_epoch=10)
    before = pol.net.checksum()
    sched = [DayConfig(0.02, 0.2, 4, clutter=4), DayConfig(0.0, 0.1, 4, clutter=4)]
    res = continual_loop(pol, sched, seed=1, epochs=1, iters_per_epoch=5, events_path=tmp_path / "ev.jsonl")
    res.write_curve(tmp_path / "curve.csv")
    lines = (tmp_path / "curve.csv").read_text().splitlines()
    assert lines[0] == ",".join(CURVE_FIELDS) and len(lines) == 3
    events = [json.loads(l) for l in (tmp_path / "ev.jsonl").read_text().splitlines()]
    assert len(events) == sum(r["interventions"] for r in res.rows)
    for e in events:
        assert set(e) == {"day", "t", "pose", "collision_history"}
        assert len(e["collision_history"]) == 4
    # fine-tuning changed a copy and left the input network alone
    assert res.policy is not pol and res.policy.net.checksum() != before
    assert pol.net.checksum() == before


def test_rejects_bad_day_count():
    with pytest.raises(ValueError):
        continual_loop(PursuitController(), zero_schedule(3, 1), n_days=1, finetune=False)
