"""Five simulated deployment days with nightly fine-tuning; writes the intervention curve."""

import _common
from pathlib import Path

from cfnav import pipeline as pl


def main() -> None:
    p = _common.parser(__doc__)
    p.add_argument("--days", type=int, default=5)
    a = p.parse_args()
    Path(a.out).mkdir(parents=True, exist_ok=True)
    r = pl.continual_experiment(a.seed, days=a.days, events_path=Path(a.out) / "rescue_events.jsonl")
    r.write_curve(Path(a.out) / "curve.csv")
    _common.write_report(a.out, "continual.json", {
        "seed": a.seed, "rates_per_10min": r.rates, "non_increasing": pl.non_increasing_transitions(r.rates),
        "transitions": len(r.rates) - 1, "days": r.rows})


if __name__ == "__main__":
    main()
