"""Train the pedestrian predictor on the social-force corpus and score held-out scenarios."""

import _common
from cfnav import pipeline as pl


def main() -> None:
    p = _common.parser(__doc__)
    p.add_argument("--scenarios", type=int, default=10000)
    p.add_argument("--epochs", type=int, default=3)
    a = p.parse_args()
    r = pl.predictor_experiment(a.seed, a.scenarios, epochs=a.epochs)
    _common.write_report(a.out, "predictor_report.json", {
        "seed": a.seed, "scenarios": r.n_scenarios, "val_samples": r.n_val, "val_mse_m2": r.val_mse,
        "val_cosine": r.val_cosine, "seconds": r.seconds})
    r.net.save(f"{a.out}/predictor.json")


if __name__ == "__main__":
    main()
