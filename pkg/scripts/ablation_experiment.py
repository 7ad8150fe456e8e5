"""Full social objective vs. no counterfactual terms (w_cp = w_ps = 0) on paired episodes."""

import _common
from cfnav import pipeline as pl


def main() -> None:
    p = _common.parser(__doc__)
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--ps-variant", default="mean", choices=["literal_min", "mean", "max_penetration"])
    a = p.parse_args()
    pred = pl.mixed_predictor(a.seed)
    r = pl.ablation_experiment(pred, a.seed, n_eval=a.episodes, ps_variant=a.ps_variant)
    _common.write_report(a.out, "ablation.json", {
        "seed": a.seed, "ps_variant": r.ps_variant, "seconds": r.seconds, "psv_reduction": r.psv_reduction,
        "full": r.full.to_dict("ablation/full"), "ablation": r.ablation.to_dict("ablation/no_cf")})


if __name__ == "__main__":
    main()
