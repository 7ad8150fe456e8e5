"""Interaction-seeking collection vs. a collector without the interaction term."""

import _common
from cfnav import pipeline as pl


def main() -> None:
    p = _common.parser(__doc__)
    p.add_argument("--pairs", type=int, default=50)
    a = p.parse_args()
    r = pl.enrichment_experiment(a.seed, n_pairs=a.pairs)
    _common.write_report(a.out, "enrichment.json", {
        "seed": a.seed, "mean_nearest_ped_distance_m": r.distance, "heldout_mse_m2": r.mse,
        "heldout_mse_sim_mixed_m2": r.mse_sim_mixed, "samples": r.n_samples, "seconds": r.seconds})


if __name__ == "__main__":
    main()
