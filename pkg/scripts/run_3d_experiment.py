"""Desk-scale stiffness sweep on the 3-D die: train GRUs at several dataset
sizes and seeds per stiffness, then print the aggregated trends.

    python3 scripts/run_3d_experiment.py --out results/exp3d --jobs 1
"""

import argparse
import logging
from pathlib import Path

from stiffcontact.evaluation import METRIC_COLUMNS, aggregate_rows, write_rows
from stiffcontact.experiments import ExperimentConfig, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--stiffness", default="hard,soft")
    ap.add_argument("--sizes", default="50,500")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--n-pool", type=int, default=1000)
    ap.add_argument("--n-eval", type=int, default=100)
    ap.add_argument("--hidden-size", type=int, default=64)
    ap.add_argument("--learning-rate", type=float, default=1e-3)
    ap.add_argument("--max-epochs", type=int, default=300)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    stiffnesses = tuple(args.stiffness.split(","))
    ecfg = ExperimentConfig(stiffnesses=stiffnesses,
                            sizes=tuple(int(n) for n in args.sizes.split(",")),
                            seeds=args.seeds, n_pool=args.n_pool, n_eval=args.n_eval,
                            hidden_size=args.hidden_size, max_epochs=args.max_epochs,
                            dtype="float32", hyper={s: (args.learning_rate, 0.0) for s in stiffnesses})

    def progress(stiffness, n, seed, rows):
        vals = {r["metric"]: r["value"] for r in rows}
        logging.info("%s N=%d seed=%d gap=%.4g gen=%.4g e_pos=%.3g", stiffness, n, seed,
                     vals.get("training_gap", float("nan")), vals.get("generalization_gap", float("nan")),
                     vals.get("e_pos", float("nan")))

    rows = run_experiment(ecfg, progress=progress, jobs=args.jobs)
    args.out.mkdir(parents=True, exist_ok=True)
    write_rows(args.out / "metrics.csv", rows, METRIC_COLUMNS)
    for r in aggregate_rows(rows):
        if r["metric"] in ("oracle_loss", "training_gap", "generalization_gap", "e_pos", "e_rot"):
            print(f"{r['stiffness']:6s} N={r['N']:<5d} {r['architecture']:6s} {r['metric']:18s} "
                  f"{r['mean']:.4g} [{r['ci_low']:.4g}, {r['ci_high']:.4g}]")


if __name__ == "__main__":
    main()
