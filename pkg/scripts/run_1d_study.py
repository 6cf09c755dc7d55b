"""Replicate MLP fits to the 1-D falling mass at several stiffnesses.

Writes one summary row per stiffness plus the mean/std prediction curves.

    python3 scripts/run_1d_study.py --out results/study1d --replicates 20
"""

import argparse
import csv
import logging
from pathlib import Path

from stiffcontact.experiments import Study1DConfig, run_1d_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--stiffnesses", default="100,2500")
    ap.add_argument("--replicates", type=int, default=20)
    ap.add_argument("--n-train", type=int, default=20)
    ap.add_argument("--batch-size", type=int, default=5)
    ap.add_argument("--no-tune", action="store_true", help="skip the lr / weight-decay search")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = Study1DConfig(stiffnesses=tuple(float(k) for k in args.stiffnesses.split(",")),
                        replicates=args.replicates, n_train=args.n_train,
                        batch_size=args.batch_size, seed=args.seed)
    results = run_1d_study(cfg, tune=not args.no_tune)
    args.out.mkdir(parents=True, exist_ok=True)
    cols = ["k", "learning_rate", "weight_decay", "train_loss", "gt_mse", "variance"]
    with open(args.out / "study1d.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for res in results.values():
            w.writerow([res[c] for c in cols])
    with open(args.out / "study1d_curves.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "zdot_t", "truth", "mean", "std"])
        for k, res in results.items():
            for row in zip(res["grid"], res["truth"], res["mean_prediction"], res["std_prediction"]):
                w.writerow([k, *row])
    lo, hi = min(results), max(results)
    for key in ("train_loss", "gt_mse", "variance"):
        print(f"{key}: k={hi:g} / k={lo:g} = {results[hi][key] / results[lo][key]:.2f}")


if __name__ == "__main__":
    main()
