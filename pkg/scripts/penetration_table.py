"""Mean maximum ground penetration per stiffness, alongside the oracle loss.

    python3 scripts/penetration_table.py --n 100 --seed 0
"""

import argparse

from stiffcontact.cube_sim import STIFFNESS, SystemParams
from stiffcontact.datagen import DataGenConfig, build_dataset, generate_trajectories
from stiffcontact.evaluation import oracle_loss, penetration_stats


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--contact-model", default="baumgarte", choices=["baumgarte", "penalty"])
    args = ap.parse_args()

    print(f"{'setting':8s} {'k':>6s} {'pen_mm':>8s} {'oracle':>8s}")
    for name, k in STIFFNESS.items():
        prm = SystemParams.named(name, contact_model=args.contact_model)
        trajs = generate_trajectories(prm, DataGenConfig(seed=args.seed), args.n)
        loss = oracle_loss(prm, build_dataset(trajs, 1))
        print(f"{name:8s} {k:6.0f} {penetration_stats(trajs):8.2f} {loss:8.4f}")


if __name__ == "__main__":
    main()
