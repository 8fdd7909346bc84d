"""Gating and loss-type ablations on the ambiguous grammar, averaged over seeds.

    python3 scripts/run_ablations.py --seeds 0 1 2 --out ablations.json
"""

import argparse
import json
from dataclasses import replace

import numpy as np

from gtd.data import DataConfig
from gtd.experiments import TOY_GTAN, Experiment, run

VARIANTS = {
    "gated/mse": lambda e: e,
    "feature_only/mse": lambda e: replace(e, gtan={**TOY_GTAN, "gating_mode": "feature_only"}),
    "gated_undilated_gate/mse": lambda e: replace(e, gtan={**TOY_GTAN, "gating_mode": "gated_undilated_gate"}),
    "gated/ce": lambda e: replace(e, train=replace(e.train, loss="ce")),
    "gated/bce": lambda e: replace(e, train=replace(e.train, loss="bce")),
}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=list(VARIANTS))
    p.add_argument("--out")
    args = p.parse_args()

    base = Experiment(data=DataConfig(grammar="ambiguous", n_train=200, n_test=20), steps=args.steps)
    rows = []
    print(f"{'variant':26s} {'Mean MoC':>9s} {'Top-1 MoC':>10s} {'MFSS fut':>9s} {'seconds':>8s}")
    for name in args.variants:
        results = [run(VARIANTS[name](base).with_seed(s)) for s in args.seeds]
        row = {
            "variant": name,
            "seeds": args.seeds,
            "mean_moc": [r.report.mean_moc for r in results],
            "top1_moc": [r.report.top1_moc for r in results],
            "mfss_future": [r.report.mfss_future for r in results],
            "seconds": sum(r.seconds for r in results),
        }
        rows.append(row)
        print(f"{name:26s} {np.mean(row['mean_moc']):9.2f} {np.mean(row['top1_moc']):10.2f} "
              f"{np.mean(row['mfss_future']):9.2f} {row['seconds']:8.0f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
