"""Deterministic-mode GTAN on the unambiguous grammar: future MoC per seed."""

import argparse

import numpy as np

from gtd.data import DataConfig
from gtd.experiments import Experiment, run
from gtd.trainer import TrainConfig


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--beta", type=float, default=0.1)
    args = p.parse_args()

    exp = Experiment(
        data=DataConfig(grammar="unambiguous", n_train=200, n_test=40),
        train=TrainConfig(mode="deterministic", loss="ce", lr=1e-3, alphas=(args.alpha,), betas=(args.beta,)),
        steps=args.steps, alpha=args.alpha, beta=args.beta, samples=1,
    )
    mocs = []
    for s in args.seeds:
        res = run(exp.with_seed(s))
        mocs.append(res.report.mean_moc)
        print(f"seed {s}: future MoC {res.report.mean_moc:6.2f}  final loss {res.losses[-1]:.4f}  {res.seconds:.0f}s")
    print(f"mean over seeds: {np.mean(mocs):.2f}")


if __name__ == "__main__":
    main()
