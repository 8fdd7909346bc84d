"""Observed-region diversity against future accuracy on a mixed-ambiguity test set.

Test sequences get one of several extra observation-noise levels; noisier
observations should give more diverse observed samples and worse futures.

    python3 scripts/ambiguity_trend.py --sigmas 0 2 8 --out trend.jsonl
"""

import argparse
import json

from gtd.data import DataConfig
from gtd.experiments import Experiment, run


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sigmas", type=float, nargs="+", default=[0.0, 2.0, 8.0])
    p.add_argument("--n-test", type=int, default=48)
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="per-video and quartile records (jsonl)")
    args = p.parse_args()

    data = DataConfig(grammar="unambiguous", n_train=200, n_test=args.n_test, ambiguity_sigmas=tuple(args.sigmas))
    res = run(Experiment(data=data, steps=args.steps).with_seed(args.seed))
    print(res.report.table())
    print(f"({res.seconds:.0f}s)")
    if args.out:
        with open(args.out, "w") as fh:
            fh.writelines(json.dumps(r) + "\n" for r in res.report.records())


if __name__ == "__main__":
    main()
