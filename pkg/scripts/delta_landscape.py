#!/usr/bin/env python3
"""Threshold landscape: eps_est as a function of the huber threshold.

At fixed small ridge strength and contaminated labels, scans the threshold
landscape across sample complexities; prints every local minimum so the jump
of the optimal threshold from O(lambda) to O(1) is visible.

Usage: python scripts/delta_landscape.py [--lam 1e-3] [--eps-n 0.5] [--out landscape.csv]
"""

import argparse
import csv
import sys

import numpy as np

from hdrobust import scale_mixtures as sm
from hdrobust import state_evolution as se
from hdrobust.channel import LossSpec, NoiseModel
from hdrobust.cli import optimize_hyperparams


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--lam", type=float, default=1e-3)
    parser.add_argument("--eps-n", type=float, default=0.5)
    parser.add_argument("--out", default="delta_landscape.csv")
    parser.add_argument("--alphas", default="0.3,0.7,1.5,3,6,10")
    args = parser.parse_args(argv)

    noise = NoiseModel.contaminated(args.eps_n, sm.InverseGamma(1.1, 0.1))
    rows = []
    for alpha in (float(a) for a in args.alphas.split(",")):
        spec = se.ProblemSpec.single(alpha, sm.Dirac(1.0), noise, LossSpec.huber(1.0, args.lam))
        result = optimize_hyperparams(
            spec,
            ("delta",),
            {"delta": (1e-5, 1e2)},
            grid_points=40,
            solver_cfg=se.SolverConfig(raise_on_fail=False),
        )
        minima = ", ".join(f"(delta={d:.4g}, eps={e:.6f})" for _, d, e in result.local_minima)
        print(f"alpha={alpha:6.2f}: delta*={result.delta_star:.4g}  minima: {minima}")
        for delta, eps in zip(result.landscape_axes["delta"], result.landscape):
            rows.append(dict(alpha=alpha, delta=float(delta), eps_est=float(eps)))
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["alpha", "delta", "eps_est"])
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
