"""Exact relative gaps from the truncated-chain oracle for a config's epsilon sweep.

Useful when simulated gaps are too close to resolve a trend.
"""

import argparse

from htq import analysis, oracle
from htq.config import load


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("config")
    p.add_argument("--q-cap", type=int, default=None)
    args = p.parse_args()
    cfg = load(args.config)
    pred = cfg.prediction()
    q_cap = args.q_cap or int(cfg.oracle["q_cap"])
    print(f"{cfg.name}: predicted {pred.limit_mean:g}, q_cap {q_cap}")
    print(f"{'epsilon':>8} {'exact':>10} {'rel_gap':>9} {'boundary':>9}")
    for eps in cfg.epsilons:
        system = cfg.build_system(eps)
        chain = oracle.build_and_solve(system, q_cap)
        pt = analysis.sweep_point(oracle.exact_moments(chain), system.c, system.direction)
        gap = abs(pt.scaled_mean - pred.limit_mean) / pred.limit_mean
        print(f"{eps:>8g} {pt.scaled_mean:>10.6f} {gap:>9.3%} {chain.boundary_mass:>9.1e}")


if __name__ == "__main__":
    main()
