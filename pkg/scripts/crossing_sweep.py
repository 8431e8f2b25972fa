"""Crossing-time slope across gamma, next to 2 + gamma^2/2.

    python3 scripts/crossing_sweep.py --gammas 0,0.2,0.3,0.4 --replicas 40
"""
import argparse

from coarse_mbrw.exponents import crossing_time_experiment, exponent_comparison
from coarse_mbrw.rng import RngSeed


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gammas", default="0,0.2,0.3,0.4")
    ap.add_argument("--k", type=int, default=4)
    ap.add_argument("--scales", default="1,2,3")
    ap.add_argument("--replicas", type=int, default=40)
    ap.add_argument("--paths", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    scales = [int(v) for v in args.scales.split(",")]
    print("gamma  slope    +/-     target  2/slope  theorem  watabiki")
    for g in (float(v) for v in args.gammas.split(",")):
        res = crossing_time_experiment(g, args.k, scales, args.replicas, args.paths, seed=RngSeed(args.seed))
        rep = exponent_comparison(g, args.k, res)
        print(f"{g:5.2f}  {rep.crossing_slope:.4f}  {rep.crossing_stderr:.4f}  {rep.crossing_target:.4f}  "
              f"{rep.derived_exponent:.4f}   {rep.theorem_exponent:.4f}   {rep.watabiki_exponent:.4f}"
              + ("  (poor fit)" if rep.poor_fit else ""))


if __name__ == "__main__":
    main()
