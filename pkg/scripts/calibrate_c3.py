"""Calibrate the slow-point constant C3.

C3 is chosen so that eps2 = C3 exp(-6 k gamma^2) is half of the average
slow-point probability P(F_r(sigma_{z,s}) >= eps1 s^2) at gamma = 0.3, k = 4.

    python3 scripts/calibrate_c3.py --fields 40 --paths 400
"""
import argparse
import math

import numpy as np

from coarse_mbrw.classify import FastSlowParams, box_window, classify_point
from coarse_mbrw.rng import RngSeed
from coarse_mbrw.torus import TorusPoint, dyadic_box


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fields", type=int, default=40)
    ap.add_argument("--paths", type=int, default=400)
    ap.add_argument("--r", type=int, default=2)
    ap.add_argument("--delta", type=float, default=0.2)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()

    params = FastSlowParams(k=4, r=args.r, delta=args.delta, gamma=0.3, inner=args.paths)
    rng = RngSeed(args.seed, tag="calibrate-z").generator()
    probs = []
    for i in range(args.fields):
        box = dyadic_box(TorusPoint(*(rng.random(2) * 4)), params.r, params.k)
        f = box_window(box, params, RngSeed(args.seed, i, tag="calibrate-field"))
        res = classify_point(box.center, "slow", f, params, RngSeed(args.seed, i, tag="calibrate-paths"))
        probs.append(res.p_hat)
    p = np.asarray(probs)
    se = p.std(ddof=1) / math.sqrt(p.size)
    c3 = 0.5 * p.mean() / math.exp(-6 * params.k * params.gamma**2)
    print(f"mean slow probability {p.mean():.4f} +/- {se:.4f} over {p.size} fields")
    print(f"C3 = {c3:.3f}  (eps2 = {0.5 * p.mean():.4f})")


if __name__ == "__main__":
    main()
