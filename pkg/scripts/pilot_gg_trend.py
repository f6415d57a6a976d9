"""Pilot for the finite-N Ghirlanda-Guerra residual trend (s = 2, overlap indicator h)."""
import argparse
import time

import numpy as np

from igff.analytics import FieldParams
from igff.gibbs import ModelCache, OverlapFunction, PairIndicator, gg_residual


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--samples", type=int, default=200)
    ap.add_argument("--beta", type=float, default=1.5)
    ap.add_argument("--master", type=int, default=20240601)
    ap.add_argument("--rounding", default="floor")
    args = ap.parse_args()
    params = FieldParams((2.0, 1.0), (0.5, 1.0))
    h = OverlapFunction(2, (PairIndicator(0, 1, 0.4, np.inf),))
    cache = ModelCache(args.rounding)
    Ns = (16, 32, 64)
    res = np.zeros((args.seeds, len(Ns)))
    for j, N in enumerate(Ns):
        t = time.time()
        for i in range(args.seeds):
            est = gg_residual(params, args.beta, N, 1.0, h, 0, 0.1, 0.4, args.samples,
                              args.master + i, contexts=cache)
            res[i, j] = est.mean
        print(f"N={N} residuals={np.round(res[:, j], 5).tolist()} median|r|={np.median(np.abs(res[:, j])):.5f} "
              f"({time.time() - t:.1f}s)", flush=True)
    print("median |residual| by N:", np.median(np.abs(res), axis=0))


if __name__ == "__main__":
    main()
