"""L-shape Dirichlet Laplacian: uniform and adaptive runs for k = 0, 1, 2.

usage: python3 scripts/lshape_laplace.py [--k 0 1 2] [--max-ndof 200000] [--refine uniform adaptive]
"""
import argparse

from _common import Timer, print_history, rates
from hhoglb.adapt import AdaptiveConfig, adaptive_loop
from hhoglb.mesh import lshape_mesh

REF = 9.63972384

ap = argparse.ArgumentParser()
ap.add_argument("--k", type=int, nargs="+", default=[0, 1, 2])
ap.add_argument("--max-ndof", type=int, default=200_000)
ap.add_argument("--refine", nargs="+", default=["uniform", "adaptive"])
args = ap.parse_args()

for k in args.k:
    for refine in args.refine:
        print(f"\n== laplace k={k} {refine} ==")
        with Timer():
            hist = adaptive_loop(AdaptiveConfig("laplace", k, refine=refine, max_ndof=args.max_ndof), lshape_mesh())
        print_history(hist, REF)
        last_step, last4 = rates(hist)
        print(f"slope of lambda_C - GLB: finest step {last_step:.3f}, last 4 certified levels {last4:.3f}")
