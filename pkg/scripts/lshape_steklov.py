"""Steklov eigenvalue on the L-shape (adaptive, k = 1 by default)."""
import argparse

from _common import Timer, print_history, rates
from hhoglb.adapt import AdaptiveConfig, adaptive_loop
from hhoglb.mesh import lshape_mesh

REF = 0.34141604251

ap = argparse.ArgumentParser()
ap.add_argument("--k", type=int, default=1)
ap.add_argument("--max-ndof", type=int, default=200_000)
ap.add_argument("--refine", default="adaptive")
args = ap.parse_args()

with Timer():
    hist = adaptive_loop(AdaptiveConfig("steklov", args.k, refine=args.refine, max_ndof=args.max_ndof),
                         lshape_mesh("neumann"))
print_history(hist, REF)
print("slopes (finest step, last 4): %.3f %.3f" % rates(hist))
