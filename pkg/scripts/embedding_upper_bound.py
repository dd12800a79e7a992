"""Conforming Galerkin upper bound for the embedding eigenvalue on the reference triangle.

Any Rayleigh quotient of an admissible conforming field bounds gamma from above, so this
caps what the fixed-point iteration can certify.
"""
import argparse

from hhoglb.conforming import conforming_eigensolve
from hhoglb.hho import HHOSpace, ProblemSpec
from hhoglb.mesh import refine_uniform, triangle_mesh

ap = argparse.ArgumentParser()
ap.add_argument("--k", type=int, default=1)
ap.add_argument("--levels", type=int, default=4)
args = ap.parse_args()

mesh = triangle_mesh([[0, 0], [1, 0], [0, 1]])
for level in range(args.levels + 1):
    space = HHOSpace(mesh, ProblemSpec("embedding", args.k, sigma=1.0))
    sol = conforming_eigensolve(space, 1)
    print(f"level {level}: cells={mesh.n_cells} conforming dofs={sol.space.n_dofs} upper bound={sol.eigenvalues[0]:.8g}")
    mesh = refine_uniform(mesh)
