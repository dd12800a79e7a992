"""Shape classes generated by newest-vertex bisection of the Cook mesh and their certified gamma."""
import argparse

from hhoglb.bounds import certify_shapes
from hhoglb.mesh import cook_mesh, nvb_shape_classes

ap = argparse.ArgumentParser()
ap.add_argument("--k", type=int, default=1)
ap.add_argument("--refinements", type=int, default=2)
ap.add_argument("--max-iter", type=int, default=60)
args = ap.parse_args()

shapes = nvb_shape_classes(cook_mesh())
print(f"{len(shapes)} shape classes")
certs = certify_shapes(shapes, k=args.k, refinements=args.refinements, max_iter=args.max_iter)
for i, (tri, c) in enumerate(zip(shapes, certs)):
    pts = " ".join(f"({x:.4g},{y:.4g})" for x, y in tri)
    print(f"{i}: {pts}  gamma={c.gamma:.6g} ({c.stopped}, {len(c.trace)} iterations)")
print(f"min over classes: {min(c.gamma for c in certs):.6g}")
