"""Explicit constants and guaranteed lower eigenvalue bounds (GLB).

GLB(j) = min{1, 1/(α + β λ_h(j))} λ_h(j), with α controlling the stabilization
and β the b-form defect; both depend only on the mesh and the family.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .mesh import Mesh, refine_uniform, triangle_mesh
from .hho import HHOSpace, ProblemSpec, boundary_weight, domain_diameter


def c_tr(n: int = 2) -> float:
    """Trace constant on convex cells: 1/π² + 2/(nπ)."""
    return 1.0 / math.pi ** 2 + 2.0 / (n * math.pi)


def korn_bound(rho: float) -> float:
    """Upper bound ĉ_Korn = sqrt(1 + 4/ϱ² (1 + sqrt(1 - ϱ²))) from the shape parameter ϱ."""
    rho = np.asarray(rho, float)
    if np.any(rho <= 0) or np.any(rho > 1):
        raise ValueError("rho must lie in (0, 1]")
    return np.sqrt(1.0 + 4.0 / rho ** 2 * (1.0 + np.sqrt(1.0 - rho ** 2)))


def mesh_rho(mesh: Mesh, reduce: str = "max") -> float:
    """Shape parameter of the mesh.  ``reduce="min"`` is the cellwise-worst value."""
    if reduce not in ("max", "min"):
        raise ValueError("reduce must be 'max' or 'min'")
    return float(getattr(np, reduce)(mesh.rho))


def korn_gamma(c_korn: float, n: int = 2) -> float:
    """Lower bound ĉ⁻² (π⁻² + c_tr)⁻¹ of the local elasticity embedding constant."""
    return 1.0 / (c_korn ** 2 * (1.0 / math.pi ** 2 + c_tr(n)))


def default_sigma(spec: ProblemSpec, mesh: Mesh, reduce: str = "max") -> float:
    """Family default for σ; makes α = 1/2 (or σ = γ for the embedding eigensolver)."""
    if spec.family in ("laplace", "steklov"):
        return 0.5 / (1.0 / math.pi ** 2 + c_tr())
    if spec.gamma is not None:
        return spec.gamma / 2 if spec.family == "elasticity" else spec.gamma
    g = korn_gamma(korn_bound(mesh_rho(mesh, reduce)))
    return g / 2 if spec.family == "elasticity" else g


def boundary_cell_count(mesh: Mesh) -> int:
    """c_0: the largest number of boundary edges in a single cell."""
    bnd = mesh.edge_cells[:, 1] < 0
    return int(bnd[mesh.cell_edges].sum(axis=1).max())


def beta_steklov(mesh: Mesh, n: int = 2) -> float:
    """c_0 max over boundary edges S ⊂ ∂K of (h_K|S|/|K|)(h_K/π² + 2h_K/(nπ))."""
    bnd = mesh.edge_cells[:, 1] < 0
    on = bnd[mesh.cell_edges]
    h = mesh.diameter[:, None]
    val = h * mesh.local_edge_lengths / mesh.area[:, None] * (h / math.pi ** 2 + 2 * h / (n * math.pi))
    return boundary_cell_count(mesh) * float(val[on].max())


def beta_embedding(mesh: Mesh, gamma_cells: float) -> float:
    """β for the weighted boundary + cell b-form: γ⁻¹ max_K max(ℓ(S,K)/ℓ(S,Ω), h_K²/d²)."""
    d = domain_diameter(mesh)
    ratio = (mesh.diameter / d) ** 2
    be = mesh.boundary_edges
    cells = mesh.edge_cells[be, 0]
    loc = np.argmax(mesh.cell_edges[cells] == be[:, None], axis=1)
    r = mesh.ell[cells, loc] / boundary_weight(mesh)
    worst = max(float(ratio.max()), float(r.max()))
    return worst / gamma_cells


@dataclass(frozen=True)
class BoundConstants:
    family: str
    c_tr: float
    sigma: float
    alpha: float
    beta: float
    inputs: dict = field(default_factory=dict)

    def glb(self, lam):
        return glb(lam, self.alpha, self.beta)

    def certified(self, lam) -> bool:
        return bool(self.alpha + self.beta * lam <= 1.0)


def constants_for(family: str, mesh: Mesh, spec: ProblemSpec, sigma: float | None = None,
                  reduce: str = "max") -> BoundConstants:
    """α and β for ``family`` on ``mesh``; σ defaults to ``spec.sigma`` or the family default."""
    if family != spec.family:
        raise ValueError("family does not match spec")
    if sigma is None:
        sigma = spec.sigma if spec.sigma is not None else default_sigma(spec, mesh, reduce)
    ct = c_tr()
    h = mesh.h_max
    inputs = {"h_max": h}
    if family in ("laplace", "steklov"):
        alpha = sigma * (1.0 / math.pi ** 2 + ct)
        if family == "laplace":
            beta = h ** 2 / math.pi ** 2
        else:
            beta = beta_steklov(mesh)
            inputs["c_0"] = boundary_cell_count(mesh)
        return BoundConstants(family, ct, sigma, alpha, beta, inputs)

    rho = mesh_rho(mesh, reduce)
    ck = float(korn_bound(rho))
    inputs.update(rho=rho, c_korn=ck)
    if family == "elasticity":
        inputs["mu"] = spec.mu
        if spec.gamma is not None:
            gamma = spec.gamma
            beta = h ** 2 / (2 * spec.mu * gamma)
        else:
            gamma = korn_gamma(ck)
            beta = ck ** 2 * h ** 2 / (2 * math.pi ** 2 * spec.mu)
        inputs["gamma"] = gamma
        return BoundConstants(family, ct, sigma, sigma / gamma, beta, inputs)
    # embedding: α = σ/γ; GLB(1) = min{1, γ/σ} λ_h(1) does not involve β
    gamma = spec.gamma if spec.gamma is not None else korn_gamma(ck)
    inputs["gamma"] = gamma
    return BoundConstants(family, ct, sigma, sigma / gamma, beta_embedding(mesh, korn_gamma(ck)), inputs)


def glb(lambda_h, alpha: float, beta: float):
    """min{1, 1/(α + β λ_h)} λ_h, and 0 for λ_h = ∞."""
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be nonnegative")
    lam = np.asarray(lambda_h, float)
    if np.any(lam < 0):
        raise ValueError("lambda_h must be nonnegative")
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        out = np.where(np.isinf(lam), 0.0, np.minimum(1.0, 1.0 / (alpha + beta * lam)) * lam)
    out = np.where(np.isinf(lam), 0.0, out)
    return float(out) if out.ndim == 0 else out


def embedding_glb(lambda_h: float, gamma: float, sigma: float) -> float:
    """Lower bound min{1, γ/σ} λ_h(1) for the embedding eigenvalue."""
    return min(1.0, gamma / sigma) * lambda_h


def apriori_certificate(alpha: float, beta: float, lambda_reference: float) -> bool:
    """True iff α + β λ_ref ≤ 1, in which case λ_h(j) itself is a lower bound."""
    return bool(alpha + beta * lambda_reference <= 1.0)


# ---------------------------------------------------------------- γ certification

@dataclass
class GammaCertificate:
    gamma: float
    trace: list  # [(iter, sigma, gamma_star)]
    stopped: str = ""

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "sigma", "gamma_star"])
        for i, s, g in self.trace:
            w.writerow([i, format(float(s), ".17g"), format(float(g), ".17g")])
        return buf.getvalue()


def embedding_eigenvalue(mesh: Mesh, k: int, sigma: float) -> float:
    from .spectral import solve_smallest

    space = HHOSpace(mesh, ProblemSpec("embedding", k, sigma=sigma))
    return float(solve_smallest(space.assemble(), 1).eigenvalues[0])


def certify_gamma(triangle, k: int = 1, sigma_0: float | None = None, tol: float = 1e-3,
                  max_iter: int = 12, refinements: int = 3) -> GammaCertificate:
    """Fixed-point certification of γ for a triangle shape.

    Starting from a certified lower bound σ_0 ≤ γ, each step solves the embedding
    eigenproblem with σ = σ_i; since σ_i ≤ γ the eigenvalue λ_h(1) is itself a
    lower bound and becomes σ_{i+1}.
    """
    tri = np.asarray(triangle, float)
    mesh = triangle_mesh(tri)
    for _ in range(refinements):
        mesh = refine_uniform(mesh)
    if sigma_0 is None:
        sigma_0 = korn_gamma(korn_bound(mesh_rho(mesh, "min")))
    sigma = float(sigma_0)
    trace = []
    best = sigma
    stopped = "max_iter"
    for it in range(1, max_iter + 1):
        lam = embedding_eigenvalue(mesh, k, sigma)
        if lam <= sigma:
            stopped = "non_increasing"
            trace.append((it, sigma, lam))
            break
        trace.append((it, sigma, lam))
        best = lam
        if abs(lam - sigma) <= tol * lam:
            stopped = "converged"
            break
        sigma = lam
    return GammaCertificate(best, trace, stopped)


def certify_shapes(shapes, k: int = 1, **kw) -> list[GammaCertificate]:
    return [certify_gamma(t, k, **kw) for t in shapes]
