"""Hybrid high-order discretization: degrees of freedom, potential reconstruction,
stabilization, interpolation and assembly of the eigenvalue pencil.

Four families share one code path and differ only in polynomial degrees, the
energy form, the b-form and which boundary edges carry no unknowns:

=========== ======== ======== ============ ==========================
family      cell     edge     energy       b-form
=========== ======== ======== ============ ==========================
laplace     P_{k+1}  P_k      grad.grad    cell L2
steklov     P_k      P_{k+1}  grad.grad+L2 boundary-edge L2
elasticity  P_{k+1}² P_k²     Cε:ε         cell L2
embedding   P_{k+1}² P_{k+1}² ε:ε          weighted boundary + cell L2
=========== ======== ======== ============ ==========================

All local matrices are computed for batches of cells with numpy broadcasting.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .mesh import DIRICHLET, Mesh, MeshError
from .poly import MAX_DEGREE, CellBasis, dim_cell, edge_eval, line_rule, map_triangle, triangle_rule

FAMILIES = ("laplace", "steklov", "elasticity", "embedding")
CHUNK = 2048


@dataclass(frozen=True)
class ProblemSpec:
    """Discretization choice.  ``sigma=None`` means the family default (see ``bounds.default_sigma``)."""

    family: str = "laplace"
    k: int = 1
    sigma: float | None = None
    mu: float = 1.0
    kappa: float = 1.0
    gamma: float | None = None
    energy: str | None = None  # "grad" | "eps" | "C"; None picks the family's form

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if not 0 <= self.k <= MAX_DEGREE - 1:
            raise ValueError(f"k must lie in [0, {MAX_DEGREE - 1}]")
        if self.family == "elasticity" and self.k < 1:
            raise ValueError("elasticity requires k >= 1")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.mu <= 0 or self.kappa <= 0:
            raise ValueError("mu and kappa must be positive")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.energy is not None:
            allowed = ("grad", "eps", "C") if self.n_components == 2 else ("grad",)
            if self.energy not in allowed:
                raise ValueError(f"energy {self.energy!r} not available for {self.family}")

    @property
    def n_components(self) -> int:
        return 2 if self.family in ("elasticity", "embedding") else 1

    @property
    def cell_degree(self) -> int:
        return self.k if self.family == "steklov" else self.k + 1

    @property
    def edge_degree(self) -> int:
        return self.k + 1 if self.family in ("steklov", "embedding") else self.k

    @property
    def recon_degree(self) -> int:
        return self.k + 1

    @property
    def energy_form(self) -> str:
        if self.energy is not None:
            return self.energy
        return {"elasticity": "C", "embedding": "eps"}.get(self.family, "grad")

    @property
    def flux_coefficients(self) -> tuple[float, float, float]:
        """(c1, c2, c3) in F(φ e_b)_am = c1 δ_ab ∂_m φ + c2 ∂_a φ δ_mb + c3 ∂_b φ δ_am."""
        form = self.energy_form
        if form == "C":
            return (self.mu, self.mu, self.kappa)
        if form == "eps":
            return (0.5, 0.5, 0.0)
        return (1.0, 0.0, 0.0)

    @property
    def stab_scale(self) -> float:
        return 2.0 * self.mu if self.family == "elasticity" else 1.0

    @property
    def eliminates_dirichlet(self) -> bool:
        return self.family in ("laplace", "elasticity")


# ---------------------------------------------------------------- dofs

@dataclass(frozen=True)
class DofMap:
    """Cell blocks first (cell index order), then free edges (edge index order).

    Within a block the components are stored one after the other: ``[u_0 coeffs, u_1 coeffs]``.
    """

    n_cell_dofs: int
    n_edge_dofs: int
    cell_offset: np.ndarray
    edge_offset: np.ndarray  # -1 for eliminated edges
    eliminated: np.ndarray
    l2g: np.ndarray  # (n_cells, n_local); -1 marks eliminated local dofs
    n_components: int

    @property
    def N(self) -> int:
        return int(self.n_cell_dofs + self.n_edge_dofs)

    @property
    def cell_block(self) -> int:
        return self.n_cell_dofs // max(len(self.cell_offset), 1)

    @property
    def edge_block(self) -> int:
        return self.n_edge_dofs // max(int((self.edge_offset >= 0).sum()), 1)


def build_dof_map(mesh: Mesh, spec: ProblemSpec) -> DofMap:
    c = spec.n_components
    dc = c * dim_cell(spec.cell_degree)
    de = c * (spec.edge_degree + 1)
    if spec.eliminates_dirichlet:
        eliminated = mesh.edge_tags == DIRICHLET
        if not eliminated.any():
            raise MeshError(f"{spec.family} requires a nonempty Dirichlet boundary")
    else:
        eliminated = np.zeros(mesh.n_edges, bool)
    cell_offset = np.arange(mesh.n_cells) * dc
    n_cell = mesh.n_cells * dc
    free = ~eliminated
    edge_offset = np.full(mesh.n_edges, -1)
    edge_offset[free] = n_cell + np.arange(free.sum()) * de
    l2g = np.empty((mesh.n_cells, dc + 3 * de), dtype=np.int64)
    l2g[:, :dc] = cell_offset[:, None] + np.arange(dc)
    for s in range(3):
        off = edge_offset[mesh.cell_edges[:, s]]
        l2g[:, dc + s * de: dc + (s + 1) * de] = np.where(off[:, None] >= 0, off[:, None] + np.arange(de), -1)
    return DofMap(n_cell, int(free.sum()) * de, cell_offset, edge_offset, eliminated, l2g, c)


# ---------------------------------------------------------------- local operators

@dataclass
class LocalOperators:
    """Per-cell matrices; ``R`` maps local dofs to reconstruction coefficients (component-major)."""

    R: np.ndarray  # (n, c*dr, nloc)
    E: np.ndarray  # (n, c*dr, c*dr) energy Gram matrix of the reconstruction basis
    S: np.ndarray  # (n, nloc, nloc) stabilization
    A: np.ndarray  # (n, nloc, nloc) local a_h + s_h


@dataclass(frozen=True)
class AssembledPencil:
    A: sp.csr_matrix
    B: sp.csr_matrix
    active: np.ndarray  # bool mask of B-active dofs
    constraints: np.ndarray | None = None  # (m, N) dense rows, C x = 0
    family: str = ""

    @property
    def N(self) -> int:
        return self.A.shape[0]

    @property
    def n_finite(self) -> int:
        m = 0 if self.constraints is None else self.constraints.shape[0]
        return int(self.active.sum()) - m


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("NTRI_THREADS", "1")))
    except ValueError:
        return 1


def _vector_energy(dphi_a, dphi_b, w, coef, c):
    """Energy Gram block matrix between two scalar bases lifted to c components."""
    Gd = np.einsum("nq,nqim,nqjl->nijml", w, dphi_a, dphi_b)
    lap = Gd[..., 0, 0] + Gd[..., 1, 1]
    if c == 1:
        return lap
    c1, c2, c3 = coef
    n, da, db = lap.shape
    E = np.empty((n, c * da, c * db))
    for b in range(c):
        for bb in range(c):
            blk = c2 * Gd[..., bb, b] + c3 * Gd[..., b, bb]
            if b == bb:
                blk = blk + c1 * lap
            E[:, b * da:(b + 1) * da, bb * db:(bb + 1) * db] = blk
    return E


def _edge_flux(dphi, nu, coef, c):
    """(F(φ_i e_b) ν)_a at edge points, shape (n, nq, c*dr, c)."""
    dn = np.einsum("nqim,nm->nqi", dphi, nu)
    if c == 1:
        return dn[..., None]
    c1, c2, c3 = coef
    n, nq, dr, _ = dphi.shape
    out = np.zeros((n, nq, c * dr, c))
    for b in range(c):
        for a in range(c):
            val = c2 * dphi[..., a] * nu[:, None, None, b] + c3 * dphi[..., b] * nu[:, None, None, a]
            if a == b:
                val = val + c1 * dn
            out[:, :, b * dr:(b + 1) * dr, a] = val
    return out


class HHOSpace:
    """Discrete space V_h on a mesh with its local operators.

    ``quad_degree`` defaults to 2(k+2); raise it to interpolate higher-degree data exactly.
    """

    def __init__(self, mesh: Mesh, spec: ProblemSpec, *, quad_degree: int | None = None):
        self.mesh = mesh
        self.spec = spec
        if spec.sigma is None:
            from .bounds import default_sigma

            self.sigma = float(default_sigma(spec, mesh))
        else:
            self.sigma = float(spec.sigma)
        self.dofs = build_dof_map(mesh, spec)
        self.c = spec.n_components
        self.dr = dim_cell(spec.recon_degree)
        self.dc = dim_cell(spec.cell_degree)
        self.de = spec.edge_degree + 1
        self.nloc = self.c * self.dc + 3 * self.c * self.de
        self.quad_degree = 2 * (spec.k + 2) if quad_degree is None else int(quad_degree)
        self.tri_rule = triangle_rule(self.quad_degree)
        self.line_rule = line_rule(self.quad_degree)

    # -- geometry helpers ------------------------------------------------------------
    @cached_property
    def basis(self) -> CellBasis:
        """Orthonormal P_{k+1} basis on every cell (hierarchical: P_k is a prefix)."""
        return CellBasis(self.mesh.corners, self.spec.recon_degree)

    def cell_quadrature(self, cells):
        return map_triangle(self.mesh.corners[cells], self.tri_rule)

    def edge_points(self, edges):
        """Points (m, nq, 2), weights (m, nq) and unit-edge parameters along global edges."""
        m = self.mesh
        a = m.vertices[m.edges[edges, 0]]
        b = m.vertices[m.edges[edges, 1]]
        t = self.line_rule.points
        X = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
        L = m.edge_lengths[edges]
        return X, L[:, None] * self.line_rule.weights, t

    def edge_basis(self, edges) -> np.ndarray:
        """Orthonormal edge basis at the edge quadrature points, (m, nq, de)."""
        L = self.mesh.edge_lengths[edges]
        return edge_eval(self.line_rule.points, self.spec.edge_degree)[None] / np.sqrt(L)[:, None, None]

    # -- local operators -----------------------------------------------------------------
    def _local_chunk(self, cells: np.ndarray) -> LocalOperators:
        spec, m, cb = self.spec, self.mesh, self.basis
        c, dr, dc, de, nloc = self.c, self.dr, self.dc, self.de, self.nloc
        coef = spec.flux_coefficients
        n = len(cells)
        X, w = self.cell_quadrature(cells)
        dphi = cb.grad(X, cells)
        E = _vector_energy(dphi, dphi, w, coef, c)

        cd = c * dc
        Rhs = np.zeros((n, c * dr, nloc))
        cell_cols = np.concatenate([b * dr + np.arange(dc) for b in range(c)])
        Rhs[:, :, :cd] = E[:, :, cell_cols]
        ncon = 1 if c == 1 else 3
        C = np.zeros((n, ncon, c * dr))
        Fx = np.zeros((n, ncon, nloc))
        for b in range(c):
            C[:, b, b * dr] = 1.0
            Fx[:, b, b * dc] = 1.0
        if c == 2:
            C[:, 2, :dr] = -np.einsum("nq,nqi->ni", w, dphi[..., 1])
            C[:, 2, dr:] = np.einsum("nq,nqi->ni", w, dphi[..., 0])

        edge_data = []
        for s in range(3):
            e = m.cell_edges[cells, s]
            Xs, ws, _ = self.edge_points(e)
            nu = m.local_normals[cells, s]
            chi = self.edge_basis(e)
            phiS = cb.eval(Xs, cells)
            flux = _edge_flux(cb.grad(Xs, cells), nu, coef, c)  # (n, q, c*dr, c)
            col0 = cd + s * c * de
            for a in range(c):
                # edge trace term and the cell part of the integration by parts
                Rhs[:, :, col0 + a * de: col0 + (a + 1) * de] += np.einsum("nq,nqi,nqj->nij", ws, flux[..., a], chi)
                Rhs[:, :, a * dc:(a + 1) * dc] -= np.einsum("nq,nqi,nqj->nij", ws, flux[..., a], phiS[..., :dc])
            if c == 2:
                Fx[:, 2, col0 + de: col0 + 2 * de] += np.einsum("nq,n,nqj->nj", ws, nu[:, 0], chi)
                Fx[:, 2, col0: col0 + de] -= np.einsum("nq,n,nqj->nj", ws, nu[:, 1], chi)
            edge_data.append((ws, chi, phiS))

        # bordered solve; constraint rows scaled to the energy magnitude
        scale = np.einsum("nii->n", E) / E.shape[1]
        C *= scale[:, None, None]
        Fx *= scale[:, None, None]
        K = np.zeros((n, c * dr + ncon, c * dr + ncon))
        K[:, :c * dr, :c * dr] = E
        K[:, :c * dr, c * dr:] = np.transpose(C, (0, 2, 1))
        K[:, c * dr:, :c * dr] = C
        try:
            R = np.linalg.solve(K, np.concatenate([Rhs, Fx], axis=1))[:, :c * dr]
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("singular local reconstruction system") from exc

        # stabilization
        h = m.diameter[cells]
        Dc = -R[:, cell_cols, :]
        Dc[:, np.arange(cd), np.arange(cd)] += 1.0
        S = np.einsum("nij,nik->njk", Dc, Dc) / h[:, None, None] ** 2
        ell = m.ell[cells]
        for s, (ws, chi, phiS) in enumerate(edge_data):
            Ms = np.einsum("nq,nqj,nqi->nji", ws, chi, phiS)  # (n, de, dr)
            D = np.zeros((n, c * de, nloc))
            col0 = cd + s * c * de
            for a in range(c):
                D[:, a * de:(a + 1) * de, :] -= np.einsum("nji,nil->njl", Ms, R[:, a * dr:(a + 1) * dr, :])
                D[:, a * de + np.arange(de), col0 + a * de + np.arange(de)] += 1.0
            S += np.einsum("nij,nik->njk", D, D) / ell[:, s, None, None]
        S *= spec.stab_scale * self.sigma
        S = 0.5 * (S + np.transpose(S, (0, 2, 1)))

        A = np.einsum("nij,nik,nkl->njl", R, E, R)
        if spec.family == "steklov":
            A[:, np.arange(cd), np.arange(cd)] += 1.0
        A = 0.5 * (A + np.transpose(A, (0, 2, 1))) + S
        return LocalOperators(R, E, S, A)

    @cached_property
    def local(self) -> LocalOperators:
        chunks = [np.arange(i, min(i + CHUNK, self.mesh.n_cells)) for i in range(0, self.mesh.n_cells, CHUNK)]
        nt = _threads()
        if nt > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(nt) as ex:
                parts = list(ex.map(self._local_chunk, chunks))
        else:
            parts = [self._local_chunk(ch) for ch in chunks]
        return LocalOperators(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("R", "E", "S", "A")))

    # -- global objects --------------------------------------------------------------
    @cached_property
    def b_diagonal(self) -> np.ndarray:
        """Diagonal of the b-form in global dofs (all bases are orthonormal)."""
        m, d, spec = self.mesh, self.dofs, self.spec
        B = np.zeros(d.N)
        cd = self.c * self.dc
        if spec.family in ("laplace", "elasticity"):
            B[: d.n_cell_dofs] = 1.0
        elif spec.family == "steklov":
            off = d.edge_offset[m.boundary_edges]
            B[(off[:, None] + np.arange(self.c * self.de)).ravel()] = 1.0
        else:
            diam = domain_diameter(m)
            B[: d.n_cell_dofs] = diam ** -2
            wts = 1.0 / boundary_weight(m)
            off = d.edge_offset[m.boundary_edges]
            idx = off[:, None] + np.arange(self.c * self.de)
            B[idx.ravel()] = np.repeat(wts, self.c * self.de)
        assert cd > 0
        return B

    def global_constraints(self) -> np.ndarray | None:
        """Rows of the embedding constraints ∫ v_M = 0 (per component) and ∫ rot R v = 0."""
        if self.spec.family != "embedding":
            return None
        m, d = self.mesh, self.dofs
        C = np.zeros((3, d.N))
        sq = np.sqrt(m.area)
        for b in range(2):
            C[b, d.cell_offset + b * self.dc] = sq
        be = m.boundary_edges
        _, ws, _ = self.edge_points(be)
        chi_int = np.einsum("nq,nqj->nj", ws, self.edge_basis(be))
        nu = m.edge_normals[be]
        off = d.edge_offset[be]
        for j in range(self.de):
            C[2, off + self.de + j] += nu[:, 0] * chi_int[:, j]
            C[2, off + j] -= nu[:, 1] * chi_int[:, j]
        return C

    def assemble(self) -> AssembledPencil:
        loc, l2g = self.local, self.dofs.l2g
        N = self.dofs.N
        keep = l2g >= 0
        rows = np.broadcast_to(l2g[:, :, None], loc.A.shape)
        cols = np.broadcast_to(l2g[:, None, :], loc.A.shape)
        mask = keep[:, :, None] & keep[:, None, :]
        A = sp.coo_matrix((loc.A[mask], (rows[mask], cols[mask])), shape=(N, N)).tocsr()
        A.sum_duplicates()
        A = ((A + A.T) * 0.5).tocsr()
        Bd = self.b_diagonal
        return AssembledPencil(A, sp.diags(Bd).tocsr(), Bd > 0, self.global_constraints(), self.spec.family)

    # -- functions on the space ------------------------------------------------------
    def _eval_components(self, v, X):
        vals = np.asarray(v(X), float)
        if self.c == 1 and vals.shape == X.shape[:-1]:
            vals = vals[..., None]
        return vals

    def interpolate(self, v) -> np.ndarray:
        """Dofs of I_h v: L2 projections onto cell and free-edge polynomials.

        ``v`` maps points of shape (..., 2) to values (...) or (..., n_components).
        """
        m, d, c = self.mesh, self.dofs, self.c
        out = np.zeros(d.N)
        for start in range(0, m.n_cells, CHUNK):
            cells = np.arange(start, min(start + CHUNK, m.n_cells))
            X, w = self.cell_quadrature(cells)
            phi = self.basis.eval(X, cells)[..., : self.dc]
            coeff = np.einsum("nq,nqa,nqj->naj", w, self._eval_components(v, X), phi)
            out[(d.cell_offset[cells, None] + np.arange(c * self.dc)).ravel()] = coeff.reshape(len(cells), -1).ravel()
        free = np.flatnonzero(~d.eliminated)
        X, ws, _ = self.edge_points(free)
        coeff = np.einsum("nq,nqa,nqj->naj", ws, self._eval_components(v, X), self.edge_basis(free))
        out[(d.edge_offset[free, None] + np.arange(c * self.de)).ravel()] = coeff.reshape(len(free), -1).ravel()
        return out

    def interpolate_piecewise(self, coeff: np.ndarray) -> np.ndarray:
        """I_h of a piecewise P_{k+1} function given per cell as (n, c, dr) basis coefficients.

        Edge traces are taken from the edge's first cell, which is exact for continuous functions.
        """
        d, c = self.dofs, self.c
        out = np.zeros(d.N)
        blk = coeff[:, :, : self.dc].reshape(self.mesh.n_cells, -1)
        out[(d.cell_offset[:, None] + np.arange(c * self.dc)).ravel()] = blk.ravel()
        free = np.flatnonzero(~d.eliminated)
        cells = self.mesh.edge_cells[free, 0]
        X, ws, _ = self.edge_points(free)
        vals = np.einsum("ncj,nqj->nqc", coeff[cells], self.basis.eval(X, cells))
        proj = np.einsum("nq,nqa,nqj->naj", ws, vals, self.edge_basis(free))
        out[(d.edge_offset[free, None] + np.arange(c * self.de)).ravel()] = proj.reshape(len(free), -1).ravel()
        return out

    def broken_pairing(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Per-cell a_pw(p, q) of two piecewise polynomials given as (n, c, dr) coefficients."""
        n = p.shape[0]
        return np.einsum("ni,nij,nj->n", p.reshape(n, -1), self.local.E, q.reshape(n, -1))

    def local_dofs(self, u: np.ndarray) -> np.ndarray:
        """Scatter a global dof vector to per-cell local vectors (zeros on eliminated edges)."""
        l2g = self.dofs.l2g
        return np.where(l2g >= 0, u[np.maximum(l2g, 0)], 0.0)

    def reconstruct(self, u: np.ndarray) -> np.ndarray:
        """Coefficients of R_h u per cell, shape (n_cells, c, dr)."""
        r = np.einsum("nij,nj->ni", self.local.R, self.local_dofs(u))
        return r.reshape(self.mesh.n_cells, self.c, self.dr)

    def cell_values(self, u: np.ndarray) -> np.ndarray:
        """Cell component coefficients u_K in the P_{k+1} basis (zero padded), (n, c, dr)."""
        d = self.dofs
        blk = u[d.cell_offset[:, None] + np.arange(self.c * self.dc)].reshape(-1, self.c, self.dc)
        out = np.zeros((self.mesh.n_cells, self.c, self.dr))
        out[..., : self.dc] = blk
        return out

    def stabilization_per_cell(self, u: np.ndarray) -> np.ndarray:
        ul = self.local_dofs(u)
        return np.einsum("ni,nij,nj->n", ul, self.local.S, ul)

    def energy_per_cell(self, u: np.ndarray) -> np.ndarray:
        """a_h(u, u) restricted to each cell (without stabilization)."""
        ul = self.local_dofs(u)
        return np.einsum("ni,nij,nj->n", ul, self.local.A - self.local.S, ul)

    def eval_polynomial(self, coeff: np.ndarray, X: np.ndarray, cells=slice(None)) -> np.ndarray:
        """Evaluate per-cell coefficient arrays (n, c, dr) at points (n, q, 2) -> (n, q, c)."""
        phi = self.basis.eval(X, cells)
        return np.einsum("ncj,nqj->nqc", coeff[cells], phi)

    def grad_polynomial(self, coeff: np.ndarray, X: np.ndarray, cells=slice(None)) -> np.ndarray:
        dphi = self.basis.grad(X, cells)
        return np.einsum("ncj,nqjm->nqcm", coeff[cells], dphi)

    def galerkin_projection(self, v, grad_v) -> np.ndarray:
        """Per-cell energy projection G_h v onto P_{k+1}, shape (n_cells, c, dr).

        ``grad_v`` returns (..., 2) for scalars or (..., c, 2) indexed [component, direction].
        """
        m, c, dr = self.mesh, self.c, self.dr
        coef = self.spec.flux_coefficients
        out = np.empty((m.n_cells, c, dr))
        for start in range(0, m.n_cells, CHUNK):
            cells = np.arange(start, min(start + CHUNK, m.n_cells))
            n = len(cells)
            X, w = self.cell_quadrature(cells)
            dphi = self.basis.grad(X, cells)
            phi = self.basis.eval(X, cells)
            E = _vector_energy(dphi, dphi, w, coef, c)
            g = np.asarray(grad_v(X), float).reshape(n, X.shape[1], c, 2)
            vals = self._eval_components(v, X)
            rhs = np.empty((n, c * dr))
            if c == 1:
                rhs[:] = np.einsum("nq,nqim,nqm->ni", w, dphi, g[:, :, 0])
            else:
                c1, c2, c3 = coef
                div = g[..., 0, 0] + g[..., 1, 1]
                for b in range(c):
                    rhs[:, b * dr:(b + 1) * dr] = (
                        c1 * np.einsum("nq,nqim,nqm->ni", w, dphi, g[:, :, b])
                        + c2 * np.einsum("nq,nqia,nqa->ni", w, dphi, g[:, :, :, b])
                        + c3 * np.einsum("nq,nqi,nq->ni", w, dphi[..., b], div)
                    )
            ncon = 1 if c == 1 else 3
            C = np.zeros((n, ncon, c * dr))
            f = np.zeros((n, ncon))
            for b in range(c):
                C[:, b, b * dr] = 1.0
                f[:, b] = np.einsum("nq,nq,nq->n", w, vals[..., b], phi[..., 0])
            if c == 2:
                C[:, 2, :dr] = -np.einsum("nq,nqi->ni", w, dphi[..., 1])
                C[:, 2, dr:] = np.einsum("nq,nqi->ni", w, dphi[..., 0])
                f[:, 2] = np.einsum("nq,nq->n", w, g[:, :, 1, 0] - g[:, :, 0, 1])
            scale = np.einsum("nii->n", E) / E.shape[1]
            K = np.zeros((n, c * dr + ncon, c * dr + ncon))
            K[:, :c * dr, :c * dr] = E
            K[:, :c * dr, c * dr:] = np.transpose(C, (0, 2, 1)) * scale[:, None, None]
            K[:, c * dr:, :c * dr] = C * scale[:, None, None]
            sol = np.linalg.solve(K, np.concatenate([rhs, f * scale[:, None]], axis=1)[..., None])[..., 0]
            out[cells] = sol[:, :c * dr].reshape(n, c, dr)
        return out

    def broken_energy(self, coeff: np.ndarray) -> np.ndarray:
        """Per-cell a_pw energy of per-cell polynomials (n, c, dr) using the reconstruction Gram matrix."""
        return self.broken_pairing(coeff, coeff)


# ---------------------------------------------------------------- domain weights

def domain_diameter(mesh: Mesh) -> float:
    """diam Ω from the boundary vertices."""
    v = mesh.vertices[np.unique(mesh.edges[mesh.boundary_edges])]
    d2 = ((v[:, None, :] - v[None, :, :]) ** 2).sum(-1)
    return float(np.sqrt(d2.max()))


def domain_centroid(mesh: Mesh) -> np.ndarray:
    return (mesh.area[:, None] * mesh.centroid).sum(0) / mesh.domain_area


def boundary_weight(mesh: Mesh) -> np.ndarray:
    """ℓ(S, Ω) for boundary edges of a convex domain.

    With Ω_S the cone from the domain centroid over the full side containing S,
    |side| d² / |Ω_S| = 2 d² / dist(x_Ω, side line); only the line through S matters.
    """
    be = mesh.boundary_edges
    a = mesh.vertices[mesh.edges[be, 0]]
    nu = mesh.edge_normals[be]
    dist = np.abs(((a - domain_centroid(mesh)) * nu).sum(1))
    return 2.0 * domain_diameter(mesh) ** 2 / dist


# ---------------------------------------------------------------- functional API

def interpolate(v, mesh: Mesh, spec: ProblemSpec, **kw) -> np.ndarray:
    return HHOSpace(mesh, spec, **kw).interpolate(v)


def galerkin_projection(v, grad_v, mesh: Mesh, spec: ProblemSpec, **kw) -> np.ndarray:
    return HHOSpace(mesh, spec, **kw).galerkin_projection(v, grad_v)


def assemble(mesh: Mesh, spec: ProblemSpec, **kw) -> AssembledPencil:
    return HHOSpace(mesh, spec, **kw).assemble()


def local_reconstruction(mesh: Mesh, spec: ProblemSpec, cell: int, **kw) -> np.ndarray:
    """R_K for one cell: local dofs -> reconstruction coefficients (c*dr, nloc)."""
    space = HHOSpace(mesh, spec, **kw)
    return space._local_chunk(np.array([cell])).R[0]


def local_stabilization(mesh: Mesh, spec: ProblemSpec, cell: int, **kw) -> np.ndarray:
    space = HHOSpace(mesh, spec, **kw)
    return space._local_chunk(np.array([cell])).S[0]
