"""Conforming Lagrange P_p companion space: upper eigenvalue bounds λ_C and fields u_C.

Global node numbering: mesh vertices, then ``p - 1`` interior nodes per edge
(ordered from ``edges[e, 0]`` to ``edges[e, 1]``), then interior nodes per cell.
Local shape functions are expressed in the orthonormal cell basis of
:class:`hhoglb.poly.CellBasis`, so a conforming function restricted to a cell is
directly a coefficient vector in the same basis as the HHO reconstruction.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .hho import CHUNK, AssembledPencil, HHOSpace, ProblemSpec, _vector_energy, boundary_weight, domain_diameter
from .mesh import DIRICHLET, Mesh
from .poly import CellBasis, line_rule, map_triangle, triangle_rule
from .spectral import SpectralError, solve_smallest


def _local_nodes(p: int):
    """Barycentric lattice (a, b) -> reference point (a/p, b/p), with node classification."""
    ab = np.array([(a, b) for a in range(p + 1) for b in range(p + 1 - a)])
    lam = np.stack([p - ab.sum(1), ab[:, 0], ab[:, 1]], axis=1)  # λ0, λ1, λ2 times p
    return ab / p, lam


class LagrangeSpace:
    """Continuous P_p (scalar or vector) on a triangular mesh."""

    def __init__(self, mesh: Mesh, p: int, n_components: int = 1, dirichlet: bool = True):
        if p < 1:
            raise ValueError("Lagrange degree must be at least 1")
        self.mesh, self.p, self.c = mesh, p, n_components
        ref, lam = _local_nodes(p)
        self.ref_nodes = ref
        n_loc = len(ref)
        nV, nE = mesh.n_vertices, mesh.n_edges
        ni = (p - 1) * (p - 2) // 2
        self.n_nodes = nV + nE * (p - 1) + mesh.n_cells * ni
        gid = np.empty((mesh.n_cells, n_loc), dtype=np.int64)
        interior_count = 0
        for j in range(n_loc):
            zeros = np.flatnonzero(lam[j] == 0)
            if len(zeros) == 2:
                gid[:, j] = mesh.cells[:, 3 - zeros.sum()]
            elif len(zeros) == 1:
                s = zeros[0]
                s1, s2 = (s + 1) % 3, (s + 2) % 3
                e = mesh.cell_edges[:, s]
                from_s1 = mesh.cells[:, s1] == mesh.edges[e, 0]
                t = np.where(from_s1, lam[j, s2], lam[j, s1])
                gid[:, j] = nV + e * (p - 1) + t - 1
            else:
                gid[:, j] = nV + nE * (p - 1) + np.arange(mesh.n_cells) * ni + interior_count
                interior_count += 1
        self.l2g_nodes = gid
        # Dirichlet nodes: everything on a Dirichlet edge
        dnodes = np.zeros(self.n_nodes, bool)
        if dirichlet:
            de = np.flatnonzero(mesh.edge_tags == DIRICHLET)
            dnodes[mesh.edges[de].ravel()] = True
            if p > 1:
                dnodes[(nV + de[:, None] * (p - 1) + np.arange(p - 1)).ravel()] = True
        self.dirichlet_nodes = dnodes

    @cached_property
    def basis(self) -> CellBasis:
        return CellBasis(self.mesh.corners, self.p)

    @cached_property
    def node_coords(self) -> np.ndarray:
        """Physical node coordinates per cell, (n_cells, n_loc, 2)."""
        P = self.mesh.corners
        r = self.ref_nodes
        return P[:, None, 0] + r[None, :, 0, None] * (P[:, None, 1] - P[:, None, 0]) + r[None, :, 1, None] * (P[:, None, 2] - P[:, None, 0])

    @cached_property
    def shape_coef(self) -> np.ndarray:
        """(n_cells, dim, n_loc): column i holds the orthonormal-basis coefficients of shape function i."""
        V = self.basis.eval(self.node_coords)  # (n, node, basis)
        return np.linalg.inv(V)

    @property
    def n_dofs(self) -> int:
        return self.c * self.n_nodes

    def dof_index(self) -> np.ndarray:
        """(n_cells, c * n_loc) global dof numbers: component-major blocks of nodes."""
        return np.concatenate([b * self.n_nodes + self.l2g_nodes for b in range(self.c)], axis=1)

    @cached_property
    def free(self) -> np.ndarray:
        return np.flatnonzero(~np.tile(self.dirichlet_nodes, self.c))

    def cell_coefficients(self, u: np.ndarray) -> np.ndarray:
        """Per-cell coefficients (n_cells, c, dim) in the orthonormal P_p basis."""
        vals = u[self.dof_index()].reshape(self.mesh.n_cells, self.c, -1)
        return np.einsum("nji,nci->ncj", self.shape_coef, vals)

    def expand(self, u_free: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n_dofs)
        out[self.free] = u_free
        return out

    def matrices(self, spec: ProblemSpec):
        """Stiffness (energy form of ``spec``) and b-form matrices on all dofs."""
        m, c = self.mesh, self.c
        rows, cols, kv, mv = [], [], [], []
        tri = triangle_rule(2 * self.p)
        idx = self.dof_index()
        for start in range(0, m.n_cells, CHUNK):
            cells = np.arange(start, min(start + CHUNK, m.n_cells))
            X, w = map_triangle(m.corners[cells], tri)
            dphi = self.basis.grad(X, cells)
            E = _vector_energy(dphi, dphi, w, spec.flux_coefficients, c)
            L = self.shape_coef[cells]
            Lc = np.zeros((len(cells), c * L.shape[1], c * L.shape[2]))
            for b in range(c):
                Lc[:, b * L.shape[1]:(b + 1) * L.shape[1], b * L.shape[2]:(b + 1) * L.shape[2]] = L
            K = np.einsum("nji,njk,nkl->nil", Lc, E, Lc)
            M = np.einsum("nji,njl->nil", Lc, Lc)
            if spec.family == "steklov":
                K = K + M
            ii = idx[cells]
            rows.append(np.broadcast_to(ii[:, :, None], K.shape).ravel())
            cols.append(np.broadcast_to(ii[:, None, :], K.shape).ravel())
            kv.append(K.ravel())
            mv.append(M.ravel())
        r, cc = np.concatenate(rows), np.concatenate(cols)
        N = self.n_dofs
        K = sp.coo_matrix((np.concatenate(kv), (r, cc)), shape=(N, N)).tocsr()
        Mb = sp.coo_matrix((np.concatenate(mv), (r, cc)), shape=(N, N)).tocsr()
        if spec.family == "steklov":
            Mb = self.boundary_mass()
        elif spec.family == "embedding":
            Mb = Mb / domain_diameter(m) ** 2 + self.boundary_mass(1.0 / boundary_weight(m))
        return (K + K.T) * 0.5, (Mb + Mb.T) * 0.5

    def boundary_mass(self, weights=None) -> sp.csr_matrix:
        """Boundary L2 mass, optionally weighted by a constant per boundary edge."""
        m, p = self.mesh, self.p
        be = m.boundary_edges
        cells = m.edge_cells[be, 0]
        rule = line_rule(2 * p)
        a = m.vertices[m.edges[be, 0]]
        b = m.vertices[m.edges[be, 1]]
        X = a[:, None, :] + rule.points[None, :, None] * (b - a)[:, None, :]
        w = m.edge_lengths[be, None] * rule.weights
        phi = self.basis.eval(X, cells)
        N_ = np.einsum("nqj,nji->nqi", phi, self.shape_coef[cells])
        if weights is not None:
            w = w * np.asarray(weights)[:, None]
        Mloc = np.einsum("nq,nqi,nqj->nij", w, N_, N_)
        if self.c == 2:
            Z = np.zeros_like(Mloc)
            Mloc = np.block([[Mloc, Z], [Z, Mloc]])
        ii = np.concatenate([b * self.n_nodes + self.l2g_nodes[cells] for b in range(self.c)], axis=1)
        r = np.broadcast_to(ii[:, :, None], Mloc.shape).ravel()
        cc = np.broadcast_to(ii[:, None, :], Mloc.shape).ravel()
        return sp.coo_matrix((Mloc.ravel(), (r, cc)), shape=(self.n_dofs, self.n_dofs)).tocsr()

    def nodal_average(self, coeff: np.ndarray) -> np.ndarray:
        """Arithmetic mean over cells of broken P_p polynomials (n, c, dim) at each node."""
        vals = np.einsum("ncj,nij->nci", coeff, self.basis.eval(self.node_coords))
        out = np.zeros(self.n_dofs)
        cnt = np.bincount(self.l2g_nodes.ravel(), minlength=self.n_nodes).astype(float)
        for b in range(self.c):
            out[b * self.n_nodes:(b + 1) * self.n_nodes] = (
                np.bincount(self.l2g_nodes.ravel(), weights=vals[:, b].ravel(), minlength=self.n_nodes) / cnt
            )
        out[np.tile(self.dirichlet_nodes, self.c)] = 0.0
        return out


def embedding_constraint_matrix(lag: "LagrangeSpace") -> np.ndarray:
    """Rows (∫u_0, ∫u_1, ∫ rot u) as functionals on the dofs of a vector Lagrange space."""
    m, n = lag.mesh, lag.n_nodes
    X, w = map_triangle(m.corners, triangle_rule(2 * lag.p))
    gi = np.einsum("nq,nqim->nim", w, lag.basis.grad(X))
    L = lag.shape_coef  # (n_cells, dim, n_loc)
    C = np.zeros((3, lag.n_dofs))
    nodes = lag.l2g_nodes
    np.add.at(C[0], nodes, np.sqrt(m.area)[:, None] * L[:, 0, :])
    np.add.at(C[1], n + nodes, np.sqrt(m.area)[:, None] * L[:, 0, :])
    np.add.at(C[2], n + nodes, np.einsum("nij,ni->nj", L, gi[..., 0]))
    np.add.at(C[2], nodes, -np.einsum("nij,ni->nj", L, gi[..., 1]))
    return C


def remove_rigid_motion(lag: "LagrangeSpace", U: np.ndarray) -> np.ndarray:
    """Subtract the rigid motion that makes both means and the rotation of U vanish.

    Rigid motions carry no strain, so the ε-energy is unchanged.
    """
    xy = np.zeros((lag.n_nodes, 2))
    xy[lag.l2g_nodes.ravel()] = lag.node_coords.reshape(-1, 2)
    n = lag.n_nodes
    rigid = np.zeros((3, lag.n_dofs))
    rigid[0, :n] = 1.0
    rigid[1, n:] = 1.0
    rigid[2, :n], rigid[2, n:] = -xy[:, 1], xy[:, 0]
    C = embedding_constraint_matrix(lag)
    t = np.linalg.solve(C @ rigid.T, C @ U)
    return U - t @ rigid


@dataclass
class ConformingSolution:
    eigenvalues: np.ndarray  # λ_C(1..j)
    vectors: np.ndarray  # (n_dofs, j), ‖u_C‖_b = 1
    space: LagrangeSpace
    method: str = ""

    def cell_coefficients(self, j: int = 0) -> np.ndarray:
        return self.space.cell_coefficients(self.vectors[:, j])


def lagrange_for(space: HHOSpace) -> LagrangeSpace:
    spec = space.spec
    return LagrangeSpace(space.mesh, spec.recon_degree, spec.n_components, dirichlet=spec.eliminates_dirichlet)


def _align(space: HHOSpace, lag: LagrangeSpace, U: np.ndarray, u_h: np.ndarray | None) -> np.ndarray:
    """Flip the sign so that b_h(I_h u_C, u_h) > 0."""
    if u_h is None:
        return U
    pair = space.interpolate_piecewise(lag.cell_coefficients(U)) @ (space.b_diagonal * u_h)
    if abs(pair) < 1e-14:
        pair = np.sum(space.broken_pairing(lag.cell_coefficients(U), space.reconstruct(u_h)))
    return -U if pair < 0 else U


def nodal_average_upper_bound(space: HHOSpace, u_h: np.ndarray, *, matrices=None) -> ConformingSolution:
    """λ_C(1) from the nodal average of R_h u_h (Rayleigh quotient of a conforming function)."""
    lag = lagrange_for(space)
    K, M = matrices if matrices is not None else lag.matrices(space.spec)
    U = lag.nodal_average(space.reconstruct(u_h))
    if space.spec.family == "embedding":
        U = remove_rigid_motion(lag, U)
    bn = float(U @ (M @ U))
    if not bn > 1e-300:
        raise SpectralError("averaged field vanishes in the b-norm")
    U = U / np.sqrt(bn)
    lam = float(U @ (K @ U))
    U = _align(space, lag, U, u_h)
    return ConformingSolution(np.array([lam]), U[:, None], lag, "nodal_average")


def conforming_eigensolve(space: HHOSpace, j: int = 1, u_h: np.ndarray | None = None, *, seed: int = 0,
                          matrices=None) -> ConformingSolution:
    """Conforming P_{k+1} Galerkin eigenpairs on the same mesh (j smallest)."""
    lag = lagrange_for(space)
    K, M = matrices if matrices is not None else lag.matrices(space.spec)
    f = lag.free
    Kf, Mf = K[f][:, f].tocsr(), M[f][:, f].tocsr()
    active = np.asarray(abs(Mf).sum(axis=1)).ravel() > 0
    cons = embedding_constraint_matrix(lag)[:, f] if space.spec.family == "embedding" else None
    sol = solve_smallest(AssembledPencil(Kf, Mf, active, cons), j, seed=seed)
    U = np.zeros((lag.n_dofs, j))
    U[f] = sol.vectors
    if u_h is not None:
        U[:, j - 1] = _align(space, lag, U[:, j - 1], u_h)
    return ConformingSolution(sol.eigenvalues, U, lag, "eigensolve")


def conforming_upper_bound(space: HHOSpace, u_h: np.ndarray, j: int = 1, *, strategy: str = "best",
                           **kw) -> ConformingSolution:
    """Conforming upper bound λ_C(j) and field u_C(j).

    ``strategy``: ``"average"`` uses the nodal average of R_h u_h (j = 1 only),
    ``"galerkin"`` the conforming eigensolve, and ``"best"`` (default) computes both
    for j = 1 and keeps the smaller Rayleigh quotient.  A conforming space with
    fewer than ``j`` free dofs gives λ_C = ∞.
    """
    if strategy not in ("best", "average", "galerkin"):
        raise ValueError("strategy must be 'best', 'average' or 'galerkin'")
    lag = lagrange_for(space)
    if len(lag.free) < j:
        return ConformingSolution(np.full(j, np.inf), np.zeros((lag.n_dofs, j)), lag, "empty")
    mats = lag.matrices(space.spec)
    avg = None
    if j == 1 and strategy in ("best", "average"):
        try:
            avg = nodal_average_upper_bound(space, u_h, matrices=mats)
        except SpectralError:
            avg = None
        if strategy == "average" and avg is not None:
            return avg
    gal = conforming_eigensolve(space, j, u_h, matrices=mats, **kw)
    if avg is not None and avg.eigenvalues[0] <= gal.eigenvalues[0]:
        return avg
    return gal
