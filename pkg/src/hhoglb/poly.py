"""Quadrature rules, orthonormal polynomial bases on triangles and edges, L2 projections.

Cell bases are built from monomials in the scaled coordinates ``(x - x_K) / h_K``,
ordered by total degree, and orthonormalized by a Cholesky factorization of the
Gram matrix.  The result is hierarchical: the first ``dim P_k`` functions of the
degree-``p`` basis span ``P_k``, so projections onto lower degrees are truncations.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_DEGREE = 6
MAX_QUADRATURE_DEGREE = 40


def dim_cell(k: int) -> int:
    return (k + 1) * (k + 2) // 2


def dim_edge(k: int) -> int:
    return k + 1


@lru_cache(maxsize=None)
def exponents(k: int) -> np.ndarray:
    """Monomial exponents ``(a, b)`` of ``x^a y^b`` with ``a + b <= k``, graded order."""
    return np.array([(d - j, j) for d in range(k + 1) for j in range(d + 1)], dtype=int)


# ---------------------------------------------------------------- quadrature

@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Collapsed Gauss rule on the reference triangle conv{(0,0),(1,0),(0,1)}."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    if degree > MAX_QUADRATURE_DEGREE:
        raise ValueError(f"quadrature degree {degree} exceeds maximum {MAX_QUADRATURE_DEGREE}")
    n = degree // 2 + 1
    s, ws = roots_jacobi(n, 1.0, 0.0)
    t, wt = roots_legendre(n)
    s, ws = (s + 1) / 2, ws / 4
    t, wt = (t + 1) / 2, wt / 2
    S, T = np.meshgrid(s, t, indexing="ij")
    pts = np.stack([(1 - S.ravel()) * T.ravel(), S.ravel()], axis=1)
    w = np.outer(ws, wt).ravel()
    return QuadratureRule(pts, w, degree)


@lru_cache(maxsize=None)
def line_rule(degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1]."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    if degree > MAX_QUADRATURE_DEGREE:
        raise ValueError(f"quadrature degree {degree} exceeds maximum {MAX_QUADRATURE_DEGREE}")
    t, w = roots_legendre(degree // 2 + 1)
    return QuadratureRule((t + 1) / 2, w / 2, degree)


def map_triangle(corners: np.ndarray, rule: QuadratureRule) -> tuple[np.ndarray, np.ndarray]:
    """Physical points (..., nq, 2) and weights (..., nq) for cells with ``corners`` (..., 3, 2)."""
    corners = np.asarray(corners, float)
    p0 = corners[..., 0, :]
    d1 = corners[..., 1, :] - p0
    d2 = corners[..., 2, :] - p0
    X = p0[..., None, :] + rule.points[:, 0, None] * d1[..., None, :] + rule.points[:, 1, None] * d2[..., None, :]
    det = np.abs(d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0])
    return X, det[..., None] * rule.weights


def map_segment(a: np.ndarray, b: np.ndarray, rule: QuadratureRule) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a, float), np.asarray(b, float)
    X = a[..., None, :] + rule.points[:, None] * (b - a)[..., None, :]
    length = np.linalg.norm(b - a, axis=-1)
    return X, length[..., None] * rule.weights


def quadrature_for(domain, degree: int) -> QuadratureRule:
    """Rule for ``domain``: ``"triangle"``/``"interval"`` (reference) or a
    (3, 2) triangle / (2, 2) segment of physical coordinates."""
    if isinstance(domain, str):
        return {"triangle": triangle_rule, "interval": line_rule}[domain](degree)
    pts = np.asarray(domain, float)
    if pts.shape == (3, 2):
        X, w = map_triangle(pts, triangle_rule(degree))
    elif pts.shape == (2, 2):
        X, w = map_segment(pts[0], pts[1], line_rule(degree))
    else:
        raise ValueError("domain must be a triangle (3, 2) or a segment (2, 2)")
    return QuadratureRule(X, w, degree)


# ---------------------------------------------------------------- bases

def _monomials(xi: np.ndarray, k: int) -> np.ndarray:
    e = exponents(k)
    return xi[..., 0, None] ** e[:, 0] * xi[..., 1, None] ** e[:, 1]


def _monomial_grads(xi: np.ndarray, k: int) -> np.ndarray:
    e = exponents(k)
    x, y = xi[..., 0, None], xi[..., 1, None]
    ea, eb = e[:, 0], e[:, 1]
    dx = np.where(ea > 0, ea * x ** np.maximum(ea - 1, 0) * y ** eb, 0.0)
    dy = np.where(eb > 0, eb * x ** ea * y ** np.maximum(eb - 1, 0), 0.0)
    return np.stack([dx, dy], axis=-1)


def _orthonormalize(gram_fn, n: int, batch_shape) -> np.ndarray:
    """Two passes of Cholesky-based Gram-Schmidt; returns coefficients C with phi = C m."""
    C = np.broadcast_to(np.eye(n), batch_shape + (n, n)).copy()
    for _ in range(2):
        G = gram_fn(C)
        try:
            L = np.linalg.cholesky(G)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("Gram factorization failed; degenerate geometry") from exc
        C = np.linalg.solve(L, C)
    return C


class CellBasis:
    """Orthonormal basis of P_k on a batch of triangles.

    ``eval(X)`` takes points of shape (n_cells, nq, 2) and returns (n_cells, nq, dim);
    ``grad(X)`` returns (n_cells, nq, dim, 2).
    """

    def __init__(self, corners: np.ndarray, k: int):
        if k < 0:
            raise ValueError("degree must be non-negative")
        corners = np.asarray(corners, float)
        self.corners = corners
        self.k = k
        self.dim = dim_cell(k)
        self.center = corners.mean(axis=1)
        self.h = np.max(
            [np.linalg.norm(corners[:, (i + 1) % 3] - corners[:, i], axis=1) for i in range(3)], axis=0
        )
        d1, d2 = corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]
        if np.any(np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) <= 1e-10 * self.h ** 2):
            raise np.linalg.LinAlgError("degenerate triangle; Gram factorization not attempted")
        X, w = map_triangle(corners, triangle_rule(2 * k))
        M = _monomials(self._scaled(X), k)

        def gram(C):
            P = np.einsum("cij,cqj->cqi", C, M)
            return np.einsum("cq,cqi,cqj->cij", w, P, P)

        self.coef = _orthonormalize(gram, self.dim, (len(corners),))

    def _scaled(self, X):
        return (X - self.center[:, None, :]) / self.h[:, None, None]

    def eval(self, X: np.ndarray, cells=slice(None)) -> np.ndarray:
        M = _monomials((X - self.center[cells, None, :]) / self.h[cells, None, None], self.k)
        return np.einsum("cij,cqj->cqi", self.coef[cells], M)

    def grad(self, X: np.ndarray, cells=slice(None)) -> np.ndarray:
        h = self.h[cells]
        dM = _monomial_grads((X - self.center[cells, None, :]) / h[:, None, None], self.k)
        return np.einsum("cij,cqjd->cqid", self.coef[cells], dM) / h[:, None, None, None]


@lru_cache(maxsize=None)
def _edge_coef(k: int) -> np.ndarray:
    rule = line_rule(2 * k)
    V = rule.points[:, None] ** np.arange(k + 1)

    def gram(C):
        P = V @ C.T
        return np.einsum("q,qi,qj->ij", rule.weights, P, P)

    return _orthonormalize(gram, k + 1, ())


def edge_eval(t: np.ndarray, k: int) -> np.ndarray:
    """Orthonormal basis of P_k on [0, 1] (unit length) at parameters ``t``; shape t.shape + (k+1,).

    Divide by sqrt(|S|) for the basis orthonormal on an edge of length |S|.
    """
    t = np.asarray(t, float)
    return (t[..., None] ** np.arange(k + 1)) @ _edge_coef(k).T


@dataclass(frozen=True)
class BasisSet:
    domain: str
    degree: int
    dimension: int
    _cell: CellBasis | None = None
    _edge: np.ndarray | None = None

    def __call__(self, points) -> np.ndarray:
        """Basis values at physical points, shape (n, dim)."""
        points = np.asarray(points, float)
        if self.domain == "cell":
            return self._cell.eval(points[None])[0]
        a, b = self._edge
        t = ((points - a) @ (b - a)) / ((b - a) @ (b - a))
        return edge_eval(t, self.degree) / np.sqrt(np.linalg.norm(b - a))

    def gradient(self, points) -> np.ndarray:
        """Basis gradients at points, shape (n, dim, 2) for cells, (n, dim) along the edge."""
        points = np.asarray(points, float)
        if self.domain == "cell":
            return self._cell.grad(points[None])[0]
        a, b = self._edge
        L = np.linalg.norm(b - a)
        t = ((points - a) @ (b - a)) / L ** 2
        pw = np.arange(self.degree + 1)
        dV = np.where(pw > 0, pw * t[:, None] ** np.maximum(pw - 1, 0), 0.0)
        return dV @ _edge_coef(self.degree).T / (L * np.sqrt(L))


def make_basis(domain_geometry, k: int) -> BasisSet:
    """Orthonormal basis of P_k on a triangle ((3, 2) corners) or an edge ((2, 2) endpoints)."""
    if k < 0:
        raise ValueError("degree must be non-negative")
    g = np.asarray(domain_geometry, float)
    if g.shape == (3, 2):
        cb = CellBasis(g[None], k)
        return BasisSet("cell", k, cb.dim, _cell=cb)
    if g.shape == (2, 2):
        return BasisSet("edge", k, k + 1, _edge=g)
    raise ValueError("geometry must be a triangle (3, 2) or an edge (2, 2)")


def project(f, basis: BasisSet, rule: QuadratureRule) -> np.ndarray:
    """Coefficients of the L2 projection of ``f`` onto ``basis`` using a physical ``rule``."""
    vals = np.asarray(f(rule.points), float)
    return np.einsum("q,q...,qi->i...", rule.weights, vals, basis(rule.points))
