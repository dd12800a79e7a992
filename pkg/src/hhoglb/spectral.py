"""Smallest finite eigenvalues of A x = λ B x with A SPD and B positive semidefinite.

The iteration works with the inverse pencil B x = μ A x (μ = 1/λ), so the
B-kernel contributes μ = 0 and infinite eigenvalues never appear.  Linear
constraints C x = 0 are imposed by restriction to ker C.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .hho import AssembledPencil

DENSE_LIMIT = 2500
ORACLE_LIMIT = 2000


class SpectralError(RuntimeError):
    pass


@dataclass
class EigenSolution:
    eigenvalues: np.ndarray
    vectors: np.ndarray  # (N, j), ‖x‖_B = 1
    residuals: np.ndarray
    meta: dict = field(default_factory=dict)


def _as_pencil(pencil_or_A, B=None, constraints=None) -> AssembledPencil:
    if isinstance(pencil_or_A, AssembledPencil):
        return pencil_or_A
    A = sp.csr_matrix(pencil_or_A)
    B = sp.csr_matrix(B)
    active = np.asarray(abs(B).sum(axis=1)).ravel() > 0
    return AssembledPencil(A, B, active, constraints)


def _null_basis(C: np.ndarray, N: int) -> np.ndarray:
    """Orthonormal basis of ker C via a complete QR of Cᵀ."""
    Q, _ = np.linalg.qr(C.T, mode="complete")
    return Q[:, C.shape[0]:]


RESIDUAL_GUARD = 1e-6


def _checked(sol: EigenSolution) -> EigenSolution:
    if np.any(sol.residuals > RESIDUAL_GUARD):
        raise SpectralError(f"eigenpair residuals too large: {sol.residuals.max():.3e}")
    return sol


def _finalize(P: AssembledPencil, lam, X, meta) -> EigenSolution:
    order = np.argsort(lam)
    lam, X = lam[order], X[:, order]
    BX = P.B @ X
    nrm = np.sqrt(np.einsum("ij,ij->j", X, BX))
    X = X / nrm
    BX = BX / nrm
    AX = P.A @ X
    R = AX - BX * lam
    C = P.constraints
    if C is not None and len(C):
        # the residual of a constrained pair lies in range(Cᵀ) (Lagrange multipliers); drop that part
        R = R - C.T @ np.linalg.lstsq(C.T, R, rcond=None)[0]
        AX = AX - C.T @ np.linalg.lstsq(C.T, AX, rcond=None)[0]
    res = np.linalg.norm(R, axis=0) / np.maximum(np.linalg.norm(AX, axis=0), 1e-300)
    return EigenSolution(lam, X, res, meta)


def solve_smallest(pencil, j: int = 1, tol: float = 1e-10, seed: int = 0, *, B=None, dense: bool | None = None) -> EigenSolution:
    """The ``j`` smallest finite eigenpairs, B-normalized and in ascending order.

    Accepts an :class:`AssembledPencil` or a pair of matrices ``(A, B)``.
    """
    P = _as_pencil(pencil, B)
    N = P.N
    if j < 1:
        raise ValueError("j must be positive")
    if j > P.n_finite:
        raise SpectralError(f"requested {j} eigenvalues but only {P.n_finite} are finite")
    C = P.constraints
    use_dense = dense if dense is not None else N <= DENSE_LIMIT or j >= P.n_finite - 1
    meta = {"N": N, "tol": tol, "seed": seed}

    if use_dense:
        A = P.A.toarray()
        Bm = P.B.toarray()
        if C is not None and len(C):
            Z = _null_basis(C, N)
            A, Bm = Z.T @ A @ Z, Z.T @ Bm @ Z
        else:
            Z = None
        n = A.shape[0]
        try:
            mu, Y = sla.eigh(Bm, A, subset_by_index=[n - j, n - 1])
        except np.linalg.LinAlgError as exc:
            raise SpectralError("factorization of A failed (not positive definite)") from exc
        X = Y if Z is None else Z @ Y
        meta["method"] = "dense"
        return _finalize(P, 1.0 / mu[::-1], X[:, ::-1], meta)

    A = P.A.tocsc()
    rng = np.random.default_rng(seed)
    ncv = min(N, max(2 * j + 1, j + 20))
    if C is not None and len(C):
        # Lanczos in coordinates of ker C: x = Z w with Z from Householder reflectors of Cᵀ
        m = C.shape[0]
        Z = HouseholderNullSpace(C)
        lu = _factor(sp.bmat([[A, sp.csc_matrix(C.T)], [sp.csc_matrix(C), None]], format="csc"), symmetric=False)
        n = N - m
        Ar = spla.LinearOperator((n, n), matvec=lambda w: Z.T(A @ Z(w)), dtype=float)
        Br = spla.LinearOperator((n, n), matvec=lambda w: Z.T(P.B @ Z(w)), dtype=float)

        def solve(y):
            return Z.T(lu.solve(np.concatenate([Z(y), np.zeros(m)]))[:N])

        Minv = spla.LinearOperator((n, n), matvec=solve, dtype=float)
        v0 = solve(Br @ rng.standard_normal(n))
        try:
            mu, W = spla.eigsh(Br, k=j, M=Ar, Minv=Minv, which="LA", v0=v0, tol=tol * 1e-2,
                               ncv=min(n, ncv), maxiter=5000)
        except spla.ArpackNoConvergence as exc:
            raise SpectralError("eigensolver did not converge") from exc
        X = np.column_stack([Z(w) for w in W.T])
        meta["method"] = "lanczos"
        return _checked(_finalize(P, 1.0 / mu, X, meta))

    lu = _factor(A)
    Minv = spla.LinearOperator((N, N), matvec=lu.solve, dtype=float)
    v0 = lu.solve(P.B @ rng.standard_normal(N))
    try:
        mu, X = spla.eigsh(P.B, k=j, M=P.A, Minv=Minv, which="LA", v0=v0, tol=tol * 1e-2, ncv=ncv, maxiter=5000)
    except spla.ArpackNoConvergence as exc:
        raise SpectralError("eigensolver did not converge") from exc
    meta["method"] = "lanczos"
    return _checked(_finalize(P, 1.0 / mu, X, meta))


class HouseholderNullSpace:
    """Orthonormal basis Z of ker C applied implicitly (C has few rows).

    With Cᵀ = Q R by Householder reflectors, Z consists of the last N - m columns of Q.
    """

    def __init__(self, C: np.ndarray):
        M = np.array(C, float).T
        self.m = M.shape[1]
        self.N = M.shape[0]
        self.vs = []
        for i in range(self.m):
            x = M[i:, i]
            v = x.copy()
            v[0] += np.copysign(np.linalg.norm(x), x[0] if x[0] != 0 else 1.0)
            v /= np.linalg.norm(v)
            M[i:, :] -= 2.0 * np.outer(v, v @ M[i:, :])
            self.vs.append(v)

    def __call__(self, w: np.ndarray) -> np.ndarray:
        x = np.concatenate([np.zeros(self.m), w])
        for i in reversed(range(self.m)):
            v = self.vs[i]
            x[i:] -= 2.0 * v * (v @ x[i:])
        return x

    def T(self, x: np.ndarray) -> np.ndarray:
        y = np.array(x, float)
        for i, v in enumerate(self.vs):
            y[i:] -= 2.0 * v * (v @ y[i:])
        return y[self.m:]


def _factor(M, symmetric: bool = True):
    """Sparse LU; diagonal pivoting for SPD matrices, partial pivoting for saddle-point systems."""
    opts = dict(permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True}) if symmetric else {}
    try:
        return spla.splu(M.tocsc(), **opts)
    except RuntimeError as exc:
        raise SpectralError(f"factorization failed: {exc}") from exc


def dense_oracle(pencil, B=None) -> np.ndarray:
    """All finite eigenvalues by dense Schur-complement reduction onto the B-range."""
    P = _as_pencil(pencil, B)
    if P.N > ORACLE_LIMIT:
        raise ValueError(f"dense oracle limited to {ORACLE_LIMIT} dofs (got {P.N})")
    A = P.A.toarray()
    Bm = P.B.toarray()
    if P.constraints is not None and len(P.constraints):
        Z = sla.null_space(P.constraints)
        A, Bm = Z.T @ A @ Z, Z.T @ Bm @ Z
        d, U = np.linalg.eigh(Bm)
        A = U.T @ A @ U
        rng_mask = d > 1e-12 * d.max()
        Bd = d[rng_mask]
    else:
        rng_mask = np.diag(Bm) > 0
        if not np.allclose(Bm, np.diag(np.diag(Bm))):
            d, U = np.linalg.eigh(Bm)
            A = U.T @ A @ U
            rng_mask = d > 1e-12 * d.max()
            Bd = d[rng_mask]
        else:
            Bd = np.diag(Bm)[rng_mask]
    a, k = rng_mask, ~rng_mask
    S = A[np.ix_(a, a)]
    if k.any():
        S = S - A[np.ix_(a, k)] @ np.linalg.solve(A[np.ix_(k, k)], A[np.ix_(k, a)])
    return sla.eigh(0.5 * (S + S.T), np.diag(Bd), eigvals_only=True)
