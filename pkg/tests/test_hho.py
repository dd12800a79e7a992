import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from hhoglb import hho
from hhoglb.bounds import c_tr, constants_for
from hhoglb.conforming import lagrange_for
from hhoglb.hho import HHOSpace, ProblemSpec, boundary_weight, domain_diameter
from hhoglb.mesh import MeshError, refine_uniform, square_mesh
from hhoglb.poly import CellBasis, line_rule, map_triangle, triangle_rule
from conftest import FAMILIES, Field, family_mesh, random_mesh

QUAD = 20


def _spec(family, k, **kw):
    return ProblemSpec(family, max(k, 1) if family == "elasticity" else k, **kw)


def _field(family, seed):
    c = 2 if family in ("elasticity", "embedding") else 1
    return Field(seed, c, bubble=family in ("laplace", "elasticity"))


# -- quadrature oracles for continuous norms ---------------------------------------

def _energy_density(spec, G):
    """Energy density of a gradient G (..., 2) or (..., c, 2) for the family's flux tensor."""
    if spec.n_components == 1:
        return (G ** 2).sum(-1)
    c1, c2, c3 = spec.flux_coefficients
    tr = G[..., 0, 0] + G[..., 1, 1]
    return c1 * (G ** 2).sum((-1, -2)) + c2 * np.einsum("...ab,...ba->...", G, G) + c3 * tr ** 2


def _as_vec(vals, c):
    return vals[..., None] if c == 1 else vals


def continuous_norms(space, f):
    """‖v‖²_a, ‖v‖²_b and ‖v − G_h v‖²_{a_pw} by quadrature on the space's rules."""
    m, spec, c = space.mesh, space.spec, space.c
    X, w = space.cell_quadrature(np.arange(m.n_cells))
    V = _as_vec(f.value(X), c)
    Gv = f.grad(X)
    a = np.sum(w * _energy_density(spec, Gv))
    if spec.family == "steklov":
        a += np.sum(w[..., None] * V ** 2)
    G = space.galerkin_projection(f.value, f.grad)
    gG = space.grad_polynomial(G, X)
    diff = Gv - (gG[..., 0, :] if c == 1 else gG)
    apw = np.sum(w * _energy_density(spec, diff))
    be = m.boundary_edges
    Xs, ws, _ = space.edge_points(be)
    Vs = _as_vec(f.value(Xs), c)
    if spec.family in ("laplace", "elasticity"):
        b = np.sum(w[..., None] * V ** 2)
    elif spec.family == "steklov":
        b = np.sum(ws[..., None] * Vs ** 2)
    else:
        b = np.sum(w[..., None] * V ** 2) / domain_diameter(m) ** 2
        b += np.sum((ws / boundary_weight(m)[:, None])[..., None] * Vs ** 2)
    return a, b, apw


def discrete_norms(space, u):
    P = space.assemble()
    s = space.stabilization_per_cell(u).sum()
    return float(u @ (P.A @ u)) - s, s, float(u @ (P.B @ u))


# -- 6a: R ∘ I = G -----------------------------------------------------------------

@settings(max_examples=12, deadline=None)
@given(st.sampled_from(FAMILIES), st.integers(0, 3), st.integers(0, 10_000))
def test_reconstruction_of_interpolation_is_galerkin_projection(family, k, seed):
    mesh = family_mesh(family, seed)
    space = HHOSpace(mesh, _spec(family, k), quad_degree=QUAD)
    f = _field(family, seed)
    RI = space.reconstruct(space.interpolate(f.value))
    G = space.galerkin_projection(f.value, f.grad)
    assert np.abs(RI - G).max() <= 1e-8 * max(1.0, np.abs(G).max())


@pytest.mark.parametrize("family", ["steklov", "embedding"])
def test_reconstruction_reproduces_polynomials(family):
    # families without strong Dirichlet data: a global P_{k+1} polynomial is reproduced exactly
    mesh = random_mesh(5)
    spec = _spec(family, 2)
    space = HHOSpace(mesh, spec, quad_degree=QUAD)
    ref = CellBasis(mesh.corners[:1], spec.recon_degree)
    coeff = np.random.default_rng(1).normal(size=(space.c, space.dr))

    def p(Y):
        vals = np.einsum("cj,nqj->nqc", coeff, ref.eval(Y.reshape(1, -1, 2))).reshape(Y.shape[:-1] + (space.c,))
        return vals[..., 0] if space.c == 1 else vals

    u = space.interpolate(p)
    X, _ = map_triangle(mesh.corners, triangle_rule(2 * spec.recon_degree))
    vals = space.eval_polynomial(space.reconstruct(u), X)
    np.testing.assert_allclose(vals[..., 0] if space.c == 1 else vals, p(X), atol=1e-9)
    assert space.stabilization_per_cell(u).max() < 1e-20 + 1e-12 * (u @ u)


# -- 6b: conforming identity -------------------------------------------------------

@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("k", [0, 1, 2])
def test_conforming_identity(family, k):
    mesh = family_mesh(family, 11 + k, (4, 8))
    spec = _spec(family, k)
    space = HHOSpace(mesh, spec)
    lag = lagrange_for(space)
    K, M = lag.matrices(spec)
    P = space.assemble()
    rng = np.random.default_rng(k)
    for _ in range(20):
        U = lag.expand(rng.normal(size=len(lag.free)))
        u = space.interpolate_piecewise(lag.cell_coefficients(U))
        ah, vc_a = u @ (P.A @ u), U @ (K @ U)
        bh, vc_b = u @ (P.B @ u), U @ (M @ U)
        if family == "steklov":
            # the cell mass in a_h only sees Π_k v_C
            assert ah <= vc_a * (1 + 1e-9)
        else:
            assert ah == pytest.approx(vc_a, rel=1e-9)
        assert bh == pytest.approx(vc_b, rel=1e-9)


# -- 6c / 6d: coercivity and finite-eigenvalue count ----------------------------------

def _constrained(P):
    A, B = P.A.toarray(), P.B.toarray()
    if P.constraints is not None:
        Z = sla.null_space(P.constraints)
        A, B = Z.T @ A @ Z, Z.T @ B @ Z
    return A, B


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(FAMILIES), st.integers(0, 3), st.integers(0, 10_000))
def test_coercivity(family, k, seed):
    mesh = family_mesh(family, seed)
    P = HHOSpace(mesh, _spec(family, k)).assemble()
    A, _ = _constrained(P)
    ev = np.linalg.eigvalsh(A)
    assert ev[0] > 1e-12 * ev[-1]


def expected_finite_count(mesh, spec):
    c = spec.n_components
    from hhoglb.poly import dim_cell

    if spec.family in ("laplace", "elasticity"):
        return c * mesh.n_cells * dim_cell(spec.recon_degree)
    if spec.family == "steklov":
        return len(mesh.boundary_edges) * (spec.k + 2)
    return c * mesh.n_cells * dim_cell(spec.k + 1) + c * len(mesh.boundary_edges) * (spec.k + 2) - 3


@settings(max_examples=12, deadline=None)
@given(st.sampled_from(FAMILIES), st.integers(0, 2), st.integers(0, 10_000))
def test_finite_eigenvalue_count(family, k, seed):
    from hhoglb.spectral import dense_oracle

    mesh = family_mesh(family, seed)
    spec = _spec(family, k)
    P = HHOSpace(mesh, spec).assemble()
    n = expected_finite_count(mesh, spec)
    assert P.n_finite == n
    assert len(dense_oracle(P)) == n
    # generalized eigenvalues of the full pencil: exactly n finite ones
    A, B = _constrained(P)
    mu = sla.eigh(B, A, eigvals_only=True)
    assert np.sum(mu > 1e-12 * mu.max()) == n


# -- 6e: trace inequality -----------------------------------------------------------

def test_trace_inequality_sampling():
    rng = np.random.default_rng(2024)
    ct = c_tr()
    worst = 0.0
    for trial in range(50):
        mesh = random_mesh(trial, (2, 8))
        cell = trial % mesh.n_cells
        tri = mesh.corners[cell:cell + 1]
        k = 1 + trial % 5
        cb = CellBasis(tri, k)
        coeff = rng.normal(size=cb.dim)
        coeff[0] = 0.0  # zero mean: first orthonormal function is the constant
        X, w = map_triangle(tri, triangle_rule(2 * k))
        grad2 = np.sum(w * (np.einsum("j,nqjm->nqm", coeff, cb.grad(X)) ** 2).sum(-1))
        rule = line_rule(2 * k)
        lhs = 0.0
        for s in range(3):
            a, b = tri[0, (s + 1) % 3], tri[0, (s + 2) % 3]
            Xs = (a + rule.points[:, None] * (b - a))[None]
            vals = np.einsum("j,nqj->nq", coeff, cb.eval(Xs))
            lhs += np.linalg.norm(b - a) * np.sum(rule.weights * vals[0] ** 2) / mesh.ell[cell, s]
        worst = max(worst, lhs / grad2)
        assert lhs <= ct * grad2 * (1 + 1e-12)
    assert worst > 0


# -- 6f: Assumptions A, B, C ----------------------------------------------------------

@settings(max_examples=16, deadline=None)
@given(st.sampled_from(FAMILIES), st.integers(0, 2), st.integers(0, 10_000))
def test_assumptions(family, k, seed):
    mesh = family_mesh(family, seed)
    spec = _spec(family, k)
    space = HHOSpace(mesh, spec, quad_degree=QUAD)
    consts = constants_for(family, mesh, spec, sigma=space.sigma)
    f = _field(family, seed)
    u = space.interpolate(f.value)
    ah, sh, bh = discrete_norms(space, u)
    a, b, apw = continuous_norms(space, f)
    # A: a-orthogonality (equality for laplace)
    assert ah <= a - apw + 1e-8
    if family == "laplace":
        assert ah == pytest.approx(a - apw, rel=1e-8, abs=1e-10)
    # B: scaling of the stabilization
    assert sh <= consts.alpha * apw + 1e-8
    # C: b-orthogonality
    assert bh >= b - consts.beta * apw - 1e-8


# -- structure ------------------------------------------------------------------------

@pytest.mark.parametrize("family", FAMILIES)
def test_matrix_symmetry_and_b_form(family):
    mesh = family_mesh(family, 3)
    P = HHOSpace(mesh, _spec(family, 2)).assemble()
    for M in (P.A, P.B):
        D = (M - M.T).tocsr()
        assert (abs(D).max() if D.nnz else 0.0) < 1e-12 * abs(M).max()
    assert np.all(P.B.diagonal() >= 0)


def test_threaded_assembly_matches(monkeypatch):
    mesh = refine_uniform(refine_uniform(square_mesh()))
    spec = ProblemSpec("laplace", 1)
    monkeypatch.setattr(hho, "CHUNK", 8)
    serial = HHOSpace(mesh, spec).assemble().A
    monkeypatch.setenv("NTRI_THREADS", "3")
    threaded = HHOSpace(mesh, spec).assemble().A
    assert abs(serial - threaded).max() == 0.0


def test_functional_api():
    mesh = random_mesh(4)
    spec = ProblemSpec("laplace", 1)
    R = hho.local_reconstruction(mesh, spec, 0)
    S = hho.local_stabilization(mesh, spec, 0)
    space = HHOSpace(mesh, spec)
    np.testing.assert_allclose(R, space.local.R[0])
    np.testing.assert_allclose(S, space.local.S[0])
    P = hho.assemble(mesh, spec)
    assert P.N == space.dofs.N
    f = Field(0, bubble=True)
    np.testing.assert_allclose(hho.interpolate(f.value, mesh, spec), space.interpolate(f.value))


@pytest.mark.parametrize("kw", [
    dict(family="wave"), dict(k=-1), dict(k=9), dict(family="elasticity", k=0), dict(sigma=0.0),
    dict(mu=-1.0), dict(gamma=0.0), dict(energy="eps"),
])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        ProblemSpec(**kw)


def test_missing_dirichlet_boundary():
    with pytest.raises(MeshError):
        HHOSpace(square_mesh("neumann"), ProblemSpec("laplace", 1))


def test_degrees_per_family():
    assert (ProblemSpec("laplace", 1).cell_degree, ProblemSpec("laplace", 1).edge_degree) == (2, 1)
    assert (ProblemSpec("steklov", 1).cell_degree, ProblemSpec("steklov", 1).edge_degree) == (1, 2)
    assert ProblemSpec("elasticity", 1).flux_coefficients == (1.0, 1.0, 1.0)
    assert ProblemSpec("embedding", 1).flux_coefficients == (0.5, 0.5, 0.0)
    assert ProblemSpec("elasticity", 1, mu=0.5).stab_scale == 1.0
    assert math.isclose(ProblemSpec("embedding", 1, energy="grad").flux_coefficients[0], 1.0)
