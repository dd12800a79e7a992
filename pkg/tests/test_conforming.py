import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hhoglb.adapt import glb_value
from hhoglb.bounds import constants_for
from hhoglb.conforming import (
    LagrangeSpace, conforming_eigensolve, conforming_upper_bound, embedding_constraint_matrix, lagrange_for,
    remove_rigid_motion,
)
from hhoglb.hho import HHOSpace, ProblemSpec
from hhoglb.mesh import lshape_mesh, refine_uniform, square_mesh, triangle_mesh
from hhoglb.spectral import solve_smallest
from conftest import FAMILIES, family_mesh

LSHAPE = 9.63972384


def _solve(mesh, spec, j=1):
    space = HHOSpace(mesh, spec)
    sol = solve_smallest(space.assemble(), j)
    return space, sol


@settings(max_examples=16, deadline=None)
@given(st.sampled_from(FAMILIES), st.integers(0, 2), st.integers(0, 10_000))
def test_bracketing_random_meshes(family, k, seed):
    mesh = refine_uniform(family_mesh(family, seed))
    spec = ProblemSpec(family, max(k, 1) if family == "elasticity" else k)
    space, sol = _solve(mesh, spec)
    conf = conforming_upper_bound(space, sol.vectors[:, 0])
    consts = constants_for(family, mesh, spec, sigma=space.sigma)
    assert glb_value(consts, sol.eigenvalues[0]) <= conf.eigenvalues[0] * (1 + 1e-10)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_lshape_upper_bound(k):
    mesh = lshape_mesh()
    for _ in range(3):
        mesh = refine_uniform(mesh)
        space, sol = _solve(mesh, ProblemSpec("laplace", k))
        conf = conforming_upper_bound(space, sol.vectors[:, 0])
        assert conf.eigenvalues[0] >= LSHAPE


@pytest.mark.parametrize("family", ["laplace", "elasticity", "embedding"])
def test_interpolated_quotient_equals_lambda_c(family):
    mesh = refine_uniform(family_mesh(family, 4))
    spec = ProblemSpec(family, 1, sigma=0.5 if family == "embedding" else None)
    space, sol = _solve(mesh, spec)
    conf = conforming_upper_bound(space, sol.vectors[:, 0])
    u = space.interpolate_piecewise(conf.cell_coefficients(0))
    P = space.assemble()
    assert (u @ (P.A @ u)) / (u @ (P.B @ u)) == pytest.approx(conf.eigenvalues[0], rel=1e-9)


def test_steklov_quotient_is_at_most_lambda_c():
    mesh = refine_uniform(lshape_mesh("neumann"))
    space, sol = _solve(mesh, ProblemSpec("steklov", 1))
    conf = conforming_upper_bound(space, sol.vectors[:, 0])
    u = space.interpolate_piecewise(conf.cell_coefficients(0))
    P = space.assemble()
    assert (u @ (P.A @ u)) / (u @ (P.B @ u)) <= conf.eigenvalues[0] * (1 + 1e-12)


def test_sign_alignment_positive():
    mesh = refine_uniform(refine_uniform(lshape_mesh()))
    space, sol = _solve(mesh, ProblemSpec("laplace", 1))
    for u_h in (sol.vectors[:, 0], -sol.vectors[:, 0]):
        conf = conforming_upper_bound(space, u_h)
        pair = space.interpolate_piecewise(conf.cell_coefficients(0)) @ (space.b_diagonal * u_h)
        assert pair > 0


def test_strategies_and_higher_index():
    mesh = refine_uniform(refine_uniform(square_mesh()))
    space, sol = _solve(mesh, ProblemSpec("laplace", 1), j=2)
    u = sol.vectors[:, 0]
    avg = conforming_upper_bound(space, u, strategy="average")
    gal = conforming_upper_bound(space, u, strategy="galerkin")
    best = conforming_upper_bound(space, u)
    assert best.eigenvalues[0] == min(avg.eigenvalues[0], gal.eigenvalues[0])
    assert avg.method == "nodal_average" and gal.method == "eigensolve"
    two = conforming_upper_bound(space, sol.vectors[:, 1], j=2)
    assert two.method == "eigensolve" and len(two.eigenvalues) == 2
    assert two.eigenvalues[1] >= sol.eigenvalues[1]
    with pytest.raises(ValueError):
        conforming_upper_bound(space, u, strategy="nope")


def test_no_free_nodes_gives_infinity():
    space, sol = _solve(lshape_mesh(), ProblemSpec("laplace", 0))
    conf = conforming_upper_bound(space, sol.vectors[:, 0])
    assert np.isinf(conf.eigenvalues[0])
    consts = constants_for("laplace", space.mesh, space.spec)
    assert glb_value(consts, sol.eigenvalues[0]) <= conf.eigenvalues[0]


def test_galerkin_matches_known_square_value():
    mesh = square_mesh()
    for _ in range(4):
        mesh = refine_uniform(mesh)
    space = HHOSpace(mesh, ProblemSpec("laplace", 2))
    lam = conforming_eigensolve(space, 1).eigenvalues[0]
    assert lam >= 2 * np.pi ** 2
    assert lam == pytest.approx(2 * np.pi ** 2, rel=1e-6)


def test_embedding_rigid_motion_removal():
    mesh = refine_uniform(triangle_mesh([[0, 0], [1, 0], [0, 1]]))
    lag = LagrangeSpace(mesh, 2, 2, dirichlet=False)
    U = np.random.default_rng(0).normal(size=lag.n_dofs)
    V = remove_rigid_motion(lag, U)
    C = embedding_constraint_matrix(lag)
    assert np.abs(C @ V).max() < 1e-12
    K, _ = lag.matrices(ProblemSpec("embedding", 1))
    assert V @ (K @ V) == pytest.approx(U @ (K @ U), rel=1e-10)


def test_lagrange_interpolates_polynomials():
    mesh = refine_uniform(square_mesh())
    lag = LagrangeSpace(mesh, 3, 1, dirichlet=False)
    xy = np.zeros((lag.n_nodes, 2))
    xy[lag.l2g_nodes.ravel()] = lag.node_coords.reshape(-1, 2)
    p = lambda X: X[..., 0] ** 3 - 2 * X[..., 0] * X[..., 1] ** 2 + 1  # noqa: E731
    coeff = lag.cell_coefficients(p(xy))
    X = lag.node_coords + 0.01
    vals = np.einsum("ncj,nqj->nqc", coeff, lag.basis.eval(X))[..., 0]
    np.testing.assert_allclose(vals, p(X), atol=1e-12)
    np.testing.assert_allclose(lag.nodal_average(coeff), p(xy), atol=1e-12)


def test_lagrange_degree_validation():
    with pytest.raises(ValueError):
        LagrangeSpace(square_mesh(), 0)
    space = HHOSpace(square_mesh(), ProblemSpec("laplace", 2))
    assert lagrange_for(space).p == 3
