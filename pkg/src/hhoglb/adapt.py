"""Refinement indicator, Dörfler marking and the level loop producing GLB histories."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .bounds import BoundConstants, constants_for, default_sigma, embedding_glb
from .conforming import ConformingSolution, conforming_upper_bound
from .hho import HHOSpace, ProblemSpec
from .mesh import Mesh, refine_nvb, refine_uniform
from .spectral import solve_smallest

log = logging.getLogger(__name__)

COLUMNS = ("level", "ndof", "h_max", "sigma", "alpha", "beta", "lambda_h", "glb", "lambda_C", "eta", "certified")


@dataclass
class IndicatorField:
    values: np.ndarray

    @property
    def total(self) -> float:
        return float(self.values.sum())


@dataclass
class GlbReport:
    level: int
    ndof: int
    h_max: float
    sigma: float
    alpha: float
    beta: float
    lambda_h: float
    glb: float
    lambda_C: float
    eta: float
    certified: bool

    def row(self) -> list:
        return [getattr(self, f.name) for f in fields(self)]


@dataclass
class ConvergenceHistory:
    reports: list = field(default_factory=list)
    stop_reason: str = ""
    mesh: Mesh | None = None
    meshes: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.reports], dtype=float)


@dataclass
class AdaptiveConfig:
    family: str = "laplace"
    k: int = 1
    sigma: float | None = None
    refine: str = "adaptive"
    theta: float = 0.5
    j: int = 1
    max_ndof: int = 200_000
    max_levels: int = 40
    mu: float = 1.0
    kappa: float = 1.0
    gamma: float | None = None
    seed: int = 0
    keep_meshes: bool = False

    def __post_init__(self):
        if self.refine not in ("uniform", "adaptive"):
            raise ValueError("refine must be 'uniform' or 'adaptive'")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.j < 1:
            raise ValueError("j must be positive")
        if self.max_ndof < 1 or self.max_levels < 1:
            raise ValueError("caps must be positive")

    def problem_spec(self, sigma: float | None = None) -> ProblemSpec:
        return ProblemSpec(self.family, self.k, sigma=sigma if sigma is not None else self.sigma,
                           mu=self.mu, kappa=self.kappa, gamma=self.gamma)


def estimator(space: HHOSpace, u_h: np.ndarray, conf: ConformingSolution, j: int = 1) -> IndicatorField:
    """η(K) = ‖u_C − R_h u_h‖²_{a_pw(K)} + s_K(u_h, u_h), plus ‖u_C − u_M‖²_K for Steklov."""
    uc = conf.cell_coefficients(j - 1)
    diff = uc - space.reconstruct(u_h)
    eta = space.broken_energy(diff) + space.stabilization_per_cell(u_h)
    if space.spec.family == "steklov":
        eta = eta + ((uc - space.cell_values(u_h)) ** 2).sum(axis=(1, 2))
    return IndicatorField(np.maximum(eta, 0.0))


def doerfler_mark(indicator, theta: float = 0.5) -> np.ndarray:
    """Minimal set of cells with Σ_marked η(K) ≥ θ Σ η(K); ties broken by cell index."""
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    eta = np.asarray(getattr(indicator, "values", indicator), float)
    total = eta.sum()
    if total <= 0:
        return np.array([], dtype=int)
    order = np.lexsort((np.arange(len(eta)), -eta))
    csum = np.cumsum(eta[order])
    n = int(np.searchsorted(csum, theta * total * (1 - 1e-14))) + 1
    return np.sort(order[:n])


def glb_value(consts: BoundConstants, lam: float) -> float:
    if consts.family == "embedding":
        return embedding_glb(lam, consts.inputs["gamma"], consts.sigma)
    return consts.glb(lam)


def solve_level(mesh: Mesh, spec: ProblemSpec, j: int = 1, seed: int = 0):
    """One level: HHO eigenpair, constants, conforming upper bound and indicator."""
    space = HHOSpace(mesh, spec)
    sol = solve_smallest(space.assemble(), j, seed=seed)
    lam = float(sol.eigenvalues[j - 1])
    u = sol.vectors[:, j - 1]
    consts = constants_for(spec.family, mesh, spec, sigma=space.sigma)
    conf = conforming_upper_bound(space, u, j, seed=seed)
    if np.isfinite(conf.eigenvalues[j - 1]):
        ind = estimator(space, u, conf, j)
    else:
        ind = IndicatorField(np.zeros(mesh.n_cells))
    return space, sol, consts, conf, ind, lam


def adaptive_loop(config: AdaptiveConfig, mesh: Mesh, callback=None) -> ConvergenceHistory:
    """Solve, bound, mark and refine until the dof or level cap is reached.

    Uncertified levels (α + βλ_h > 1) are refined uniformly, certified ones by
    Dörfler marking and newest-vertex bisection (or uniformly if configured).
    """
    hist = ConvergenceHistory()
    sigma = config.sigma
    if sigma is None:
        sigma = default_sigma(config.problem_spec(), mesh)
    spec = config.problem_spec(sigma)
    for level in range(config.max_levels):
        space = HHOSpace(mesh, spec)
        if space.dofs.N > config.max_ndof:
            hist.stop_reason = "ndof cap"
            break
        space, sol, consts, conf, ind, lam = solve_level(mesh, spec, config.j, config.seed)
        g = glb_value(consts, lam)
        certified = consts.certified(lam) if spec.family != "embedding" else sigma <= consts.inputs["gamma"]
        rep = GlbReport(level, space.dofs.N, mesh.h_max, sigma, consts.alpha, consts.beta, lam, g,
                        float(conf.eigenvalues[config.j - 1]), ind.total, bool(certified))
        hist.reports.append(rep)
        if config.keep_meshes:
            hist.meshes.append(mesh)
        hist.mesh = mesh
        log.info("level %d ndof %d lambda_h %.10g glb %.10g lambda_C %.10g", level, rep.ndof, lam, g, rep.lambda_C)
        if callback is not None:
            callback(rep, mesh)
        if config.refine == "uniform" or not certified:
            mesh = refine_uniform(mesh)
        else:
            marked = doerfler_mark(ind, config.theta)
            mesh = refine_nvb(mesh, marked) if len(marked) else refine_uniform(mesh)
    else:
        hist.stop_reason = "level cap"
    return hist


def observed_rate(ndof, err, last: int | None = None) -> float:
    """Least-squares slope of log(err) against log(ndof)."""
    x, y = np.log(np.asarray(ndof, float)), np.log(np.asarray(err, float))
    if last is not None:
        x, y = x[-last:], y[-last:]
    return float(np.polyfit(x, y, 1)[0])
