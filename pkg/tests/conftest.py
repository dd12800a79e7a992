"""Shared fixtures: random small meshes, smooth test fields and the acceptance summary."""
from __future__ import annotations

import numpy as np
import pytest
from scipy.spatial import Delaunay

from hhoglb.mesh import MeshError, build_mesh, square_mesh

ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def _boundary_pairs(cells):
    pairs = np.sort(np.concatenate([cells[:, [1, 2]], cells[:, [2, 0]], cells[:, [0, 1]]]), axis=1)
    uniq, counts = np.unique(pairs, axis=0, return_counts=True)
    return uniq[counts == 1]


def random_mesh(seed: int, n_cells=(2, 8), tag="dirichlet", min_angle_deg=12.0, tag_fn=None):
    """Delaunay mesh of the unit square's corners plus random interior points.

    The cell count lies in ``n_cells``; slivers are rejected by resampling.
    """
    rng = np.random.default_rng(seed)
    corners = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    for _ in range(500):
        n_in = rng.integers(0, 4)
        pts = np.vstack([corners, 0.1 + 0.8 * rng.random((n_in, 2))])
        if rng.random() < 0.5:
            pts = np.vstack([pts, [[rng.uniform(0.25, 0.75), 0.0]]])
        tri = Delaunay(pts)
        cells = tri.simplices.copy()
        p = pts[cells]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        flip = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
        cells[flip] = cells[flip][:, [0, 2, 1]]
        if not n_cells[0] <= len(cells) <= n_cells[1]:
            continue
        p = pts[cells]
        ang = []
        for i in range(3):
            a, b = p[:, (i + 1) % 3] - p[:, i], p[:, (i + 2) % 3] - p[:, i]
            cos = (a * b).sum(1) / np.linalg.norm(a, axis=1) / np.linalg.norm(b, axis=1)
            ang.append(np.degrees(np.arccos(np.clip(cos, -1, 1))))
        if np.min(ang) < min_angle_deg:
            continue
        tags = {(int(a), int(b)): (tag_fn(pts[a], pts[b]) if tag_fn else tag) for a, b in _boundary_pairs(cells)}
        try:
            return build_mesh(pts, cells, tags)
        except MeshError:
            continue
    raise RuntimeError("could not sample a mesh")


def clamped_left(a, b):
    return "dirichlet" if a[0] == 0 and b[0] == 0 else "neumann"


def family_mesh(family: str, seed: int, n_cells=(2, 8)):
    """A random mesh with boundary conditions suited to ``family``."""
    if family == "laplace":
        return random_mesh(seed, n_cells, "dirichlet")
    if family == "elasticity":
        return random_mesh(seed, n_cells, tag_fn=clamped_left)
    return random_mesh(seed, n_cells, "neumann")


class Field:
    """Smooth random scalar or vector field with analytic gradient.

    Each component is Σ_i a_i sin(ω_i·x + φ_i) (+ optional bubble factor that vanishes
    on the whole boundary of the unit square).
    """

    def __init__(self, seed: int, n_components: int = 1, terms: int = 3, freq: float = 2.0, bubble=False):
        rng = np.random.default_rng(seed)
        self.c = n_components
        self.a = rng.normal(size=(n_components, terms))
        self.w = rng.normal(scale=freq, size=(n_components, terms, 2))
        self.phi = rng.uniform(0, 2 * np.pi, size=(n_components, terms))
        self.bubble = bubble

    def _parts(self, X):
        arg = np.einsum("...m,ctm->...ct", X, self.w) + self.phi
        s = (self.a * np.sin(arg)).sum(-1)
        g = np.einsum("ct,...ct,ctm->...cm", self.a, np.cos(arg), self.w)
        return s, g

    def _bubble(self, X):
        x, y = X[..., 0], X[..., 1]
        b = x * (1 - x) * y * (1 - y)
        gb = np.stack([(1 - 2 * x) * y * (1 - y), x * (1 - x) * (1 - 2 * y)], -1)
        return b, gb

    def value(self, X):
        s, _ = self._parts(X)
        if self.bubble:
            s = s * self._bubble(X)[0][..., None]
        return s[..., 0] if self.c == 1 else s

    def grad(self, X):
        s, g = self._parts(X)
        if self.bubble:
            b, gb = self._bubble(X)
            g = g * b[..., None, None] + s[..., None] * gb[..., None, :]
        return g[..., 0, :] if self.c == 1 else g


FAMILIES = ("laplace", "steklov", "elasticity", "embedding")


@pytest.fixture
def unit_square():
    return square_mesh()
