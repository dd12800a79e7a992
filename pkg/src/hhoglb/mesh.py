"""Triangular meshes: connectivity, cell geometry, red and newest-vertex-bisection refinement.

Cells are stored counter-clockwise as ``(v0, v1, v2)`` where ``v0`` is the newest
vertex and ``(v1, v2)`` is the refinement edge.  Local edge ``i`` of a cell is the
edge opposite local vertex ``i``, so local edge 0 is always the refinement edge.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

INTERIOR, DIRICHLET, NEUMANN = 0, 1, 2
TAG_NAMES = {DIRICHLET: "dirichlet", NEUMANN: "neumann"}
TAG_CODES = {v: k for k, v in TAG_NAMES.items()}


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    cells: np.ndarray
    edges: np.ndarray
    cell_edges: np.ndarray
    edge_cells: np.ndarray
    edge_tags: np.ndarray
    parent: np.ndarray | None = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_cells[:, 1] < 0)

    @cached_property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_cells[:, 1] >= 0)

    @cached_property
    def corners(self) -> np.ndarray:
        """Vertex coordinates per cell, shape (n_cells, 3, 2)."""
        return self.vertices[self.cells]

    @cached_property
    def area(self) -> np.ndarray:
        p = self.corners
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def local_edge_lengths(self) -> np.ndarray:
        p = self.corners
        return np.stack(
            [np.linalg.norm(p[:, (i + 2) % 3] - p[:, (i + 1) % 3], axis=1) for i in range(3)],
            axis=1,
        )

    @cached_property
    def diameter(self) -> np.ndarray:
        return self.local_edge_lengths.max(axis=1)

    @property
    def h_max(self) -> float:
        return float(self.diameter.max())

    @cached_property
    def centroid(self) -> np.ndarray:
        return self.corners.mean(axis=1)

    @cached_property
    def local_normals(self) -> np.ndarray:
        """Outward unit normals per cell and local edge, shape (n_cells, 3, 2)."""
        p = self.corners
        out = np.empty((self.n_cells, 3, 2))
        for i in range(3):
            d = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
            out[:, i, 0], out[:, i, 1] = d[:, 1], -d[:, 0]
        return out / self.local_edge_lengths[:, :, None]

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        e = self.vertices[self.edges]
        return np.linalg.norm(e[:, 1] - e[:, 0], axis=1)

    @cached_property
    def edge_normals(self) -> np.ndarray:
        """Fixed normal per edge: the outward normal of its first ("+") cell."""
        c = self.edge_cells[:, 0]
        loc = np.argmax(self.cell_edges[c] == np.arange(self.n_edges)[:, None], axis=1)
        return self.local_normals[c, loc]

    @cached_property
    def sub_areas(self) -> np.ndarray:
        """Areas of conv{x_K, S} for the centroid x_K; equal to |K|/3 on triangles."""
        return np.repeat(self.area[:, None] / 3.0, 3, axis=1)

    @cached_property
    def ell(self) -> np.ndarray:
        """Edge weights |S| h_K^2 / |K_S|, shape (n_cells, 3)."""
        return self.local_edge_lengths * self.diameter[:, None] ** 2 / self.sub_areas

    @cached_property
    def incenter(self) -> np.ndarray:
        lens = self.local_edge_lengths
        return np.einsum("ci,cij->cj", lens, self.corners) / lens.sum(axis=1)[:, None]

    @cached_property
    def inradius(self) -> np.ndarray:
        return 2.0 * self.area / self.local_edge_lengths.sum(axis=1)

    @cached_property
    def rho(self) -> np.ndarray:
        """Inradius over the largest incenter-vertex distance, per cell."""
        far = np.linalg.norm(self.corners - self.incenter[:, None, :], axis=2).max(axis=1)
        return self.inradius / far

    @cached_property
    def domain_area(self) -> float:
        return float(self.area.sum())

    def boundary_tag_map(self) -> dict[tuple[int, int], str]:
        return {
            (int(a), int(b)): TAG_NAMES[int(t)]
            for (a, b), t in zip(self.edges[self.boundary_edges], self.edge_tags[self.boundary_edges])
        }

    def tagged_edges(self, tag: int) -> np.ndarray:
        return np.flatnonzero(self.edge_tags == tag)

    def is_conforming(self) -> bool:
        """No vertex lies strictly inside a one-sided edge (i.e. no hanging node)."""
        if np.any(self.edge_cells[:, 0] < 0):
            return False
        e = self.vertices[self.edges[self.boundary_edges]]
        a, d = e[:, 0], e[:, 1] - e[:, 0]
        L2 = (d ** 2).sum(axis=1)
        for start in range(0, len(a), 256):
            r = self.vertices[None, :, :] - a[start:start + 256, None, :]
            dd = d[start:start + 256, None, :]
            t = (r * dd).sum(-1) / L2[start:start + 256, None]
            cross = r[..., 0] * dd[..., 1] - r[..., 1] * dd[..., 0]
            inside = (t > 1e-12) & (t < 1 - 1e-12) & (np.abs(cross) <= 1e-12 * L2[start:start + 256, None])
            if inside.any():
                return False
        return True


def _normalize_tags(boundary_tags) -> dict[tuple[int, int], int]:
    if isinstance(boundary_tags, Mapping):
        items = boundary_tags.items()
    else:
        items = (((a, b), t) for a, b, t in boundary_tags)
    out = {}
    for (a, b), t in items:
        if isinstance(t, str) and t not in TAG_CODES:
            raise MeshError(f"unknown boundary tag {t!r}")
        code = TAG_CODES[t] if isinstance(t, str) else int(t)
        if code not in TAG_NAMES:
            raise MeshError(f"unknown boundary tag {t!r}")
        out[(min(int(a), int(b)), max(int(a), int(b)))] = code
    return out


def _longest_edge_first(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Rotate each cell so local edge 0 (opposite v0) is its longest edge.

    Ties go to the candidate whose opposite vertex has the smallest global index.
    """
    p = vertices[cells]
    lens = np.stack([np.linalg.norm(p[:, (i + 2) % 3] - p[:, (i + 1) % 3], axis=1) for i in range(3)], 1)
    longest = lens.max(axis=1, keepdims=True)
    cand = np.isclose(lens, longest, rtol=1e-12, atol=0.0)
    key = np.where(cand, cells, np.iinfo(np.int64).max)
    first = np.argmin(key, axis=1)
    idx = (first[:, None] + np.arange(3)[None, :]) % 3
    return np.take_along_axis(cells, idx, axis=1)


def build_mesh(vertices, cells, boundary_tags, *, relabel: bool = True, parent=None) -> Mesh:
    """Build a mesh from coordinates, counter-clockwise cells and boundary-edge tags.

    ``boundary_tags`` maps vertex pairs to ``"dirichlet"``/``"neumann"`` (a mapping or
    an iterable of ``(i, j, tag)``).  With ``relabel`` the refinement edge of every cell
    is reset to its longest edge; otherwise the given vertex order is kept.
    """
    vertices = np.ascontiguousarray(vertices, dtype=float)
    cells = np.ascontiguousarray(cells, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("vertices must have shape (n, 2)")
    if cells.ndim != 2 or cells.shape[1] != 3:
        raise MeshError("cells must have shape (m, 3)")
    if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
        raise MeshError("cell vertex index out of range")
    if relabel:
        cells = _longest_edge_first(vertices, cells)

    p = vertices[cells]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    area2 = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    scale = np.maximum(np.linalg.norm(d1, axis=1), np.linalg.norm(d2, axis=1)) ** 2
    bad = np.flatnonzero(area2 <= 1e-14 * scale)
    if bad.size:
        raise MeshError(f"inverted or degenerate cells: {bad[:10].tolist()}")

    nc = len(cells)
    local = np.stack([cells[:, [(i + 1) % 3, (i + 2) % 3]] for i in range(3)], axis=1)
    pairs = np.sort(local.reshape(-1, 2), axis=1)
    edges, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        raise MeshError("non-manifold edge with more than two cells")
    cell_edges = inverse.reshape(nc, 3)

    owner = np.repeat(np.arange(nc), 3)
    order = np.lexsort((owner, inverse))
    edge_cells = np.full((len(edges), 2), -1, dtype=np.int64)
    first = np.ones(len(order), bool)
    first[1:] = inverse[order][1:] != inverse[order][:-1]
    edge_cells[inverse[order][first], 0] = owner[order][first]
    edge_cells[inverse[order][~first], 1] = owner[order][~first]

    tags = _normalize_tags(boundary_tags)
    edge_tags = np.zeros(len(edges), dtype=np.int8)
    boundary = np.flatnonzero(edge_cells[:, 1] < 0)
    bset = {(int(a), int(b)) for a, b in edges[boundary]}
    missing = bset - tags.keys()
    if missing:
        raise MeshError(f"untagged boundary edges: {sorted(missing)[:5]}")
    extra = tags.keys() - bset
    if extra:
        raise MeshError(f"tags given for non-boundary edges: {sorted(extra)[:5]}")
    lookup = {(int(a), int(b)): e for e, (a, b) in zip(boundary, edges[boundary])}
    for key, code in tags.items():
        edge_tags[lookup[key]] = code

    return Mesh(vertices, cells, edges, cell_edges, edge_cells, edge_tags,
                None if parent is None else np.asarray(parent, dtype=np.int64))


@dataclass(frozen=True)
class CellGeometry:
    diameter: float
    area: float
    centroid: np.ndarray
    edge_lengths: np.ndarray
    sub_areas: np.ndarray
    ell: np.ndarray
    incenter: np.ndarray
    inradius: float
    rho: float


def geometry(mesh: Mesh, cell: int) -> CellGeometry:
    if not 0 <= cell < mesh.n_cells:
        raise IndexError(cell)
    return CellGeometry(
        diameter=float(mesh.diameter[cell]),
        area=float(mesh.area[cell]),
        centroid=mesh.centroid[cell].copy(),
        edge_lengths=mesh.local_edge_lengths[cell].copy(),
        sub_areas=mesh.sub_areas[cell].copy(),
        ell=mesh.ell[cell].copy(),
        incenter=mesh.incenter[cell].copy(),
        inradius=float(mesh.inradius[cell]),
        rho=float(mesh.rho[cell]),
    )


# ---------------------------------------------------------------- refinement

def _split_tags(mesh: Mesh, midpoint: np.ndarray) -> dict[tuple[int, int], int]:
    """Boundary tags of the refined mesh; ``midpoint[e]`` is the new vertex or -1."""
    tags = {}
    for e in mesh.boundary_edges:
        a, b = (int(x) for x in mesh.edges[e])
        t = int(mesh.edge_tags[e])
        m = int(midpoint[e])
        if m < 0:
            tags[(a, b)] = t
        else:
            tags[(min(a, m), max(a, m))] = t
            tags[(min(b, m), max(b, m))] = t
    return tags


def _midpoints(mesh: Mesh, marked_edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    midpoint = np.full(mesh.n_edges, -1, dtype=np.int64)
    ids = np.flatnonzero(marked_edges)
    midpoint[ids] = mesh.n_vertices + np.arange(len(ids))
    new = 0.5 * (mesh.vertices[mesh.edges[ids, 0]] + mesh.vertices[mesh.edges[ids, 1]])
    return midpoint, np.vstack([mesh.vertices, new])


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: four similar children per cell, refinement edges inherited."""
    midpoint, verts = _midpoints(mesh, np.ones(mesh.n_edges, bool))
    a, b, c = mesh.cells.T
    m_bc, m_ca, m_ab = (midpoint[mesh.cell_edges[:, i]] for i in range(3))
    children = np.stack(
        [
            np.stack([a, m_ab, m_ca], 1),
            np.stack([m_ab, b, m_bc], 1),
            np.stack([m_ca, m_bc, c], 1),
            np.stack([m_bc, m_ca, m_ab], 1),
        ],
        axis=1,
    ).reshape(-1, 3)
    parent = np.repeat(np.arange(mesh.n_cells), 4)
    return build_mesh(verts, children, _split_tags(mesh, midpoint), relabel=False, parent=parent)


def nvb_closure(mesh: Mesh, marked_cells: Iterable[int]) -> np.ndarray:
    """Edges to bisect so that refining all marked cells leaves no hanging node."""
    marked = np.zeros(mesh.n_edges, bool)
    cells = np.asarray(list(marked_cells), dtype=np.int64)
    marked[mesh.cell_edges[cells, 0]] = True
    while True:
        ce = marked[mesh.cell_edges]
        need = ce.any(axis=1) & ~ce[:, 0]
        if not need.any():
            return marked
        marked[mesh.cell_edges[need, 0]] = True


def refine_nvb(mesh: Mesh, marked_cells: Iterable[int]) -> Mesh:
    """Newest-vertex bisection of the marked cells plus the conforming closure."""
    marked_edges = nvb_closure(mesh, marked_cells)
    if not marked_edges.any():
        return mesh
    midpoint, verts = _midpoints(mesh, marked_edges)
    a, b, c = mesh.cells.T
    ce = mesh.cell_edges
    m = midpoint[ce[:, 0]]
    split_ab = marked_edges[ce[:, 2]]
    split_ca = marked_edges[ce[:, 1]]
    p = midpoint[ce[:, 2]]
    q = midpoint[ce[:, 1]]
    bis = marked_edges[ce[:, 0]]

    # up to four child slots per parent; -1 rows are dropped
    slots = np.full((mesh.n_cells, 4, 3), -1, dtype=np.int64)
    keep = ~bis
    slots[keep, 0] = mesh.cells[keep]
    one = bis & ~split_ab
    slots[one, 0] = np.stack([m, a, b], 1)[one]
    two = bis & split_ab
    slots[two, 0] = np.stack([p, m, a], 1)[two]
    slots[two, 1] = np.stack([p, b, m], 1)[two]
    one = bis & ~split_ca
    slots[one, 2] = np.stack([m, c, a], 1)[one]
    two = bis & split_ca
    slots[two, 2] = np.stack([q, m, c], 1)[two]
    slots[two, 3] = np.stack([q, a, m], 1)[two]

    valid = slots[:, :, 0] >= 0
    children = slots[valid]
    parent = np.broadcast_to(np.arange(mesh.n_cells)[:, None], valid.shape)[valid]
    return build_mesh(verts, children, _split_tags(mesh, midpoint), relabel=False, parent=parent)


# ---------------------------------------------------------------- shape classes

def shape_key(tri: np.ndarray, digits: int = 9, labeled: bool = False) -> tuple:
    """Class key of a triangle.

    Unlabeled keys identify triangles up to similarity (sorted side-length ratios).
    Labeled keys identify the vertex-ordered triangle (newest vertex first) up to
    translation, scaling and rotation by pi, which is what bisection depends on.
    """
    tri = np.asarray(tri, float)
    if labeled:
        vecs = np.array([tri[1] - tri[0], tri[2] - tri[0]])
        vecs /= np.abs(vecs).max()
        flat = vecs.ravel()
        nz = flat[np.abs(flat) > 10.0 ** -digits]
        if nz.size and nz[0] < 0:
            vecs = -vecs
        return tuple(np.round(vecs.ravel(), digits) + 0.0)
    lens = np.sort([np.linalg.norm(tri[(i + 2) % 3] - tri[(i + 1) % 3]) for i in range(3)])
    return tuple(np.round(lens / lens[-1], digits) + 0.0)


def nvb_shape_classes(mesh: Mesh, max_rounds: int = 64) -> list[np.ndarray]:
    """Representatives of all triangle shapes reachable by bisection from ``mesh``.

    Shapes are identified up to similarity; red refinement children are similar
    to their parent and add nothing new.
    """
    frontier = {}
    for tri in mesh.corners:
        frontier.setdefault(shape_key(tri, labeled=True), tri)
    seen = dict(frontier)
    for _ in range(max_rounds):
        nxt = {}
        for tri in frontier.values():
            a, b, c = tri
            mid = 0.5 * (b + c)
            for child in (np.array([mid, a, b]), np.array([mid, c, a])):
                key = shape_key(child, labeled=True)
                if key not in seen:
                    seen[key] = child
                    nxt[key] = child
        if not nxt:
            break
        frontier = nxt
    out = {}
    for tri in seen.values():
        out.setdefault(shape_key(tri), tri)
    return list(out.values())


# ---------------------------------------------------------------- text format

HEADER = "ntri-mesh 1"


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_mesh(mesh: Mesh, path: str | Path | None = None) -> str:
    lines = [HEADER, f"vertices {mesh.n_vertices}"]
    lines += [f"{_fmt(x)} {_fmt(y)}" for x, y in mesh.vertices]
    lines.append(f"cells {mesh.n_cells}")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.cells]
    b = mesh.boundary_edges
    lines.append(f"boundary {len(b)}")
    lines += [f"{mesh.edges[e, 0]} {mesh.edges[e, 1]} {TAG_NAMES[int(mesh.edge_tags[e])]}" for e in b]
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def parse_mesh(text: str, *, relabel: bool = True) -> Mesh:
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows or " ".join(rows[0]) != HEADER:
        raise MeshError(f"missing header {HEADER!r}")
    pos = 1

    def section(name):
        nonlocal pos
        if rows[pos][0] != name or len(rows[pos]) != 2:
            raise MeshError(f"expected section {name!r}, got {' '.join(rows[pos])!r}")
        n = int(rows[pos][1])
        body = rows[pos + 1: pos + 1 + n]
        if len(body) != n:
            raise MeshError(f"section {name!r} truncated")
        pos += 1 + n
        return body

    verts = [(float(x), float(y)) for x, y in section("vertices")]
    cells = [(int(i), int(j), int(k)) for i, j, k in section("cells")]
    bnd = [(int(i), int(j), t) for i, j, t in section("boundary")]
    return build_mesh(np.array(verts).reshape(-1, 2), np.array(cells).reshape(-1, 3), bnd, relabel=relabel)


def read_mesh(path: str | Path, *, relabel: bool = True) -> Mesh:
    return parse_mesh(Path(path).read_text(), relabel=relabel)


# ---------------------------------------------------------------- domains

def _all_boundary(cells, tag="dirichlet", tags=None):
    cells = np.asarray(cells)
    pairs = np.sort(np.concatenate([cells[:, [1, 2]], cells[:, [2, 0]], cells[:, [0, 1]]]), axis=1)
    uniq, counts = np.unique(pairs, axis=0, return_counts=True)
    return {(int(a), int(b)): (tags(a, b) if tags else tag) for a, b in uniq[counts == 1]}


def lshape_mesh(tag: str = "dirichlet") -> Mesh:
    """(-1,1)^2 minus [0,1]x[-1,0] as six right-isosceles triangles with hypotenuses at the origin."""
    v = np.array([[-1, -1], [0, -1], [-1, 0], [0, 0], [1, 0], [-1, 1], [0, 1], [1, 1]], float)
    cells = np.array([[1, 3, 0], [2, 0, 3], [3, 6, 5], [2, 3, 5], [4, 7, 3], [6, 3, 7]])
    return build_mesh(v, cells, _all_boundary(cells, tag))


def square_mesh(tag: str = "dirichlet") -> Mesh:
    v = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    cells = np.array([[1, 2, 0], [3, 0, 2]])
    return build_mesh(v, cells, _all_boundary(cells, tag))


COOK_VERTICES = np.array([[0.0, 0.0], [48.0, 44.0], [48.0, 60.0], [0.0, 44.0]])


def cook_mesh() -> Mesh:
    """Cook's membrane as shipped in ``hhoglb/data/cook.mesh``; clamped at x = 0."""
    return parse_mesh(resources.files("hhoglb").joinpath("data/cook.mesh").read_text())


def _cook_mesh_reference() -> Mesh:
    """The same triangulation built in code, split along the diagonal (48,44)-(0,44)."""
    cells = np.array([[0, 1, 3], [1, 2, 3]])

    def tag(a, b):
        return "dirichlet" if COOK_VERTICES[a, 0] == 0 and COOK_VERTICES[b, 0] == 0 else "neumann"

    return build_mesh(COOK_VERTICES, cells, _all_boundary(cells, tags=tag))


def triangle_mesh(points, tag: str = "neumann") -> Mesh:
    pts = np.asarray(points, float).reshape(3, 2)
    d1, d2 = pts[1] - pts[0], pts[2] - pts[0]
    cell = [0, 1, 2] if d1[0] * d2[1] - d1[1] * d2[0] > 0 else [0, 2, 1]
    return build_mesh(pts, np.array([cell]), _all_boundary([cell], tag))
