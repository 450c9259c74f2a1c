"""Triangulated rectangular phantoms with a circular inclusion.

Nodes are numbered row by row from the bottom-left corner; each grid cell
is split along its rising diagonal into two counter-clockwise triangles.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BOUNDARY_LABELS = ("top", "bottom", "left", "right", "interior")


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry and ground-truth moduli of a two-material phantom.

    Moduli are in units of 100 kPa; lengths in meters.
    """

    width: float = 0.05
    height: float = 0.05
    nx: int = 16
    ny: int = 16
    inclusion_center: tuple[float, float] = (0.025, 0.025)
    inclusion_radius: float = 0.01
    E_background: float = 0.145
    E_inclusion: float = 0.46
    jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("phantom width and height must be positive")
        if int(self.nx) != self.nx or int(self.ny) != self.ny or self.nx < 1 or self.ny < 1:
            raise ValueError("nx and ny must be positive integers")
        if self.E_background <= 0 or self.E_inclusion <= 0:
            raise ValueError("moduli must be strictly positive")
        if self.inclusion_radius < 0:
            raise ValueError("inclusion radius must be non-negative")
        cx, cy = self.inclusion_center
        r = self.inclusion_radius
        if cx - r < 0 or cx + r > self.width or cy - r < 0 or cy + r > self.height:
            raise ValueError("inclusion disk must lie inside the rectangle")
        if not 0.0 <= self.jitter < 0.25:
            raise ValueError("jitter must lie in [0, 0.25)")
        object.__setattr__(self, "inclusion_center", (float(cx), float(cy)))


@dataclass(frozen=True)
class TriMesh:
    """Linear triangle mesh.

    Attributes:
        nodes: (N, 2) coordinates in meters.
        elements: (P, 3) node indices, counter-clockwise.
        boundary_tags: length-N tuple of labels from ``BOUNDARY_LABELS``.
    """

    nodes: np.ndarray
    elements: np.ndarray
    boundary_tags: tuple[str, ...]
    _areas: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nodes = _frozen(self.nodes, float)
        elements = _frozen(self.elements, np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise ValueError("nodes must have shape (N, 2)")
        if elements.ndim != 2 or elements.shape[1] != 3:
            raise ValueError("elements must have shape (P, 3)")
        if elements.size and (elements.min() < 0 or elements.max() >= len(nodes)):
            raise ValueError("element references a node index out of range")
        tags = tuple(self.boundary_tags)
        if len(tags) != len(nodes):
            raise ValueError("need exactly one boundary tag per node")
        bad = set(tags) - set(BOUNDARY_LABELS)
        if bad:
            raise ValueError(f"unknown boundary labels: {sorted(bad)}")
        p = nodes[elements]
        areas = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                       - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
        if np.any(areas <= 0):
            raise ValueError("every element must have strictly positive signed area")
        areas.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "boundary_tags", tags)
        object.__setattr__(self, "_areas", areas)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_dofs(self) -> int:
        return 2 * len(self.nodes)

    @property
    def areas(self) -> np.ndarray:
        return self._areas

    @property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    def nodes_tagged(self, label: str) -> np.ndarray:
        if label not in BOUNDARY_LABELS:
            raise ValueError(f"unknown boundary label {label!r}")
        return np.array([i for i, t in enumerate(self.boundary_tags) if t == label], dtype=np.int64)

    def element_dofs(self) -> np.ndarray:
        """(P, 6) global DOF indices, interleaved (lateral, axial) per node."""
        e = self.elements
        return np.stack([2 * e, 2 * e + 1], axis=2).reshape(len(e), 6)

    def to_json(self) -> str:
        return json.dumps({
            "nodes": self.nodes.tolist(),
            "elements": self.elements.tolist(),
            "boundary_tags": list(self.boundary_tags),
        })

    @classmethod
    def from_json(cls, text: str) -> "TriMesh":
        d = json.loads(text)
        return cls(np.asarray(d["nodes"], float).reshape(-1, 2),
                   np.asarray(d["elements"], np.int64).reshape(-1, 3),
                   tuple(d["boundary_tags"]))

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "TriMesh":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class AdjacencyGraph:
    """Undirected face adjacency between elements, one row per pair (i < j)."""

    i: np.ndarray
    j: np.ndarray
    weight: np.ndarray
    n_elements: int

    _incidence: object = field(init=False, repr=False, compare=False)
    _incidence_t: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        from scipy import sparse

        for name, dt in (("i", np.int64), ("j", np.int64), ("weight", float)):
            object.__setattr__(self, name, _frozen(getattr(self, name), dt))
        m = len(self.i)
        rows = np.repeat(np.arange(m), 2)
        cols = np.column_stack([self.i, self.j]).ravel()
        vals = np.tile([1.0, -1.0], m)
        G = sparse.csr_matrix((vals, (rows, cols)), shape=(m, self.n_elements))
        object.__setattr__(self, "_incidence", G)
        object.__setattr__(self, "_incidence_t", G.T.tocsr())

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return list(zip(self.i.tolist(), self.j.tolist(), self.weight.tolist()))

    def __len__(self):
        return len(self.i)

    def degree(self) -> np.ndarray:
        return np.bincount(np.concatenate([self.i, self.j]), minlength=self.n_elements)

    def difference(self, x: np.ndarray) -> np.ndarray:
        """Per-edge differences ``x[i] - x[j]`` (incidence operator)."""
        return self._incidence @ x

    def difference_adjoint(self, p: np.ndarray) -> np.ndarray:
        return self._incidence_t @ p

    def total_variation(self, x: np.ndarray) -> float:
        return float(np.sum(self.weight * np.abs(self.difference(x))))

    def laplacian(self):
        """Weighted graph Laplacian as a sparse CSR matrix."""
        from scipy import sparse

        n = self.n_elements
        w = self.weight
        rows = np.concatenate([self.i, self.j, self.i, self.j])
        cols = np.concatenate([self.j, self.i, self.i, self.j])
        vals = np.concatenate([-w, -w, w, w])
        return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def build_mesh(spec: PhantomSpec) -> TriMesh:
    """Structured right-triangle tiling of the phantom rectangle.

    With ``spec.jitter > 0`` interior nodes are displaced by a uniform random
    offset of at most ``jitter`` grid spacings (seeded by ``spec.seed``).
    """
    nx, ny = int(spec.nx), int(spec.ny)
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be positive")
    xs = np.linspace(0.0, spec.width, nx + 1)
    ys = np.linspace(0.0, spec.height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    ii, jj = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1))
    ii, jj = ii.ravel(), jj.ravel()

    tags = []
    for i, j in zip(ii, jj):
        if j == 0:
            tags.append("bottom")
        elif j == ny:
            tags.append("top")
        elif i == 0:
            tags.append("left")
        elif i == nx:
            tags.append("right")
        else:
            tags.append("interior")

    if spec.jitter > 0:
        rng = np.random.default_rng(spec.seed)
        interior = np.array([t == "interior" for t in tags])
        h = np.array([spec.width / nx, spec.height / ny])
        offs = rng.uniform(-spec.jitter, spec.jitter, size=(interior.sum(), 2)) * h
        nodes[interior] += offs

    ci, cj = np.meshgrid(np.arange(nx), np.arange(ny))
    ci, cj = ci.ravel(), cj.ravel()
    n0 = cj * (nx + 1) + ci
    n1 = n0 + 1
    n2 = n1 + nx + 1
    n3 = n0 + nx + 1
    elements = np.empty((2 * nx * ny, 3), dtype=np.int64)
    elements[0::2] = np.column_stack([n0, n1, n2])
    elements[1::2] = np.column_stack([n0, n2, n3])
    return TriMesh(nodes, elements, tuple(tags))


def inclusion_mask(mesh: TriMesh, spec: PhantomSpec) -> np.ndarray:
    """Boolean per element: centroid inside (or on) the inclusion disk."""
    c = mesh.centroids
    d2 = np.sum((c - np.asarray(spec.inclusion_center)) ** 2, axis=1)
    if spec.inclusion_radius == 0:
        return np.zeros(mesh.n_elements, dtype=bool)
    return d2 <= spec.inclusion_radius ** 2


def assign_phantom(mesh: TriMesh, spec: PhantomSpec) -> np.ndarray:
    """Piecewise-constant ground-truth modulus, one value per element."""
    return np.where(inclusion_mask(mesh, spec), spec.E_inclusion, spec.E_background).astype(float)


def element_adjacency(mesh: TriMesh) -> AdjacencyGraph:
    """Elements sharing an edge, weighted by edge length over centroid distance."""
    e = mesh.elements
    faces = np.concatenate([e[:, [0, 1]], e[:, [1, 2]], e[:, [2, 0]]])
    owner = np.tile(np.arange(len(e)), 3)
    faces = np.sort(faces, axis=1)
    order = np.lexsort((faces[:, 1], faces[:, 0]))
    faces, owner = faces[order], owner[order]
    same = np.all(faces[1:] == faces[:-1], axis=1)
    k = np.nonzero(same)[0]
    a, b = owner[k], owner[k + 1]
    i, j = np.minimum(a, b), np.maximum(a, b)
    shared = faces[k]

    edge_len = np.linalg.norm(mesh.nodes[shared[:, 0]] - mesh.nodes[shared[:, 1]], axis=1)
    c = mesh.centroids
    dist = np.linalg.norm(c[i] - c[j], axis=1)
    order = np.lexsort((j, i))
    return AdjacencyGraph(i[order], j[order], (edge_len / dist)[order], mesh.n_elements)


def save_field_csv(values, path, header: str = "E"):
    values = np.asarray(values, dtype=float)
    lines = [f"{header}"] + [repr(float(v)) for v in values]
    Path(path).write_text("\n".join(lines) + "\n")


def load_field_csv(path) -> np.ndarray:
    rows = Path(path).read_text().split()
    return np.array([float(r) for r in rows[1:]])
