"""Reference reconstructions.

* Nodal direct inversion: at each interior node the local Navier equation
  ``mu lap(q_i) + (lam + mu) d_i div(q) = -rho w^2 q_i`` is solved for
  ``(lam + mu, mu)`` with derivatives from a least-squares quadratic fit.
* Deterministic regularized least squares with ``Gamma = I``, the
  equation-error formulation used by conventional FEM-based inversion.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .fem import GlobalSystem, MaterialParams
from .inverse import ReconstructionResult, SolverConfig, fixed_point_solve
from .mesh import AdjacencyGraph, TriMesh


@dataclass
class NodalSystem:
    A: np.ndarray
    rhs: np.ndarray


@dataclass
class NodalResult:
    """Per-node Lame estimates in Pa; ``nan`` where unresolved.

    ``rank`` is 2 when both unknowns are resolved, 1 when only the
    dominant combination is (e.g. a pure shear wave has no dilatation, so
    ``lam + mu`` is invisible), 0 when the node is unusable.
    """

    nodes: np.ndarray
    lambda_plus_mu: np.ndarray
    mu: np.ndarray
    rank: np.ndarray
    cond: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return self.rank > 0

    def mu_field(self, n_nodes: int) -> np.ndarray:
        out = np.full(n_nodes, np.nan)
        out[self.nodes] = self.mu
        return out


def node_rings(mesh: TriMesh, rings: int = 2) -> list[np.ndarray]:
    """Node neighborhoods up to ``rings`` edges away (including the node)."""
    nbrs = [set() for _ in range(mesh.n_nodes)]
    for a, b, c in mesh.elements:
        nbrs[a].update((b, c))
        nbrs[b].update((a, c))
        nbrs[c].update((a, b))
    out = []
    for i in range(mesh.n_nodes):
        ring = {i}
        frontier = {i}
        for _ in range(rings):
            frontier = set().union(*(nbrs[k] for k in frontier)) - ring
            ring |= frontier
        out.append(np.array(sorted(ring)))
    return out


def _quadratic_fit(dxy, values):
    """Coefficients of ``c0 + c1 x + c2 y + c3 x^2 + c4 xy + c5 y^2`` per column."""
    x, y = dxy[:, 0], dxy[:, 1]
    V = np.column_stack([np.ones_like(x), x, y, x * x, x * y, y * y])
    coef, *_ = np.linalg.lstsq(V, values, rcond=None)
    return coef


def nodal_system(mesh: TriMesh, u, node: int, ring, rho_omega2: float) -> NodalSystem:
    """Local 2x2 system with rows ``[d_c div(q), lap(q_c)]`` for c = x, y."""
    u = np.asarray(u, dtype=float)
    pts = mesh.nodes[ring] - mesh.nodes[node]
    scale = np.max(np.abs(pts))
    coef = _quadratic_fit(pts / scale, np.column_stack([u[2 * ring], u[2 * ring + 1]]))
    s2 = scale * scale
    (qx, qy) = coef[0]
    xx = 2 * coef[3] / s2
    xy = coef[4] / s2
    yy = 2 * coef[5] / s2
    # columns: 0 -> lateral, 1 -> axial component
    div_x = xx[0] + xy[1]
    div_y = xy[0] + yy[1]
    A = np.array([[div_x, xx[0] + yy[0]],
                  [div_y, xx[1] + yy[1]]])
    return NodalSystem(A, -rho_omega2 * np.array([qx, qy]))


def nodal_direct_inversion(mesh: TriMesh, u_m, params: MaterialParams, rings: int = 2,
                           rcond: float = 1e-6, zero_tol: float = 1e-8) -> NodalResult:
    """Per-node Lame parameters from the measured displacement field.

    Singular values of the local matrix below ``rcond`` times the largest are
    truncated; nodes whose largest singular value is below ``zero_tol``
    times the median over all nodes are marked unusable.
    """
    u_m = np.asarray(u_m, dtype=float)
    if u_m.shape != (mesh.n_dofs,):
        raise ValueError("displacement does not match mesh")
    nodes = mesh.nodes_tagged("interior")
    rings_ = node_rings(mesh, rings)
    systems = []
    for n in nodes:
        ring = rings_[n]
        if len(ring) < 6:
            systems.append(None)
            continue
        systems.append(nodal_system(mesh, u_m, n, ring, params.rho_omega2))

    smax = np.array([np.linalg.norm(s.A, 2) if s is not None else 0.0 for s in systems])
    ref = np.median(smax[smax > 0]) if np.any(smax > 0) else 0.0
    k = len(nodes)
    lpm, mu = np.full(k, np.nan), np.full(k, np.nan)
    rank, cond = np.zeros(k, dtype=np.int64), np.full(k, np.inf)
    for idx, s in enumerate(systems):
        if s is None or not np.all(np.isfinite(s.A)) or smax[idx] <= zero_tol * ref:
            continue
        U, sv, Vt = np.linalg.svd(s.A)
        cond[idx] = sv[0] / sv[1] if sv[1] > 0 else np.inf
        r = int(np.sum(sv > rcond * sv[0]))
        x = Vt[:r].T @ ((U[:, :r].T @ s.rhs) / sv[:r])
        rank[idx] = r
        mu[idx] = x[1]
        if r == 2:
            lpm[idx] = x[0]
    return NodalResult(nodes, lpm, mu, rank, cond)


def deterministic_reconstruct(system: GlobalSystem, graph: AdjacencyGraph, u_m, f,
                              reg: str, lambda_reg: float, config: SolverConfig | None = None,
                              keep_history: bool = False) -> ReconstructionResult:
    """Minimize ``0.5||f - D(u_m) E||^2 + lambda_reg R(E)`` subject to ``E > 0``.

    ``reg='tv'`` uses graph total variation, ``reg='ws'`` the weighted
    smoothness ``||L E||^2`` with ``L`` the weighted graph Laplacian. The
    solver machinery is the statistical one with ``Gamma = I``.
    """
    config = replace(config or SolverConfig(), regularizer=reg, lambda_reg=lambda_reg)
    return fixed_point_solve(system, graph, u_m, f, 1.0, 0.0, config, keep_history,
                             method=f"baseline-{reg}")
