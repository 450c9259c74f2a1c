"""Statistical MAP reconstruction of the modulus field.

The data model is ``y = D(u_m) E + w~`` with ``y = f - sign * M_omega u_m``
and ``w~ ~ N(0, Gamma)``, ``Gamma = Sigma_w + A(E) Sigma_n A(E)^T``. The
modulus is estimated by alternating between refreshing ``Gamma`` at the
current estimate and running a proximal-gradient solve with ``Gamma`` held
fixed.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy import linalg, sparse

from .fem import GlobalSystem
from .mesh import AdjacencyGraph, save_field_csv

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Tuning knobs of the reconstruction.

    ``gamma0=None`` starts every inner solve at ``1 / L`` with ``L`` from
    ``power_iters`` power iterations on the whitened normal operator.
    ``accelerate`` switches the inner loop from plain proximal gradient to
    its monotone accelerated variant.
    """

    lambda_reg: float = 1e-3
    regularizer: str = "tv"
    gamma0: float | None = None
    backtrack: float = 0.5
    inner_tol: float = 1e-7
    outer_tol: float = 1e-3
    max_inner: int = 300
    max_outer: int = 200
    tv_inner_iters: int = 50
    tv_tol: float = 1e-8
    E_init: float = 0.2
    eps: float = 1e-4
    accelerate: bool = True
    gamma_operator: str = "full"
    power_iters: int = 20

    def __post_init__(self):
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be non-negative")
        if self.regularizer not in ("tv", "ws"):
            raise ValueError("regularizer must be 'tv' or 'ws'")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtracking factor must lie in (0, 1)")
        if self.inner_tol <= 0 or self.outer_tol <= 0 or self.tv_tol <= 0:
            raise ValueError("tolerances must be positive")
        if min(self.max_inner, self.max_outer, self.tv_inner_iters, self.power_iters) < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.E_init <= 0 or self.eps <= 0:
            raise ValueError("E_init and eps must be positive")
        if self.gamma0 is not None and self.gamma0 <= 0:
            raise ValueError("gamma0 must be positive")
        if self.gamma_operator not in ("full", "stiffness"):
            raise ValueError("gamma_operator must be 'full' or 'stiffness'")


# -- covariance --------------------------------------------------------------

def _as_covariance(cov, n):
    """Normalize a covariance given as scalar variance, diagonal or matrix."""
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        return np.full(n, float(cov))
    if cov.shape == (n,):
        return cov
    if cov.shape == (n, n):
        return cov
    raise ValueError(f"covariance of shape {cov.shape} does not match {n} DOFs")


@dataclass
class GammaCovariance:
    """Dense covariance with its Cholesky factor ``matrix = L L^T``."""

    matrix: np.ndarray
    chol: np.ndarray
    logdet: float

    def solve(self, b):
        return linalg.cho_solve((self.chol, True), b)

    def whiten(self, b):
        """``L^{-1} b`` so that ``||whiten(r)||^2 = r^T Gamma^{-1} r``."""
        return linalg.solve_triangular(self.chol, b, lower=True)


def gamma_from_matrix(matrix) -> GammaCovariance:
    matrix = np.asarray(matrix, dtype=float)
    matrix = 0.5 * (matrix + matrix.T)
    try:
        chol = linalg.cholesky(matrix, lower=True)
    except linalg.LinAlgError as exc:
        _, d, _ = linalg.ldl(matrix)
        pivot = float(np.min(np.linalg.eigvalsh(d)))
        raise SolverError(f"Gamma is not positive definite (smallest pivot {pivot:.3e})") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    if not math.isfinite(logdet):
        raise SolverError("log-determinant of Gamma is not finite")
    return GammaCovariance(matrix, chol, logdet)


def build_gamma(system: GlobalSystem, E, cov_w, cov_n, operator: str = "full") -> GammaCovariance:
    """Signal-dependent covariance ``Sigma_w + A(E) Sigma_n A(E)^T``.

    Covariances may be a scalar variance, a vector of per-DOF variances or
    a full matrix. ``operator='stiffness'`` propagates the displacement
    noise through ``K(E)`` only instead of the full harmonic operator.
    """
    E = np.asarray(E, dtype=float)
    if np.any(E <= 0):
        raise ValueError("modulus must be strictly positive")
    n = system.mesh.n_dofs
    Sw = _as_covariance(cov_w, n)
    Sn = _as_covariance(cov_n, n)
    G = np.diag(Sw) if Sw.ndim == 1 else Sw.copy()
    if np.any(Sn):
        A = system.stiffness(E) if operator == "stiffness" else system.operator(E)
        if Sn.ndim == 1:
            G += (A.multiply(Sn[None, :]) @ A.T).toarray()
        else:
            Ad = A.toarray()
            G += Ad @ Sn @ Ad.T
    return gamma_from_matrix(G)


# -- objective pieces -------------------------------------------------------

def _residual(E, f, D):
    return f - D @ E


def data_fidelity(E, gamma: GammaCovariance, f, D) -> float:
    r = gamma.whiten(_residual(E, f, D))
    return 0.5 * float(r @ r)


def objective(E, gamma: GammaCovariance, f, D, lambda_reg, graph: AdjacencyGraph,
              n_nodes: int | None = None, regularizer: str = "tv") -> float:
    """Fidelity + ``(N/2) log|Gamma|`` + regularization.

    ``n_nodes`` defaults to half the data length (one node per two DOFs).
    """
    if n_nodes is None:
        n_nodes = len(f) // 2
    value = (data_fidelity(E, gamma, f, D) + 0.5 * n_nodes * gamma.logdet
             + lambda_reg * regularization(E, graph, regularizer))
    if not math.isfinite(value):
        raise SolverError("objective is not finite")
    return value


def regularization(E, graph: AdjacencyGraph, kind: str = "tv") -> float:
    if kind == "tv":
        return graph.total_variation(E)
    LE = graph.laplacian() @ E
    return float(LE @ LE)


def grad_g(E, gamma: GammaCovariance, f, D) -> np.ndarray:
    """Gradient of the fidelity term with ``Gamma`` frozen."""
    return -(D.T @ gamma.solve(_residual(E, f, D)))


# -- proximal maps ------------------------------------------------------------

@numba.njit(cache=True)
def _tv_dual_iterations(x, tau, ei, ej, w, p, step, iters, tol):
    n, m = x.shape[0], ei.shape[0]
    z = x.copy()
    for k in range(m):
        z[ei[k]] -= tau * p[k]
        z[ej[k]] += tau * p[k]
    for _ in range(iters):
        for k in range(m):
            q = p[k] + step * (z[ei[k]] - z[ej[k]])
            p[k] = min(max(q, -w[k]), w[k])
        for i in range(n):
            z[i] = x[i]
        for k in range(m):
            z[ei[k]] -= tau * p[k]
            z[ej[k]] += tau * p[k]
        gap = 0.0
        for k in range(m):
            d = z[ei[k]] - z[ej[k]]
            gap += w[k] * abs(d) - p[k] * d
        if tau * gap <= tol:
            break
    return z


def tv_prox(x, tau, graph: AdjacencyGraph, iters: int = 50, tol: float = 1e-8,
            p0=None, return_dual: bool = False):
    """Weighted graph-TV denoising by projected gradient on the dual.

    Approximately solves ``min_z 0.5||z - x||^2 + tau * sum_ij w_ij |z_i - z_j|``
    and stops early once the duality gap drops below ``tol``. ``p0`` warm
    starts the dual variable (one entry per graph edge).
    """
    x = np.asarray(x, dtype=float)
    m = len(graph)
    if tau < 0:
        raise ValueError("tau must be non-negative")
    if tau == 0 or m == 0:
        return (x.copy(), np.zeros(m)) if return_dual else x.copy()
    w = graph.weight
    step = 1.0 / (tau * 2.0 * max(1, int(graph.degree().max())))
    p = np.zeros(m) if p0 is None else np.minimum(np.maximum(p0, -w), w)
    z = _tv_dual_iterations(x, float(tau), graph.i, graph.j, w, p, step, int(iters), float(tol))
    return (z, p) if return_dual else z


def nonneg_prox(x, eps: float = 1e-4) -> np.ndarray:
    """Projection onto ``{E >= eps}``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return np.maximum(np.asarray(x, dtype=float), eps)


# -- inner solver --------------------------------------------------------------

class _Whitened:
    """Fidelity plus optional smooth regularizer in whitened coordinates."""

    def __init__(self, gamma, f, D, lam, graph, regularizer):
        self.Dw = gamma.whiten(D.toarray() if sparse.issparse(D) else np.asarray(D))
        self.yw = gamma.whiten(np.asarray(f, dtype=float))
        self.lam = lam
        self.graph = graph
        self.kind = regularizer
        self.lap = graph.laplacian() if regularizer == "ws" else None

    def value_grad(self, E):
        r = self.yw - self.Dw @ E
        val = 0.5 * float(r @ r)
        grad = -(self.Dw.T @ r)
        if self.lap is not None and self.lam:
            LE = self.lap @ E
            val += self.lam * float(LE @ LE)
            grad = grad + 2 * self.lam * (self.lap.T @ LE)
        return val, grad

    def value(self, E):
        r = self.yw - self.Dw @ E
        val = 0.5 * float(r @ r)
        if self.lap is not None and self.lam:
            LE = self.lap @ E
            val += self.lam * float(LE @ LE)
        return val

    def nonsmooth(self, E):
        return self.lam * self.graph.total_variation(E) if self.kind == "tv" else 0.0

    def lipschitz(self, iters):
        v = np.ones(self.Dw.shape[1]) / math.sqrt(self.Dw.shape[1])
        est = 0.0
        for _ in range(iters):
            Hv = self.Dw.T @ (self.Dw @ v)
            if self.lap is not None and self.lam:
                Hv = Hv + 2 * self.lam * (self.lap.T @ (self.lap @ v))
            est = float(np.linalg.norm(Hv))
            if est == 0:
                return 0.0
            v = Hv / est
        return est


@dataclass
class InnerInfo:
    iterations: int
    step: float
    trace: list[float]
    history: list[np.ndarray] = field(default_factory=list)


def pg_inner_solve(E0, gamma: GammaCovariance, f, D, config: SolverConfig,
                   graph: AdjacencyGraph, keep_history: bool = False):
    """Proximal-gradient update of the modulus with ``Gamma`` fixed.

    Each step applies the TV prox and then the positivity projection to a
    gradient step on the fidelity. Returns ``(E, InnerInfo)``; the trace holds
    fidelity + regularization at every accepted iterate.
    """
    if not np.all(np.isfinite(f)):
        raise SolverError("data vector contains non-finite entries")
    model = _Whitened(gamma, f, D, config.lambda_reg, graph, config.regularizer)
    lam = config.lambda_reg
    use_tv = config.regularizer == "tv" and lam > 0

    x = nonneg_prox(E0, config.eps)
    gx, grad = model.value_grad(x)
    Fx = gx + model.nonsmooth(x)
    trace = [Fx]
    history = [x.copy()] if keep_history else []
    if lam == 0 and not np.any(grad):
        return x, InnerInfo(1, 0.0, trace, history)

    if config.gamma0 is not None:
        step = config.gamma0
    else:
        L = model.lipschitz(config.power_iters)
        step = 1.0 / L if L > 0 else 1.0
    z, gz, grad_z = x.copy(), gx, grad
    t = 1.0
    dual = None
    it = 0
    for it in range(1, config.max_inner + 1):
        while True:
            cand = z - step * grad_z
            if use_tv:
                cand, dual_c = tv_prox(cand, step * lam, graph, config.tv_inner_iters,
                                       config.tv_tol, p0=dual, return_dual=True)
            cand = nonneg_prox(cand, config.eps)
            g_c = model.value(cand)
            d = cand - z
            bound = gz + float(grad_z @ d) + float(d @ d) / (2 * step)
            if g_c <= bound + 1e-12 * abs(bound):
                break
            step *= config.backtrack
            if step < 1e-14:
                raise SolverError("step size underflow in proximal-gradient loop")
        if use_tv:
            dual = dual_c
        F_c = g_c + model.nonsmooth(cand)
        rel = math.sqrt(float(d @ d)) / max(float(np.linalg.norm(z)), 1e-300)

        if config.accelerate:
            t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
            x_new = cand if F_c <= Fx else x
            if F_c <= Fx:
                Fx = F_c
            z = x_new + (t / t_new) * (cand - x_new) + ((t - 1) / t_new) * (x_new - x)
            z = nonneg_prox(z, config.eps)
            x, t = x_new, t_new
        else:
            x, z, Fx = cand, cand, F_c
        trace.append(Fx)
        if keep_history:
            history.append(x.copy())
        if rel < config.inner_tol:
            break
        gz, grad_z = model.value_grad(z)
    return x, InnerInfo(it, step, trace, history)


# -- outer loop ---------------------------------------------------------------

@dataclass
class ReconstructionResult:
    E_hat: np.ndarray
    objective_trace: list[float]
    change_trace: list[float]
    outer_iters: int
    inner_iters: list[int]
    converged: bool
    method: str
    config: dict
    metadata: dict = field(default_factory=dict)
    history: list | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "converged": self.converged,
            "outer_iters": self.outer_iters,
            "inner_iters": self.inner_iters,
            "objective_trace": self.objective_trace,
            "change_trace": self.change_trace,
            "config": self.config,
            "metadata": self.metadata,
            "E_hat": self.E_hat.tolist(),
        }

    def save(self, directory, stem: str = "reconstruction"):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"{stem}.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        save_field_csv(self.E_hat, directory / f"{stem}.csv", header="E_hat")


def effective_force(system: GlobalSystem, u_m, f) -> np.ndarray:
    """Move the inertial term to the data side: ``f - sign * M_omega u_m``."""
    return np.asarray(f, dtype=float) - system.params.sign * (system.M @ np.asarray(u_m, dtype=float))


def fixed_point_solve(system: GlobalSystem, graph: AdjacencyGraph, u_m, f, cov_w, cov_n,
                      config: SolverConfig, keep_history: bool = False,
                      method: str = "proposed") -> ReconstructionResult:
    """Alternate covariance refresh and proximal-gradient modulus updates.

    ``system`` only needs geometry and mass (its stored modulus is ignored).
    """
    mesh = system.mesh
    u_m = np.asarray(u_m, dtype=float)
    f = np.asarray(f, dtype=float)
    if u_m.shape != (mesh.n_dofs,) or f.shape != (mesh.n_dofs,):
        raise ValueError("measurements do not match the mesh")
    D = system.D(u_m)
    y = effective_force(system, u_m, f)
    signal_dependent = bool(np.any(np.asarray(cov_n)))

    E = np.full(mesh.n_elements, config.E_init)
    gamma = None
    obj_trace, change_trace, inner_iters = [], [], []
    history = [E.copy()] if keep_history else []
    best = (math.inf, E.copy())
    converged = False
    outer = 0
    for outer in range(1, config.max_outer + 1):
        if gamma is None or signal_dependent:
            gamma = build_gamma(system, E, cov_w, cov_n, config.gamma_operator)
        F = objective(E, gamma, y, D, config.lambda_reg, graph, mesh.n_nodes, config.regularizer)
        obj_trace.append(F)
        if F < best[0]:
            best = (F, E.copy())
        E_new, info = pg_inner_solve(E, gamma, y, D, config, graph, keep_history)
        if keep_history:
            history.extend(info.history[1:])
        inner_iters.append(info.iterations)
        change = float(np.linalg.norm(E_new - E) / np.linalg.norm(E))
        change_trace.append(change)
        log.debug("outer %d: objective %.6e, change %.3e, inner %d", outer, F, change, info.iterations)
        E = E_new
        if change < config.outer_tol:
            converged = True
            break

    if signal_dependent:
        gamma = build_gamma(system, E, cov_w, cov_n, config.gamma_operator)
    F = objective(E, gamma, y, D, config.lambda_reg, graph, mesh.n_nodes, config.regularizer)
    obj_trace.append(F)
    if not converged and best[0] < F:
        E = best[1]

    meta = {"sign": system.params.sign, "gamma_operator": config.gamma_operator,
            "signal_dependent": signal_dependent}
    result = ReconstructionResult(E, obj_trace, change_trace, outer, inner_iters, converged,
                                  method, asdict(config), meta)
    if keep_history:
        result.history = history
    return result

