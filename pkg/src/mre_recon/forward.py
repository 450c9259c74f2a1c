"""Synthetic harmonic displacement data and measurement noise."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import linalg as spla

from .fem import (GlobalSystem, MaterialParams, apply_dirichlet, assemble_system,
                  bottom_dirichlet_dofs, condition_estimate)
from .mesh import TriMesh

RESIDUAL_TOL = 1e-10


class ForwardSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian measurement noise.

    Either ``sigma_n`` (lateral, axial standard deviations in meters) or a
    target noise level ``delta`` sets the displacement noise. ``sigma_w`` is
    the force-noise standard deviation; ``None`` means ``1e-3 * max|f|``.
    """

    delta: float | None = 0.0
    sigma_n: tuple[float, float] | None = None
    sigma_w: float | None = None
    seed: int = 0
    force_mask: str = "all"

    def __post_init__(self):
        if self.delta is not None and not 0.0 <= self.delta <= 1.0:
            raise ValueError("noise level delta must lie in [0, 1]")
        if self.sigma_n is not None:
            s = tuple(float(v) for v in self.sigma_n)
            if len(s) != 2 or min(s) < 0:
                raise ValueError("sigma_n needs two non-negative entries")
            object.__setattr__(self, "sigma_n", s)
        if self.delta is None and self.sigma_n is None:
            raise ValueError("give either delta or sigma_n")
        if self.sigma_w is not None and self.sigma_w < 0:
            raise ValueError("sigma_w must be non-negative")
        if self.force_mask not in ("all", "loaded"):
            raise ValueError("force_mask must be 'all' or 'loaded'")

    def displacement_std(self, u) -> np.ndarray:
        """Per-DOF standard deviation of the displacement noise."""
        u = np.asarray(u, dtype=float)
        if self.sigma_n is not None:
            return np.tile(np.asarray(self.sigma_n), len(u) // 2)
        s = self.delta * np.linalg.norm(u) / math.sqrt(len(u))
        return np.full(len(u), s)

    def force_std(self, f) -> float:
        if self.sigma_w is not None:
            return float(self.sigma_w)
        return 1e-3 * float(np.max(np.abs(f)))

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng([int(self.seed), stream])


def solve_forward(mesh: TriMesh, E, params: MaterialParams, f, dirichlet_dofs=None,
                  dirichlet_values=None, system: GlobalSystem | None = None) -> np.ndarray:
    """Solve ``A(E) u = f`` with Dirichlet anchoring (bottom edge by default)."""
    if system is None or system.E is None or not np.array_equal(system.E, E):
        system = (system.with_modulus(E) if system is not None
                  else assemble_system(mesh, E, params))
    if dirichlet_dofs is None:
        dirichlet_dofs = bottom_dirichlet_dofs(mesh)
    f = np.asarray(f, dtype=float)
    if f.shape != (mesh.n_dofs,):
        raise ValueError(f"force vector must have length {mesh.n_dofs}")
    A = system.A
    red = apply_dirichlet(A, f, dirichlet_dofs, dirichlet_values)
    try:
        lu = spla.splu(red.matrix)
        u_free = lu.solve(red.rhs)
    except RuntimeError as exc:
        raise ForwardSolveError(f"reduced system is singular: {exc}") from exc
    u = red.expand(u_free)
    scale = np.linalg.norm(red.rhs)
    if scale > 0:
        res = np.linalg.norm(red.matrix @ u_free - red.rhs) / scale
        if not np.isfinite(res) or res > RESIDUAL_TOL:
            cond = condition_estimate(red.matrix)
            raise ForwardSolveError(
                f"forward solve residual {res:.3e} exceeds {RESIDUAL_TOL:g} (condition ~{cond:.3e})")
    return u


def corrupt_displacements(u, noise: NoiseModel) -> np.ndarray:
    """Add zero-mean Gaussian noise to an interleaved displacement vector."""
    u = np.asarray(u, dtype=float)
    std = noise.displacement_std(u)
    if not np.any(std):
        return u.copy()
    return u + std * noise.rng(0).standard_normal(len(u))


def corrupt_forces(f, noise: NoiseModel, loaded=None) -> np.ndarray:
    """Add Gaussian force noise; with ``force_mask='loaded'`` only where ``loaded``."""
    f = np.asarray(f, dtype=float)
    s = noise.force_std(f)
    if s == 0:
        return f.copy()
    w = s * noise.rng(1).standard_normal(len(f))
    if noise.force_mask == "loaded":
        mask = np.zeros(len(f), bool)
        if loaded is not None:
            mask[np.asarray(loaded)] = True
        w = np.where(mask, w, 0.0)
    return f + w


def realized_noise_level(u_m, u) -> float:
    """Noise level ``||u_m - u|| / ||u_m||``."""
    return float(np.linalg.norm(np.asarray(u_m) - u) / np.linalg.norm(u_m))


def delta_to_snr(delta) -> float:
    if delta <= 0:
        raise ValueError("noise level must be positive")
    return -20.0 * math.log10(delta)


def snr_to_delta(snr_db) -> float:
    return 10.0 ** (-snr_db / 20.0)


@dataclass
class Measurements:
    """Clean and noisy data of one synthetic acquisition."""

    u: np.ndarray
    u_m: np.ndarray
    f: np.ndarray
    f_m: np.ndarray
    sigma_n: np.ndarray
    sigma_w: float
    noise: NoiseModel

    @property
    def realized_delta(self) -> float:
        return realized_noise_level(self.u_m, self.u) if np.any(self.u_m) else 0.0


def simulate(system: GlobalSystem, load, noise: NoiseModel, dirichlet_dofs=None) -> Measurements:
    """Forward-solve at ``system.E`` and corrupt the data.

    The force vector handed to the inversion is ``A(E) u`` over every DOF,
    i.e. the applied load plus the support reactions.
    """
    u = solve_forward(system.mesh, system.E, system.params, load, dirichlet_dofs, system=system)
    f = system.A @ u
    loaded = np.nonzero(load)[0]
    return Measurements(
        u=u,
        u_m=corrupt_displacements(u, noise),
        f=f,
        f_m=corrupt_forces(f, noise, loaded),
        sigma_n=noise.displacement_std(u),
        sigma_w=noise.force_std(f),
        noise=noise,
    )


def save_displacement_csv(u, path):
    u = np.asarray(u, dtype=float)
    lines = ["node_id,axis,value"]
    for k, v in enumerate(u):
        lines.append(f"{k // 2},{'lateral' if k % 2 == 0 else 'axial'},{float(v)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_displacement_csv(path) -> np.ndarray:
    rows = Path(path).read_text().strip().splitlines()[1:]
    out = np.empty(len(rows))
    for k, row in enumerate(rows):
        node, axis, val = row.split(",")
        idx = 2 * int(node) + (0 if axis == "lateral" else 1)
        out[idx] = float(val)
    return out
