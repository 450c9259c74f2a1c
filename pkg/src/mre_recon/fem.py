"""Plane-strain P1 finite elements for time-harmonic elasticity.

Moduli are carried in units of ``MaterialParams.modulus_unit`` Pa (100 kPa
by default); everything else is SI with unit out-of-plane thickness. The
global operators are

    K(E) = unit * sum_e E_e psi_e          (stiffness, linear in E)
    A(E) = K(E) + sign * M_omega           (full harmonic operator)
    D(u) E = K(E) u                         (same contraction, linear in E)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .mesh import TriMesh


@dataclass(frozen=True)
class MaterialParams:
    """Material and excitation constants.

    ``sign`` selects the harmonic operator: -1 gives the usual weak form
    ``K - w^2 M``, +1 the literal ``K + w^2 M`` sum.
    """

    nu: float = 0.495
    rho: float = 1000.0
    freq_hz: float = 90.0
    modulus_unit: float = 1e5
    sign: int = -1
    omega: float = field(init=False)

    def __post_init__(self):
        if not 0.0 <= self.nu < 0.5:
            raise ValueError("Poisson's ratio must satisfy 0 <= nu < 0.5")
        if self.rho <= 0:
            raise ValueError("density must be positive")
        if self.freq_hz < 0:
            raise ValueError("frequency must be non-negative")
        if self.modulus_unit <= 0:
            raise ValueError("modulus_unit must be positive")
        if self.sign not in (-1, 1):
            raise ValueError("sign must be +1 or -1")
        object.__setattr__(self, "omega", 2.0 * math.pi * self.freq_hz)

    @property
    def rho_omega2(self) -> float:
        return self.rho * self.omega ** 2


def lame_from_modulus(E, nu):
    """Plane-strain Lame parameters ``(lambda, mu)`` from Young's modulus."""
    if not 0.0 <= nu < 0.5:
        raise ValueError("Poisson's ratio must satisfy 0 <= nu < 0.5")
    E = np.asarray(E, dtype=float)
    if np.any(E <= 0):
        raise ValueError("modulus must be positive")
    lam = nu * E / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    if lam.ndim == 0:
        return float(lam), float(mu)
    return lam, mu


def material_matrix(nu) -> np.ndarray:
    """Stress-strain matrix per unit modulus, so that ``C = E * C_tilde``."""
    lam, mu = lame_from_modulus(1.0, nu)
    return np.array([[lam + 2 * mu, lam, 0.0],
                     [lam, lam + 2 * mu, 0.0],
                     [0.0, 0.0, mu]])


def _gradients(xy):
    """P1 gradient coefficients for (..., 3, 2) vertex arrays.

    Returns ``(b, c, area)`` with ``dN_i/dx = b_i / (2 area)`` and
    ``dN_i/dy = c_i / (2 area)``.
    """
    x, y = xy[..., 0], xy[..., 1]
    b = np.stack([y[..., 1] - y[..., 2], y[..., 2] - y[..., 0], y[..., 0] - y[..., 1]], axis=-1)
    c = np.stack([x[..., 2] - x[..., 1], x[..., 0] - x[..., 2], x[..., 1] - x[..., 0]], axis=-1)
    area = 0.5 * (x[..., 0] * b[..., 0] + x[..., 1] * b[..., 1] + x[..., 2] * b[..., 2])
    return b, c, area


def _strain_matrices(xy):
    b, c, area = _gradients(xy)
    if np.any(area <= 0) or not np.all(np.isfinite(area)):
        raise ValueError("degenerate or clockwise element")
    B = np.zeros(xy.shape[:-2] + (3, 6))
    B[..., 0, 0::2] = b
    B[..., 1, 1::2] = c
    B[..., 2, 0::2] = c
    B[..., 2, 1::2] = b
    B /= (2.0 * area)[..., None, None]
    return B, area


def strain_displacement(mesh: TriMesh, elem: int) -> np.ndarray:
    """3x6 strain-displacement matrix of one element (constant for P1)."""
    B, _ = _strain_matrices(mesh.nodes[mesh.elements[elem]])
    return B


def element_stiffness_basis(mesh: TriMesh, elem: int, nu) -> np.ndarray:
    """Stiffness of one element per unit modulus: ``area * B^T C_tilde B``."""
    B, area = _strain_matrices(mesh.nodes[mesh.elements[elem]])
    return area * B.T @ material_matrix(nu) @ B


_P1_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


def element_mass(mesh: TriMesh, elem: int, params: MaterialParams) -> np.ndarray:
    """Consistent P1 mass block scaled by ``rho * omega^2``."""
    _, area = _strain_matrices(mesh.nodes[mesh.elements[elem]])
    return params.rho_omega2 * area * np.kron(_P1_MASS, np.eye(2))


def stiffness_bases(mesh: TriMesh, nu) -> np.ndarray:
    """All element ``psi_e`` blocks, shape (P, 6, 6)."""
    B, area = _strain_matrices(mesh.nodes[mesh.elements])
    Ct = material_matrix(nu)
    return area[:, None, None] * np.einsum("eki,kl,elj->eij", B, Ct, B)


def _scatter(mesh: TriMesh, blocks) -> sparse.csr_matrix:
    dofs = mesh.element_dofs()
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    n = mesh.n_dofs
    return sparse.csr_matrix((blocks.ravel(), (rows, cols)), shape=(n, n))


@dataclass
class GlobalSystem:
    """Assembled harmonic system of one mesh.

    ``psi`` keeps the per-element stiffness blocks so that ``K(E)`` and
    ``D(u)`` can be re-contracted without touching the geometry again.
    """

    mesh: TriMesh
    params: MaterialParams
    psi: np.ndarray
    M: sparse.csr_matrix
    E: np.ndarray | None = None
    K: sparse.csr_matrix | None = None

    @property
    def A(self) -> sparse.csr_matrix:
        """Full operator ``K(E) + sign * M_omega`` at the stored modulus."""
        if self.K is None:
            raise ValueError("no modulus field assembled")
        return (self.K + self.params.sign * self.M).tocsr()

    def stiffness(self, E) -> sparse.csr_matrix:
        E = np.asarray(E, dtype=float)
        if E.shape != (self.mesh.n_elements,):
            raise ValueError(f"expected {self.mesh.n_elements} moduli, got shape {E.shape}")
        return _scatter(self.mesh, self.params.modulus_unit * E[:, None, None] * self.psi)

    def operator(self, E) -> sparse.csr_matrix:
        return (self.stiffness(E) + self.params.sign * self.M).tocsr()

    def with_modulus(self, E) -> "GlobalSystem":
        E = np.asarray(E, dtype=float).copy()
        return GlobalSystem(self.mesh, self.params, self.psi, self.M, E, self.stiffness(E))

    def D(self, u) -> sparse.csc_matrix:
        return assemble_D(self.mesh, u, self.params, psi=self.psi)


def mass_matrix(mesh: TriMesh, params: MaterialParams) -> sparse.csr_matrix:
    area = mesh.areas
    blocks = params.rho_omega2 * area[:, None, None] * np.kron(_P1_MASS, np.eye(2))[None]
    return _scatter(mesh, blocks)


def assemble_system(mesh: TriMesh, E, params: MaterialParams) -> GlobalSystem:
    """Assemble ``K(E)`` and ``M_omega`` for the given per-element moduli."""
    base = GlobalSystem(mesh, params, stiffness_bases(mesh, params.nu), mass_matrix(mesh, params))
    if E is None:
        return base
    return base.with_modulus(E)


def assemble_D(mesh: TriMesh, u, params: MaterialParams, psi=None) -> sparse.csc_matrix:
    """Operator ``D(u)`` (2N x P) with column e = scatter of ``unit * psi_e u_e``."""
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_dofs,):
        raise ValueError(f"expected displacement of length {mesh.n_dofs}, got shape {u.shape}")
    if psi is None:
        psi = stiffness_bases(mesh, params.nu)
    dofs = mesh.element_dofs()
    cols = params.modulus_unit * np.einsum("eij,ej->ei", psi, u[dofs])
    P = mesh.n_elements
    return sparse.csc_matrix(
        (cols.ravel(), (dofs.ravel(), np.repeat(np.arange(P), 6))),
        shape=(mesh.n_dofs, P),
    )


@dataclass
class ReducedSystem:
    """Symmetric elimination of Dirichlet DOFs from ``A u = f``."""

    matrix: sparse.csc_matrix
    rhs: np.ndarray
    free: np.ndarray
    fixed: np.ndarray
    fixed_values: np.ndarray
    n_dofs: int

    def expand(self, u_free) -> np.ndarray:
        u = np.empty(self.n_dofs)
        u[self.free] = u_free
        u[self.fixed] = self.fixed_values
        return u


def apply_dirichlet(A, f, constrained_dofs, values=None) -> ReducedSystem:
    """Eliminate constrained rows and columns, moving their load to the RHS."""
    A = sparse.csr_matrix(A)
    n = A.shape[0]
    fixed = np.unique(np.asarray(constrained_dofs, dtype=np.int64))
    if fixed.size and (fixed.min() < 0 or fixed.max() >= n):
        raise ValueError("constrained DOF index out of range")
    if fixed.size >= n:
        raise ValueError("cannot constrain every degree of freedom")
    vals = np.zeros(fixed.size) if values is None else np.broadcast_to(
        np.asarray(values, dtype=float), fixed.shape).copy()
    free = np.setdiff1d(np.arange(n), fixed)
    f = np.asarray(f, dtype=float)
    rhs = f[free] - A[free][:, fixed] @ vals
    return ReducedSystem(A[free][:, free].tocsc(), rhs, free, fixed, vals, n)


def bottom_dirichlet_dofs(mesh: TriMesh) -> np.ndarray:
    """Both displacement components of every bottom-boundary node."""
    nodes = mesh.nodes_tagged("bottom")
    return np.sort(np.concatenate([2 * nodes, 2 * nodes + 1]))


def top_axial_load(mesh: TriMesh, amplitude: float = 1.0) -> np.ndarray:
    """Nodal axial forces (N/m of thickness) on the top boundary."""
    f = np.zeros(mesh.n_dofs)
    f[2 * mesh.nodes_tagged("top") + 1] = amplitude
    return f


def write_matrix_market(path, matrix):
    from scipy.io import mmwrite

    mmwrite(str(path), sparse.coo_matrix(matrix))


def condition_estimate(matrix) -> float:
    """1-norm condition estimate of a sparse square matrix."""
    lu = spla.splu(sparse.csc_matrix(matrix))
    inv = spla.LinearOperator(matrix.shape, matvec=lu.solve, rmatvec=lambda x: lu.solve(x, trans="T"))
    return float(spla.norm(matrix, 1) * spla.onenormest(inv))
