"""Reconstruction quality metrics.

RMS is the relative L2 error ``||E_hat - E_true|| / ||E_true||``. CNR is
``|mean_inc - mean_bg| / sqrt((var_inc + var_bg) / 2)`` with population
variances; a perfectly flat pair of regions gives ``inf``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import PhantomSpec, TriMesh, inclusion_mask

RMS_FORMULA = "rms = ||E_hat - E_true||_2 / ||E_true||_2"
CNR_FORMULA = "cnr = |mean_inc - mean_bg| / sqrt((var_inc + var_bg) / 2)"


@dataclass(frozen=True)
class RegionMasks:
    inclusion: np.ndarray
    background: np.ndarray

    def __post_init__(self):
        inc = np.asarray(self.inclusion, dtype=np.int64)
        bg = np.asarray(self.background, dtype=np.int64)
        if inc.size == 0 or bg.size == 0:
            raise ValueError("both regions must be non-empty")
        if np.intersect1d(inc, bg).size:
            raise ValueError("regions must be disjoint")
        object.__setattr__(self, "inclusion", inc)
        object.__setattr__(self, "background", bg)

    @classmethod
    def from_phantom(cls, mesh: TriMesh, spec: PhantomSpec) -> "RegionMasks":
        inside = inclusion_mask(mesh, spec)
        return cls(np.nonzero(inside)[0], np.nonzero(~inside)[0])


def rms_error(E_hat, E_true) -> float:
    E_hat = np.asarray(E_hat, dtype=float)
    E_true = np.asarray(E_true, dtype=float)
    if E_hat.shape != E_true.shape:
        raise ValueError("fields must have equal length")
    ref = np.linalg.norm(E_true)
    if ref == 0:
        raise ValueError("reference field has zero norm")
    return float(np.linalg.norm(E_hat - E_true) / ref)


def cnr(E_hat, masks: RegionMasks) -> float:
    E_hat = np.asarray(E_hat, dtype=float)
    a, b = E_hat[masks.inclusion], E_hat[masks.background]
    contrast = abs(a.mean() - b.mean())
    pooled = np.sqrt(0.5 * (a.var() + b.var()))
    if pooled == 0:
        return float("inf") if contrast > 0 else 0.0
    return float(contrast / pooled)
