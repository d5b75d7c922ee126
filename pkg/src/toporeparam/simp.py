"""Density filtering, SIMP interpolation and the compliance objective."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fem import FESolver, Grid, compliance, element_energies


@dataclass(frozen=True)
class SimpConfig:
    """Material law and filter constants (defaults of the classic 88-line code)."""

    penal: float = 3.0
    E0: float = 1.0
    Emin: float = 1e-9
    nu: float = 0.3
    filter_radius: float = 2.0

    def __post_init__(self):
        if self.penal < 1:
            raise ValueError(f"penal must be >= 1, got {self.penal}")
        if not 0 < self.Emin < self.E0:
            raise ValueError(f"need 0 < Emin < E0, got Emin={self.Emin}, E0={self.E0}")
        if not 0 <= self.nu < 0.5:
            raise ValueError(f"nu must lie in [0, 0.5), got {self.nu}")
        if self.filter_radius < 1:
            raise ValueError(f"filter_radius must be >= 1, got {self.filter_radius}")

    def replace(self, **changes) -> SimpConfig:
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


class ConeFilter:
    """Linear cone filter on a ``(nely, nelx)`` grid.

    Output element ``i`` is the weighted mean of inputs ``j`` with weights
    ``max(0, r - dist(i, j))`` (center-to-center distance, only ``dist < r``),
    normalized per output element.
    """

    def __init__(self, shape: tuple[int, int], radius: float = 2.0):
        if radius < 1:
            raise ValueError(f"filter radius must be >= 1, got {radius}")
        self.shape = tuple(shape)
        self.radius = float(radius)
        nely, nelx = self.shape
        reach = int(np.ceil(radius)) - 1
        offsets = [
            (dy, dx, radius - np.hypot(dy, dx))
            for dy in range(-reach, reach + 1)
            for dx in range(-reach, reach + 1)
            if np.hypot(dy, dx) < radius
        ]
        iy, ix = np.meshgrid(np.arange(nely), np.arange(nelx), indexing="ij")
        rows, cols, vals = [], [], []
        for dy, dx, w in offsets:
            jy, jx = iy + dy, ix + dx
            ok = (jy >= 0) & (jy < nely) & (jx >= 0) & (jx < nelx)
            rows.append((iy * nelx + ix)[ok])
            cols.append((jy * nelx + jx)[ok])
            vals.append(np.full(ok.sum(), w))
        h = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nely * nelx,) * 2
        )
        rowsum = np.asarray(h.sum(axis=1)).ravel()
        self.matrix = sp.diags(1.0 / rowsum) @ h
        self.matrix = self.matrix.tocsr()
        self._transpose = self.matrix.T.tocsr()

    def _check(self, field):
        field = np.asarray(field, dtype=float)
        if field.shape != self.shape:
            raise ValueError(f"field shape {field.shape} does not match filter shape {self.shape}")
        return field

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x)
        return (self.matrix @ x.ravel()).reshape(self.shape)

    def adjoint(self, g: np.ndarray) -> np.ndarray:
        g = self._check(g)
        return (self._transpose @ g.ravel()).reshape(self.shape)


def cone_filter_apply(x, f: ConeFilter) -> np.ndarray:
    return f.apply(x)


def cone_filter_adjoint(g, f: ConeFilter) -> np.ndarray:
    return f.adjoint(g)


def young_modulus(xphys, cfg: SimpConfig) -> np.ndarray:
    """Modified SIMP: ``Emin + x**p * (E0 - Emin)``."""
    xphys = np.asarray(xphys, dtype=float)
    return cfg.Emin + xphys**cfg.penal * (cfg.E0 - cfg.Emin)


class ComplianceProblem:
    """Compliance of a density field ``x`` for one task, with its gradient.

    Caches the filter and the FE scatter/factorization structure so repeated
    evaluations only redo the numeric work.
    """

    def __init__(self, bc, cfg: SimpConfig | None = None):
        self.cfg = cfg or SimpConfig()
        self.bc = bc
        self.grid: Grid = bc.grid
        self.filter = ConeFilter(self.grid.shape, self.cfg.filter_radius)
        self.fe = FESolver(bc, self.cfg.nu)

    def physical(self, x: np.ndarray) -> np.ndarray:
        return self.filter.apply(x)

    def displacements(self, xphys: np.ndarray) -> np.ndarray:
        return self.fe.solve(self.fe.assemble(young_modulus(xphys, self.cfg)))

    def compliance(self, x: np.ndarray) -> float:
        return compliance(self.displacements(self.physical(x)), self.bc)

    def __call__(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        x = np.asarray(x, dtype=float)
        if x.shape != self.grid.shape:
            raise ValueError(f"density shape {x.shape} != grid shape {self.grid.shape}")
        xphys = self.filter.apply(x)
        u = self.displacements(xphys)
        c = compliance(u, self.bc)
        ce = element_energies(u, self.grid, self.fe.ke)
        dc_phys = -self.cfg.penal * xphys ** (self.cfg.penal - 1) * (self.cfg.E0 - self.cfg.Emin) * ce
        return c, self.filter.adjoint(dc_phys)


def objective_and_gradient(x, task, cfg: SimpConfig | None = None) -> tuple[float, np.ndarray]:
    """Compliance and d(compliance)/dx for a constrained density field."""
    bc = getattr(task, "bc", task)
    if cfg is None:
        cfg = getattr(task, "simp", None) or SimpConfig()
    return ComplianceProblem(bc, cfg)(x)
