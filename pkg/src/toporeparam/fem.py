"""Plane-stress finite elements on a regular grid of unit square Q4 elements.

Numbering convention (shared by every module and by task files):

* Elements are addressed by ``(ely, elx)`` with ``ely`` counting rows from the
  top and ``elx`` counting columns from the left. A density field is an array
  of shape ``(nely, nelx)``; the flat element index is column-major,
  ``e = ely + elx * nely``.
* Nodes are addressed by ``(i, j)`` with ``i`` in ``0..nelx`` (left to right)
  and ``j`` in ``0..nely`` (top to bottom). The flat node index is
  ``n = i * (nely + 1) + j`` (column-major, y fastest).
* Node ``n`` owns DOFs ``2n`` (x) and ``2n + 1`` (y). Positive y
  displacement/force points *up*, even though ``j`` counts downward.
* The 8 element DOFs are ordered lower-left, lower-right, upper-right,
  upper-left, each as (x, y).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

try:
    from sksparse.cholmod import CholmodNotPositiveDefiniteError, analyze
except ImportError:  # pragma: no cover - depends on system SuiteSparse
    analyze = None
    CholmodNotPositiveDefiniteError = None

logger = logging.getLogger(__name__)


class SingularSystemError(RuntimeError):
    """The stiffness matrix could not be factorized (insufficient supports)."""


@dataclass(frozen=True)
class Grid:
    nelx: int
    nely: int

    def __post_init__(self):
        if int(self.nelx) < 1 or int(self.nely) < 1:
            raise ValueError(f"grid needs at least one element per axis, got {self.nelx}x{self.nely}")

    @property
    def shape(self) -> tuple[int, int]:
        """Density-field shape ``(nely, nelx)``."""
        return (self.nely, self.nelx)

    @property
    def n_elements(self) -> int:
        return self.nelx * self.nely

    @property
    def n_nodes(self) -> int:
        return (self.nelx + 1) * (self.nely + 1)

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    def node_index(self, i, j):
        """Flat node index of node column ``i`` and node row ``j``."""
        return np.asarray(i) * (self.nely + 1) + np.asarray(j)

    @cached_property
    def edof(self) -> np.ndarray:
        """``(n_elements, 8)`` table of global DOFs, rows in flat element order."""
        elx, ely = np.meshgrid(np.arange(self.nelx), np.arange(self.nely), indexing="ij")
        n1 = ((self.nely + 1) * elx + ely).ravel()  # upper-left node
        n2 = ((self.nely + 1) * (elx + 1) + ely).ravel()  # upper-right node
        return np.stack(
            [2 * n1 + 2, 2 * n1 + 3, 2 * n2 + 2, 2 * n2 + 3, 2 * n2, 2 * n2 + 1, 2 * n1, 2 * n1 + 1],
            axis=1,
        )

    def flatten(self, field: np.ndarray) -> np.ndarray:
        """``(nely, nelx)`` field to flat element order."""
        return np.asarray(field).reshape(self.shape).ravel(order="F")

    def unflatten(self, flat: np.ndarray) -> np.ndarray:
        return np.asarray(flat).reshape(self.shape, order="F")


@dataclass(frozen=True)
class BoundaryConditions:
    """Fixed DOFs and point loads, both in global DOF indices."""

    grid: Grid
    fixed_dofs: np.ndarray
    loads: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        fixed = np.unique(np.asarray(self.fixed_dofs, dtype=np.int64))
        if fixed.size == 0:
            raise ValueError("at least one fixed DOF is required")
        ndof = self.grid.n_dofs
        if fixed.min() < 0 or fixed.max() >= ndof:
            raise ValueError(f"fixed DOF index out of range [0, {ndof})")
        bad = [d for d in self.loads if not 0 <= int(d) < ndof]
        if bad:
            raise ValueError(f"load DOF index out of range [0, {ndof}): {bad}")
        object.__setattr__(self, "fixed_dofs", fixed)
        object.__setattr__(self, "loads", {int(k): float(v) for k, v in self.loads.items()})

    @cached_property
    def free_dofs(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.grid.n_dofs), self.fixed_dofs)

    @cached_property
    def force(self) -> np.ndarray:
        """Dense global force vector; loads on fixed DOFs are dropped."""
        f = np.zeros(self.grid.n_dofs)
        for dof, value in self.loads.items():
            f[dof] += value
        f[self.fixed_dofs] = 0.0
        return f


def element_stiffness_matrix(nu: float = 0.3, E: float = 1.0) -> np.ndarray:
    """Stiffness matrix of a unit square bilinear plane-stress element."""
    if not 0.0 <= nu < 0.5:
        raise ValueError(f"Poisson ratio must lie in [0, 0.5), got {nu}")
    if E <= 0:
        raise ValueError(f"Young's modulus must be positive, got {E}")
    a11 = np.array([[12, 3, -6, -3], [3, 12, 3, 0], [-6, 3, 12, -3], [-3, 0, -3, 12]], dtype=float)
    a12 = np.array([[-6, -3, 0, 3], [-3, -6, -3, -6], [0, -3, -6, 3], [3, -6, 3, -6]], dtype=float)
    b11 = np.array([[-4, 3, -2, 9], [3, -4, -9, 4], [-2, -9, -4, -3], [9, 4, -3, -4]], dtype=float)
    b12 = np.array([[2, -3, 4, -9], [-3, 2, 9, -2], [4, 9, 2, 3], [-9, -2, 3, 2]], dtype=float)
    a = np.block([[a11, a12], [a12.T, a11]])
    b = np.block([[b11, b12], [b12.T, b11]])
    return E / (1 - nu**2) / 24 * (a + nu * b)


@dataclass
class StiffnessSystem:
    """Global stiffness restricted to free DOFs."""

    matrix: sp.csc_matrix
    free_dofs: np.ndarray

    @property
    def size(self) -> int:
        return self.free_dofs.size


class FESolver:
    """Assembly and solve machinery for one (grid, boundary conditions) pair.

    The sparsity pattern never changes between design iterations, so the COO
    scatter indices and the fill-reducing symbolic factorization are computed
    once and reused.
    """

    def __init__(self, bc: BoundaryConditions, nu: float = 0.3):
        self.bc = bc
        self.grid = bc.grid
        self.ke = element_stiffness_matrix(nu, 1.0)
        free = bc.free_dofs
        # global DOF -> position among free DOFs, -1 when fixed
        local = np.full(self.grid.n_dofs, -1, dtype=np.int64)
        local[free] = np.arange(free.size)
        edof = local[self.grid.edof]
        rows = np.repeat(edof, 8, axis=1).ravel()
        cols = np.tile(edof, (1, 8)).ravel()
        self._keep = (rows >= 0) & (cols >= 0)
        n = free.size
        keys, self._slot = np.unique(cols[self._keep] * n + rows[self._keep], return_inverse=True)
        self._indices = (keys % n).astype(np.int32)
        self._indptr = np.concatenate([[0], np.cumsum(np.bincount(keys // n, minlength=n))]).astype(np.int32)
        self._symbolic = None

    def assemble(self, young: np.ndarray) -> StiffnessSystem:
        """Scatter-add ``young[e] * k0`` over elements, keeping free rows/columns."""
        young = self.grid.flatten(young)
        if np.any(~(young > 0)):
            raise ValueError("element moduli must be strictly positive")
        values = (young[:, None] * self.ke.ravel()[None, :]).ravel()[self._keep]
        data = np.bincount(self._slot, weights=values, minlength=self._indices.size)
        n = self.bc.free_dofs.size
        k = sp.csc_matrix((data, self._indices, self._indptr), shape=(n, n))
        return StiffnessSystem(k, self.bc.free_dofs)

    def solve(self, system: StiffnessSystem) -> np.ndarray:
        f = self.bc.force
        u = np.zeros(self.grid.n_dofs)
        rhs = f[system.free_dofs]
        if not np.any(rhs):
            return u
        u[system.free_dofs], self._symbolic = cholesky_solve(system.matrix, rhs, self._symbolic)
        return u


def cholesky_solve(k: sp.csc_matrix, rhs: np.ndarray, symbolic=None, refine: int = 2):
    """Solve ``k u = rhs`` for SPD ``k``; returns ``(u, symbolic)`` for reuse.

    Uses CHOLMOD when scikit-sparse is importable, otherwise SuperLU in
    symmetric mode (``symbolic`` is then always None). A couple of iterative
    refinement sweeps keep the residual small when void elements make ``k``
    badly conditioned.
    """
    if analyze is not None:
        if symbolic is None:
            # supernodal mode is unreliable against some system BLAS builds
            symbolic = analyze(k, mode="simplicial")
        try:
            factor = symbolic.cholesky(k)
        except CholmodNotPositiveDefiniteError as exc:
            raise SingularSystemError(
                "stiffness matrix is not positive definite; the supports leave the structure free to move"
            ) from exc
        apply = factor
    else:
        try:
            lu = spla.splu(k, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise SingularSystemError(f"stiffness factorization failed: {exc}") from exc
        apply = lu.solve
    u = apply(rhs)
    target = 1e-12 * np.linalg.norm(rhs)
    for _ in range(refine):
        r = rhs - k @ u
        if np.linalg.norm(r) <= target:
            break
        u = u + apply(r)
    if not np.all(np.isfinite(u)):
        raise SingularSystemError("stiffness factorization produced non-finite displacements")
    # a rank-deficient k can factor with a roundoff-sized pivot; refinement then
    # cannot reduce the residual (0/1 void designs stay below ~1e-5)
    if np.linalg.norm(rhs - k @ u) > 1e-3 * np.linalg.norm(rhs):
        raise SingularSystemError("stiffness matrix is numerically singular; the supports leave the structure free to move")
    return u, symbolic


def assemble(grid: Grid, young: np.ndarray, bc: BoundaryConditions, nu: float = 0.3) -> StiffnessSystem:
    if bc.grid != grid:
        raise ValueError("boundary conditions belong to a different grid")
    return FESolver(bc, nu).assemble(young)


def solve(system: StiffnessSystem, bc: BoundaryConditions) -> np.ndarray:
    """Displacements for ``system``; fixed DOFs are exactly zero."""
    u = np.zeros(bc.grid.n_dofs)
    rhs = bc.force[system.free_dofs]
    if np.any(rhs):
        u[system.free_dofs], _ = cholesky_solve(system.matrix, rhs)
    return u


def compliance(u: np.ndarray, bc: BoundaryConditions) -> float:
    return float(bc.force @ u)


def element_energies(u: np.ndarray, grid: Grid, ke: np.ndarray) -> np.ndarray:
    """``u_e^T k0 u_e`` per element, as a ``(nely, nelx)`` field."""
    ue = u[grid.edof]
    return grid.unflatten(np.einsum("ei,ij,ej->e", ue, ke, ue))


def compliance_gradient_physical(u, xphys, cfg) -> np.ndarray:
    """d(compliance)/d(physical density) for the modified SIMP law; always <= 0."""
    xphys = np.asarray(xphys, dtype=float)
    grid = Grid(xphys.shape[1], xphys.shape[0])
    ce = element_energies(u, grid, element_stiffness_matrix(cfg.nu, 1.0))
    return -cfg.penal * xphys ** (cfg.penal - 1) * (cfg.E0 - cfg.Emin) * ce
