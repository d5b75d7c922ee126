"""Task definitions and the task file format.

A task file is a YAML mapping::

    schema_version: 1
    name: mbb_beam_60x20
    category: mbb_beam
    description: free text
    nelx: 60
    nely: 20
    volfrac: 0.5
    supports:                    # which DOFs are held at zero
      - {nodes: "edge(left)", axes: x}
      - {nodes: "point(60, 20)", axes: y}
    loads:                       # force applied to *every* selected node
      - {nodes: "point(0, 0)", fx: 0.0, fy: -1.0}
    simp: {penal: 3.0}           # optional SimpConfig overrides

Node selectors use node coordinates ``(i, j)``: ``i`` in ``0..nelx`` from the
left, ``j`` in ``0..nely`` from the top (see :mod:`toporeparam.fem`):

* ``edge(left|right|top|bottom)``
* ``point(i, j)``
* ``region(i0:i1, j0:j1)`` -- inclusive node ranges
* ``line(i0, j0, i1, j1)`` -- nodes nearest to a straight segment

``fy`` is positive upward.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Any

import numpy as np
import yaml

from .fem import BoundaryConditions, Grid, SingularSystemError
from .simp import ComplianceProblem, SimpConfig

SCHEMA_VERSION = 1
SUITE_MIN_ELEMENTS = 2**11
SUITE_MAX_ELEMENTS = 2**16
SUITE_VOLFRAC_RANGE = (0.05, 0.5)
LARGE_TASK_ELEMENTS = 2**15

_TOP_KEYS = {"schema_version", "name", "category", "description", "nelx", "nely", "volfrac", "supports", "loads", "simp"}
_REQUIRED = ("name", "nelx", "nely", "volfrac", "supports", "loads")
_AXES = {"x": (0,), "y": (1,), "xy": (0, 1)}


class TaskValidationError(ValueError):
    pass


@dataclass(frozen=True)
class Support:
    nodes: str
    axes: str = "xy"


@dataclass(frozen=True)
class Load:
    nodes: str
    fx: float = 0.0
    fy: float = 0.0


@dataclass(frozen=True)
class Task:
    name: str
    nelx: int
    nely: int
    volfrac: float
    supports: tuple[Support, ...]
    loads: tuple[Load, ...]
    simp: dict = field(default_factory=dict)
    category: str = ""
    description: str = ""

    @property
    def grid(self) -> Grid:
        return Grid(self.nelx, self.nely)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nely, self.nelx)

    @property
    def n_elements(self) -> int:
        return self.nelx * self.nely

    @property
    def simp_config(self) -> SimpConfig:
        return SimpConfig(**self.simp)

    @property
    def fixed_dofs(self) -> np.ndarray:
        grid = self.grid
        dofs = [
            2 * select_nodes(grid, s.nodes)[:, None] + np.array(_AXES[s.axes])[None, :] for s in self.supports
        ]
        return np.unique(np.concatenate([d.ravel() for d in dofs])) if dofs else np.array([], dtype=int)

    @property
    def load_vector(self) -> dict[int, float]:
        grid = self.grid
        out: dict[int, float] = {}
        for load in self.loads:
            for n in select_nodes(grid, load.nodes):
                for dof, value in ((2 * n, load.fx), (2 * n + 1, load.fy)):
                    if value:
                        out[int(dof)] = out.get(int(dof), 0.0) + float(value)
        return out

    @property
    def bc(self) -> BoundaryConditions:
        return BoundaryConditions(self.grid, self.fixed_dofs, self.load_vector)

    def in_suite_range(self) -> bool:
        lo, hi = SUITE_VOLFRAC_RANGE
        return SUITE_MIN_ELEMENTS <= self.n_elements <= SUITE_MAX_ELEMENTS and lo <= self.volfrac <= hi

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"schema_version": SCHEMA_VERSION, "name": self.name}
        if self.category:
            doc["category"] = self.category
        if self.description:
            doc["description"] = self.description
        doc.update(nelx=self.nelx, nely=self.nely, volfrac=self.volfrac)
        doc["supports"] = [{"nodes": s.nodes, "axes": s.axes} for s in self.supports]
        doc["loads"] = [{"nodes": f.nodes, "fx": f.fx, "fy": f.fy} for f in self.loads]
        if self.simp:
            doc["simp"] = dict(self.simp)
        return doc


# --- node selectors ----------------------------------------------------------

_INT = r"\s*(-?\d+)\s*"
_PATTERNS = {
    "edge": re.compile(r"^edge\(\s*(left|right|top|bottom)\s*\)$"),
    "point": re.compile(rf"^point\({_INT},{_INT}\)$"),
    "region": re.compile(rf"^region\({_INT}:{_INT},{_INT}:{_INT}\)$"),
    "line": re.compile(rf"^line\({_INT},{_INT},{_INT},{_INT}\)$"),
}


def select_nodes(grid: Grid, selector: str) -> np.ndarray:
    """Flat node indices for a selector string (sorted, unique)."""
    text = selector.strip()
    kind = text.split("(", 1)[0].strip()
    pattern = _PATTERNS.get(kind)
    match = pattern.match(text) if pattern else None
    if match is None:
        raise TaskValidationError(f"cannot parse node selector {selector!r}")
    nx, ny = grid.nelx, grid.nely
    if kind == "edge":
        side = match.group(1)
        if side in ("left", "right"):
            i = 0 if side == "left" else nx
            ii, jj = np.full(ny + 1, i), np.arange(ny + 1)
        else:
            j = 0 if side == "top" else ny
            ii, jj = np.arange(nx + 1), np.full(nx + 1, j)
    elif kind == "point":
        ii, jj = np.array([int(match.group(1))]), np.array([int(match.group(2))])
    elif kind == "region":
        i0, i1, j0, j1 = (int(g) for g in match.groups())
        if i1 < i0 or j1 < j0:
            raise TaskValidationError(f"empty region in selector {selector!r}")
        ii, jj = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1), indexing="ij")
    else:
        i0, j0, i1, j1 = (int(g) for g in match.groups())
        steps = max(abs(i1 - i0), abs(j1 - j0), 1)
        t = np.linspace(0.0, 1.0, steps + 1)
        # round half away from zero so the node set does not depend on banker's rounding
        ii = np.floor(i0 + t * (i1 - i0) + 0.5).astype(int)
        jj = np.floor(j0 + t * (j1 - j0) + 0.5).astype(int)
    ii, jj = np.ravel(ii), np.ravel(jj)
    if ii.min() < 0 or ii.max() > nx or jj.min() < 0 or jj.max() > ny:
        raise TaskValidationError(f"selector {selector!r} reaches outside the {nx}x{ny} element grid")
    return np.unique(grid.node_index(ii, jj))


# --- parsing and validation --------------------------------------------------


def _rigid_modes(grid: Grid) -> np.ndarray:
    n = np.arange(grid.n_nodes)
    x = (n // (grid.nely + 1)).astype(float)
    y = -(n % (grid.nely + 1)).astype(float)
    modes = np.zeros((grid.n_dofs, 3))
    modes[0::2, 0] = 1.0
    modes[1::2, 1] = 1.0
    modes[0::2, 2] = -y
    modes[1::2, 2] = x
    return modes


def validate(task: Task, check_solvable: bool = True) -> Task:
    """Raise TaskValidationError unless ``task`` is well-posed."""
    if not task.name:
        raise TaskValidationError("task name must be non-empty")
    if task.nelx < 1 or task.nely < 1:
        raise TaskValidationError(f"grid must have at least one element per axis, got {task.nelx}x{task.nely}")
    if not 0 < task.volfrac < 1:
        raise TaskValidationError(f"volfrac must lie strictly between 0 and 1, got {task.volfrac}")
    if not task.supports:
        raise TaskValidationError("task has no supports: the stiffness matrix would be singular")
    if not task.loads:
        raise TaskValidationError("task has no loads")
    for s in task.supports:
        if s.axes not in _AXES:
            raise TaskValidationError(f"support axes must be one of {sorted(_AXES)}, got {s.axes!r}")
    try:
        cfg = task.simp_config
    except TypeError as exc:
        raise TaskValidationError(f"unknown simp override: {exc}") from exc
    except ValueError as exc:
        raise TaskValidationError(f"invalid simp override: {exc}") from exc
    grid = task.grid
    fixed = task.fixed_dofs
    modes = _rigid_modes(grid)[fixed]
    if np.linalg.matrix_rank(modes) < 3:
        raise TaskValidationError(
            "supports do not prevent rigid-body motion (need to restrain x and y translation and rotation): "
            + ", ".join(f"{s.nodes}[{s.axes}]" for s in task.supports)
        )
    loads = task.load_vector
    if not any(v for d, v in loads.items() if d not in set(fixed.tolist())):
        raise TaskValidationError("all loads act on fixed DOFs; compliance would be identically zero")
    if check_solvable:
        try:
            c = ComplianceProblem(task.bc, cfg).compliance(np.full(task.shape, task.volfrac))
        except SingularSystemError as exc:
            raise TaskValidationError(f"trial factorization failed: {exc}") from exc
        if not np.isfinite(c):
            raise TaskValidationError("uniform-density compliance is not finite")
    return task


def task_from_dict(doc: dict, check_solvable: bool = True) -> Task:
    if not isinstance(doc, dict):
        raise TaskValidationError("task document must be a mapping")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise TaskValidationError(f"unknown task fields: {sorted(unknown)}")
    missing = [k for k in _REQUIRED if k not in doc]
    if missing:
        raise TaskValidationError(f"missing task fields: {missing}")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise TaskValidationError(f"unsupported schema_version {version}; expected {SCHEMA_VERSION}")
    try:
        supports = tuple(_entry(Support, s, {"nodes", "axes"}) for s in doc["supports"] or ())
        loads = tuple(_entry(Load, f, {"nodes", "fx", "fy"}) for f in doc["loads"] or ())
        task = Task(
            name=str(doc["name"]),
            nelx=int(doc["nelx"]),
            nely=int(doc["nely"]),
            volfrac=float(doc["volfrac"]),
            supports=supports,
            loads=loads,
            # YAML 1.1 reads exponent-only literals such as 1e-9 as strings
            simp={str(k): float(v) for k, v in (doc.get("simp") or {}).items()},
            category=str(doc.get("category", "")),
            description=str(doc.get("description", "")),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, TaskValidationError):
            raise
        raise TaskValidationError(f"malformed task document: {exc}") from exc
    return validate(task, check_solvable)


def _entry(cls, item, allowed):
    if not isinstance(item, dict):
        raise TaskValidationError(f"{cls.__name__.lower()} entries must be mappings, got {item!r}")
    unknown = set(item) - allowed
    if unknown:
        raise TaskValidationError(f"unknown {cls.__name__.lower()} fields: {sorted(unknown)}")
    if "nodes" not in item:
        raise TaskValidationError(f"{cls.__name__.lower()} entry is missing 'nodes'")
    kwargs = dict(item)
    if cls is Load:
        kwargs["fx"] = float(kwargs.get("fx", 0.0))
        kwargs["fy"] = float(kwargs.get("fy", 0.0))
    else:
        kwargs["axes"] = str(kwargs.get("axes", "xy"))
    return cls(**kwargs)


def parse_task(document: str | bytes, check_solvable: bool = True) -> Task:
    """Parse a task file's contents into a validated Task."""
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    try:
        doc = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        raise TaskValidationError(f"task file is not valid YAML: {exc}") from exc
    return task_from_dict(doc, check_solvable)


def dump_task(task: Task) -> str:
    return yaml.safe_dump(task.to_dict(), sort_keys=False)


def load_task(path, check_solvable: bool = True) -> Task:
    with open(path, "rb") as fh:
        return parse_task(fh.read(), check_solvable)


def builtin_task_names() -> list[str]:
    root = resources.files(__package__) / "task_library"
    return sorted(p.name[: -len(".yaml")] for p in root.iterdir() if p.name.endswith(".yaml"))


def builtin_task(name: str, check_solvable: bool = False) -> Task:
    path = resources.files(__package__) / "task_library" / f"{name}.yaml"
    if not path.is_file():
        raise KeyError(f"no built-in task named {name!r}; see builtin_task_names()")
    return parse_task(path.read_bytes(), check_solvable)


def builtin_tasks(check_solvable: bool = False) -> list[Task]:
    return [builtin_task(name, check_solvable) for name in builtin_task_names()]
