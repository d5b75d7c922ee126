"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

import os

import numpy as np
from sklearn.utils.validation import check_array

from .tasks import Task, TaskValidationError, builtin_task, builtin_task_names, load_task, validate

STAGES = ("logits", "constrained", "physical")


def check_task(task, check_solvable: bool = False) -> Task:
    """Accept a Task, a built-in task name, or a path to a task file."""
    if isinstance(task, Task):
        return validate(task, check_solvable)
    if isinstance(task, (str, os.PathLike)):
        name = os.fspath(task)
        if name in builtin_task_names():
            return builtin_task(name, check_solvable)
        if os.path.isfile(name):
            return load_task(name, check_solvable)
        raise TaskValidationError(f"{name!r} is neither a built-in task nor an existing task file")
    raise TypeError(f"expected a Task, built-in name or path, got {type(task).__name__}")


def check_density(x, shape=None, stage: str = "constrained", volfrac: float | None = None) -> np.ndarray:
    """Validate a 2D density field for the given pipeline stage."""
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}, got {stage!r}")
    x = check_array(x, dtype=np.float64, ensure_2d=True, ensure_all_finite=True, input_name="density")
    if shape is not None and x.shape != tuple(shape):
        raise ValueError(f"density field has shape {x.shape}, expected {tuple(shape)}")
    if stage != "logits" and (x.min() < 0 or x.max() > 1):
        raise ValueError(f"{stage} densities must lie in [0, 1]")
    if volfrac is not None and abs(x.mean() - volfrac) > 1e-6:
        raise ValueError(f"mean density {x.mean():.8f} differs from the volume fraction {volfrac}")
    return x


def check_volfrac(volfrac) -> float:
    volfrac = float(volfrac)
    if not 0 < volfrac < 1:
        raise ValueError(f"volume fraction must lie strictly between 0 and 1, got {volfrac}")
    return volfrac
