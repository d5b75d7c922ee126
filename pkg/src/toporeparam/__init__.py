"""Minimum-compliance topology optimization with pixel and CNN parameterizations."""

from .cnn import CnnArchitecture, CnnParams, cnn_backward, cnn_forward, init_params
from .estimators import DensityFilter, TopologyOptimizer, VolumeProjection
from .fem import BoundaryConditions, Grid, SingularSystemError
from .projection import ProjectionResult, project, project_backward
from .runner import bench, emit_artifacts, ensemble, run, summarize
from .simp import ComplianceProblem, ConeFilter, SimpConfig, objective_and_gradient
from .tasks import Task, TaskValidationError, builtin_task, builtin_tasks, parse_task

__version__ = "0.1.0"

__all__ = [
    "BoundaryConditions",
    "CnnArchitecture",
    "CnnParams",
    "ComplianceProblem",
    "ConeFilter",
    "DensityFilter",
    "Grid",
    "ProjectionResult",
    "SimpConfig",
    "SingularSystemError",
    "Task",
    "TaskValidationError",
    "TopologyOptimizer",
    "VolumeProjection",
    "bench",
    "builtin_task",
    "builtin_tasks",
    "cnn_backward",
    "cnn_forward",
    "emit_artifacts",
    "ensemble",
    "init_params",
    "objective_and_gradient",
    "parse_task",
    "project",
    "project_backward",
    "run",
    "summarize",
]
