"""scikit-learn style wrappers.

The designers take a task where an estimator would take ``X``; the building
blocks (projection, filter) are stateless transformers over 2D fields. All of
them support ``get_params``/``set_params``/``clone``, so parameter sweeps can
use the usual sklearn tooling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .projection import project
from .runner import METHODS, run
from .simp import ComplianceProblem, ConeFilter
from .validation import check_density, check_task, check_volfrac


class TopologyOptimizer(BaseEstimator):
    """Minimum-compliance design with one of the three methods.

    Parameters
    ----------
    method : {"cnn-lbfgs", "pixel-lbfgs", "oc"}
    max_iter : int or None
        Optimizer iterations; None uses the per-method default.
    seed : int
        CNN initialization seed (also used by ``init="cnn"`` for the baselines).
    init : {"constant", "cnn"}
        Starting design of the pixel-space methods.
    latent_dim, dense_channels, conv_channels
        CNN architecture; ignored unless the CNN is involved.

    Attributes
    ----------
    design_ : ndarray of shape (nely, nelx)
        Physical (filtered) densities of the best design found.
    density_ : ndarray of shape (nely, nelx)
        Constrained densities before filtering.
    compliance_ : float
    trace_ : OptimizationTrace
    n_iter_ : int
    """

    def __init__(
        self,
        method="cnn-lbfgs",
        max_iter=None,
        seed=0,
        init="constant",
        latent_dim=128,
        dense_channels=32,
        conv_channels=(128, 64, 32, 16, 1),
    ):
        self.method = method
        self.max_iter = max_iter
        self.seed = seed
        self.init = init
        self.latent_dim = latent_dim
        self.dense_channels = dense_channels
        self.conv_channels = conv_channels

    def fit(self, task, y=None):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        task = check_task(task)
        arch = {
            "latent_dim": self.latent_dim,
            "dense_channels": self.dense_channels,
            "conv_channels": tuple(self.conv_channels),
        }
        result = run(task, self.method, self.seed, self.max_iter, self.init, arch)
        self.task_ = task
        self.result_ = result
        self.design_ = result.design
        self.density_ = result.density
        self.compliance_ = result.compliance
        self.trace_ = result.trace
        self.n_iter_ = result.trace.rows[-1].iteration
        return self

    def predict(self, task=None):
        """The fitted design (physical densities)."""
        check_is_fitted(self, "design_")
        if task is not None and check_task(task).shape != self.design_.shape:
            raise ValueError("task grid does not match the fitted design")
        return self.design_

    def score(self, task=None, y=None):
        """Negative compliance of the fitted design on ``task`` (higher is better)."""
        check_is_fitted(self, "density_")
        task = self.task_ if task is None else check_task(task)
        check_density(self.density_, task.shape)
        return -ComplianceProblem(task.bc, task.simp_config).compliance(self.density_)


class VolumeProjection(TransformerMixin, BaseEstimator):
    """Logits to densities with mean exactly ``volfrac``."""

    def __init__(self, volfrac=0.5):
        self.volfrac = volfrac

    def fit(self, X, y=None):
        check_volfrac(self.volfrac)
        self.shape_ = check_density(X, stage="logits").shape
        return self

    def transform(self, X):
        check_is_fitted(self, "shape_")
        X = check_density(X, self.shape_, stage="logits")
        return project(X, check_volfrac(self.volfrac)).x


class DensityFilter(TransformerMixin, BaseEstimator):
    """Cone filter of the given radius over a fixed grid shape."""

    def __init__(self, radius=2.0):
        self.radius = radius

    def fit(self, X, y=None):
        X = check_density(X, stage="constrained")
        self.filter_ = ConeFilter(X.shape, self.radius)
        return self

    def transform(self, X):
        check_is_fitted(self, "filter_")
        return self.filter_.apply(check_density(X, self.filter_.shape, stage="constrained"))

    def adjoint(self, G):
        """Pull a gradient w.r.t. the filtered field back to the input field."""
        check_is_fitted(self, "filter_")
        return self.filter_.adjoint(np.asarray(G, dtype=float))
