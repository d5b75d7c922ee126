import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from toporeparam.estimators import DensityFilter, TopologyOptimizer, VolumeProjection
from toporeparam.simp import ConeFilter


def test_get_params_and_clone():
    est = TopologyOptimizer(method="oc", max_iter=5)
    params = est.get_params()
    assert params["method"] == "oc" and params["max_iter"] == 5
    twin = clone(est)
    assert twin.get_params() == params and twin is not est


def test_fit_predict_score(small_task):
    est = TopologyOptimizer(method="oc", max_iter=5).fit(small_task)
    assert est.predict().shape == (8, 8)
    assert est.score() == pytest.approx(-est.compliance_, rel=1e-10)
    assert est.n_iter_ == 5


def test_unfitted():
    with pytest.raises(NotFittedError):
        TopologyOptimizer().predict()


def test_bad_method(small_task):
    with pytest.raises(ValueError):
        TopologyOptimizer(method="mma").fit(small_task)


def test_volume_projection(rng):
    x = VolumeProjection(volfrac=0.3).fit_transform(rng.normal(size=(6, 9)))
    assert abs(x.mean() - 0.3) <= 1e-6


def test_volume_projection_rejects_nan():
    with pytest.raises(ValueError):
        VolumeProjection().fit(np.array([[0.0, np.nan]]))


def test_density_filter(rng):
    x = rng.random((5, 7))
    f = DensityFilter(radius=2.0).fit(x)
    np.testing.assert_array_equal(f.transform(x), ConeFilter((5, 7)).apply(x))
    g = rng.normal(size=(5, 7))
    assert np.vdot(g, f.transform(x)) == pytest.approx(np.vdot(f.adjoint(g), x), rel=1e-12)


def test_density_filter_rejects_out_of_range():
    with pytest.raises(ValueError):
        DensityFilter().fit(np.full((3, 3), 1.5))
