import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pdmix import NPMLEMixture, SemiparametricMixture


def test_params_and_clone():
    est = NPMLEMixture(delta=0.5, solver="dem", psi_tol=0.01)
    params = est.get_params()
    assert params["delta"] == 0.5 and params["solver"] == "dem"
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(delta=2.0)
    assert est.delta == 2.0


def test_fit_iris(iris):
    raw, *_ = iris
    est = NPMLEMixture(delta=1.0).fit(raw.rows)
    assert est.converged_
    assert est.loglik_ == pytest.approx(-376.9440, abs=5e-4)
    assert est.n_components_ == 17
    P = est.predict_proba(raw.rows)
    assert P.shape == (raw.rows.shape[0], 17)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert est.predict(raw.rows).max() < 17
    # the deduplicated loglikelihood equals the per-row sum
    assert est.score_samples(raw.rows).sum() == pytest.approx(est.loglik_, abs=1e-8)
    np.testing.assert_allclose(est.transform(raw.rows[:3]), P[:3])


def test_poisson_mortality_1d_input(mortality):
    x = np.repeat(mortality.y[:, 0], mortality.counts.astype(int))
    est = NPMLEMixture(family="poisson", support=np.arange(10.0)).fit(x)
    assert est.loglik_ == pytest.approx(-1990.0928, abs=5e-4)
    assert est.n_features_in_ == 1


def test_input_validation(iris):
    raw, *_ = iris
    with pytest.raises(NotFittedError):
        NPMLEMixture().predict_proba(raw.rows)
    with pytest.raises(ValueError):
        NPMLEMixture(family="poisson").fit(np.array([0.0, 1.5, 2.0]))
    with pytest.raises(ValueError):
        NPMLEMixture(family="poisson").fit(np.array([0.0, -1.0]))
    with pytest.raises(ValueError):
        NPMLEMixture(family="gamma").fit(raw.rows)
    with pytest.raises(ValueError):
        NPMLEMixture(support="grid").fit(raw.rows)
    with pytest.raises(ValueError):
        NPMLEMixture().fit(np.array([[0.0, np.nan]]))
    est = NPMLEMixture(delta=5.0).fit(raw.rows)
    with pytest.raises(ValueError, match="features"):
        est.predict(raw.rows[:, :3])


def test_semiparametric_two_step(iris):
    raw, *_ = iris
    est = SemiparametricMixture(delta=2.0).fit(raw.rows)
    assert est.loglik_ >= est.fixed_loglik_ - 1e-6
    assert est.covariance_.shape == (4, 4)
    assert est.weights_.sum() == pytest.approx(1.0, abs=1e-10)
    assert est.predict_proba(raw.rows).shape[1] == est.n_components_
