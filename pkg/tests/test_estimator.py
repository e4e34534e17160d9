import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from selexfit.energy import EnergyMatrix
from selexfit.estimator import SelexEnergyModel
from selexfit.simulate import SimConfig, simulate_selex
from selexfit.thermo import SelexModel
from selexfit.validation import check_seed, check_sequences


@pytest.fixture(scope="module")
def data():
    truth = SelexModel(EnergyMatrix([[-1.0, 0.0, -2.0, -0.5], [0.0, -1.5, -1.0, -3.0],
                                     [-2.0, -1.0, 0.0, -0.7]]), (0.5, 0.5))
    return simulate_selex(SimConfig(truth, pool_size=5000, k=5, sample_per_round=400, seed=1))


def test_params_and_clone():
    est = SelexEnergyModel(l=3, restarts=2, seed=4)
    assert est.get_params()["restarts"] == 2
    twin = clone(est).set_params(restarts=3)
    assert twin.restarts == 3 and est.restarts == 2


def test_fit_transform_predict(data):
    est = SelexEnergyModel(l=3, restarts=2, denominator="exact", max_iter=1500, seed=0).fit(data)
    assert est.matrix_.l == 3 and est.log_tf_.shape == (2,)
    e = est.transform(["ACGTA", "TTTTT"])
    assert e.shape == (2, 1) and np.all(e <= 0)
    p = est.predict_proba(["ACGTA"])
    assert p.shape == (1, 2) and np.all((p > 0) & (p < 1))
    assert est.score(data) == pytest.approx(est.log_likelihood_, rel=1e-9)


def test_fit_accepts_records(data):
    a = SelexEnergyModel(l=3, restarts=1, denominator="exact", max_iter=200, seed=0).fit(data)
    b = SelexEnergyModel(l=3, restarts=1, denominator="exact", max_iter=200, seed=0).fit(
        list(data.records()))
    assert a.matrix_ == b.matrix_


def test_not_fitted():
    with pytest.raises(NotFittedError):
        SelexEnergyModel().transform(["ACGT"])


def test_validation_helpers():
    with pytest.raises(ValueError):
        check_seed(None)
    with pytest.raises(ValueError):
        check_seed(-1)
    with pytest.raises(ValueError):
        check_seed(True)
    assert check_seed(np.int64(3)) == 3
    with pytest.raises(ValueError):
        check_sequences(["ACG", "ACGT"])
    with pytest.raises(ValueError):
        check_sequences([])
    assert check_sequences("acg") == ["ACG"]
