import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import ConvergenceWarning

from mindrawdown import MinDrawdownPortfolio, NoSolutionError, SolveStatus

from oracles import grid_oracle, toy_prices


def test_params_round_trip_and_clone():
    est = MinDrawdownPortfolio(objective="minmax", lookback=5, delta=0.5)
    params = est.get_params()
    assert params["objective"] == "minmax" and params["lookback"] == 5
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(lookback=7)
    assert est.lookback == 7


def test_fit_predict_transform():
    V = toy_prices(2, 6)
    est = MinDrawdownPortfolio(objective="minmax", lookback=5).fit(V.T)
    best, _ = grid_oracle(V, 5, "minmax")
    assert est.objective_ == pytest.approx(best, abs=1e-2)
    assert est.weights_.sum() == pytest.approx(1.0)
    values = est.predict(V.T)
    assert values[-1] == pytest.approx(1000.0)
    assert est.transform(V.T).shape == (6, 1)
    assert est.score(V.T) == pytest.approx(-est.objective_)


def test_capital_override():
    V = toy_prices(2, 6)
    est = MinDrawdownPortfolio(objective="minmax", lookback=5).fit(V.T, capital=250.0)
    assert est.predict(V.T)[-1] == pytest.approx(250.0)


def test_feature_names_become_assets():
    pd = pytest.importorskip("pandas")
    V = toy_prices(2, 6)
    X = pd.DataFrame(V.T, columns=["AAA", "BBB"])
    est = MinDrawdownPortfolio(objective="minmax", lookback=5).fit(X)
    assert est.instance_.assets == ("AAA", "BBB")


def test_no_solution_raises():
    V = toy_prices(2, 6)
    with pytest.raises(NoSolutionError) as exc, pytest.warns(UserWarning):
        MinDrawdownPortfolio(delta=0.2).fit(V.T)
    assert exc.value.result.status is SolveStatus.INFEASIBLE


def test_gap_warns():
    V = toy_prices(11, 30, 3, vol=0.03)
    est = MinDrawdownPortfolio(lookback=20, node_limit=1)
    with pytest.warns(ConvergenceWarning):
        est.fit(V.T)
    assert est.result_.status is SolveStatus.FEASIBLE_WITH_GAP


def test_rejects_non_positive_prices():
    with pytest.raises(ValueError):
        MinDrawdownPortfolio().fit(-np.ones((4, 2)))
