"""Smoke test for the chronoskill extension module.

Build and install first, for example:
    pip install maturin
    maturin develop --release -m crates/python/Cargo.toml
then run this file directly or with pytest.
"""

import json
import math
import pathlib

import chronoskill

DATA = pathlib.Path(__file__).resolve().parents[1] / "crates" / "core" / "data"


def test_fit_and_predict():
    model = chronoskill.Model("probit")
    kernel = chronoskill.Kernel.sum([chronoskill.Kernel.constant(0.5), chronoskill.Kernel.matern12(1.0, 2.0)])
    for name in ("a", "b", "c"):
        model.add_feature(name, kernel)
    games = [("a", "b", 1), ("b", "c", 1), ("a", "c", 1), ("c", "a", -1), ("a", "b", 1)]
    for k, (i, j, y) in enumerate(games):
        model.observe([(i, 1.0), (j, -1.0)], 0.1 * k, y)
    report = model.fit(tolerance=1e-6)
    assert report["converged"]
    loss, tie, win = model.predict([("a", 1.0), ("c", -1.0)], 1.0)
    assert tie == 0.0 and abs(loss + win - 1.0) < 1e-12 and win > 0.5
    mean_a, _ = model.marginal_at("a", 0.5)
    mean_c, _ = model.marginal_at("c", 0.5)
    assert mean_a > mean_c
    traj = model.trajectory("a", [0.0, 0.5, 1.0])
    assert len(traj) == 3 and all(std > 0 for _, _, std in traj)

    again = chronoskill.Model.from_snapshot(model.snapshot())
    assert again.predict([("a", 1.0), ("c", -1.0)], 1.0) == (loss, tie, win)
    assert math.isfinite(model.log_marginal())


def test_bad_kernel_is_a_value_error():
    try:
        chronoskill.Kernel({"type": "matern12", "var": 1.0, "lengthscale": 2.0})
    except ValueError as e:
        assert "lengthscale" in str(e)
    else:
        raise AssertionError("expected ValueError")


def test_evaluation_on_bundled_data():
    csv = str(DATA / "league.csv")
    base = chronoskill.random_baseline(csv)
    assert round(base["log_loss"], 4) == 0.6931
    template = json.loads((DATA / "model.json").read_text())
    result = chronoskill.evaluate(template, csv)
    assert result["n"] == base["n"] and result["log_loss"] < base["log_loss"]


if __name__ == "__main__":
    test_fit_and_predict()
    test_bad_kernel_is_a_value_error()
    test_evaluation_on_bundled_data()
    print("ok")
