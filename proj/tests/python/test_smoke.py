import math

import numpy as np
import pytest

import npis


def test_version_and_registry():
    assert npis.__version__ == "0.1.0"
    assert set(npis.problems()) == {"example1", "bs-call", "example3"}


def test_integrate_is_deterministic():
    a = npis.integrate("bs-call?K=130", "nis", n=5000, seed=7)
    b = npis.integrate("bs-call?K=130", "nis", n=5000, seed=7)
    assert a.estimate == b.estimate
    assert a.pilot_size + a.main_size == 5000
    se = math.sqrt(a.within_run_variance)
    assert abs(a.estimate - npis.black_scholes_price(strike=130.0)) < 5 * se


def test_replicate_reports_mse_decomposition():
    r = npis.replicate("example1?d=1", "mc", n=500, runs=20, seed=1, workers=2)
    assert len(r.estimates) == 20
    assert r.oracle == 0.0
    assert r.mse == pytest.approx(r.variance + r.bias**2)
    assert r.relative_efficiency(r) == 1.0


def test_errors_map_to_python_exceptions():
    with pytest.raises(ValueError, match="unknown problem"):
        npis.integrate("example9")
    with pytest.raises(ValueError):
        npis.integrate("example1", bandwidth="wide")
    with pytest.raises(ValueError):
        npis.Lbfp.deserialize("LBFP1 1\n")


def test_lbfp_fit_evaluate_sample():
    rng = np.random.default_rng(0)
    f = npis.Lbfp.fit(rng.uniform(size=(4000, 2)), bin_width=0.25)
    assert f.dim == 2
    assert f.bin_width == 0.25
    x = f.sample(rng.uniform(size=(1000, 2)))
    assert x.shape == (1000, 2)
    assert np.all(f(x) > 0)
    assert f(np.array([[10.0, 10.0]]))[0] == 0.0
    g = npis.Lbfp.deserialize(f.serialize())
    assert np.array_equal(g(x), f(x))


def test_level_prob_matches_gambler_ruin():
    est, se = npis.level_prob(0.074, 0.147, K=6, method="nis", periods=100_000, seed=3)
    assert abs(est - npis.gambler_ruin_prob(0.074, 0.147, 6)) < 4 * se


def test_synthetic_trace_rates():
    inter, service = npis.synthetic_trace(22248, 1)
    assert inter.shape == service.shape == (22248,)
    assert 1 / inter.mean() == pytest.approx(0.074, rel=0.03)
    assert 1000 / service.mean() == pytest.approx(0.147, rel=0.03)


def test_cli_entry_point(capsys):
    assert npis.main(["integrate", "--method", "mc", "--n", "100", "--seed", "5"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("# npis 0.1.0 integrate")
    assert npis.main(["integrate", "--method", "nope"]) != 0
