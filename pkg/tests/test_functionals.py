import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfsde import (
    ContractError,
    dirac,
    girsanov_weight,
    make_coefficients,
    make_cylindrical,
    make_path_record,
    novikov_estimate,
    simulate_mckean_vlasov,
    verify_path_independence,
)
from mfsde.functionals import (
    accumulate,
    accumulator_series,
    build_pair_from_V,
    potential_increment,
)


def brownian_flow(n=200, T=1.0, dt=0.01, seed=0, s_coeff=1.0):
    coeff = make_coefficients("brownian", s=s_coeff)
    return coeff, simulate_mckean_vlasov(coeff, dirac([0.0]), n, T, dt, seed)


# ---------------------------------------------------------------------------
# accumulation


def test_unit_source_integrates_time():
    _, flow = brownian_flow(n=4, dt=0.25)
    out = accumulate(lambda t, X, mu: np.ones(X.shape[0]), None, flow, 0.0, 1.0)
    assert np.allclose(out, 1.0, atol=1e-14)


def test_zero_pair_accumulates_zero():
    _, flow = brownian_flow(n=4, dt=0.25)
    out = accumulate(
        lambda t, X, mu: np.zeros(X.shape[0]),
        lambda t, X, mu: np.zeros((X.shape[0], 1)),
        flow,
        0.0,
        1.0,
    )
    assert np.all(out == 0.0)


def test_constant_integrand_brownian_statistics():
    c = 1.5
    _, flow = brownian_flow(n=10_000, dt=0.01, seed=4)
    out = accumulate(None, lambda t, X, mu: np.full((X.shape[0], 1), c), flow, 0.0, 1.0)
    w_increment = flow.noise.sum(axis=0)[:, 0]
    assert np.allclose(out, c * w_increment, atol=1e-12)
    se = out.std(ddof=1) / np.sqrt(out.size)
    assert abs(out.mean()) <= 3 * se
    assert out.var(ddof=1) == pytest.approx(c**2 * 1.0, rel=0.05)


def test_misaligned_interval_rejected():
    _, flow = brownian_flow(n=4, dt=0.25)
    with pytest.raises(ContractError):
        accumulate(lambda t, X, mu: np.ones(X.shape[0]), None, flow, 0.0, 0.3)


@given(split=st.sampled_from([0.25, 0.5, 0.75]))
@settings(max_examples=10, deadline=None)
def test_additivity_across_subintervals(split):
    _, flow = brownian_flow(n=8, dt=0.25 / 2, seed=1)
    f = lambda t, X, mu: X[:, 0]
    g = lambda t, X, mu: np.cos(X)
    a = accumulate(f, g, flow, 0.0, split)
    b = accumulate(f, g, flow, split, 1.0)
    c = accumulate(f, g, flow, 0.0, 1.0)
    assert np.allclose(a + b, c, atol=1e-14)


def test_series_starts_at_zero():
    _, flow = brownian_flow(n=4, dt=0.25)
    series = accumulator_series(lambda t, X, mu: np.ones(X.shape[0]), None, flow, 0.0, 1.0)
    assert np.all(series[0] == 0.0)


# ---------------------------------------------------------------------------
# pair construction from a potential


def test_pair_from_linear_potential():
    coeff, flow = brownian_flow(n=4, dt=0.25)
    V = make_cylindrical("coord", outer_params={"i": 0})
    f, g = build_pair_from_V(coeff, V)
    X = flow.states[0]
    mu = flow.measure_at(0)
    assert np.allclose(f(0.0, X, mu), 0.0, atol=1e-14)
    assert np.allclose(g(0.0, X, mu), 1.0, atol=1e-14)


def test_pair_from_time_potential():
    coeff, flow = brownian_flow(n=4, dt=0.25)
    V = make_cylindrical("time")
    f, g = build_pair_from_V(coeff, V)
    X = flow.states[0]
    mu = flow.measure_at(0)
    assert np.allclose(f(0.0, X, mu), 1.0, atol=1e-14)
    assert np.allclose(g(0.0, X, mu), 0.0, atol=1e-14)


def test_pair_from_square_potential():
    coeff, flow = brownian_flow(n=4, dt=0.25)
    V = make_cylindrical("x_norm_sq")
    f, g = build_pair_from_V(coeff, V)
    X = flow.states[1]
    mu = flow.measure_at(1)
    assert np.allclose(f(0.25, X, mu), 1.0, atol=1e-13)
    assert np.allclose(g(0.25, X, mu), 2.0 * X, atol=1e-13)


# ---------------------------------------------------------------------------
# path-independence verification


def test_linear_potential_zero_defect():
    coeff, flow = brownian_flow(n=50, dt=0.25, seed=2)
    V = make_cylindrical("coord", outer_params={"i": 0})
    f, g = build_pair_from_V(coeff, V)
    defect = accumulate(f, g, flow, 0.0, 1.0) - potential_increment(V, flow, 0.0, 1.0)
    assert np.allclose(defect, 0.0, atol=1e-13)
    report = verify_path_independence(V, f, g, [flow], 0.0, 1.0)
    assert report.verdict == "PASS"


def test_square_potential_defect_halves_when_dt_quartered():
    coeff = make_coefficients("brownian", s=1.0)
    V = make_cylindrical("x_norm_sq")
    f, g = build_pair_from_V(coeff, V)
    flows = [
        simulate_mckean_vlasov(coeff, dirac([0.0]), 1500, 1.0, dt, seed=8 + i)
        for i, dt in enumerate((1e-2, 2.5e-3))
    ]
    report = verify_path_independence(V, f, g, flows, 0.0, 1.0)
    assert report.verdict == "PASS"
    ratio = report.rows[0].rms_defect / report.rows[1].rms_defect
    assert 1.5 <= ratio <= 2.8
    assert report.rows[1].decay_order == pytest.approx(0.5, abs=0.15)


def test_perturbed_pair_fails_with_flat_defect():
    coeff = make_coefficients("brownian", s=1.0)
    V = make_cylindrical("coord", outer_params={"i": 0})
    f, g = build_pair_from_V(coeff, V)

    def g_bad(t, X, mu):
        return g(t, X, mu) + 0.1

    flows = [
        simulate_mckean_vlasov(coeff, dirac([0.0]), 1500, 1.0, dt, seed=8 + i)
        for i, dt in enumerate((1e-2, 2.5e-3))
    ]
    report = verify_path_independence(V, f, g_bad, flows, 0.0, 1.0)
    assert report.verdict == "FAIL"
    # the surviving stochastic integral is dt-independent: 0.1 * (W_T - W_0)
    assert report.defect_floor == pytest.approx(0.1, rel=0.1)


def test_report_csv_schema(tmp_path):
    coeff, flow = brownian_flow(n=20, dt=0.25)
    V = make_cylindrical("coord", outer_params={"i": 0})
    f, g = build_pair_from_V(coeff, V)
    report = verify_path_independence(V, f, g, [flow], 0.0, 1.0)
    path = tmp_path / "report.csv"
    report.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "dt,N,M,rms_defect,max_defect,decay_order,verdict"
    assert len(lines) == 2


# ---------------------------------------------------------------------------
# Girsanov weights


def test_zero_integrand_unit_weight():
    _, flow = brownian_flow(n=10, dt=0.25)
    w = girsanov_weight(lambda t, X, mu: np.zeros((X.shape[0], 1)), flow, 1.0, 0.0, 1.0)
    assert np.allclose(w, 1.0)


def test_zero_beta_rejected():
    _, flow = brownian_flow(n=4, dt=0.25)
    with pytest.raises(ContractError):
        girsanov_weight(lambda t, X, mu: np.zeros((X.shape[0], 1)), flow, 0.0, 0.0, 1.0)


def test_constant_integrand_weight_martingale():
    _, flow = brownian_flow(n=100_000, dt=0.01, seed=6)
    g = lambda t, X, mu: np.full((X.shape[0], 1), 0.8)
    w = girsanov_weight(g, flow, 1.0, 0.0, 1.0)
    se = w.std(ddof=1) / np.sqrt(w.size)
    assert abs(w.mean() - 1.0) <= 3 * se


def test_reweighting_removes_drift():
    coeff = make_coefficients("constant_drift", c=0.5, s=1.0)
    flow = simulate_mckean_vlasov(coeff, dirac([0.0]), 50_000, 1.0, 0.01, seed=7)
    g = lambda t, X, mu: np.full((X.shape[0], 1), 0.5)
    w = girsanov_weight(g, flow, 1.0, 0.0, 1.0)
    est = w * (flow.states[-1][:, 0] - flow.states[0][:, 0])
    se = est.std(ddof=1) / np.sqrt(est.size)
    assert abs(est.mean()) <= 3 * se


@given(split=st.sampled_from([0.25, 0.5, 0.75]))
@settings(max_examples=10, deadline=None)
def test_weight_multiplicative_across_intervals(split):
    _, flow = brownian_flow(n=16, dt=0.125 / 2, seed=3)
    g = lambda t, X, mu: np.sin(X)
    w_left = girsanov_weight(g, flow, 1.0, 0.0, split)
    w_right = girsanov_weight(g, flow, 1.0, split, 1.0)
    w_full = girsanov_weight(g, flow, 1.0, 0.0, 1.0)
    assert np.allclose(w_left * w_right, w_full, rtol=1e-12)


# ---------------------------------------------------------------------------
# Novikov estimate


def test_novikov_zero_integrand():
    _, flow = brownian_flow(n=8, dt=0.25)
    out = novikov_estimate(lambda t, X, mu: np.zeros((X.shape[0], 1)), flow, 0.0, 1.0)
    assert out.estimate == 1.0
    assert out.tail_flag == "clear"


def test_novikov_constant_closed_form():
    c = 0.5
    _, flow = brownian_flow(n=64, dt=0.01)
    out = novikov_estimate(
        lambda t, X, mu: np.full((X.shape[0], 1), c), flow, 0.0, 1.0
    )
    assert out.estimate == pytest.approx(np.exp(0.5 * c**2), abs=1e-12)


def test_novikov_heavy_tail_flagged():
    # state-proportional integrand under inflated dynamics concentrates the
    # exponential mass on the largest excursions
    coeff = make_coefficients("brownian", s=3.0)
    flow = simulate_mckean_vlasov(coeff, dirac([1.0]), 4000, 1.0, 0.01, seed=9)
    out = novikov_estimate(lambda t, X, mu: 2.0 * X, flow, 0.0, 1.0)
    assert out.tail_flag in ("heavy", "severe")


# ---------------------------------------------------------------------------
# path records


def test_path_record_accumulator_starts_at_zero():
    _, flow = brownian_flow(n=4, dt=0.25)
    rec = make_path_record(flow, 2, f=lambda t, X, mu: np.ones(X.shape[0]))
    assert rec.accumulator[0] == 0.0
    assert rec.log_weight is None
    assert rec.trajectory.shape == (flow.n_steps + 1, 1)


def test_path_record_girsanov_pairing_log_weight():
    _, flow = brownian_flow(n=4, dt=0.25)
    g = lambda t, X, mu: np.full((X.shape[0], 1), 0.7)
    rec = make_path_record(flow, 0, g=g, beta=2.0)
    assert rec.log_weight is not None
    assert np.allclose(rec.log_weight, -rec.accumulator)
    w = girsanov_weight(g, flow, 2.0, 0.0, 1.0)
    assert np.exp(rec.log_weight[-1]) == pytest.approx(w[0], rel=1e-12)


def test_path_record_index_checked():
    _, flow = brownian_flow(n=4, dt=0.25)
    with pytest.raises(ContractError):
        make_path_record(flow, 4)
