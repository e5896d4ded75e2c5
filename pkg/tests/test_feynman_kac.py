import numpy as np
import pytest

from mfsde import (
    CapabilityError,
    ContractError,
    DataError,
    dirac,
    make_coefficients,
    make_cylindrical,
    npy_identity_gap,
    pde_residual_exact,
    pde_residual_mc,
    solve_combined,
    solve_linear,
    solve_log_transform,
    solve_with_source,
)
from mfsde.feynman_kac import (
    McValueFunction,
    _diag_diffusion,
    solve_drift_coupled_fixed_point,
)


BROWNIAN = make_coefficients("brownian", s=1.0)


def x_field(t, X, mu):
    return np.asarray(X)[:, 0]


# ---------------------------------------------------------------------------
# terminal-condition solver


def test_linear_terminal_time_exact():
    Phi = make_cylindrical("x_norm_sq")
    sol = solve_linear(BROWNIAN, Phi, 1.0, np.array([1.5]), dirac([0.0]), 1.0, 50, 0.01, seed=0)
    assert sol.value == pytest.approx(1.5**2, abs=1e-14)
    assert sol.std_error == 0.0


def test_linear_constant_terminal_exact():
    Phi = make_cylindrical("const", outer_params={"c": 4.0})
    sol = solve_linear(BROWNIAN, Phi, 0.0, np.array([0.7]), dirac([0.0]), 1.0, 64, 0.05, seed=1)
    assert sol.value == pytest.approx(4.0, abs=1e-14)
    assert sol.std_error == 0.0


def test_linear_heat_kernel_closed_form():
    Phi = make_cylindrical("x_norm_sq")
    t, T, x = 0.25, 1.0, 0.5
    sol = solve_linear(
        BROWNIAN, Phi, t, np.array([x]), dirac([0.0]), T, 40_000, 0.01, seed=2
    )
    expected = x**2 + (T - t)
    assert abs(sol.value - expected) <= 3 * sol.std_error


# ---------------------------------------------------------------------------
# source solver


def test_source_zero_exact():
    sol = solve_with_source(
        BROWNIAN, lambda t, X, mu: np.zeros(X.shape[0]), 0.0, np.array([0.0]),
        dirac([0.0]), 1.0, 32, 0.25, seed=0,
    )
    assert sol.value == 0.0
    assert sol.std_error == 0.0


def test_source_unit_constant_exact():
    sol = solve_with_source(
        BROWNIAN, lambda t, X, mu: np.ones(X.shape[0]), 0.25, np.array([0.0]),
        dirac([0.0]), 1.0, 32, 0.25, seed=0,
    )
    assert sol.value == pytest.approx(-(1.0 - 0.25), abs=1e-13)


def test_source_linear_in_state():
    t, T, x = 0.0, 1.0, 0.8
    sol = solve_with_source(
        BROWNIAN, x_field, t, np.array([x]), dirac([0.0]), T, 40_000, 0.01, seed=3
    )
    assert abs(sol.value - (-x * (T - t))) <= 3 * sol.std_error


# ---------------------------------------------------------------------------
# combined solver


def test_combined_reduces_to_linear_with_zero_source():
    Phi = make_cylindrical("x_norm_sq")
    args = (0.0, np.array([0.3]), dirac([0.0]), 1.0, 500, 0.05)
    a = solve_combined(BROWNIAN, Phi, lambda t, X, mu: np.zeros(X.shape[0]), *args, seed=5)
    b = solve_linear(BROWNIAN, Phi, *args, seed=5)
    assert a.value == b.value
    assert a.std_error == b.std_error


def test_combined_zero_terminal_unit_source():
    Phi = make_cylindrical("const", outer_params={"c": 0.0})
    sol = solve_combined(
        BROWNIAN, Phi, lambda t, X, mu: np.ones(X.shape[0]), 0.0, np.array([0.0]),
        dirac([0.0]), 1.0, 16, 0.25, seed=0,
    )
    assert sol.value == pytest.approx(-1.0, abs=1e-13)


def test_combined_additivity_on_shared_seed():
    Phi = make_cylindrical("x_norm_sq")
    args = (0.0, np.array([0.3]), dirac([0.0]), 1.0, 500, 0.05)
    c = solve_combined(BROWNIAN, Phi, x_field, *args, seed=7)
    a = solve_linear(BROWNIAN, Phi, *args, seed=7)
    b = solve_with_source(BROWNIAN, x_field, *args, seed=7)
    assert c.value == pytest.approx(a.value + b.value, abs=1e-12)


# ---------------------------------------------------------------------------
# log transform


def test_log_transform_constant_exact():
    Phi = make_cylindrical("const", outer_params={"c": 2.0})
    sol = solve_log_transform(
        BROWNIAN, Phi, 3.0, 0.0, np.array([0.0]), dirac([0.0]), 1.0, 64, 0.25, seed=0
    )
    assert sol.value == pytest.approx(-3.0 * np.log(2.0), abs=1e-13)
    assert sol.std_error == 0.0


def test_log_transform_terminal_time_exact():
    Phi = make_cylindrical("gauss_quarter")
    x = np.array([0.6])
    sol = solve_log_transform(
        BROWNIAN, Phi, 1.0, 1.0, x, dirac([0.0]), 1.0, 64, 0.25, seed=0
    )
    assert sol.value == pytest.approx(0.6**2 / 4.0, abs=1e-13)


def test_log_transform_gaussian_closed_form():
    # E exp(-(x+W_tau)^2/4) = (1+tau/2)^(-1/2) exp(-x^2/(4+2 tau))
    Phi = make_cylindrical("gauss_quarter")
    t, T, x = 0.5, 1.0, 1.0
    tau = T - t
    sol = solve_log_transform(
        BROWNIAN, Phi, 1.0, t, np.array([x]), dirac([0.0]), T, 40_000, 0.01, seed=9
    )
    closed = -np.log((1 + tau / 2) ** -0.5 * np.exp(-(x**2) / (4 + 2 * tau)))
    assert abs(sol.value - closed) <= 3 * sol.std_error


def test_log_transform_consistency_with_plain_mean():
    Phi = make_cylindrical("gauss_quarter")
    args = (0.0, np.array([0.2]), dirac([0.0]), 1.0, 400, 0.05)
    log_sol = solve_log_transform(BROWNIAN, Phi, 2.0, *args, seed=11)
    lin_sol = solve_linear(BROWNIAN, Phi, *args, seed=11)
    assert np.exp(-log_sol.value / 2.0) == pytest.approx(lin_sol.value, abs=1e-12)


def test_log_transform_rejects_zero_beta():
    Phi = make_cylindrical("gauss_quarter")
    with pytest.raises(ContractError):
        solve_log_transform(
            BROWNIAN, Phi, 0.0, 0.0, np.array([0.0]), dirac([0.0]), 1.0, 8, 0.25, seed=0
        )


def test_log_transform_flags_nonpositive_samples():
    Phi = make_cylindrical("const", outer_params={"c": 0.5})
    with pytest.raises(DataError):
        solve_log_transform(
            BROWNIAN, Phi, 1.0, 0.0, np.array([0.0]), dirac([0.0]), 1.0, 8, 0.25,
            seed=0, lower_bound=0.5,
        )


# ---------------------------------------------------------------------------
# shared solver behaviour


def test_se_halves_when_m_quadruples():
    Phi = make_cylindrical("x_norm_sq")
    sols = [
        solve_linear(BROWNIAN, Phi, 0.0, np.array([0.0]), dirac([0.0]), 1.0, M, 0.01, seed=13)
        for M in (4000, 16_000)
    ]
    ratio = sols[0].std_error / sols[1].std_error
    assert ratio == pytest.approx(2.0, rel=0.2)


def test_solver_rejects_reversed_interval():
    Phi = make_cylindrical("x_norm_sq")
    with pytest.raises(ContractError):
        solve_linear(BROWNIAN, Phi, 1.0, np.array([0.0]), dirac([0.0]), 0.5, 8, 0.25, seed=0)


def test_mc_value_function_deterministic():
    Phi = make_cylindrical("gauss_quarter")
    vf = McValueFunction(
        coeff=BROWNIAN, Phi=Phi, f_field=None, T=1.0, dt=0.05, M=200, seed=17,
        mu=dirac([0.0]), provenance="log_transform", beta=1.0,
    )
    assert vf.value_at(0.0, np.array([0.5])) == vf.value_at(0.0, np.array([0.5]))


# ---------------------------------------------------------------------------
# exact PDE residuals


def test_exact_residual_heat_solution():
    # V = x^2 + (1 - t) solves dt V + 1/2 dxx V = 0 under unit diffusion
    V = make_cylindrical("x_sq_plus_c_minus_t", outer_params={"c": 1.0})
    probes = [(t, [x]) for t in (0.0, 0.5) for x in (-1.0, 0.0, 1.0)]
    table = pde_residual_exact(V, BROWNIAN, "linear", probes, dirac([0.0]), budget=1e-12)
    assert table.verdict == "PASS"
    assert all(abs(r.residual) <= 1e-12 for r in table.rows)


def test_exact_residual_constant_nonlinear():
    V = make_cylindrical("const", outer_params={"c": 5.0})
    table = pde_residual_exact(
        V, BROWNIAN, "nonlinear", [(0.2, [0.4])], dirac([0.0]), beta=2.0, budget=1e-14
    )
    assert table.rows[0].residual == 0.0
    assert table.verdict == "PASS"


def test_exact_residual_source_kind():
    # V = x^2 under unit diffusion: dt V + 1/2 dxx V = 1, so f = 1 matches
    V = make_cylindrical("x_norm_sq")
    table = pde_residual_exact(
        V, BROWNIAN, "source", [(0.3, [0.7])], dirac([0.0]),
        f_field=lambda t, X, mu: np.ones(np.atleast_2d(X).shape[0]), budget=1e-12,
    )
    assert table.verdict == "PASS"


def test_exact_residual_rejects_unknown_pde():
    V = make_cylindrical("x_norm_sq")
    with pytest.raises(ContractError):
        pde_residual_exact(V, BROWNIAN, "parabolic", [(0.0, [0.0])], dirac([0.0]))


def test_residual_csv_schema(tmp_path):
    V = make_cylindrical("const", outer_params={"c": 1.0})
    table = pde_residual_exact(V, BROWNIAN, "linear", [(0.0, [0.0])], dirac([0.0]))
    path = tmp_path / "res.csv"
    table.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "pde,t,x,probe_id,residual,budget,verdict"
    assert len(lines) == 2


# ---------------------------------------------------------------------------
# MC-backed residuals


def test_mc_residual_heat_linear_pde():
    Phi = make_cylindrical("x_norm_sq")
    vf = McValueFunction(
        coeff=BROWNIAN, Phi=Phi, f_field=None, T=1.0, dt=0.01, M=20_000, seed=19,
        mu=dirac([0.0]), provenance="linear",
    )
    table = pde_residual_mc(vf, "linear", [(0.0, [0.0]), (0.5, [1.0])])
    assert table.verdict == "PASS"


def test_mc_residual_rejects_off_diagonal_diffusion():
    import dataclasses

    coeff = make_coefficients("brownian", s=1.0, d=2)

    def sigma(t, x, mu):
        base = np.array([[1.0, 0.5], [0.0, 1.0]])
        return np.broadcast_to(base, (np.atleast_2d(x).shape[0], 2, 2))

    skew = dataclasses.replace(coeff, sigma=sigma)
    with pytest.raises(CapabilityError):
        _diag_diffusion(skew, 0.0, np.zeros(2), dirac([0.0, 0.0]))


# ---------------------------------------------------------------------------
# generator identity


def test_npy_gap_vanishes_for_gradient_drift():
    import dataclasses

    V = make_cylindrical("x_norm_sq")

    def b(t, x, mu):
        # sigma sigma^* dx V with unit sigma: 2x
        return 2.0 * np.atleast_2d(x)

    coeff = dataclasses.replace(BROWNIAN, b=b)
    for t, x in [(0.0, 0.5), (0.3, -1.2), (0.9, 2.0)]:
        assert npy_identity_gap(coeff, V, t, np.array([x]), dirac([0.0])) <= 1e-12


def test_npy_gap_nonzero_for_wrong_drift():
    V = make_cylindrical("x_norm_sq")
    coeff = make_coefficients("constant_drift", c=1.0, s=1.0)
    gap = npy_identity_gap(coeff, V, 0.0, np.array([1.0]), dirac([0.0]))
    assert gap > 0.1


# ---------------------------------------------------------------------------
# drift-coupled fixed point


def test_fixed_point_reports_convergence_flag_honestly():
    Phi = make_cylindrical("gauss_quarter")
    out = solve_drift_coupled_fixed_point(
        BROWNIAN, Phi, 0.0, np.array([0.5]), dirac([0.0]), 0.5, 2000, 0.05,
        seed=23, n_iter=3,
    )
    assert out.iterations >= 1
    assert len(out.drift_changes) == out.iterations
    assert out.converged == (out.drift_changes[-1] < 1e-3)
