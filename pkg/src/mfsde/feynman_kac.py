"""Monte Carlo representations of PDEs on R^d x P_2(R^d).

Solvers estimate the value function at one (t, x, mu) by simulating a
frozen law curve once, then running decoupled paths against it:

* terminal-condition problems average a terminal datum Phi,
* source problems integrate a running cost along the paths,
* the combined solver adds both on shared paths, and
* the log-transform solver turns a positive terminal datum into the
  solution of the quadratic-gradient nonlinear PDE.

A residual tester verifies MC-backed solutions against their PDE with
common-random-number finite differences and an explicit error budget.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .calculus import CylindricalFunction
from .dynamics import simulate_decoupled, simulate_mckean_vlasov
from .errors import CapabilityError, ContractError, DataError
from .generator import generator_parts
from .measure import EmpiricalMeasure


def as_field(f):
    """Batched field (t, X, mu) -> (B,) from a cylindrical function."""

    def field(t, X, mu):
        return np.asarray(f.outer.value(t, np.atleast_2d(X), f.inner_integrals(mu)))

    return field


@dataclass(frozen=True)
class McSolution:
    """One Monte Carlo evaluation of a value function."""

    value: float
    std_error: float
    n_samples: int
    provenance: str  # linear | source | combined | log_transform
    beta: Optional[float] = None


def _frozen_and_decoupled(coeff, x, mu, t, T, dt, M, seed, n_flow):
    if T < t:
        raise ContractError("need T >= t")
    flow = simulate_mckean_vlasov(coeff, mu, n_flow, T, dt, seed, s=t)
    ens = simulate_decoupled(coeff, x, flow, t, T, dt, M, seed)
    return flow, ens


def _terminal_samples(Phi, flow, ens, T):
    mu_T = flow.measure_at(flow.n_steps)
    return np.asarray(
        Phi.outer.value(T, ens.states[-1], Phi.inner_integrals(mu_T)), dtype=float
    )


def _source_integral(f_field, flow, ens):
    """Left-endpoint integral of f along every decoupled path, shape (M,)."""
    out = np.zeros(ens.n_paths)
    k0 = flow.index_of(ens.times[0])
    for k in range(ens.n_steps):
        mu_k = flow.measure_at(k0 + k)
        out += np.asarray(f_field(ens.times[k], ens.states[k], mu_k), dtype=float) * ens.dt
    return out


def _mean_solution(samples, provenance, beta=None):
    m = samples.size
    se = float(np.std(samples, ddof=1) / np.sqrt(m)) if m > 1 else 0.0
    return McSolution(float(samples.mean()), se, m, provenance, beta)


def solve_linear(coeff, Phi, t, x, mu, T, M, dt, seed, n_flow=200):
    """Estimate the terminal-condition solution E Phi(X_{t,T}, law curve at T)."""
    flow, ens = _frozen_and_decoupled(coeff, x, mu, t, T, dt, M, seed, n_flow)
    return _mean_solution(_terminal_samples(Phi, flow, ens, T), "linear")


def solve_with_source(coeff, f_field, t, x, mu, T, M, dt, seed, n_flow=200):
    """Estimate the pure-source solution: the negated running-cost integral."""
    flow, ens = _frozen_and_decoupled(coeff, x, mu, t, T, dt, M, seed, n_flow)
    return _mean_solution(-_source_integral(f_field, flow, ens), "source")


def solve_combined(coeff, Phi, f_field, t, x, mu, T, M, dt, seed, n_flow=200):
    """Terminal datum minus running cost on shared paths (common random numbers)."""
    flow, ens = _frozen_and_decoupled(coeff, x, mu, t, T, dt, M, seed, n_flow)
    samples = _terminal_samples(Phi, flow, ens, T) - _source_integral(f_field, flow, ens)
    return _mean_solution(samples, "combined")


def solve_log_transform(
    coeff, Phi, beta, t, x, mu, T, M, dt, seed, n_flow=200, lower_bound=0.0
):
    """-beta * log of the MC mean of a strictly positive terminal datum.

    The standard error is propagated by the delta method.  Samples at or
    below the declared lower bound of Phi indicate corrupted data and raise.
    """
    if beta == 0:
        raise ContractError("beta must be nonzero")
    if lower_bound < 0:
        raise ContractError("lower bound must be nonnegative")
    flow, ens = _frozen_and_decoupled(coeff, x, mu, t, T, dt, M, seed, n_flow)
    samples = _terminal_samples(Phi, flow, ens, T)
    if np.any(samples <= lower_bound):
        raise DataError(
            f"terminal datum fell to {samples.min():g}, at or below its declared "
            f"lower bound {lower_bound:g}"
        )
    mean = float(samples.mean())
    se_mean = float(np.std(samples, ddof=1) / np.sqrt(samples.size)) if samples.size > 1 else 0.0
    return McSolution(
        value=float(-beta * np.log(mean)),
        std_error=abs(beta) * se_mean / mean,
        n_samples=samples.size,
        provenance="log_transform",
        beta=float(beta),
    )


# ---------------------------------------------------------------------------
# PDE residual verification

PDE_KINDS = ("linear", "source", "nonlinear", "drift_coupled")


@dataclass(frozen=True)
class ResidualRow:
    pde: str
    t: float
    x: tuple
    probe_id: int
    residual: float
    budget: float
    verdict: str  # PASS | FAIL | STRUCTURAL


@dataclass(frozen=True)
class ResidualTable:
    rows: tuple
    verdict: str

    @property
    def passed(self):
        return self.verdict == "PASS"

    @property
    def pass_fraction(self):
        ok = sum(1 for r in self.rows if r.verdict == "PASS")
        return ok / len(self.rows) if self.rows else 0.0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["pde", "t", "x", "probe_id", "residual", "budget", "verdict"])
            for r in self.rows:
                writer.writerow(
                    [
                        r.pde,
                        f"{r.t:.17g}",
                        " ".join(f"{v:.17g}" for v in r.x),
                        r.probe_id,
                        f"{r.residual:.17g}",
                        f"{r.budget:.17g}",
                        r.verdict,
                    ]
                )


def _finalize_table(rows, min_pass_fraction=0.95):
    if any(r.verdict == "STRUCTURAL" for r in rows):
        verdict = "FAIL"
    else:
        ok = sum(1 for r in rows if r.verdict == "PASS")
        verdict = "PASS" if rows and ok / len(rows) >= min_pass_fraction else "FAIL"
    return ResidualTable(rows=tuple(rows), verdict=verdict)


def _rhs_exact(pde, coeff, V, f_field, beta, t, x, mu, parts):
    if pde == "linear":
        return 0.0
    if pde == "source":
        return float(np.asarray(f_field(t, np.atleast_2d(x), mu))[0])
    if pde == "nonlinear":
        return float(np.sum(parts["sigma_star_dx"][0] ** 2)) / (2.0 * beta)
    raise ContractError(f"unknown pde kind {pde!r}")


def pde_residual_exact(V, coeff, pde, probes, mu, f_field=None, beta=None, budget=1e-9):
    """Residual of a cylindrical V in its PDE, using exact derivatives.

    ``probes`` is a sequence of (t, x).  For the drift-free kind the
    residual is dt V + (drift-free generator) V, matching the PDE whose
    drift constraint the caller is responsible for.
    """
    if pde not in PDE_KINDS:
        raise ContractError(f"pde must be one of {PDE_KINDS}")
    if not isinstance(V, CylindricalFunction):
        raise ContractError("exact residuals need a cylindrical function")
    rows = []
    for pid, (t, x) in enumerate(probes):
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        drift_free = pde == "drift_coupled"
        parts = generator_parts(coeff, V, t, x_arr[None], mu, drift_free=drift_free)
        lhs = float(parts["dt"][0] + parts["trace_x"][0] + parts["trace_mu"][0] + parts["drift_mu"][0])
        if drift_free:
            lhs += float(parts["nonlinear_sq"][0])
            rhs = 0.0
        else:
            lhs += float(parts["drift_x"][0])
            rhs = _rhs_exact(pde, coeff, V, f_field, beta, t, x_arr, mu, parts)
        res = lhs - rhs
        verdict = "PASS" if abs(res) <= budget else "FAIL"
        rows.append(ResidualRow(pde, float(t), tuple(x_arr), pid, res, budget, verdict))
    return _finalize_table(rows)


def npy_identity_gap(coeff, V, t, x, mu):
    """Gap in the drift-free/drift-diffusion generator identity.

    With the coefficient drift set to sigma sigma^* dx V, the drift-free
    generator equals the drift-diffusion generator minus half the squared
    sigma-gradient; returns the absolute discrepancy of the two
    independently computed sides.
    """
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    left = generator_parts(coeff, V, t, x_arr[None], mu, drift_free=True)
    lhs = float(
        left["trace_x"][0]
        + left["nonlinear_sq"][0]
        + left["trace_mu"][0]
        + left["drift_mu"][0]
    )
    right = generator_parts(coeff, V, t, x_arr[None], mu, drift_free=False)
    rhs = float(
        right["trace_x"][0]
        + right["drift_x"][0]
        + right["trace_mu"][0]
        + right["drift_mu"][0]
        - 0.5 * np.sum(right["sigma_star_dx"][0] ** 2)
    )
    return abs(lhs - rhs)


@dataclass(frozen=True)
class McValueFunction:
    """MC-backed value function with a fixed seed, usable for CRN differences.

    ``samples(t, x, mu)`` returns per-path samples of the underlying
    statistic; the value is a smooth function of the sample mean given by
    ``provenance`` (plain mean, or -beta log mean).
    """

    coeff: object
    Phi: Optional[CylindricalFunction]
    f_field: Optional[Callable]
    T: float
    dt: float
    M: int
    seed: int
    mu: EmpiricalMeasure
    provenance: str
    beta: Optional[float] = None
    n_flow: int = 200

    def samples(self, t, x, mu=None):
        mu = self.mu if mu is None else mu
        flow, ens = _frozen_and_decoupled(
            self.coeff, x, mu, t, self.T, self.dt, self.M, self.seed, self.n_flow
        )
        if self.provenance == "linear":
            return _terminal_samples(self.Phi, flow, ens, self.T)
        if self.provenance == "source":
            return -_source_integral(self.f_field, flow, ens)
        if self.provenance == "combined":
            return _terminal_samples(self.Phi, flow, ens, self.T) - _source_integral(
                self.f_field, flow, ens
            )
        if self.provenance == "log_transform":
            return _terminal_samples(self.Phi, flow, ens, self.T)
        raise ContractError(f"unknown provenance {self.provenance!r}")

    def value_of_mean(self, mean):
        if self.provenance == "log_transform":
            if mean <= 0:
                raise DataError("sample mean must be positive for the log transform")
            return -self.beta * np.log(mean)
        return mean

    def value_at(self, t, x, mu=None):
        s = self.samples(t, x, mu)
        return float(self.value_of_mean(s.mean()))


def _diag_diffusion(coeff, t, x, mu):
    sig = np.asarray(coeff.sigma(t, np.atleast_2d(x), mu))[0]
    a = sig @ sig.T
    off = a - np.diag(np.diag(a))
    if np.abs(off).max() > 1e-12 * max(1.0, np.abs(a).max()):
        raise CapabilityError(
            "MC residuals support diagonal sigma sigma^* only (axis-aligned stencils)"
        )
    return sig, np.diag(a)


def _measure_shift(coeff, mu, t, ds, sign, rng):
    """One antithetic Euler displacement of the atoms of mu."""
    Y = mu.points
    drift = np.asarray(coeff.b(t, Y, mu))
    sig = np.asarray(coeff.sigma(t, Y, mu))
    xi = rng.choice([-1.0, 1.0], size=(Y.shape[0], sig.shape[2]))
    disp = drift * ds + sign * np.sqrt(ds) * np.einsum("njk,nk->nj", sig, xi)
    return EmpiricalMeasure(Y + disp, mu.weights)


def pde_residual_mc(
    vf,
    pde,
    probes,
    f_field=None,
    h_x_rel=1e-2,
    h_t_rel=1e-2,
    measure_ds=1e-3,
    n_measure_draws=4,
    min_pass_fraction=0.95,
):
    """Residual table for an MC-backed value function via CRN differences.

    All stencil evaluations reuse the same noise streams, so differences
    cancel most Monte Carlo error; the per-probe budget is an FD truncation
    estimate (by Richardson comparison) plus three propagated standard
    errors computed from the joint per-path sample covariance.
    """
    if pde not in PDE_KINDS:
        raise ContractError(f"pde must be one of {PDE_KINDS}")
    if pde == "source" and f_field is None:
        f_field = vf.f_field
    rows = []
    for pid, (t0, x0) in enumerate(probes):
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        rows.append(_mc_probe(vf, pde, pid, float(t0), x0, f_field,
                              h_x_rel, h_t_rel, measure_ds, n_measure_draws))
    return _finalize_table(rows, min_pass_fraction)


def _mc_probe(vf, pde, pid, t0, x0, f_field, h_x_rel, h_t_rel, measure_ds, n_draws):
    coeff, mu, T, dt = vf.coeff, vf.mu, vf.T, vf.dt
    d = x0.size
    sig, a_diag = _diag_diffusion(coeff, t0, x0, mu)
    b0 = np.asarray(coeff.b(t0, x0[None], mu))[0]

    # time step snapped to the simulation grid; forward/backward near edges
    h_t = max(dt, round(h_t_rel * T / dt) * dt)
    t_fwd = t0 + h_t <= T + 1e-12
    t_pts = [t0 + h_t, t0 + 2 * h_t] if t_fwd else [t0 - h_t, t0 - 2 * h_t]
    if t0 + 2 * h_t > T + 1e-12 and t_fwd:
        t_pts[1] = t0 + h_t  # horizon too short for Richardson; degenerate
    h_x = h_x_rel * (1.0 + np.abs(x0))

    # stencil columns of per-path samples, all sharing noise streams
    cols = [("center", vf.samples(t0, x0))]
    for tp in t_pts:
        cols.append((f"t={tp}", vf.samples(min(tp, T), x0)))
    for j in range(d):
        for mult in (1, -1, 2, -2):
            xs = x0.copy()
            xs[j] += mult * h_x[j]
            cols.append((f"x{j}{mult:+d}", vf.samples(t0, xs)))
    mu_cols = 0
    if coeff.measure_dependent:
        rng = np.random.Generator(np.random.Philox(key=np.uint64(vf.seed)))
        for k in range(n_draws):
            for sign in (+1.0, -1.0):
                shifted = _measure_shift(coeff, mu, t0, measure_ds, sign, rng)
                cols.append((f"mu{k}{sign:+.0f}", vf.samples(t0, x0, shifted)))
                mu_cols += 1

    S = np.column_stack([c[1] for c in cols])
    means = S.mean(axis=0)
    cov_means = np.cov(S, rowvar=False) / S.shape[0]
    cov_means = np.atleast_2d(cov_means)

    def residual_of_means(m):
        vals = np.asarray([vf.value_of_mean(v) for v in m])
        v0 = vals[0]
        vt1, vt2 = vals[1], vals[2]
        sgn = 1.0 if t_fwd else -1.0
        dtv = sgn * (vt1 - v0) / h_t
        dtv2 = sgn * (vt2 - v0) / (2 * h_t) if t_pts[1] != t_pts[0] else dtv
        base = 3
        grad = np.empty(d)
        lap_h = np.empty(d)
        lap_2h = np.empty(d)
        for j in range(d):
            vp, vm, vp2, vm2 = vals[base + 4 * j : base + 4 * j + 4]
            grad[j] = (vp - vm) / (2 * h_x[j])
            lap_h[j] = (vp - 2 * v0 + vm) / h_x[j] ** 2
            lap_2h[j] = (vp2 - 2 * v0 + vm2) / (2 * h_x[j]) ** 2
        mu_term = 0.0
        if mu_cols:
            pairs = vals[base + 4 * d :].reshape(-1, 2)
            mu_term = float(np.mean(0.5 * (pairs[:, 0] + pairs[:, 1]) - v0) / measure_ds)
        lhs = dtv + 0.5 * float(a_diag @ lap_h) + float(b0 @ grad) + mu_term
        sig_grad = sig.T @ grad
        if pde == "linear":
            rhs = 0.0
        elif pde == "source":
            rhs = float(np.asarray(f_field(t0, x0[None], mu))[0])
        elif pde == "nonlinear":
            rhs = float(sig_grad @ sig_grad) / (2.0 * vf.beta)
        else:  # drift_coupled: drift-free operator, drift read off the gradient
            lhs = dtv + 0.5 * float(a_diag @ lap_h) + mu_term + 0.5 * float(sig_grad @ sig_grad)
            # measure drift term uses the coefficient drift already in mu_term
            rhs = 0.0
        aux = {
            "trunc_t": abs(dtv - dtv2),
            "trunc_x": 0.5 * float(np.abs(a_diag) @ np.abs(lap_h - lap_2h)) / 3.0,
        }
        return lhs - rhs, aux

    res, aux = residual_of_means(means)

    # propagated MC error: numeric gradient of the residual in the means
    grad_m = np.empty(len(means))
    for k in range(len(means)):
        step = 1e-7 * max(1.0, abs(means[k]))
        mp, mm = means.copy(), means.copy()
        mp[k] += step
        mm[k] -= step
        grad_m[k] = (residual_of_means(mp)[0] - residual_of_means(mm)[0]) / (2 * step)
    var = float(grad_m @ cov_means @ grad_m)
    se = np.sqrt(max(var, 0.0))

    trunc = aux["trunc_t"] + aux["trunc_x"]
    budget = trunc + 3.0 * se
    if budget == 0.0 and res != 0.0:
        verdict = "STRUCTURAL"
    else:
        verdict = "PASS" if abs(res) <= budget else "FAIL"
    return ResidualRow(pde, t0, tuple(x0), pid, float(res), float(budget), verdict)


@dataclass(frozen=True)
class FixedPointResult:
    converged: bool
    iterations: int
    drift_changes: tuple


def solve_drift_coupled_fixed_point(
    coeff, Phi, t, x, mu, T, M, dt, seed, n_iter=3, tol=1e-3, n_flow=100
):
    """Fixed-point attempt at the drift-coupled problem; reports honestly.

    Iterates drift <- sigma sigma^* dx V with V = -1/2 E log Phi under the
    current drift, the gradient taken by CRN central differences at the
    start point.  The coupling is not a contraction in general; callers
    must check ``converged``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    drift_vec = np.zeros(coeff.d)
    changes = []

    def value(curr_drift, xq):
        shifted = replace_drift(coeff, curr_drift)
        flow, ens = _frozen_and_decoupled(shifted, xq, mu, t, T, dt, M, seed, n_flow)
        samples = _terminal_samples(Phi, flow, ens, T)
        if np.any(samples <= 0):
            raise DataError("terminal datum must stay strictly positive")
        return -0.5 * float(np.mean(np.log(samples)))

    for _ in range(n_iter):
        h = 1e-2 * (1.0 + np.abs(x))
        grad = np.empty(coeff.d)
        for j in range(coeff.d):
            xp, xm = x.copy(), x.copy()
            xp[j] += h[j]
            xm[j] -= h[j]
            grad[j] = (value(drift_vec, xp) - value(drift_vec, xm)) / (2 * h[j])
        sig = np.asarray(coeff.sigma(t, x[None], mu))[0]
        new_drift = sig @ sig.T @ grad
        changes.append(float(np.linalg.norm(new_drift - drift_vec)))
        drift_vec = new_drift
        if changes[-1] < tol:
            break
    return FixedPointResult(
        converged=bool(changes and changes[-1] < tol),
        iterations=len(changes),
        drift_changes=tuple(changes),
    )


def replace_drift(coeff, drift_vec):
    """Coefficient field with the drift replaced by a constant vector."""
    drift_vec = np.asarray(drift_vec, dtype=float)

    def b(t, x, mu):
        return np.broadcast_to(drift_vec, np.asarray(x).shape).copy()

    return replace(coeff, name=f"{coeff.name}+const_drift", b=b)
