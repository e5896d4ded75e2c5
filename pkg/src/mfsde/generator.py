"""Mean-field generators on cylindrical functions, evaluated exactly.

Two operators act on V(t, x, mu):

* the drift-diffusion generator combining the classical second-order part
  in x with measure-integrated terms in the measure derivative, and
* its drift-free companion that replaces <b, dx V> by the squared-gradient
  term and reads the drift inside the measure integral off V itself.

Measure integrals are exact weighted sums over the atoms of ``mu``.  A
trajectory-level residual tester checks the discrete Ito identity for the
interacting-particle scheme.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, EvaluationError

#: sum of recorded parts must match the total this tightly
PART_SUM_TOL = 1e-12


@dataclass(frozen=True)
class GeneratorValue:
    """Generator evaluation with its additive parts recorded separately."""

    total: float
    parts: dict

    def __post_init__(self):
        if abs(sum(self.parts.values()) - self.total) > PART_SUM_TOL * max(
            1.0, abs(self.total)
        ):
            raise ContractError("generator parts do not sum to the total")


def _labeled(term, fn, *args):
    try:
        return np.asarray(fn(*args), dtype=float)
    except Exception as exc:  # noqa: BLE001 - annotate with the failing term
        raise EvaluationError(f"evaluator failed in term {term!r}: {exc}") from exc


def _outer_partial(V, which, t, X, r, term):
    fn = getattr(V.outer, which)
    if fn is None:
        from .errors import CapabilityError

        raise CapabilityError(f"missing partial {which!r} needed by term {term!r}")
    return _labeled(term, fn, t, X, r)


def _mu_part_coefficients(coeff, V, t, mu, use_v_gradient_drift):
    """Per-inner-function weights of the measure-integral terms.

    Returns (c, e) with c_i = 1/2 int tr(sigma sigma^* hess h_i) dmu and
    e_i = int <drift(y), grad h_i(y)> dmu, where drift is either the
    coefficient drift b or sigma sigma^* dx V read off V itself.
    """
    if not V.inner:
        n = 0
        return np.zeros(n), np.zeros(n)
    Y, w = mu.points, mu.weights
    sig_y = _labeled("trace_mu", coeff.sigma, t, Y, mu)
    a_y = np.einsum("njk,nlk->njl", sig_y, sig_y)
    if use_v_gradient_drift:
        r = V.inner_integrals(mu)
        dxV_y = _outer_partial(V, "dx", t, Y, r, "drift_mu")
        drift_y = np.einsum("njl,nl->nj", a_y, dxV_y)
    else:
        drift_y = _labeled("drift_mu", coeff.b, t, Y, mu)
    c = np.empty(len(V.inner))
    e = np.empty(len(V.inner))
    for i, h in enumerate(V.inner):
        c[i] = 0.5 * float(np.sum(w * np.einsum("njl,nlj->n", a_y, h.hess(Y))))
        e[i] = float(np.sum(w * np.einsum("nj,nj->n", drift_y, h.grad(Y))))
    return c, e


def generator_parts(coeff, V, t, X, mu, drift_free=False):
    """Vectorized generator terms over a batch of states X (B, d).

    Returns a dict of (B,) arrays: trace_x, trace_mu, drift_mu, plus either
    drift_x or nonlinear_sq, together with dt (time partial of V) and
    sigma_star_dx (B, m) for stochastic-integral bookkeeping.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    r = V.inner_integrals(mu)
    dxV = _outer_partial(V, "dx", t, X, r, "drift_x")
    dxxV = _outer_partial(V, "dxx", t, X, r, "trace_x")
    dtV = _outer_partial(V, "dt", t, X, r, "dt")
    sig_x = _labeled("trace_x", coeff.sigma, t, X, mu)
    a_x = np.einsum("bjk,blk->bjl", sig_x, sig_x)
    out = {
        "dt": dtV,
        "trace_x": 0.5 * np.einsum("bjl,blj->b", a_x, dxxV),
        "sigma_star_dx": np.einsum("bjk,bj->bk", sig_x, dxV),
    }
    if drift_free:
        out["nonlinear_sq"] = 0.5 * np.sum(out["sigma_star_dx"] ** 2, axis=1)
    else:
        b_x = _labeled("drift_x", coeff.b, t, X, mu)
        out["drift_x"] = np.einsum("bj,bj->b", b_x, dxV)
    c, e = _mu_part_coefficients(coeff, V, t, mu, use_v_gradient_drift=drift_free)
    if V.inner:
        drV = _outer_partial(V, "dr", t, X, r, "trace_mu")
        out["trace_mu"] = drV @ c
        out["drift_mu"] = drV @ e
    else:
        out["trace_mu"] = np.zeros(X.shape[0])
        out["drift_mu"] = np.zeros(X.shape[0])
    return out


_PART_KEYS = ("trace_x", "drift_x", "trace_mu", "drift_mu", "nonlinear_sq")


def _collect(parts):
    named = {k: float(parts[k][0]) for k in _PART_KEYS if k in parts}
    return GeneratorValue(total=sum(named.values()), parts=named)


def apply_L_sigma_b(coeff, V, t, x, mu):
    """Drift-diffusion generator at a single (t, x, mu)."""
    return _collect(generator_parts(coeff, V, t, np.asarray(x)[None], mu))


def apply_L_sigma(coeff, V, t, x, mu):
    """Drift-free generator (squared-gradient variant) at a single (t, x, mu)."""
    return _collect(
        generator_parts(coeff, V, t, np.asarray(x)[None], mu, drift_free=True)
    )


def ito_residual_ensemble(coeff, f, flow, particles=None):
    """Discrete Ito residual series for selected particles of a flow.

    For each step k and particle i the residual is the one-step increment of
    f along the path minus the generator drift term and the stochastic
    increment.  Returns (residuals, martingale_increments), both of shape
    (L, P).
    """
    if particles is None:
        particles = np.arange(flow.n_particles)
    else:
        particles = np.asarray(particles)
        if particles.min() < 0 or particles.max() >= flow.n_particles:
            raise ContractError("particle index out of range")
    dt = flow.dt
    L, P = flow.n_steps, len(particles)
    residuals = np.empty((L, P))
    mart = np.empty((L, P))
    mu_next = flow.measure_at(0)
    r_next = f.inner_integrals(mu_next)
    vals_next = np.asarray(
        f.outer.value(flow.times[0], flow.states[0][particles], r_next), dtype=float
    )
    for k in range(L):
        t_k = flow.times[k]
        mu_k, r_k, vals_k = mu_next, r_next, vals_next
        X = flow.states[k][particles]
        parts = generator_parts(coeff, f, t_k, X, mu_k)
        drift = (
            parts["dt"]
            + parts["trace_x"]
            + parts["drift_x"]
            + parts["trace_mu"]
            + parts["drift_mu"]
        )
        mart[k] = np.einsum(
            "bm,bm->b", parts["sigma_star_dx"], flow.noise[k][particles]
        )
        mu_next = flow.measure_at(k + 1)
        r_next = f.inner_integrals(mu_next)
        vals_next = np.asarray(
            f.outer.value(flow.times[k + 1], flow.states[k + 1][particles], r_next),
            dtype=float,
        )
        residuals[k] = vals_next - vals_k - drift * dt - mart[k]
    return residuals, mart


def ito_residual(coeff, f, flow, i):
    """Residual series for one particle; see :func:`ito_residual_ensemble`."""
    if not 0 <= i < flow.n_particles:
        raise ContractError(
            f"particle index {i} out of range [0, {flow.n_particles})"
        )
    residuals, mart = ito_residual_ensemble(coeff, f, flow, particles=[i])
    return residuals[:, 0], mart[:, 0]


def residuals_to_csv(path, flow, residuals, mart):
    """Write a single particle's residual series: step, time, residual, increment."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "time", "residual", "martingale_increment"])
        for k in range(len(residuals)):
            writer.writerow(
                [k, f"{flow.times[k]:.17g}", f"{residuals[k]:.17g}", f"{mart[k]:.17g}"]
            )
