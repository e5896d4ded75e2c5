"""Additive functionals along particle paths and their structural checks.

An additive functional accumulates a time integral of f plus a stochastic
integral of g along each path.  When (f, g) is built from a potential V via
the generator, the functional must equal the increment of V along the path;
the verifier measures that defect over a step-size ladder.  The exponential
of the negated functional is the reweighting density used for risk-neutral
estimates.

All fields take batched states: f(t, X, mu) -> (B,), g(t, X, mu) -> (B, m).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError
from .generator import generator_parts


def _span_indices(flow, s, t):
    k0 = flow.index_of(s)
    k1 = flow.index_of(t)
    if k1 < k0:
        raise ContractError("need t >= s")
    return k0, k1


def _step_terms(f, g, flow, k):
    """One-step contribution f*dt + <g, dW> for every particle, shape (N,)."""
    t_k = flow.times[k]
    X = flow.states[k]
    mu = flow.measure_at(k)
    out = np.zeros(flow.n_particles)
    if f is not None:
        out += np.asarray(f(t_k, X, mu), dtype=float) * flow.dt
    if g is not None:
        gv = np.asarray(g(t_k, X, mu), dtype=float)
        out += np.einsum("nm,nm->n", gv.reshape(flow.n_particles, -1), flow.noise[k])
    return out


def accumulator_series(f, g, flow, s, t):
    """Running accumulator A_{s, t_k} on the grid, shape (k1-k0+1, N); A_s = 0."""
    k0, k1 = _span_indices(flow, s, t)
    series = np.zeros((k1 - k0 + 1, flow.n_particles))
    for k in range(k0, k1):
        series[k - k0 + 1] = series[k - k0] + _step_terms(f, g, flow, k)
    return series


def accumulate(f, g, flow, s, t):
    """A^{f,g}_{s,t} per path: left-endpoint time integral plus Ito sum."""
    return accumulator_series(f, g, flow, s, t)[-1]


def build_pair_from_V(coeff, V):
    """Fields (f, g) induced by a potential V through the generator.

    f is the full time-plus-generator action on V; g is sigma^* dx V.  Both
    close over ``coeff`` and ``V`` and follow the batched field contract.
    """

    def f(t, X, mu):
        parts = generator_parts(coeff, V, t, X, mu)
        return (
            parts["dt"]
            + parts["trace_x"]
            + parts["drift_x"]
            + parts["trace_mu"]
            + parts["drift_mu"]
        )

    def g(t, X, mu):
        return generator_parts(coeff, V, t, X, mu)["sigma_star_dx"]

    return f, g


def potential_increment(V, flow, s, t):
    """V(t, X_t, mu_t) - V(s, X_s, mu_s) per path, shape (N,)."""
    k0, k1 = _span_indices(flow, s, t)
    mu0, mu1 = flow.measure_at(k0), flow.measure_at(k1)
    v0 = np.asarray(
        V.outer.value(flow.times[k0], flow.states[k0], V.inner_integrals(mu0))
    )
    v1 = np.asarray(
        V.outer.value(flow.times[k1], flow.states[k1], V.inner_integrals(mu1))
    )
    return v1 - v0


@dataclass(frozen=True)
class LadderRow:
    dt: float
    n_paths: int
    rms_defect: float
    max_defect: float
    decay_order: Optional[float]
    threshold: float
    verdict: str


@dataclass(frozen=True)
class PathIndependenceReport:
    rows: tuple
    verdict: str
    defect_floor: float = 0.0
    floor_std_error: float = 0.0

    @property
    def passed(self):
        return self.verdict == "PASS"

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["dt", "N", "M", "rms_defect", "max_defect", "decay_order", "verdict"]
            )
            for row in self.rows:
                writer.writerow(
                    [
                        f"{row.dt:.17g}",
                        row.n_paths,
                        row.n_paths,
                        f"{row.rms_defect:.17g}",
                        f"{row.max_defect:.17g}",
                        "" if row.decay_order is None else f"{row.decay_order:.17g}",
                        row.verdict,
                    ]
                )


def verify_path_independence(V, f, g, flows, s, t, threshold_factor=5.0,
                             floor_sigmas=6.0):
    """Defect report for A^{f,g} against the increment of V over a dt ladder.

    ``flows`` is a sequence of particle ensembles simulated with decreasing
    step sizes.  Each level records the RMS and max defect; the row verdict
    requires RMS <= threshold_factor * (sqrt(dt) + N^{-1/2}) * scale, where
    scale is the RMS of the potential increment (self-normalizing).

    Decay to zero is tested by fitting rms^2 = a*dt + c down the ladder: a
    genuine pair leaves the dt-independent floor c at zero, while a pair that
    violates the defining identity keeps a residual stochastic integral whose
    variance survives refinement.  FAIL if c exceeds floor_sigmas standard
    errors (and all-but-negligible size), or any row fails its threshold.
    """
    if not flows:
        raise ContractError("need at least one flow")
    rows = []
    sq_means = []  # (dt, mean defect^2, SE of that mean) per level
    prev = None
    scale_cap = 1e-12
    for flow in sorted(flows, key=lambda fl: -fl.dt):
        defect = np.abs(accumulate(f, g, flow, s, t) - potential_increment(V, flow, s, t))
        sq = defect**2
        rms = float(np.sqrt(sq.mean()))
        mx = float(defect.max())
        scale = float(
            np.sqrt(np.mean(potential_increment(V, flow, s, t) ** 2))
        )
        scale_cap = max(scale_cap, scale)
        thresh = threshold_factor * (np.sqrt(flow.dt) + flow.n_particles**-0.5) * max(
            scale, 1e-12
        )
        order = None
        if prev is not None:
            prev_rms, prev_dt = prev
            if rms > 0 and prev_rms > 0 and prev_dt != flow.dt:
                order = float(np.log(prev_rms / rms) / np.log(prev_dt / flow.dt))
        verdict = "PASS" if rms <= thresh else "FAIL"
        rows.append(
            LadderRow(flow.dt, flow.n_particles, rms, mx, order, thresh, verdict)
        )
        sq_means.append((flow.dt, float(sq.mean()), float(sq.std() / np.sqrt(sq.size))))
        prev = (rms, flow.dt)
    floor, floor_se = _defect_floor(sq_means)
    negligible = floor <= (1e-8 * scale_cap) ** 2
    floor_ok = negligible or floor <= floor_sigmas * floor_se
    overall = "PASS" if floor_ok and all(r.verdict == "PASS" for r in rows) else "FAIL"
    return PathIndependenceReport(
        rows=tuple(rows),
        verdict=overall,
        defect_floor=float(np.sqrt(max(floor, 0.0))),
        floor_std_error=floor_se,
    )


def _defect_floor(sq_means):
    """Weighted least-squares intercept of mean-square defect against dt.

    Returns (floor, se) where floor estimates lim_{dt -> 0} E[defect^2].  A
    single level cannot separate slope from intercept; the floor is then 0.
    """
    if len(sq_means) < 2:
        return 0.0, 0.0
    dts = np.array([m[0] for m in sq_means])
    ys = np.array([m[1] for m in sq_means])
    if ys.max() <= 0.0:
        return 0.0, 0.0
    ses = np.array([max(m[2], 1e-12 * ys.max()) for m in sq_means])
    A = np.column_stack([dts, np.ones_like(dts)])
    W = np.diag(1.0 / ses**2)
    gram = A.T @ W @ A
    if np.linalg.cond(gram) > 1e14:
        return 0.0, 0.0
    cov = np.linalg.inv(gram)
    coef = cov @ (A.T @ W @ ys)
    return float(coef[1]), float(np.sqrt(max(cov[1, 1], 0.0)))


def girsanov_weight(g, flow, beta, s, t):
    """exp(-A^{g;beta}_{s,t}) per path, with f folded in as |g|^2 / (2 beta)."""
    if beta == 0:
        raise ContractError("beta must be nonzero")

    def f(tk, X, mu):
        gv = np.asarray(g(tk, X, mu), dtype=float).reshape(X.shape[0], -1)
        return np.sum(gv**2, axis=1) / (2.0 * beta)

    return np.exp(-accumulate(f, g, flow, s, t))


@dataclass(frozen=True)
class NovikovEstimate:
    estimate: float
    tail_flag: str  # clear | heavy | severe


def novikov_estimate(g, flow, s, t):
    """Monte Carlo estimate of E exp(1/2 int |g|^2 dr) with a tail diagnostic.

    ``heavy`` flags runs where the top 1% of samples carries more than half
    of the total mass; ``severe`` flags non-finite samples.
    """

    def half_sq(tk, X, mu):
        gv = np.asarray(g(tk, X, mu), dtype=float).reshape(X.shape[0], -1)
        return 0.5 * np.sum(gv**2, axis=1)

    samples = np.exp(accumulate(half_sq, None, flow, s, t))
    if not np.all(np.isfinite(samples)):
        return NovikovEstimate(estimate=float("inf"), tail_flag="severe")
    total = samples.sum()
    top = np.sort(samples)[::-1][: max(1, len(samples) // 100)]
    flag = "heavy" if total > 0 and top.sum() > 0.5 * total else "clear"
    return NovikovEstimate(estimate=float(samples.mean()), tail_flag=flag)


@dataclass(frozen=True)
class PathRecord:
    """One trajectory with its noise, accumulator series and log-weight."""

    times: np.ndarray
    trajectory: np.ndarray  # (L+1, d)
    noise: np.ndarray  # (L, m)
    accumulator: np.ndarray  # (L+1,), starts at 0
    log_weight: Optional[np.ndarray]  # -accumulator when the Girsanov pairing is active
    seed: int


def make_path_record(flow, i, f=None, g=None, beta=None):
    """Extract particle ``i`` from a flow with its accumulator filled in.

    With ``beta`` given and ``f`` omitted, f is taken as |g|^2 / (2 beta)
    and the running log-weight (the negated accumulator) is attached.
    """
    if not 0 <= i < flow.n_particles:
        raise ContractError(f"particle index {i} out of range")
    girsanov = beta is not None and f is None and g is not None
    if girsanov:
        if beta == 0:
            raise ContractError("beta must be nonzero")

        def f(tk, X, mu):  # noqa: ANN001
            gv = np.asarray(g(tk, X, mu), dtype=float).reshape(X.shape[0], -1)
            return np.sum(gv**2, axis=1) / (2.0 * beta)

    series = accumulator_series(f, g, flow, flow.times[0], flow.times[-1])[:, i]
    return PathRecord(
        times=flow.times,
        trajectory=flow.states[:, i],
        noise=flow.noise[:, i],
        accumulator=series,
        log_weight=-series if girsanov else None,
        seed=flow.seed,
    )
