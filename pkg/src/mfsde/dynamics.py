"""Coefficient fields and particle schemes for the mean-field SDE.

The law of the solution is approximated by the empirical measure of N
interacting particles advanced with explicit Euler steps.  Brownian
increments come from counter-based Philox streams keyed by
(seed, domain, particle), so a rerun with the same seed is bit-identical
regardless of how the work is scheduled.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ContractError, SimulationError
from .measure import EmpiricalMeasure, wasserstein2

BLOWUP_GUARD = 1e8

# stream domains keep noise sources disjoint by construction
DOMAIN_INTERACTING = 0
DOMAIN_DECOUPLED = 1
DOMAIN_INIT = 2


def particle_stream(seed, particle, domain=DOMAIN_INTERACTING):
    """Philox generator for one particle's noise, independent of all others."""
    key = np.array(
        [np.uint64(seed) ^ np.uint64(0x9E3779B97F4A7C15), np.uint64((domain << 48) + particle)],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


# Raw normals are cached because common-random-number evaluations re-request
# the same streams many times (finite-difference stencils, solver reruns).
# Streams emit draws step-ordered, so a longer run's prefix equals a shorter
# run; entries are keyed without dt and sliced per request.
_NOISE_CACHE = {}
_NOISE_CACHE_SIZE = 2


def _raw_normals(seed, n_particles, n_steps, m, domain):
    key = (int(seed), int(n_particles), int(m), int(domain))
    cached = _NOISE_CACHE.get(key)
    if cached is None or cached.shape[0] < n_steps:
        raw = np.empty((n_steps, n_particles, m))
        for i in range(n_particles):
            g = particle_stream(seed, i, domain)
            raw[:, i, :] = g.standard_normal((n_steps, m))
        raw.flags.writeable = False
        while len(_NOISE_CACHE) >= _NOISE_CACHE_SIZE and key not in _NOISE_CACHE:
            _NOISE_CACHE.pop(next(iter(_NOISE_CACHE)))
        _NOISE_CACHE[key] = raw
        cached = raw
    return cached[:n_steps]


def brownian_increments(seed, n_particles, n_steps, m, dt, domain=DOMAIN_INTERACTING):
    """Increment array of shape (n_steps, n_particles, m), one stream per particle."""
    return np.sqrt(dt) * _raw_normals(seed, n_particles, n_steps, m, domain)


@dataclass(frozen=True)
class CoefficientField:
    """Drift/diffusion evaluators with declared Lipschitz data.

    ``sigma(t, x, mu)`` maps x of shape (..., d) to (..., d, m) and
    ``b(t, x, mu)`` to (..., d); both must broadcast over the leading batch
    axis.  ``lipschitz_bound`` is declared by the catalog, not verified
    globally; :func:`spot_check_lipschitz` samples it.
    """

    name: str
    d: int
    m: int
    sigma: Callable
    b: Callable
    lipschitz_bound: Callable = lambda t: 0.0
    measure_dependent: bool = True


#: catalog identifiers accepted by make_coefficients
COEFFICIENT_NAMES = ("frozen", "brownian", "constant_drift", "mean_revert", "ou")


def _const_sigma(value, d, m):
    mat = np.zeros((d, m))
    np.fill_diagonal(mat, value)

    def sigma(t, x, mu):
        x = np.asarray(x)
        return np.broadcast_to(mat, x.shape[:-1] + (d, m)).copy()

    return sigma


def _zero_b(d):
    def b(t, x, mu):
        return np.zeros(np.asarray(x).shape)

    return b


def make_coefficients(name, d=1, m=None, **params):
    """Coefficient catalog addressable by identifier.

    frozen            b = 0, sigma = 0
    brownian          b = 0, sigma = s * I                    (param s)
    constant_drift    b = c, sigma = s * I                    (params c, s)
    mean_revert       b = rate * (mu(Id) - x), sigma = s * I  (params rate, s)
    ou                b = -theta * x + kappa * mu(Id), sigma = s * I
    """
    if m is None:
        m = d
    if name == "frozen":
        return CoefficientField(
            "frozen", d, m, _const_sigma(0.0, d, m), _zero_b(d),
            lipschitz_bound=lambda t: 0.0, measure_dependent=False,
        )
    if name == "brownian":
        s = float(params.get("s", 1.0))
        return CoefficientField(
            "brownian", d, m, _const_sigma(s, d, m), _zero_b(d),
            lipschitz_bound=lambda t: abs(s), measure_dependent=False,
        )
    if name == "constant_drift":
        s = float(params.get("s", 1.0))
        c = np.broadcast_to(np.asarray(params.get("c", 0.0), dtype=float), (d,))

        def b(t, x, mu):
            return np.broadcast_to(c, np.asarray(x).shape).copy()

        return CoefficientField(
            "constant_drift", d, m, _const_sigma(s, d, m), b,
            lipschitz_bound=lambda t: abs(s) + float(np.linalg.norm(c)),
            measure_dependent=False,
        )
    if name == "mean_revert":
        s = float(params.get("s", 0.0))
        rate = float(params.get("rate", 1.0))

        def b(t, x, mu):
            return rate * (mu.mean() - np.asarray(x))

        return CoefficientField(
            "mean_revert", d, m, _const_sigma(s, d, m), b,
            lipschitz_bound=lambda t: 2.0 * abs(rate) + abs(s),
        )
    if name == "ou":
        s = float(params.get("s", 1.0))
        theta = float(params.get("theta", 1.0))
        kappa = float(params.get("kappa", 0.5))

        def b(t, x, mu):
            return -theta * np.asarray(x) + kappa * mu.mean()

        return CoefficientField(
            "ou", d, m, _const_sigma(s, d, m), b,
            lipschitz_bound=lambda t: abs(theta) + abs(kappa) + abs(s),
        )
    raise ContractError(f"unknown coefficient field {name!r}")


def spot_check_lipschitz(coeff, samples):
    """Worst observed increment ratio against the declared bound.

    ``samples`` is an iterable of (t, x, mu, y, nu) argument pairs; the
    returned ratio should stay at or below 1 up to a small slack for an
    honestly declared K(t).
    """
    worst = 0.0
    for t, x, mu, y, nu in samples:
        num = float(
            np.linalg.norm(coeff.b(t, np.asarray(x), mu) - coeff.b(t, np.asarray(y), nu))
            + np.linalg.norm(
                coeff.sigma(t, np.asarray(x), mu) - coeff.sigma(t, np.asarray(y), nu)
            )
        )
        if num == 0.0:
            continue
        den = coeff.lipschitz_bound(t) * (
            float(np.linalg.norm(np.asarray(x) - np.asarray(y))) + wasserstein2(mu, nu)
        )
        if den == 0.0:
            return np.inf
        worst = max(worst, num / den)
    return worst


@dataclass(frozen=True)
class ParticleFlow:
    """Time-indexed ensemble of particle trajectories on a uniform grid.

    ``states`` has shape (L+1, N, d), ``noise`` (L, N, m).  Re-simulating
    with the same seed reproduces both arrays bit for bit.
    """

    times: np.ndarray
    states: np.ndarray
    noise: np.ndarray
    seed: int

    def __post_init__(self):
        for name in ("times", "states", "noise"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_steps(self):
        return self.noise.shape[0]

    @property
    def n_particles(self):
        return self.states.shape[1]

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    def measure_at(self, k):
        """Empirical measure of the ensemble at grid index k (uniform weights)."""
        return EmpiricalMeasure(self.states[k])

    def index_of(self, t):
        """Grid index of time t; ContractError if t is off-grid."""
        if self.times.size == 1:
            if abs(t - self.times[0]) > 1e-9:
                raise ContractError(f"time {t} not on the single-point grid [{self.times[0]}]")
            return 0
        k = (t - self.times[0]) / self.dt
        if not (self.times[0] - 1e-9 <= t <= self.times[-1] + 1e-9) or abs(k - round(k)) > 1e-9:
            raise ContractError(f"time {t} not on the grid [{self.times[0]}, {self.times[-1]}] step {self.dt}")
        return int(round(k))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            d = self.states.shape[2]
            writer.writerow(["step", "time", "particle"] + [f"x_{i+1}" for i in range(d)])
            for k, t in enumerate(self.times):
                for i in range(self.n_particles):
                    writer.writerow(
                        [k, f"{t:.17g}", i] + [f"{v:.17g}" for v in self.states[k, i]]
                    )


def _grid(s, T, dt):
    if dt <= 0:
        raise ContractError("dt must be positive")
    span = T - s
    steps = span / dt
    if span < 0 or abs(steps - round(steps)) > 1e-9:
        raise ContractError(f"horizon {span} is not an integer multiple of dt={dt}")
    n = int(round(steps))
    return s + dt * np.arange(n + 1), n


def _initial_states(init, n, d, seed):
    if callable(init):
        pts = np.asarray(init(particle_stream(seed, 0, DOMAIN_INIT), n), dtype=float)
        if pts.shape != (n, d):
            raise ContractError(f"init sampler must return shape ({n}, {d})")
        return pts
    if isinstance(init, EmpiricalMeasure):
        if init.dim != d:
            raise ContractError(f"initial measure has dim {init.dim}, expected {d}")
        if init.n_atoms == n and init.is_uniform:
            return init.points.copy()
        g = particle_stream(seed, 0, DOMAIN_INIT)
        idx = g.choice(init.n_atoms, size=n, p=init.weights)
        return init.points[idx].copy()
    raise ContractError("init must be an EmpiricalMeasure or a sampler(rng, N)")


def _check_finite(x, k):
    bad = ~np.isfinite(x).all(axis=1) | (np.abs(x).max(axis=1) > BLOWUP_GUARD)
    if bad.any():
        i = int(np.argmax(bad))
        raise SimulationError(
            f"particle {i} blew up at step {k} (|state| > {BLOWUP_GUARD:g} or non-finite)",
            step=k,
            particle=i,
        )


def simulate_mckean_vlasov(coeff, init, N, T, dt, seed, s=0.0):
    """N-particle Euler scheme for the mean-field SDE on [s, T].

    Each particle reads the drift and diffusion at the current empirical
    measure of the whole ensemble.
    """
    if N < 2:
        raise ContractError("need at least 2 particles")
    times, n_steps = _grid(s, T, dt)
    d, m = coeff.d, coeff.m
    states = np.empty((n_steps + 1, N, d))
    states[0] = _initial_states(init, N, d, seed)
    noise = brownian_increments(seed, N, n_steps, m, dt, DOMAIN_INTERACTING)
    for k in range(n_steps):
        x = states[k]
        mu = EmpiricalMeasure(x)
        drift = coeff.b(times[k], x, mu)
        diff = np.einsum("ndm,nm->nd", coeff.sigma(times[k], x, mu), noise[k])
        states[k + 1] = x + drift * dt + diff
        _check_finite(states[k + 1], k + 1)
    return ParticleFlow(times=times, states=states, noise=noise, seed=seed)


def semigroup_apply(coeff, mu, s, t, N, dt, seed):
    """Law map mu -> law of the solution at time t started from mu at s."""
    if t < s:
        raise ContractError("need t >= s")
    if t == s:
        return mu
    flow = simulate_mckean_vlasov(coeff, mu, N, t, dt, seed, s=s)
    return flow.measure_at(flow.n_steps)


@dataclass(frozen=True)
class DecoupledEnsemble:
    """Paths of the frozen-flow SDE: fixed start x, measure read from a ParticleFlow."""

    times: np.ndarray
    states: np.ndarray  # (L+1, M, d)
    noise: np.ndarray  # (L, M, m)
    start: np.ndarray
    seed: int

    @property
    def n_steps(self):
        return self.noise.shape[0]

    @property
    def n_paths(self):
        return self.states.shape[1]

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])


def simulate_decoupled(coeff, x, frozen_flow, s, T, dt, M, seed):
    """M paths from deterministic start x against the frozen law curve.

    The measure argument at every step is the snapshot of ``frozen_flow``,
    never the ensemble's own empirical law; noise streams live in a domain
    disjoint from the one that generated the frozen flow.
    """
    if frozen_flow.n_steps > 0 and abs(frozen_flow.dt - dt) > 1e-12:
        raise ContractError(f"frozen flow dt {frozen_flow.dt} != requested dt {dt}")
    k0 = frozen_flow.index_of(s)
    k1 = frozen_flow.index_of(T)
    times = frozen_flow.times[k0 : k1 + 1]
    n_steps = k1 - k0
    d, m = coeff.d, coeff.m
    x = np.broadcast_to(np.asarray(x, dtype=float), (d,))
    states = np.empty((n_steps + 1, M, d))
    states[0] = x
    noise = brownian_increments(seed, M, n_steps, m, dt, DOMAIN_DECOUPLED)
    for k in range(n_steps):
        mu = frozen_flow.measure_at(k0 + k)
        xk = states[k]
        drift = coeff.b(times[k], xk, mu)
        diff = np.einsum("ndm,nm->nd", coeff.sigma(times[k], xk, mu), noise[k])
        states[k + 1] = xk + drift * dt + diff
        _check_finite(states[k + 1], k + 1)
    return DecoupledEnsemble(times=times, states=states, noise=noise, start=x, seed=seed)
