"""Empirical probability measures on R^d with finite second moment.

A measure is a weighted point cloud.  This is the only representation used
throughout the package: integrals against the measure are exact weighted
sums, push-forwards move the atoms, and the quadratic Wasserstein distance
is computed by exact assignment / transport solvers.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

from .errors import ContractError, EvaluationError

_WEIGHT_TOL = 1e-12

# general-weight transport is solved as a dense LP; keep instances small
_MAX_TRANSPORT_ATOMS = 64


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted point cloud standing in for a probability measure on R^d.

    ``points`` has shape (N, d), ``weights`` shape (N,); weights are
    nonnegative and sum to one.  Instances are immutable and safe to share.
    """

    points: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ContractError("points must be a nonempty (N, d) array")
        if not np.all(np.isfinite(pts)):
            raise ContractError("all support points must be finite")
        n = pts.shape[0]
        if self.weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (n,):
                raise ContractError("weights must have shape (N,)")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ContractError("weights must be finite and nonnegative")
            if abs(w.sum() - 1.0) > _WEIGHT_TOL:
                raise ContractError(
                    f"weights must sum to 1 within {_WEIGHT_TOL}, got {w.sum()!r}"
                )
        pts = pts.copy()
        w = w.copy()
        pts.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def n_atoms(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def is_uniform(self):
        return bool(np.allclose(self.weights, 1.0 / self.n_atoms, atol=_WEIGHT_TOL))

    def second_moment(self):
        """mu(|.|^2) as an exact weighted sum."""
        return float(self.weights @ np.sum(self.points**2, axis=1))

    def mean(self):
        return self.weights @ self.points

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x_{i+1}" for i in range(self.dim)] + ["weight"])
            for x, w in zip(self.points, self.weights):
                writer.writerow([f"{v:.17g}" for v in x] + [f"{w:.17g}"])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if not header or header[-1] != "weight":
                raise ContractError("measure CSV must have header x_1..x_d,weight")
            rows = [[float(v) for v in row] for row in reader if row]
        arr = np.asarray(rows)
        return cls(arr[:, :-1], arr[:, -1])


def dirac(x):
    """Single-atom measure at ``x``."""
    return EmpiricalMeasure(np.atleast_2d(np.asarray(x, dtype=float)))


def _eval_on_points(h, points):
    """Evaluate a test function on every atom, vectorized when possible."""
    n = points.shape[0]
    try:
        vals = np.asarray(h(points), dtype=float)
        if vals.shape[:1] == (n,):
            return vals
    except (TypeError, ValueError, IndexError):
        pass
    return np.asarray([h(p) for p in points], dtype=float)


def integrate(mu, h):
    """mu(h) = sum_i w_i h(x_i) for scalar- or vector-valued ``h``."""
    vals = _eval_on_points(h, mu.points)
    bad = ~np.isfinite(vals).reshape(mu.n_atoms, -1).all(axis=1)
    if bad.any():
        idx = int(np.argmax(bad))
        raise EvaluationError(f"test function non-finite at support point {idx}")
    out = np.tensordot(mu.weights, vals, axes=(0, 0))
    return float(out) if np.ndim(out) == 0 else out


def pushforward(mu, phi):
    """Image of ``mu`` under x -> x + phi(x), weights unchanged."""
    disp = _eval_on_points(phi, mu.points).reshape(mu.n_atoms, -1)
    if disp.shape != mu.points.shape:
        raise ContractError("displacement must map R^d -> R^d on the support")
    if not np.all(np.isfinite(disp)):
        raise EvaluationError("displacement non-finite on a support point")
    return EmpiricalMeasure(mu.points + disp, mu.weights)


def _cost_matrix(mu, nu):
    diff = mu.points[:, None, :] - nu.points[None, :, :]
    return np.sum(diff**2, axis=2)


def wasserstein2(mu, nu):
    """Exact quadratic Wasserstein distance between two point clouds.

    Uniform equal-count measures use sorting (d=1) or optimal assignment;
    general weights fall back to a dense transport LP for small supports.
    """
    if mu.dim != nu.dim:
        raise ContractError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if mu.n_atoms == nu.n_atoms and mu.is_uniform and nu.is_uniform:
        if mu.dim == 1:
            a = np.sort(mu.points[:, 0])
            b = np.sort(nu.points[:, 0])
            return float(np.sqrt(np.mean((a - b) ** 2)))
        cost = _cost_matrix(mu, nu)
        rows, cols = linear_sum_assignment(cost)
        return float(np.sqrt(cost[rows, cols].mean()))
    return _wasserstein2_transport(mu, nu)


def _wasserstein2_transport(mu, nu):
    n, k = mu.n_atoms, nu.n_atoms
    if n > _MAX_TRANSPORT_ATOMS or k > _MAX_TRANSPORT_ATOMS:
        raise ContractError(
            f"general-weight transport limited to {_MAX_TRANSPORT_ATOMS} atoms per side"
        )
    cost = _cost_matrix(mu, nu).ravel()
    # marginal constraints: row sums = mu.weights, column sums = nu.weights
    a_eq = np.zeros((n + k, n * k))
    for i in range(n):
        a_eq[i, i * k : (i + 1) * k] = 1.0
    for j in range(k):
        a_eq[n + j, j::k] = 1.0
    b_eq = np.concatenate([mu.weights, nu.weights])
    res = linprog(cost, A_eq=a_eq[:-1], b_eq=b_eq[:-1], bounds=(0, None), method="highs")
    if not res.success:
        raise ContractError(f"transport LP failed: {res.message}")
    return float(np.sqrt(max(res.fun, 0.0)))


def wasserstein2_bruteforce(mu, nu):
    """Permutation-enumeration oracle for uniform equal-count measures.

    Independent of the assignment solver; exponential in N, so only usable
    for tiny instances.
    """
    if mu.dim != nu.dim:
        raise ContractError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if mu.n_atoms != nu.n_atoms or not (mu.is_uniform and nu.is_uniform):
        raise ContractError("brute force requires uniform equal-count measures")
    cost = _cost_matrix(mu, nu)
    n = mu.n_atoms
    best = min(
        sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n))
    )
    return float(np.sqrt(best / n))
