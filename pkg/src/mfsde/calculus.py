"""Cylindrical functions on [0,T] x R^d x P_2(R^d) and their measure derivative.

A cylindrical function has the form

    f(t, x, mu) = F(t, x, mu(h_1), ..., mu(h_n))

with smooth inner functions h_i (bounded Hessians) and a smooth outer
function F.  For this class the measure derivative has the closed form

    d_mu f(t, x, mu)(y) = sum_i dF/dr_i * grad h_i(y)

which we evaluate exactly; a Frechet difference-quotient oracle is provided
for cross-validation.  All evaluators broadcast over a leading batch axis in
``x`` and ``y``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import CapabilityError, ContractError
from .measure import integrate, pushforward

#: catalog identifiers accepted by make_inner / make_outer
INNER_NAMES = ("linear", "quadratic", "bump", "coordinate")
OUTER_NAMES = (
    "const", "mean", "sum", "square", "product", "exp", "log", "coord",
    "time", "x_norm_sq", "x_sq_plus_r1", "x1_times_r1", "time_times_r1",
    "x_sq_plus_c_minus_t", "gauss_quarter",
)


# ---------------------------------------------------------------------------
# inner functions h: R^d -> R with value / gradient / Hessian evaluators


@dataclass(frozen=True)
class InnerFunction:
    """Scalar test function with closed-form first and second derivatives.

    ``value`` maps (..., d) -> (...,), ``grad`` -> (..., d),
    ``hess`` -> (..., d, d).  The Hessian is bounded by construction for
    every catalog member.
    """

    name: str
    value: Callable
    grad: Callable
    hess: Callable


def _linear_inner(a):
    a = np.asarray(a, dtype=float)

    def hess(x):
        x = np.asarray(x)
        return np.zeros(x.shape + (x.shape[-1],))

    return InnerFunction(
        name=f"linear({a.tolist()})",
        value=lambda x: np.asarray(x) @ a,
        grad=lambda x: np.broadcast_to(a, np.asarray(x).shape).copy(),
        hess=hess,
    )


def _quadratic_inner():
    def hess(x):
        x = np.asarray(x)
        d = x.shape[-1]
        return np.broadcast_to(2.0 * np.eye(d), x.shape + (d,)).copy()

    return InnerFunction(
        name="quadratic",
        value=lambda x: np.sum(np.asarray(x) ** 2, axis=-1),
        grad=lambda x: 2.0 * np.asarray(x),
        hess=hess,
    )


def _bump_inner():
    # exp(-|x|^2 / 2): smooth with globally bounded Hessian
    def value(x):
        return np.exp(-0.5 * np.sum(np.asarray(x) ** 2, axis=-1))

    def grad(x):
        x = np.asarray(x)
        return -x * value(x)[..., None]

    def hess(x):
        x = np.asarray(x)
        d = x.shape[-1]
        v = value(x)
        outer = x[..., :, None] * x[..., None, :]
        return (outer - np.eye(d)) * v[..., None, None]

    return InnerFunction("bump", value, grad, hess)


def _coordinate_inner(i, power=1):
    if power not in (1, 2):
        raise ContractError("coordinate monomials supported up to degree 2")

    def value(x):
        return np.asarray(x)[..., i] ** power

    def grad(x):
        x = np.asarray(x)
        g = np.zeros_like(x)
        g[..., i] = 1.0 if power == 1 else 2.0 * x[..., i]
        return g

    def hess(x):
        x = np.asarray(x)
        d = x.shape[-1]
        h = np.zeros(x.shape + (d,))
        if power == 2:
            h[..., i, i] = 2.0
        return h

    return InnerFunction(f"coord{power}({i})", value, grad, hess)


def make_inner(name, **params):
    """Resolve an inner function by catalog identifier."""
    if name == "linear":
        return _linear_inner(params.get("a", [1.0]))
    if name == "quadratic":
        return _quadratic_inner()
    if name == "bump":
        return _bump_inner()
    if name == "coordinate":
        return _coordinate_inner(params.get("i", 0), params.get("power", 1))
    raise ContractError(f"unknown inner function {name!r}")


# ---------------------------------------------------------------------------
# outer functions F(t, x, r)


@dataclass(frozen=True)
class OuterFunction:
    """Outer function F(t, x, r) with its partial derivatives.

    Arguments broadcast: t scalar, x (..., d), r (n,).  Missing evaluators
    (None) raise CapabilityError when requested through a bundle.
    """

    name: str
    n_inner: Optional[int]
    value: Callable
    dt: Callable = None
    dx: Callable = None
    dxx: Callable = None
    dr: Callable = None
    drr: Callable = None
    dx_dr: Callable = None


def _zeros_like_x(x):
    return np.zeros(np.asarray(x).shape)


def _zeros_xx(x):
    x = np.asarray(x)
    return np.zeros(x.shape + (x.shape[-1],))


def _zeros_r(x, n):
    x = np.asarray(x)
    return np.zeros(x.shape[:-1] + (n,))


def _zeros_rr(x, n):
    x = np.asarray(x)
    return np.zeros(x.shape[:-1] + (n, n))


def _zeros_x_r(x, n):
    x = np.asarray(x)
    return np.zeros(x.shape + (n,))


def _scalar_field(x, c):
    x = np.asarray(x)
    return np.full(x.shape[:-1], float(c))


def make_outer(name, **params):
    """Resolve an outer function by catalog identifier.

    Catalog: const, mean, sum, square, product, exp, log, coord, time,
    x_norm_sq, x_sq_plus_r1, x1_times_r1, time_times_r1, x_sq_plus_c_minus_t,
    gauss_quarter.
    """
    if name == "const":
        c = float(params.get("c", 1.0))
        return OuterFunction(
            f"const({c})", None,
            value=lambda t, x, r: _scalar_field(x, c),
            dt=lambda t, x, r: _scalar_field(x, 0.0),
            dx=lambda t, x, r: _zeros_like_x(x),
            dxx=lambda t, x, r: _zeros_xx(x),
            dr=lambda t, x, r: _zeros_r(x, len(r)),
            drr=lambda t, x, r: _zeros_rr(x, len(r)),
            dx_dr=lambda t, x, r: _zeros_x_r(x, len(r)),
        )
    if name == "mean":
        # F = r_1
        def dr(t, x, r):
            out = _zeros_r(x, len(r))
            out[..., 0] = 1.0
            return out

        return OuterFunction(
            "mean", None,
            value=lambda t, x, r: _scalar_field(x, 0.0) + r[0],
            dt=lambda t, x, r: _scalar_field(x, 0.0),
            dx=lambda t, x, r: _zeros_like_x(x),
            dxx=lambda t, x, r: _zeros_xx(x),
            dr=dr,
            drr=lambda t, x, r: _zeros_rr(x, len(r)),
            dx_dr=lambda t, x, r: _zeros_x_r(x, len(r)),
        )
    if name == "sum":
        return OuterFunction(
            "sum", None,
            value=lambda t, x, r: _scalar_field(x, float(np.sum(r))),
            dt=lambda t, x, r: _scalar_field(x, 0.0),
            dx=lambda t, x, r: _zeros_like_x(x),
            dxx=lambda t, x, r: _zeros_xx(x),
            dr=lambda t, x, r: _zeros_r(x, len(r)) + 1.0,
            drr=lambda t, x, r: _zeros_rr(x, len(r)),
            dx_dr=lambda t, x, r: _zeros_x_r(x, len(r)),
        )
    if name == "square":
        # F = r_1^2
        def dr(t, x, r):
            out = _zeros_r(x, len(r))
            out[..., 0] = 2.0 * r[0]
            return out

        def drr(t, x, r):
            out = _zeros_rr(x, len(r))
            out[..., 0, 0] = 2.0
            return out

        return OuterFunction(
            "square", None,
            value=lambda t, x, r: _scalar_field(x, r[0] ** 2),
            dt=lambda t, x, r: _scalar_field(x, 0.0),
            dx=lambda t, x, r: _zeros_like_x(x),
            dxx=lambda t, x, r: _zeros_xx(x),
            dr=dr, drr=drr,
            dx_dr=lambda t, x, r: _zeros_x_r(x, len(r)),
        )
    if name == "product":
        # F = r_1 r_2
        def dr(t, x, r):
            out = _zeros_r(x, len(r))
            out[..., 0] = r[1]
            out[..., 1] = r[0]
            return out

        def drr(t, x, r):
            out = _zeros_rr(x, len(r))
            out[..., 0, 1] = 1.0
            out[..., 1, 0] = 1.0
            return out

        return OuterFunction(
            "product", 2,
            value=lambda t, x, r: _scalar_field(x, r[0] * r[1]),
            dt=lambda t, x, r: _scalar_field(x, 0.0),
            dx=lambda t, x, r: _zeros_like_x(x),
            dxx=lambda t, x, r: _zeros_xx(x),
            dr=dr, drr=drr,
            dx_dr=lambda t, x, r: _zeros_x_r(x, len(r)),
        )
    if name == "exp":
        # F = exp(r_1)
        def dr(t, x, r):
            out = _zeros_r(x, len(r))
            out[..., 0] = np.exp(r[0])
            return out

        def drr(t, x, r):
            out = _zeros_rr(x, len(r))
            out[..., 0, 0] = np.exp(r[0])
            return out

        return OuterFunction(
            "exp", None,
            value=lambda t, x, r: _scalar_field(x, np.exp(r[0])),
            dt=lambda t, x, r: _scalar_field(x, 0.0),
            dx=lambda t, x, r: _zeros_like_x(x),
            dxx=lambda t, x, r: _zeros_xx(x),
            dr=dr, drr=drr,
            dx_dr=lambda t, x, r: _zeros_x_r(x, len(r)),
        )
    if name == "log":
        # F = log(r_1), r_1 > 0
        def value(t, x, r):
            if r[0] <= 0:
                raise ContractError("log outer requires a positive first integral")
            return _scalar_field(x, np.log(r[0]))

        def dr(t, x, r):
            out = _zeros_r(x, len(r))
            out[..., 0] = 1.0 / r[0]
            return out

        def drr(t, x, r):
            out = _zeros_rr(x, len(r))
            out[..., 0, 0] = -1.0 / r[0] ** 2
            return out

        return OuterFunction(
            "log", None, value=value,
            dt=lambda t, x, r: _scalar_field(x, 0.0),
            dx=lambda t, x, r: _zeros_like_x(x),
            dxx=lambda t, x, r: _zeros_xx(x),
            dr=dr, drr=drr,
            dx_dr=lambda t, x, r: _zeros_x_r(x, len(r)),
        )
    if name == "coord":
        i = int(params.get("i", 0))

        def dx(t, x, r):
            out = _zeros_like_x(x)
            out[..., i] = 1.0
            return out

        return OuterFunction(
            f"coord({i})", None,
            value=lambda t, x, r: np.asarray(x)[..., i],
            dt=lambda t, x, r: _scalar_field(x, 0.0),
            dx=dx,
            dxx=lambda t, x, r: _zeros_xx(x),
            dr=lambda t, x, r: _zeros_r(x, len(r)),
            drr=lambda t, x, r: _zeros_rr(x, len(r)),
            dx_dr=lambda t, x, r: _zeros_x_r(x, len(r)),
        )
    if name == "time":
        return OuterFunction(
            "time", None,
            value=lambda t, x, r: _scalar_field(x, t),
            dt=lambda t, x, r: _scalar_field(x, 1.0),
            dx=lambda t, x, r: _zeros_like_x(x),
            dxx=lambda t, x, r: _zeros_xx(x),
            dr=lambda t, x, r: _zeros_r(x, len(r)),
            drr=lambda t, x, r: _zeros_rr(x, len(r)),
            dx_dr=lambda t, x, r: _zeros_x_r(x, len(r)),
        )
    if name == "x_norm_sq":
        def dxx(t, x, r):
            x = np.asarray(x)
            d = x.shape[-1]
            return np.broadcast_to(2.0 * np.eye(d), x.shape + (d,)).copy()

        return OuterFunction(
            "x_norm_sq", None,
            value=lambda t, x, r: np.sum(np.asarray(x) ** 2, axis=-1),
            dt=lambda t, x, r: _scalar_field(x, 0.0),
            dx=lambda t, x, r: 2.0 * np.asarray(x),
            dxx=dxx,
            dr=lambda t, x, r: _zeros_r(x, len(r)),
            drr=lambda t, x, r: _zeros_rr(x, len(r)),
            dx_dr=lambda t, x, r: _zeros_x_r(x, len(r)),
        )
    if name == "x_sq_plus_r1":
        # F = |x|^2 + r_1
        base = make_outer("x_norm_sq")

        def dr(t, x, r):
            out = _zeros_r(x, len(r))
            out[..., 0] = 1.0
            return out

        return OuterFunction(
            "x_sq_plus_r1", None,
            value=lambda t, x, r: base.value(t, x, r) + r[0],
            dt=base.dt, dx=base.dx, dxx=base.dxx,
            dr=dr, drr=base.drr, dx_dr=base.dx_dr,
        )
    if name == "x1_times_r1":
        # F = x_1 * r_1
        def dx(t, x, r):
            out = _zeros_like_x(x)
            out[..., 0] = r[0]
            return out

        def dr(t, x, r):
            out = _zeros_r(x, len(r))
            out[..., 0] = np.asarray(x)[..., 0]
            return out

        def dx_dr(t, x, r):
            out = _zeros_x_r(x, len(r))
            out[..., 0, 0] = 1.0
            return out

        return OuterFunction(
            "x1_times_r1", None,
            value=lambda t, x, r: np.asarray(x)[..., 0] * r[0],
            dt=lambda t, x, r: _scalar_field(x, 0.0),
            dx=dx,
            dxx=lambda t, x, r: _zeros_xx(x),
            dr=dr,
            drr=lambda t, x, r: _zeros_rr(x, len(r)),
            dx_dr=dx_dr,
        )
    if name == "time_times_r1":
        # F = t * r_1
        def dr(t, x, r):
            out = _zeros_r(x, len(r))
            out[..., 0] = t
            return out

        return OuterFunction(
            "time_times_r1", None,
            value=lambda t, x, r: _scalar_field(x, t * r[0]),
            dt=lambda t, x, r: _scalar_field(x, r[0]),
            dx=lambda t, x, r: _zeros_like_x(x),
            dxx=lambda t, x, r: _zeros_xx(x),
            dr=dr,
            drr=lambda t, x, r: _zeros_rr(x, len(r)),
            dx_dr=lambda t, x, r: _zeros_x_r(x, len(r)),
        )
    if name == "x_sq_plus_c_minus_t":
        # F = |x|^2 + c - t, the heat-equation reference solution for c = T
        c = float(params.get("c", 1.0))
        base = make_outer("x_norm_sq")
        return OuterFunction(
            f"x_sq_plus_c_minus_t({c})", None,
            value=lambda t, x, r: base.value(t, x, r) + c - t,
            dt=lambda t, x, r: _scalar_field(x, -1.0),
            dx=base.dx, dxx=base.dxx,
            dr=base.dr, drr=base.drr, dx_dr=base.dx_dr,
        )
    if name == "gauss_quarter":
        # F = exp(-|x|^2 / 4): strictly positive terminal datum
        def value(t, x, r):
            return np.exp(-0.25 * np.sum(np.asarray(x) ** 2, axis=-1))

        def dx(t, x, r):
            x = np.asarray(x)
            return -0.5 * x * value(t, x, r)[..., None]

        def dxx(t, x, r):
            x = np.asarray(x)
            d = x.shape[-1]
            v = value(t, x, r)
            outer = x[..., :, None] * x[..., None, :]
            return (0.25 * outer - 0.5 * np.eye(d)) * v[..., None, None]

        return OuterFunction(
            "gauss_quarter", None,
            value=value,
            dt=lambda t, x, r: _scalar_field(x, 0.0),
            dx=dx, dxx=dxx,
            dr=lambda t, x, r: _zeros_r(x, len(r)),
            drr=lambda t, x, r: _zeros_rr(x, len(r)),
            dx_dr=lambda t, x, r: _zeros_x_r(x, len(r)),
        )
    raise ContractError(f"unknown outer function {name!r}")


# ---------------------------------------------------------------------------
# the cylindrical function itself


@dataclass(frozen=True)
class DerivativeBundle:
    """All partial derivatives of a cylindrical function at one (t, x, mu)."""

    value: float
    dt: float
    dx: np.ndarray
    dxx: np.ndarray
    dmu: Callable  # y (..., d) -> (..., d)
    dy_dmu: Callable  # y (..., d) -> (..., d, d)


@dataclass(frozen=True)
class CylindricalFunction:
    """f(t, x, mu) = F(t, x, mu(h_1), ..., mu(h_n))."""

    outer: OuterFunction
    inner: Sequence[InnerFunction] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "inner", tuple(self.inner))
        if self.outer.n_inner is not None and len(self.inner) != self.outer.n_inner:
            raise ContractError(
                f"outer {self.outer.name} needs {self.outer.n_inner} inner functions"
            )

    @property
    def name(self):
        inner = ",".join(h.name for h in self.inner)
        return f"{self.outer.name}[{inner}]"

    def inner_integrals(self, mu):
        """Vector (mu(h_1), ..., mu(h_n))."""
        return np.asarray([float(integrate(mu, h.value)) for h in self.inner])

    def value(self, t, x, mu, r=None):
        if r is None:
            r = self.inner_integrals(mu)
        out = self.outer.value(t, np.asarray(x, dtype=float), r)
        return float(out) if np.ndim(out) == 0 else out

    def _partial(self, which):
        fn = getattr(self.outer, which)
        if fn is None:
            raise CapabilityError(
                f"outer function {self.outer.name} lacks evaluator {which!r}"
            )
        return fn

    def l_derivative(self, t, x, mu, y, r=None):
        """d_mu f(t, x, mu)(y) = sum_i dF/dr_i * grad h_i(y)."""
        if r is None:
            r = self.inner_integrals(mu)
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape)
        if self.inner:
            coeffs = np.asarray(
                self._partial("dr")(t, np.asarray(x, dtype=float), r)
            ).reshape(-1)
            for i, h in enumerate(self.inner):
                out += coeffs[i] * h.grad(y)
        return out

    def dy_l_derivative(self, t, x, mu, y, r=None):
        """Gradient in y of the measure derivative: sum_i dF/dr_i * hess h_i(y)."""
        if r is None:
            r = self.inner_integrals(mu)
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape + (y.shape[-1],))
        if self.inner:
            coeffs = np.asarray(
                self._partial("dr")(t, np.asarray(x, dtype=float), r)
            ).reshape(-1)
            for i, h in enumerate(self.inner):
                out += coeffs[i] * h.hess(y)
        return out

    def derivative_bundle(self, t, x, mu):
        """Assemble every partial from closed forms; no finite differencing."""
        x = np.asarray(x, dtype=float)
        r = self.inner_integrals(mu)
        val = float(self.outer.value(t, x, r))
        dt = float(self._partial("dt")(t, x, r))
        dx = np.asarray(self._partial("dx")(t, x, r), dtype=float)
        dxx = np.asarray(self._partial("dxx")(t, x, r), dtype=float)
        return DerivativeBundle(
            value=val,
            dt=dt,
            dx=dx,
            dxx=dxx,
            dmu=lambda y: self.l_derivative(t, x, mu, y, r=r),
            dy_dmu=lambda y: self.dy_l_derivative(t, x, mu, y, r=r),
        )


def l_derivative(f, t, x, mu, y):
    """Module-level convenience wrapper around the closed-form formula."""
    return f.l_derivative(t, x, mu, y)


def l_derivative_fd_oracle(f, t, x, mu, phi, eps):
    """Difference quotient [f(mu o (Id + eps*phi)^{-1}) - f(mu)] / eps.

    Converges to mu(<d_mu f, phi>) as eps -> 0; kept deliberately
    independent of the closed-form evaluation path.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    shifted = pushforward(mu, lambda pts: eps * np.asarray(phi(pts)))
    return (f.value(t, x, shifted) - f.value(t, x, mu)) / eps


def l_derivative_pairing(f, t, x, mu, phi):
    """mu(<d_mu f, phi>): the limit the FD oracle must approach."""
    grad = f.l_derivative(t, x, mu, mu.points)
    disp = np.asarray([phi(p) for p in mu.points], dtype=float).reshape(mu.n_atoms, -1)
    return float(np.sum(mu.weights * np.sum(grad * disp, axis=1)))


def make_cylindrical(outer, inner=(), outer_params=None, inner_params=None):
    """Build a catalog cylindrical function from string identifiers.

    ``inner`` is a sequence of names or (name, params) pairs; ``outer`` a
    name resolved by :func:`make_outer`.
    """
    outer_fn = make_outer(outer, **(outer_params or {}))
    inner_fns = []
    for spec in inner:
        if isinstance(spec, str):
            inner_fns.append(make_inner(spec, **(inner_params or {})))
        else:
            name, params = spec
            inner_fns.append(make_inner(name, **(params or {})))
    return CylindricalFunction(outer_fn, inner_fns)
