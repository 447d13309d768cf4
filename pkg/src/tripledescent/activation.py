"""Activation functions and their Gaussian moments.

For z ~ N(0, 1) every activation carries three numbers:

    eta  = E[sigma(z)^2]
    zeta = (E[sigma'(z)])^2
    r    = zeta / eta          (degree of linearity, in [0, 1])

Closed forms are used when they exist. Everything else goes through
quadrature: Gauss-Hermite for smooth functions, and a Gauss-Legendre rule
split at the kinks for piecewise-linear ones (Gauss-Hermite converges only
algebraically across a kink).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import roots_hermitenorm, roots_legendre

DEFAULT_ORDER = 200
# mass of N(0,1) beyond this is ~1e-32
_TRUNCATION = 12.0
_SQRT_2PI = math.sqrt(2.0 * math.pi)


class ActivationError(ValueError):
    """Base class for activation-related failures."""


class MomentEvaluationError(ActivationError):
    """The evaluator produced a non-finite value at a quadrature node."""


class DegenerateActivationError(ActivationError):
    """The activation has zero Gaussian second moment (or cannot be normalized)."""


@dataclass(frozen=True)
class Moments:
    eta: float
    zeta: float
    r: float
    mean: float = 0.0

    def __iter__(self):
        # allows `eta, zeta, r = gaussian_moments(...)`
        return iter((self.eta, self.zeta, self.r))


@dataclass(frozen=True, eq=False)
class ActivationSpec:
    """An activation with evaluator, a.e. derivative and cached moments.

    ``mean`` is E[sigma(z)], which the Gaussian-equivalent loss needs for
    non-centred activations such as ReLU.
    """

    name: str
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    deriv: Optional[Callable[[np.ndarray], np.ndarray]] = field(repr=False, default=None)
    kinks: tuple[float, ...] = ()
    alpha: Optional[float] = None
    eta: float = float("nan")
    zeta: float = float("nan")
    r: float = float("nan")
    mean: float = float("nan")

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=float))

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        if self.deriv is None:
            raise ActivationError(f"activation {self.name!r} has no derivative")
        return self.deriv(x)

    @property
    def moments(self) -> Moments:
        return Moments(self.eta, self.zeta, self.r, self.mean)

    @property
    def token(self) -> str:
        if self.alpha is not None:
            return f"pwl:{self.alpha:g}"
        return self.name


# ---------------------------------------------------------------------------
# quadrature


def _hermite_rule(order: int):
    x, w = roots_hermitenorm(order)
    return x, w / _SQRT_2PI


def _split_rule(order: int, kinks: Sequence[float]):
    """Gauss-Legendre nodes on [-L, L] split at every kink, weighted by the
    standard normal density."""
    edges = [-_TRUNCATION, *sorted(k for k in kinks if abs(k) < _TRUNCATION), _TRUNCATION]
    t, wt = roots_legendre(order)
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        x = lo + half * (t + 1.0)
        xs.append(x)
        ws.append(wt * half * np.exp(-0.5 * x * x) / _SQRT_2PI)
    return np.concatenate(xs), np.concatenate(ws)


def gaussian_rule(order: int = DEFAULT_ORDER, kinks: Sequence[float] = ()):
    """Nodes and weights for E[g(z)], z ~ N(0, 1)."""
    if order < 32:
        raise ValueError(f"quadrature order must be >= 32, got {order}")
    if kinks:
        return _split_rule(order, kinks)
    return _hermite_rule(order)


def quadrature_moments(act: ActivationSpec, order: int = DEFAULT_ORDER) -> Moments:
    """Moments by quadrature, ignoring any closed form.

    When no derivative is available, E[sigma'(z)] is replaced by E[z sigma(z)]
    (Stein's lemma), which needs only the evaluator.
    """
    x, w = gaussian_rule(order, act.kinks)
    with np.errstate(all="ignore"):
        vals = act.fn(x)
    if not np.all(np.isfinite(vals)):
        bad = x[~np.isfinite(vals)][0]
        raise MomentEvaluationError(f"{act.name}: non-finite value at node z={bad:.6g}")
    eta = float(np.dot(w, vals * vals))
    mean = float(np.dot(w, vals))
    if act.deriv is not None:
        d = act.deriv(x)
        if not np.all(np.isfinite(d)):
            raise MomentEvaluationError(f"{act.name}: non-finite derivative")
        slope = float(np.dot(w, d))
    else:
        slope = float(np.dot(w, x * vals))
    return _finish(act.name, eta, slope * slope, mean)


def _finish(name, eta, zeta, mean) -> Moments:
    if not eta > 1e-14:
        raise DegenerateActivationError(f"{name}: eta = {eta:.3g}, activation is degenerate")
    # rounding can push zeta a hair above eta for linear functions
    zeta = min(max(zeta, 0.0), eta)
    return Moments(eta, zeta, zeta / eta, mean)


def gaussian_moments(activation, quadrature_order: int = DEFAULT_ORDER) -> Moments:
    """(eta, zeta, r) of an activation; closed form when known.

    ``activation`` is an :class:`ActivationSpec` or anything accepted by
    :func:`get_activation`.
    """
    if quadrature_order < 32:
        raise ValueError(f"quadrature order must be >= 32, got {quadrature_order}")
    act = activation if isinstance(activation, ActivationSpec) else get_activation(activation)
    closed = _closed_form(act)
    if closed is not None:
        return closed
    return quadrature_moments(act, quadrature_order)


def _closed_form(act: ActivationSpec) -> Optional[Moments]:
    if act.alpha is not None:
        a = act.alpha
        slope = 0.5 * (1.0 - a) / _pwl_norm(a)
        return _finish(act.name, 1.0, slope * slope, 0.0)
    table = {
        "linear": (1.0, 1.0, 0.0),
        "relu": (0.5, 0.25, 1.0 / _SQRT_2PI),
        "abs": (1.0, 0.0, math.sqrt(2.0 / math.pi)),
    }
    if act.name in table:
        return _finish(act.name, *table[act.name])
    return None


# ---------------------------------------------------------------------------
# activation catalogue


def _kink_step(x, left, right):
    # mean of one-sided limits at 0
    return np.where(x > 0, right, np.where(x < 0, left, 0.5 * (left + right)))


def _with_moments(spec: ActivationSpec, order: int = DEFAULT_ORDER) -> ActivationSpec:
    m = gaussian_moments(spec, order)
    object.__setattr__(spec, "eta", m.eta)
    object.__setattr__(spec, "zeta", m.zeta)
    object.__setattr__(spec, "r", m.r)
    object.__setattr__(spec, "mean", m.mean)
    return spec


def linear() -> ActivationSpec:
    return _with_moments(ActivationSpec("linear", lambda x: x * 1.0, lambda x: np.ones_like(x)))


def relu() -> ActivationSpec:
    return _with_moments(ActivationSpec(
        "relu", lambda x: np.maximum(x, 0.0), lambda x: _kink_step(x, 0.0, 1.0), kinks=(0.0,)))


def absolute() -> ActivationSpec:
    return _with_moments(ActivationSpec(
        "abs", np.abs, lambda x: _kink_step(x, -1.0, 1.0), kinks=(0.0,)))


def tanh() -> ActivationSpec:
    return _with_moments(ActivationSpec("tanh", np.tanh, lambda x: 1.0 - np.tanh(x) ** 2))


def _pwl_norm(alpha: float) -> float:
    var = 0.5 * (1.0 + alpha * alpha) - (1.0 + alpha) ** 2 / (2.0 * math.pi)
    if not var > 1e-12:
        raise DegenerateActivationError(f"pwl:{alpha}: normalizer {var:.3g} is not positive")
    return math.sqrt(var)


def pwl_r(alpha: float) -> float:
    """Closed-form degree of linearity of :func:`piecewise_linear`."""
    return (1.0 - alpha) ** 2 / (2.0 * (1.0 + alpha * alpha) - (2.0 / math.pi) * (1.0 + alpha) ** 2)


def piecewise_linear(alpha: float) -> ActivationSpec:
    """Centred, unit-variance ``[x]_+ + alpha [-x]_+`` (shifted and rescaled).

    alpha = -1 is the identity, alpha = 0 a shifted ReLU, alpha = 1 a
    shifted absolute value.
    """
    alpha = float(alpha)
    if not math.isfinite(alpha):
        raise ActivationError("alpha must be finite")
    scale = _pwl_norm(alpha)
    shift = (1.0 + alpha) / _SQRT_2PI

    def fn(x):
        return (np.maximum(x, 0.0) + alpha * np.maximum(-x, 0.0) - shift) / scale

    def deriv(x):
        return _kink_step(x, -alpha, 1.0) / scale

    return _with_moments(ActivationSpec(f"pwl:{alpha:g}", fn, deriv, kinks=(0.0,), alpha=alpha))


def custom(fn: Callable[[np.ndarray], np.ndarray], name: str = "custom",
           kinks: Sequence[float] = (), order: int = DEFAULT_ORDER) -> ActivationSpec:
    """Wrap a user evaluator; zeta comes from Stein's lemma."""
    return _with_moments(ActivationSpec(name, fn, None, kinks=tuple(kinks)), order)


_BUILTIN = {
    "linear": linear,
    "identity": linear,
    "relu": relu,
    "abs": absolute,
    "absolute": absolute,
    "tanh": tanh,
}

BUILTIN_NAMES = ("linear", "relu", "abs", "tanh")


def get_activation(token) -> ActivationSpec:
    """Resolve ``'tanh'``, ``'pwl:0.25'`` etc. into an :class:`ActivationSpec`."""
    if isinstance(token, ActivationSpec):
        return token
    key = str(token).strip().lower()
    if key.startswith("pwl:"):
        try:
            alpha = float(key[4:])
        except ValueError:
            raise ActivationError(f"bad piecewise-linear token {token!r}") from None
        return piecewise_linear(alpha)
    try:
        return _BUILTIN[key]()
    except KeyError:
        raise ActivationError(
            f"unknown activation {token!r}; expected one of {BUILTIN_NAMES} or pwl:<alpha>"
        ) from None
