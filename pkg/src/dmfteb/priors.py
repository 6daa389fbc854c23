"""Parametric prior families g(theta, alpha) and the confinement regularizer.

Four variants are supported:

* ``gaussian-location``: N(alpha, 1/omega0) with learnable mean alpha.
* ``mixture-means``: sum_k p_k N(alpha_k, 1/omega_k), fixed weights and
  variances, learnable component means alpha in R^K.
* ``mixture-weights``: sum_k p_k(alpha) N(mu_k, 1/omega_k) with fixed
  components and learnable softmax weights, alpha in R^{K+1}.
* ``generic-tabulated``: a tabulated log-density with a single location
  parameter, cubic-spline interpolated, quadratic tails.

All derivative formulas are closed-form (no autodiff); mixture component
posteriors are evaluated in log-space with max-subtraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

__all__ = [
    "PriorSpec",
    "RegularizerSpec",
    "gaussian_location",
    "mixture_means",
    "mixture_weights",
    "generic_tabulated",
    "tabulated_from_callable",
    "log_density",
    "score",
    "score_derivative",
    "alpha_gradient",
    "alpha_dim",
    "constant_curvature",
    "second_moment",
    "first_moment",
    "sample_prior",
    "regularizer",
    "log_normalization",
]

_LOG_2PI = float(np.log(2.0 * np.pi))

VARIANTS = ("gaussian-location", "mixture-means", "mixture-weights", "generic-tabulated")


@dataclass
class PriorSpec:
    """A parametric prior family. Use the factory functions to construct."""

    variant: str
    omega0: Optional[float] = None                # gaussian-location precision
    weights: Optional[np.ndarray] = None          # mixture-means weights, sum 1
    precisions: Optional[np.ndarray] = None       # component precisions
    means: Optional[np.ndarray] = None            # mixture-weights fixed means
    grid: Optional[np.ndarray] = None             # generic-tabulated theta grid
    log_g: Optional[np.ndarray] = None            # tabulated log-density values
    tail_curvature_floor: float = 0.5
    # derived, filled in __post_init__
    _spline: object = field(default=None, repr=False, compare=False)
    _tails: object = field(default=None, repr=False, compare=False)
    _base_moments: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown prior variant {self.variant!r}")
        if self.variant == "gaussian-location":
            if self.omega0 is None or not self.omega0 > 0:
                raise ValueError("gaussian-location requires precision omega0 > 0")
        elif self.variant == "mixture-means":
            self.weights = np.asarray(self.weights, dtype=float)
            self.precisions = np.asarray(self.precisions, dtype=float)
            _check_mixture(self.weights, self.precisions)
        elif self.variant == "mixture-weights":
            self.means = np.asarray(self.means, dtype=float)
            self.precisions = np.asarray(self.precisions, dtype=float)
            if self.means.shape != self.precisions.shape or self.means.ndim != 1:
                raise ValueError("means and precisions must be 1-d of equal length")
            if np.any(self.precisions <= 0):
                raise ValueError("all precisions must be > 0")
        elif self.variant == "generic-tabulated":
            self.grid = np.asarray(self.grid, dtype=float)
            self.log_g = np.asarray(self.log_g, dtype=float)
            if self.grid.ndim != 1 or self.grid.shape != self.log_g.shape:
                raise ValueError("grid and log_g must be 1-d of equal length")
            if self.grid.size < 8:
                raise ValueError("tabulated grid needs at least 8 nodes")
            if np.any(np.diff(self.grid) <= 0):
                raise ValueError("grid must be strictly increasing")
            self._build_tabulated()

    def _build_tabulated(self):
        spline = CubicSpline(self.grid, self.log_g)
        lo, hi = self.grid[0], self.grid[-1]
        d1 = spline.derivative(1)
        d2 = spline.derivative(2)
        # quadratic tails with curvature at most -floor: value and slope are
        # matched at the grid ends so convexity-at-infinity holds by construction
        tails = {}
        for side, u0 in (("lo", lo), ("hi", hi)):
            c = max(-float(d2(u0)), self.tail_curvature_floor)
            tails[side] = (float(u0), float(spline(u0)), float(d1(u0)), c)
        self._spline = spline
        self._tails = tails
        # base-density moments by quadrature on a refined grid (tails carry
        # negligible mass when the grid is wide enough)
        uu = np.linspace(lo, hi, max(4001, 4 * self.grid.size))
        dens = np.exp(spline(uu))
        z = np.trapezoid(dens, uu)
        m1 = np.trapezoid(uu * dens, uu) / z
        m2 = np.trapezoid(uu * uu * dens, uu) / z
        self._base_moments = (float(np.log(z)), float(m1), float(m2))


def _check_mixture(weights, precisions):
    if weights.ndim != 1 or weights.shape != precisions.shape:
        raise ValueError("weights and precisions must be 1-d of equal length")
    if np.any(weights <= 0):
        raise ValueError("mixture weights must be strictly positive")
    if abs(float(weights.sum()) - 1.0) > 1e-12:
        raise ValueError("mixture weights must sum to 1 within 1e-12")
    if np.any(precisions <= 0):
        raise ValueError("all precisions must be > 0")


# ---- factories ----

def gaussian_location(omega0: float) -> PriorSpec:
    return PriorSpec(variant="gaussian-location", omega0=float(omega0))


def mixture_means(weights, precisions) -> PriorSpec:
    return PriorSpec(variant="mixture-means", weights=weights, precisions=precisions)


def mixture_weights(means, precisions) -> PriorSpec:
    return PriorSpec(variant="mixture-weights", means=means, precisions=precisions)


def generic_tabulated(grid, log_g, tail_curvature_floor: float = 0.5) -> PriorSpec:
    return PriorSpec(
        variant="generic-tabulated", grid=grid, log_g=log_g,
        tail_curvature_floor=tail_curvature_floor,
    )


def tabulated_from_callable(neg_log_density, lo=-12.0, hi=12.0, n=2001,
                            normalize=True) -> PriorSpec:
    """Tabulate log g(u) = -neg_log_density(u) on [lo, hi] and normalize."""
    uu = np.linspace(lo, hi, n)
    vals = -np.asarray(neg_log_density(uu), dtype=float)
    if normalize:
        dens = np.exp(vals - vals.max())
        z = np.trapezoid(dens, uu)
        vals = vals - (np.log(z) + vals.max())
    return generic_tabulated(uu, vals)


# ---- shared helpers ----

def alpha_dim(spec: PriorSpec) -> int:
    """Dimension K of the learnable parameter alpha."""
    if spec.variant == "gaussian-location":
        return 1
    if spec.variant == "mixture-means":
        return spec.weights.size
    if spec.variant == "mixture-weights":
        return spec.means.size
    return 1  # generic-tabulated: single location parameter


def _alpha_vec(spec: PriorSpec, alpha) -> np.ndarray:
    a = np.atleast_1d(np.asarray(alpha, dtype=float))
    k = alpha_dim(spec)
    if a.shape != (k,):
        raise ValueError(f"alpha must have shape ({k},), got {a.shape}")
    return a


def _mixture_parts(spec: PriorSpec, alpha):
    """Return (centers, precisions, log_weights) for either mixture variant."""
    a = _alpha_vec(spec, alpha)
    if spec.variant == "mixture-means":
        return a, spec.precisions, np.log(spec.weights)
    # mixture-weights: softmax weights, fixed centers
    shifted = a - a.max()
    logw = shifted - np.log(np.exp(shifted).sum())
    return spec.means, spec.precisions, logw


def _component_logliks(theta, centers, precisions, log_weights):
    """Per-component log p_k + log N(theta; c_k, 1/om_k); shape (*theta, K)."""
    th = theta[..., None]
    return (log_weights + 0.5 * (np.log(precisions) - _LOG_2PI)
            - 0.5 * precisions * (th - centers) ** 2)


def _posterior_weights(ell):
    m = ell.max(axis=-1, keepdims=True)
    w = np.exp(ell - m)
    return w / w.sum(axis=-1, keepdims=True)


def _theta_array(theta):
    arr = np.asarray(theta, dtype=float)
    return arr, (arr.ndim == 0)


def _tab_eval(spec: PriorSpec, u, order: int):
    """Evaluate the tabulated log-density (order 0) or a derivative (1, 2)
    with quadratic tail continuation outside the grid."""
    u0d = np.asarray(u, dtype=float)
    u = np.atleast_1d(u0d)
    lo, hi = spec.grid[0], spec.grid[-1]
    inside = (u >= lo) & (u <= hi)
    out = np.empty_like(u)
    if np.any(inside):
        s = spec._spline
        f = s if order == 0 else s.derivative(order)
        out[inside] = f(u[inside])
    for side, mask in (("lo", u < lo), ("hi", u > hi)):
        if not np.any(mask):
            continue
        u0, v0, d0, c = spec._tails[side]
        du = u[mask] - u0
        if order == 0:
            out[mask] = v0 + d0 * du - 0.5 * c * du * du
        elif order == 1:
            out[mask] = d0 - c * du
        else:
            out[mask] = -c
    return out.reshape(u0d.shape)


# ---- core operations ----

def log_density(theta, alpha, spec: PriorSpec):
    """log g(theta, alpha); finite for all finite theta."""
    th, scalar = _theta_array(theta)
    if spec.variant == "gaussian-location":
        a = _alpha_vec(spec, alpha)[0]
        out = 0.5 * (np.log(spec.omega0) - _LOG_2PI) - 0.5 * spec.omega0 * (th - a) ** 2
    elif spec.variant in ("mixture-means", "mixture-weights"):
        centers, prec, logw = _mixture_parts(spec, alpha)
        ell = _component_logliks(th, centers, prec, logw)
        m = ell.max(axis=-1)
        out = m + np.log(np.exp(ell - m[..., None]).sum(axis=-1))
    else:
        a = _alpha_vec(spec, alpha)[0]
        out = _tab_eval(spec, th - a, 0)
    return float(out) if scalar else out


def score(theta, alpha, spec: PriorSpec):
    """d/dtheta log g(theta, alpha)."""
    th, scalar = _theta_array(theta)
    if spec.variant == "gaussian-location":
        a = _alpha_vec(spec, alpha)[0]
        out = -spec.omega0 * (th - a)
    elif spec.variant in ("mixture-means", "mixture-weights"):
        centers, prec, logw = _mixture_parts(spec, alpha)
        ell = _component_logliks(th, centers, prec, logw)
        w = _posterior_weights(ell)
        vals = prec * (centers - th[..., None])
        out = (w * vals).sum(axis=-1)
    else:
        a = _alpha_vec(spec, alpha)[0]
        out = _tab_eval(spec, th - a, 1)
    return float(out) if scalar else out


def score_derivative(theta, alpha, spec: PriorSpec):
    """d^2/dtheta^2 log g(theta, alpha).

    For mixtures this is the component-posterior variance of om_k(c_k - theta)
    minus the posterior mean of om_k; it tends to -min_k om_k as |theta| grows.
    """
    th, scalar = _theta_array(theta)
    if spec.variant == "gaussian-location":
        out = np.full_like(th, -spec.omega0)
    elif spec.variant in ("mixture-means", "mixture-weights"):
        centers, prec, logw = _mixture_parts(spec, alpha)
        ell = _component_logliks(th, centers, prec, logw)
        w = _posterior_weights(ell)
        vals = prec * (centers - th[..., None])
        mean = (w * vals).sum(axis=-1)
        var = (w * vals * vals).sum(axis=-1) - mean * mean
        out = var - (w * prec).sum(axis=-1)
    else:
        a = _alpha_vec(spec, alpha)[0]
        out = _tab_eval(spec, th - a, 2)
    return float(out) if scalar else out


def constant_curvature(spec: PriorSpec):
    """The state-independent value of score_derivative if it has one, else None."""
    if spec.variant == "gaussian-location":
        return -float(spec.omega0)
    if spec.variant in ("mixture-means", "mixture-weights") and spec.precisions.size == 1:
        return -float(spec.precisions[0])
    return None


def alpha_gradient(theta, alpha, spec: PriorSpec):
    """grad_alpha log g(theta, alpha); shape (*theta.shape, K).

    For mixture-weights the output lies in the zero-sum subspace.
    """
    th, scalar = _theta_array(theta)
    if spec.variant == "gaussian-location":
        a = _alpha_vec(spec, alpha)[0]
        out = (spec.omega0 * (th - a))[..., None]
    elif spec.variant == "mixture-means":
        centers, prec, logw = _mixture_parts(spec, alpha)
        ell = _component_logliks(th, centers, prec, logw)
        w = _posterior_weights(ell)
        out = w * prec * (th[..., None] - centers)
    elif spec.variant == "mixture-weights":
        centers, prec, logw = _mixture_parts(spec, alpha)
        ell = _component_logliks(th, centers, prec, logw)
        w = _posterior_weights(ell)
        out = w - np.exp(logw)
    else:
        a = _alpha_vec(spec, alpha)[0]
        out = (-_tab_eval(spec, th - a, 1))[..., None]
    return out


def second_moment(spec: PriorSpec, alpha) -> float:
    """E[theta^2] under g(., alpha), exact (quadrature for tabulated)."""
    if spec.variant == "gaussian-location":
        a = _alpha_vec(spec, alpha)[0]
        return float(a * a + 1.0 / spec.omega0)
    if spec.variant in ("mixture-means", "mixture-weights"):
        centers, prec, logw = _mixture_parts(spec, alpha)
        p = np.exp(logw)
        return float((p * (centers ** 2 + 1.0 / prec)).sum())
    a = _alpha_vec(spec, alpha)[0]
    _, m1, m2 = spec._base_moments
    return float(m2 + 2.0 * a * m1 + a * a)


def first_moment(spec: PriorSpec, alpha) -> float:
    """E[theta] under g(., alpha), exact (quadrature for tabulated)."""
    if spec.variant == "gaussian-location":
        return float(_alpha_vec(spec, alpha)[0])
    if spec.variant in ("mixture-means", "mixture-weights"):
        centers, prec, logw = _mixture_parts(spec, alpha)
        return float((np.exp(logw) * centers).sum())
    a = _alpha_vec(spec, alpha)[0]
    _, m1, _ = spec._base_moments
    return float(m1 + a)


def sample_prior(spec: PriorSpec, alpha, count: int, rng: np.random.Generator):
    """iid draws from g(., alpha); deterministic given the generator state."""
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return np.empty(0)
    if spec.variant == "gaussian-location":
        a = _alpha_vec(spec, alpha)[0]
        return a + rng.standard_normal(count) / np.sqrt(spec.omega0)
    if spec.variant in ("mixture-means", "mixture-weights"):
        centers, prec, logw = _mixture_parts(spec, alpha)
        p = np.exp(logw)
        p = p / p.sum()
        idx = rng.choice(p.size, size=count, p=p)
        return centers[idx] + rng.standard_normal(count) / np.sqrt(prec[idx])
    # generic-tabulated: inverse-CDF on a refined grid
    a = _alpha_vec(spec, alpha)[0]
    uu = np.linspace(spec.grid[0], spec.grid[-1], max(8001, 4 * spec.grid.size))
    dens = np.exp(spec._spline(uu))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(uu))])
    cdf /= cdf[-1]
    u = rng.random(count)
    return a + np.interp(u, cdf, uu)


def log_normalization(spec: PriorSpec, alpha, half_width: float = 14.0,
                      n: int = 20001) -> float:
    """log of the total mass of exp(log_density) over a wide grid.

    Should be ~0 for a valid spec; used by the normalization invariant check.
    """
    centers = 0.0
    if spec.variant == "gaussian-location":
        centers = float(_alpha_vec(spec, alpha)[0])
        spread = 1.0 / np.sqrt(spec.omega0)
    elif spec.variant in ("mixture-means", "mixture-weights"):
        c, prec, logw = _mixture_parts(spec, alpha)
        centers = float(np.mean(c))
        spread = float(np.max(np.abs(c - centers)) + 1.0 / np.sqrt(prec.min()))
    else:
        centers = float(_alpha_vec(spec, alpha)[0])
        spread = float(spec.grid[-1] - spec.grid[0]) / 4.0
    lo = centers - half_width * max(spread, 1.0)
    hi = centers + half_width * max(spread, 1.0)
    tt = np.linspace(lo, hi, n)
    vals = log_density(tt, alpha, spec)
    m = vals.max()
    return float(m + np.log(np.trapezoid(np.exp(vals - m), tt)))


# ---- confinement regularizer ----

@dataclass(frozen=True)
class RegularizerSpec:
    """R(alpha) = r(||alpha||): zero inside radius D, asymptotically linear.

    The ramp r(x) on u = x - D in [0, 1] is 2u^3 - u^4 (C^2 at both ends,
    r'(D+1) = 2), continued linearly with slope 2, so r(x) >= x - D for all
    x >= D + 1 and r' > 0 beyond D.
    """

    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("regularizer radius D must be > 0")


def _ramp(x: np.ndarray, d: float):
    u = x - d
    val = np.zeros_like(x)
    dval = np.zeros_like(x)
    mid = (u > 0) & (u <= 1.0)
    um = u[mid]
    val[mid] = 2.0 * um ** 3 - um ** 4
    dval[mid] = 6.0 * um ** 2 - 4.0 * um ** 3
    far = u > 1.0
    val[far] = 1.0 + 2.0 * (u[far] - 1.0)
    dval[far] = 2.0
    return val, dval


def regularizer(alpha, spec: Optional[RegularizerSpec]):
    """Return (R(alpha), grad R(alpha)); both zero when ||alpha|| <= D or spec is None."""
    a = np.atleast_1d(np.asarray(alpha, dtype=float))
    if spec is None:
        return 0.0, np.zeros_like(a)
    norm = float(np.linalg.norm(a))
    val, dval = _ramp(np.array([norm]), spec.radius)
    if norm == 0.0 or dval[0] == 0.0:
        return float(val[0]), np.zeros_like(a)
    return float(val[0]), dval[0] * a / norm
