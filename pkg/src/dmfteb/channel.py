"""Scalar Gaussian observation channel y = theta* + z.

The model posterior on theta given y is proportional to
sqrt(om/2pi) exp(-om (y-theta)^2 / 2) g(theta, alpha): conjugate closed forms
for the Gaussian and mixture prior variants (the posterior is again a
mixture with component precisions om_k + om), grid quadrature for the
tabulated variant. Population expectations over y (drawn from a possibly
different true prior at precision om_star) are computed with Gauss-Hermite
rules per true-mixture component; nothing in this module samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_hermitenorm

from .priors import PriorSpec, alpha_dim

__all__ = [
    "ChannelParams",
    "QuadratureRule",
    "NumericError",
    "DEFAULT_RULE",
    "posterior_moments",
    "marginal_log_density",
    "marginal_alpha_gradient",
    "channel_expectation",
    "rs_residual",
    "refine_check",
    "EXPECTATION_KINDS",
]

_LOG_2PI = float(np.log(2.0 * np.pi))

EXPECTATION_KINDS = ("mse", "mse_star", "var_sq", "alpha_grad", "neg_log_marginal")


class NumericError(RuntimeError):
    """Raised when quadrature or posterior evaluation loses validity."""


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite order for Gaussian directions plus the grid used for
    tabulated priors (node count over the tabulated support)."""

    n_gh: int = 61
    theta_grid_nodes: int = 2001

    def __post_init__(self):
        if self.n_gh < 1 or self.theta_grid_nodes < 9:
            raise ValueError("quadrature rule too coarse")


DEFAULT_RULE = QuadratureRule()


@dataclass(frozen=True)
class ChannelParams:
    """Model channel (g(., alpha), omega) against truth (g*(., alpha*), omega_star)."""

    model_prior: PriorSpec
    model_alpha: tuple
    omega: float
    true_prior: PriorSpec
    true_alpha: tuple
    omega_star: float

    def __post_init__(self):
        if not (self.omega > 0 and self.omega_star > 0):
            raise ValueError("channel precisions must be > 0")


@lru_cache(maxsize=16)
def _gh(n: int):
    """Probabilists' Gauss-Hermite nodes and probability weights (sum 1)."""
    x, w = roots_hermitenorm(n)
    return x, w / np.sqrt(2.0 * np.pi)


def _components(prior: PriorSpec, alpha):
    """(centers, precisions, weights) when the prior is a finite Gaussian
    mixture, else None (tabulated)."""
    a = np.atleast_1d(np.asarray(alpha, dtype=float))
    if prior.variant == "gaussian-location":
        return a[:1], np.array([prior.omega0]), np.array([1.0])
    if prior.variant == "mixture-means":
        return a, prior.precisions, prior.weights
    if prior.variant == "mixture-weights":
        shifted = a - a.max()
        p = np.exp(shifted)
        return prior.means, prior.precisions, p / p.sum()
    return None


def _tab_grid(prior: PriorSpec, rule: QuadratureRule):
    """Quadrature nodes, trapezoid weights, and log-density values for a
    tabulated prior's base (alpha = 0) density."""
    uu = np.linspace(prior.grid[0], prior.grid[-1], rule.theta_grid_nodes)
    tw = np.full(uu.size, uu[1] - uu[0])
    tw[0] *= 0.5
    tw[-1] *= 0.5
    logg = prior._spline(uu)
    return uu, tw, logg


def _mixture_posterior(y, centers, prec, weights, omega):
    """Component responsibilities and conditional posterior (means, variances)
    for a Gaussian-mixture prior; y an array, outputs (..., K)."""
    yk = y[..., None]
    s2 = 1.0 / prec + 1.0 / omega                     # marginal variance per comp
    ell = np.log(weights) - 0.5 * (np.log(2.0 * np.pi * s2) + (yk - centers) ** 2 / s2)
    m = ell.max(axis=-1, keepdims=True)
    resp = np.exp(ell - m)
    norm = resp.sum(axis=-1, keepdims=True)
    resp = resp / norm
    logp = (m + np.log(norm))[..., 0]                 # log marginal density
    post_mean = (prec * centers + omega * yk) / (prec + omega)
    post_var = 1.0 / (prec + omega)
    return resp, post_mean, post_var, logp


def _tab_posterior(y, prior, alpha, omega, rule, want):
    """Grid-quadrature posterior functionals for a tabulated prior.

    want is a set drawn from {"mean", "var", "logp", "agrad"}; returns a dict.
    Evaluates in chunks to bound memory for large y batches.
    """
    a = float(np.atleast_1d(alpha)[0])
    uu, tw, logg = _tab_grid(prior, rule)
    d1 = prior._spline.derivative(1)(uu)
    log_tw = np.log(tw)
    y = np.asarray(y, dtype=float)
    flat = y.reshape(-1)
    out = {k: np.empty((flat.size,)) for k in want}
    half_log = 0.5 * (np.log(omega) - _LOG_2PI)
    for lo in range(0, flat.size, 4096):
        yc = flat[lo:lo + 4096, None]
        ell = logg + log_tw - 0.5 * omega * (yc - a - uu) ** 2
        m = ell.max(axis=1, keepdims=True)
        amax = np.argmax(ell, axis=1)
        if np.any((amax == 0) | (amax == uu.size - 1)):
            raise NumericError("tabulated posterior peaks at the grid edge; "
                               "widen the tabulation range")
        w = np.exp(ell - m)
        z = w.sum(axis=1)
        w = w / z[:, None]
        sl = slice(lo, lo + yc.size)
        if "logp" in out:
            out["logp"][sl] = m[:, 0] + np.log(z) + half_log
        if "mean" in out or "var" in out:
            mu = w @ uu
            if "mean" in out:
                out["mean"][sl] = a + mu
            if "var" in out:
                out["var"][sl] = w @ (uu * uu) - mu * mu
        if "agrad" in out:
            out["agrad"][sl] = -(w @ d1)
    return {k: v.reshape(y.shape) for k, v in out.items()}


def posterior_moments(y, prior: PriorSpec, alpha, omega: float,
                      rule: QuadratureRule = DEFAULT_RULE):
    """Posterior mean and variance of theta given y under (g(., alpha), omega)."""
    if not omega > 0:
        raise ValueError("omega must be > 0")
    yarr = np.asarray(y, dtype=float)
    scalar = yarr.ndim == 0
    yv = np.atleast_1d(yarr)
    comps = _components(prior, alpha)
    if comps is not None:
        centers, prec, weights = comps
        resp, pm, pv, _ = _mixture_posterior(yv, centers, prec, weights, omega)
        mean = (resp * pm).sum(axis=-1)
        var = (resp * (pv + pm * pm)).sum(axis=-1) - mean * mean
    else:
        res = _tab_posterior(yv, prior, alpha, omega, rule, {"mean", "var"})
        mean, var = res["mean"], res["var"]
    if np.any(var <= 0):
        raise NumericError("posterior variance not strictly positive")
    if scalar:
        return float(mean[0]), float(var[0])
    return mean, var


def marginal_log_density(y, prior: PriorSpec, alpha, omega: float,
                         rule: QuadratureRule = DEFAULT_RULE):
    """log of the marginal density of y = theta + z/sqrt(omega), theta ~ g(., alpha)."""
    if not omega > 0:
        raise ValueError("omega must be > 0")
    yarr = np.asarray(y, dtype=float)
    scalar = yarr.ndim == 0
    yv = np.atleast_1d(yarr)
    comps = _components(prior, alpha)
    if comps is not None:
        centers, prec, weights = comps
        _, _, _, logp = _mixture_posterior(yv, centers, prec, weights, omega)
    else:
        logp = _tab_posterior(yv, prior, alpha, omega, rule, {"logp"})["logp"]
    return float(logp[0]) if scalar else logp


def marginal_alpha_gradient(y, prior: PriorSpec, alpha, omega: float,
                            rule: QuadratureRule = DEFAULT_RULE):
    """grad_alpha log P_{g(., alpha), omega}(y), equal to the posterior mean of
    grad_alpha log g(theta, alpha); shape (*y.shape, K)."""
    yarr = np.asarray(y, dtype=float)
    scalar = yarr.ndim == 0
    yv = np.atleast_1d(yarr)
    if prior.variant == "generic-tabulated":
        g = _tab_posterior(yv, prior, alpha, omega, rule, {"agrad"})["agrad"][..., None]
    else:
        centers, prec, weights = _components(prior, alpha)
        resp, _, _, _ = _mixture_posterior(yv, centers, prec, weights, omega)
        if prior.variant == "mixture-weights":
            g = resp - weights
        else:
            nu = prec * omega / (prec + omega)
            g = resp * nu * (yv[..., None] - centers)
    return g[0] if scalar else g


@lru_cache(maxsize=4)
def _gl(order: int):
    from scipy.special import roots_legendre
    return roots_legendre(order)


def _outer_y_rule(params: ChannelParams, rule: QuadratureRule):
    """Quadrature for expectations over the true marginal law of y.

    Mixture-marginal integrands are multi-scale (narrow posterior features
    inside wide outer Gaussians), which defeats a single global Gauss-Hermite
    rule, so the y-axis is covered by composite Gauss-Legendre panels whose
    width tracks the smallest smoothing scale min(1/sqrt(om), 1/sqrt(om*));
    n_gh scales the panel density (61 -> one panel per smoothing scale).
    Returns nodes y and weights that include the true marginal density.
    """
    om, oms = params.omega, params.omega_star
    comps = _components(params.true_prior, params.true_alpha)
    if comps is not None:
        centers, prec, _ = comps
        sd = np.sqrt(1.0 / prec + 1.0 / oms)
        lo = float(np.min(centers - 12.0 * sd))
        hi = float(np.max(centers + 12.0 * sd))
    else:
        a = float(np.atleast_1d(params.true_alpha)[0])
        lo = a + float(params.true_prior.grid[0]) - 12.0 / np.sqrt(oms)
        hi = a + float(params.true_prior.grid[-1]) + 12.0 / np.sqrt(oms)
    width = min(1.0 / np.sqrt(om), 1.0 / np.sqrt(oms)) * 61.0 / rule.n_gh
    n_panels = max(8, int(np.ceil((hi - lo) / width)))
    edges = np.linspace(lo, hi, n_panels + 1)
    x, w = _gl(16)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    y = (mid[:, None] + half[:, None] * x).reshape(-1)
    dy = (half[:, None] * w).reshape(-1)
    dens = np.exp(marginal_log_density(y, params.true_prior, params.true_alpha,
                                       oms, rule))
    return y, dens * dy


def channel_expectation(kind: str, params: ChannelParams,
                        rule: QuadratureRule = DEFAULT_RULE):
    """Population expectation over y (and theta*) of the requested functional.

    kind: "mse" -> E posterior variance; "mse_star" -> E (theta* - post mean)^2;
    "var_sq" -> E posterior variance squared; "alpha_grad" -> E of
    grad_alpha log P (a K-vector); "neg_log_marginal" -> E[-log P(y)].

    mse_star is reduced to a y-integral by conditioning on y:
    E (theta* - m(y))^2 = E_y[ Var_true(theta*|y) + (m_true(y) - m(y))^2 ].
    """
    if kind not in EXPECTATION_KINDS:
        raise ValueError(f"unknown expectation kind {kind!r}")
    mp, ma, om = params.model_prior, params.model_alpha, params.omega
    y, wt = _outer_y_rule(params, rule)
    if kind == "mse_star":
        mean, _ = posterior_moments(y, mp, ma, om, rule)
        tmean, tvar = posterior_moments(y, params.true_prior, params.true_alpha,
                                        params.omega_star, rule)
        return float(wt @ (tvar + (tmean - mean) ** 2))
    if kind == "mse":
        _, var = posterior_moments(y, mp, ma, om, rule)
        return float(wt @ var)
    if kind == "var_sq":
        _, var = posterior_moments(y, mp, ma, om, rule)
        return float(wt @ var ** 2)
    if kind == "neg_log_marginal":
        return float(-(wt @ marginal_log_density(y, mp, ma, om, rule)))
    g = marginal_alpha_gradient(y, mp, ma, om, rule)
    return wt @ g


def rs_residual(mse: float, mse_star: float, model_prior: PriorSpec, model_alpha,
                true_prior: PriorSpec, true_alpha, delta: float, sigma2: float,
                rule: QuadratureRule = DEFAULT_RULE):
    """One Picard application of the replica-symmetric fixed-point map.

    Precisions are derived from the inputs, omega = delta/(sigma2 + mse) and
    omega_star = delta/(sigma2 + mse_star), then the two channel errors are
    re-evaluated at those precisions.
    """
    if mse < 0 or mse_star < 0:
        raise ValueError("mse inputs must be >= 0")
    if not (delta > 0 and sigma2 > 0):
        raise ValueError("delta and sigma2 must be > 0")
    omega = delta / (sigma2 + mse)
    omega_star = delta / (sigma2 + mse_star)
    params = ChannelParams(model_prior, tuple(np.atleast_1d(model_alpha)), omega,
                           true_prior, tuple(np.atleast_1d(true_alpha)), omega_star)
    new_mse = channel_expectation("mse", params, rule)
    new_mse_star = channel_expectation("mse_star", params, rule)
    return new_mse, new_mse_star, omega, omega_star


def refine_check(params: ChannelParams, rule: QuadratureRule = DEFAULT_RULE):
    """Max absolute change over all expectation kinds when the quadrature is
    refined (doubled Gauss-Hermite order, denser theta grid)."""
    fine = QuadratureRule(n_gh=2 * rule.n_gh + 1,
                          theta_grid_nodes=2 * rule.theta_grid_nodes - 1)
    worst = 0.0
    for kind in EXPECTATION_KINDS:
        a = channel_expectation(kind, params, rule)
        b = channel_expectation(kind, params, fine)
        worst = max(worst, float(np.max(np.abs(np.asarray(a) - np.asarray(b)))))
    return worst
