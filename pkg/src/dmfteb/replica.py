"""Replica-symmetric equilibrium: scalar fixed point, asymptotic free energy,
AT stability, the large-sample population objective, and landscape tools.

The fixed point couples two precisions to two scalar errors,
om = delta/(sigma2 + mse) and om* = delta/(sigma2 + mse*), with (mse, mse*)
the matched/mismatched errors of the scalar channel at those precisions.
A damped Picard iteration starting from prior second moments is used
throughout; the free-energy gradient never differentiates through the fixed
point (the partial derivatives in (om, om*) vanish there), which is
validated against finite differences in the tests.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .channel import (
    DEFAULT_RULE,
    ChannelParams,
    NumericError,
    QuadratureRule,
    channel_expectation,
    rs_residual,
)
from .priors import PriorSpec, RegularizerSpec, regularizer, second_moment

__all__ = [
    "RsFixedPoint",
    "ReplicaContext",
    "CriticalPoint",
    "solve_rs_fixed_point",
    "free_energy",
    "free_energy_gradient",
    "at_stability",
    "population_nll_G",
    "find_critical_points",
    "landscape_scan",
]

log = logging.getLogger(__name__)

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class RsFixedPoint:
    mse: float
    mse_star: float
    omega: float
    omega_star: float
    ymse: float
    ymse_star: float
    iterations: int
    residual: float
    converged: bool
    residual_history: tuple = field(default=(), repr=False)


@dataclass
class ReplicaContext:
    """Everything the landscape functions need besides alpha itself."""

    model_prior: PriorSpec
    true_prior: PriorSpec
    true_alpha: Sequence[float]
    delta: float
    sigma2: float
    damping: float = 0.5
    tol: float = 1e-10
    max_iter: int = 500
    rule: QuadratureRule = DEFAULT_RULE
    reg: Optional[RegularizerSpec] = None

    def __post_init__(self):
        if not (self.delta > 0 and self.sigma2 > 0):
            raise ValueError("delta and sigma2 must be > 0")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")


@dataclass(frozen=True)
class CriticalPoint:
    alpha: np.ndarray
    grad_norm: float
    objective: float
    at_value: float
    basin: int
    converged: bool


def _ymse_pair(omega, omega_star, delta, sigma2):
    ymse = sigma2 * (1.0 - omega * sigma2 / delta)
    ymse_star = sigma2 + (omega * sigma2 ** 2 / delta) * (omega / omega_star - 2.0)
    return ymse, ymse_star


def solve_rs_fixed_point(model_prior: PriorSpec, model_alpha,
                         true_prior: PriorSpec, true_alpha,
                         delta: float, sigma2: float,
                         damping: float = 0.5, tol: float = 1e-10,
                         max_iter: int = 500,
                         rule: QuadratureRule = DEFAULT_RULE,
                         init=None) -> RsFixedPoint:
    """Damped Picard iteration for the replica-symmetric fixed point.

    init optionally overrides the (mse, mse_star) starting pair; the default
    starts from the prior second moments. Non-convergence is reported in the
    returned record, not raised.
    """
    if init is None:
        mse = second_moment(model_prior, model_alpha)
        mse_star = second_moment(true_prior, true_alpha)
    else:
        mse, mse_star = float(init[0]), float(init[1])
    history = []
    omega = delta / (sigma2 + mse)
    omega_star = delta / (sigma2 + mse_star)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new_mse, new_mse_star, omega, omega_star = rs_residual(
            mse, mse_star, model_prior, model_alpha, true_prior, true_alpha,
            delta, sigma2, rule)
        if new_mse < 0 or new_mse_star < 0:
            raise NumericError("fixed-point update produced a negative error")
        residual = max(abs(new_mse - mse), abs(new_mse_star - mse_star))
        history.append(residual)
        mse = (1.0 - damping) * mse + damping * new_mse
        mse_star = (1.0 - damping) * mse_star + damping * new_mse_star
        if residual <= tol:
            converged = True
            break
    else:
        residual = history[-1]
        log.warning("fixed point not converged after %d iterations "
                    "(residual %.3e)", max_iter, residual)
    # re-derive the precisions from the final pair so the coupling identities
    # hold exactly
    omega = delta / (sigma2 + mse)
    omega_star = delta / (sigma2 + mse_star)
    ymse, ymse_star = _ymse_pair(omega, omega_star, delta, sigma2)
    return RsFixedPoint(mse=mse, mse_star=mse_star, omega=omega,
                        omega_star=omega_star, ymse=ymse, ymse_star=ymse_star,
                        iterations=it, residual=history[-1] if history else 0.0,
                        converged=converged, residual_history=tuple(history))


def _fixed_point_at(alpha, ctx: ReplicaContext, init=None) -> RsFixedPoint:
    return solve_rs_fixed_point(ctx.model_prior, alpha, ctx.true_prior,
                                ctx.true_alpha, ctx.delta, ctx.sigma2,
                                ctx.damping, ctx.tol, ctx.max_iter, ctx.rule,
                                init=init)


def _params_at(alpha, ctx: ReplicaContext, fp: RsFixedPoint) -> ChannelParams:
    return ChannelParams(ctx.model_prior, tuple(np.atleast_1d(alpha)), fp.omega,
                         ctx.true_prior, tuple(np.atleast_1d(ctx.true_alpha)),
                         fp.omega_star)


def free_energy(alpha, ctx: ReplicaContext, fp: Optional[RsFixedPoint] = None,
                with_fp: bool = False):
    """Asymptotic free energy F(alpha) at the fixed point reached from
    prior-moment initialization (pass fp to reuse a solved fixed point)."""
    if fp is None:
        fp = _fixed_point_at(alpha, ctx)
    if not fp.converged:
        raise NumericError("fixed point did not converge; free energy undefined")
    om, oms = fp.omega, fp.omega_star
    delta, sigma2 = ctx.delta, ctx.sigma2
    nll = channel_expectation("neg_log_marginal", _params_at(alpha, ctx, fp),
                              ctx.rule)
    bracket = (delta + np.log(2.0 * np.pi / om)
               - delta * np.log(2.0 * np.pi * delta / om)
               + (1.0 - delta) * om / oms
               + om * sigma2 * (om / oms - 2.0))
    val = float(nll - 0.5 * bracket)
    return (val, fp) if with_fp else val


def free_energy_gradient(alpha, ctx: ReplicaContext,
                         fp: Optional[RsFixedPoint] = None) -> np.ndarray:
    """grad F(alpha) = -E grad_alpha log P(y) at the fixed point; the
    precisions are held fixed (their partials vanish at the fixed point)."""
    if fp is None:
        fp = _fixed_point_at(alpha, ctx)
    if not fp.converged:
        raise NumericError("fixed point did not converge; gradient undefined")
    g = channel_expectation("alpha_grad", _params_at(alpha, ctx, fp), ctx.rule)
    return -np.atleast_1d(g)


def at_stability(alpha, ctx: ReplicaContext,
                 fp: Optional[RsFixedPoint] = None) -> float:
    """Replica-symmetric stability margin 1 - (om^2/delta) E[Var(theta|y)^2];
    nonnegative values mean the RS phase is stable."""
    if fp is None:
        fp = _fixed_point_at(alpha, ctx)
    if not fp.converged:
        raise NumericError("fixed point did not converge; AT value undefined")
    vs = channel_expectation("var_sq", _params_at(alpha, ctx, fp), ctx.rule)
    return float(1.0 - fp.omega ** 2 / ctx.delta * vs)


def population_nll_G(alpha, s2: float, model_prior: PriorSpec,
                     true_prior: PriorSpec, true_alpha,
                     rule: QuadratureRule = DEFAULT_RULE):
    """Negative population log-likelihood at fixed noise level s2 (the
    large-sample objective; no fixed-point solve) and its alpha-gradient."""
    if not s2 > 0:
        raise ValueError("s2 must be > 0")
    om = 1.0 / s2
    params = ChannelParams(model_prior, tuple(np.atleast_1d(alpha)), om,
                           true_prior, tuple(np.atleast_1d(true_alpha)), om)
    value = channel_expectation("neg_log_marginal", params, rule)
    grad = -np.atleast_1d(channel_expectation("alpha_grad", params, rule))
    return float(value), grad


def _objective_fns(objective: str, ctx: ReplicaContext):
    """Return (value, grad) callables with warm-started fixed points."""
    warm = {"init": None}

    if objective == "F_plus_R":
        def value(alpha):
            fp = _fixed_point_at(alpha, ctx, init=warm["init"])
            if fp.converged:
                warm["init"] = (fp.mse, fp.mse_star)
            v = free_energy(alpha, ctx, fp=fp)
            return v + regularizer(alpha, ctx.reg)[0]

        def grad(alpha):
            fp = _fixed_point_at(alpha, ctx, init=warm["init"])
            if fp.converged:
                warm["init"] = (fp.mse, fp.mse_star)
            return free_energy_gradient(alpha, ctx, fp=fp) + regularizer(alpha, ctx.reg)[1]
    elif objective == "G_plus_R":
        s2 = ctx.sigma2 / ctx.delta

        def value(alpha):
            v, _ = population_nll_G(alpha, s2, ctx.model_prior, ctx.true_prior,
                                    ctx.true_alpha, ctx.rule)
            return v + regularizer(alpha, ctx.reg)[0]

        def grad(alpha):
            _, g = population_nll_G(alpha, s2, ctx.model_prior, ctx.true_prior,
                                    ctx.true_alpha, ctx.rule)
            return g + regularizer(alpha, ctx.reg)[1]
    else:
        raise ValueError(f"unknown objective {objective!r}")
    return value, grad


def find_critical_points(objective: str, inits: Sequence, ctx: ReplicaContext,
                         step: float = 1.0, grad_tol: float = 1e-7,
                         dedup_radius: float = 1e-3, max_steps: int = 2000):
    """Gradient descent with Armijo backtracking from each init; converged
    end points are deduplicated by pairwise distance and labeled with the
    AT stability value of their fixed point."""
    value_fn, grad_fn = _objective_fns(objective, ctx)
    found = []
    for init in inits:
        alpha = np.array(np.atleast_1d(init), dtype=float)
        val = value_fn(alpha)
        converged = False
        for _ in range(max_steps):
            g = grad_fn(alpha)
            gnorm = float(np.linalg.norm(g))
            if gnorm <= grad_tol:
                converged = True
                break
            # Armijo backtracking on the descent direction -g
            t = step
            for _ in range(40):
                cand = alpha - t * g
                cval = value_fn(cand)
                if cval <= val - 1e-4 * t * gnorm ** 2:
                    break
                t *= 0.5
            else:
                log.warning("line search stalled at alpha=%s", alpha)
                break
            alpha, val = cand, cval
        gnorm = float(np.linalg.norm(grad_fn(alpha)))
        at_val = np.nan
        try:
            at_val = at_stability(alpha, ctx)
        except NumericError:
            pass
        found.append(CriticalPoint(alpha=alpha, grad_norm=gnorm,
                                   objective=value_fn(alpha), at_value=at_val,
                                   basin=-1, converged=converged and gnorm <= grad_tol))
    # deduplicate converged points; failed inits are kept, labeled -1
    out = []
    reps = []
    for cp in found:
        if not cp.converged:
            out.append(cp)
            continue
        for label, rep in enumerate(reps):
            if np.linalg.norm(cp.alpha - rep) < dedup_radius:
                out.append(replace(cp, basin=label))
                break
        else:
            reps.append(cp.alpha)
            out.append(replace(cp, basin=len(reps) - 1))
    return out


def landscape_scan(objective: str, alpha1_values, alpha2_values,
                   ctx: ReplicaContext, cell_cap: int = 65536):
    """Evaluate the objective and AT margin over a 2-d alpha grid.

    Returns a list of row dicts (alpha1, alpha2, value, at, converged);
    non-converged fixed points are flagged with NaN values, never
    interpolated. Fixed points are warm-started along each row.
    """
    a1 = np.atleast_1d(np.asarray(alpha1_values, dtype=float))
    a2 = np.atleast_1d(np.asarray(alpha2_values, dtype=float))
    if a1.size * a2.size > cell_cap:
        raise ValueError(f"grid of {a1.size}x{a2.size} exceeds cap {cell_cap}")
    rows = []
    for x1 in a1:
        warm = None
        for x2 in a2:
            alpha = np.array([x1, x2])
            row = {"alpha1": float(x1), "alpha2": float(x2),
                   "F": np.nan, "AT": np.nan, "converged": False}
            if objective == "G_plus_R":
                v, _ = population_nll_G(alpha, ctx.sigma2 / ctx.delta,
                                        ctx.model_prior, ctx.true_prior,
                                        ctx.true_alpha, ctx.rule)
                row["F"] = v + regularizer(alpha, ctx.reg)[0]
                row["AT"] = np.nan
                row["converged"] = True
            else:
                fp = _fixed_point_at(alpha, ctx, init=warm)
                if fp.converged:
                    warm = (fp.mse, fp.mse_star)
                    row["F"] = free_energy(alpha, ctx, fp=fp) \
                        + regularizer(alpha, ctx.reg)[0]
                    row["AT"] = at_stability(alpha, ctx, fp=fp)
                    row["converged"] = True
            rows.append(row)
    return rows
