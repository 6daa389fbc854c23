"""Discrete-time kernel state shared by the DMFT solver and the Gaussian
oracle: configuration, the kernel container, equilibrium extraction from
stationary tails, structural validation, and kernel-set comparison.

Time lives on the uniform grid t_i = i*gamma, i = 0..N. Response matrices
hold the discrete convention (entries estimate gamma times the continuous
response); they are strictly lower triangular in storage.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .priors import PriorSpec, RegularizerSpec, alpha_dim

__all__ = [
    "DmftConfig",
    "KernelSet",
    "EquilibriumExtract",
    "ValidationReport",
    "extract_equilibrium",
    "validate_kernels",
    "compare_kernelsets",
]

log = logging.getLogger(__name__)


@dataclass
class DmftConfig:
    """Configuration of one discrete DMFT solve."""

    delta: float
    sigma2: float
    T: float
    gamma: float
    n_replicas: int
    model_prior: PriorSpec
    alpha0: tuple
    true_prior: PriorSpec
    true_alpha: tuple
    init_prior: PriorSpec
    init_alpha: tuple
    adaptive: bool = True
    reg: Optional[RegularizerSpec] = None
    seed: int = 0
    eps_psd_scale: float = 1e-10        # jitter = scale * mean C_eta diagonal
    response_stride: int = 1            # source-time subsampling (1 = all)
    response_dtype: str = "float32"     # storage for per-replica responses
    memory_budget_bytes: float = 2.8e9  # cap for the response history block
    window: float = 0.25                # default stationary-tail fraction

    def __post_init__(self):
        if not (self.delta > 0 and self.sigma2 > 0):
            raise ValueError("delta and sigma2 must be > 0")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if self.n_steps < 1:
            raise ValueError("need at least one step (round(T/gamma) >= 1)")
        if self.n_replicas < 2:
            raise ValueError("need at least two replicas")
        if self.response_stride < 1:
            raise ValueError("response_stride must be >= 1")
        if self.response_dtype not in ("float64", "float32", "float16"):
            raise ValueError("response_dtype must be float64/float32/float16")
        if not 0 < self.window <= 0.5:
            raise ValueError("window must lie in (0, 1/2]")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.gamma))

    @property
    def times(self) -> np.ndarray:
        return self.gamma * np.arange(self.n_steps + 1)


@dataclass
class KernelSet:
    """Kernels of the effective scalar processes on the grid t_i = i*gamma.

    C_theta/C_eta are symmetric (N+1)x(N+1); R_theta/R_eta strictly lower
    triangular in the discrete convention (gamma times the continuous
    response); R_eta_star and C_theta_star are length N+1; alpha_traj is
    (N+1) x K. Standard-error arrays follow their kernels entrywise and are
    zero for deterministic quantities.
    """

    times: np.ndarray
    gamma: float
    delta: float
    sigma2: float
    C_theta: np.ndarray
    C_theta_se: np.ndarray
    C_theta_star: np.ndarray
    C_theta_star_se: np.ndarray
    C_star_star: float
    R_theta: np.ndarray
    R_theta_se: np.ndarray
    C_eta: np.ndarray
    R_eta: np.ndarray
    R_eta_star: np.ndarray
    alpha_traj: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return self.times.size - 1


@dataclass(frozen=True)
class EquilibriumExtract:
    c_tti_0: float
    c_tti_inf: float
    c_star: float
    mse: float
    mse_star: float
    ymse: float
    ymse_star: float
    omega: float
    omega_star: float
    sensitivity: dict = field(default_factory=dict, repr=False)


def _tail_means(ks: KernelSet, window: float):
    """Window means used by the equilibrium extraction; returns the raw
    plateau statistics (c_tti_0, c_tti_inf, c_star, and eta analogues)."""
    n = ks.n_steps
    n_tail = int(np.floor(window * n))
    if n_tail < 3:
        raise ValueError("window shorter than 3 grid points")
    tail = slice(n + 1 - n_tail, n + 1)
    lag = slice(max(1, int(np.floor(window * n))),
                max(1, int(np.floor(window * n))) + n_tail)
    c_tti_0 = float(np.mean(np.diag(ks.C_theta)[tail]))
    c_tti_inf = float(np.mean(ks.C_theta[n, lag]))
    c_star = float(np.mean(ks.C_theta_star[tail]))
    e_tti_0 = float(np.mean(np.diag(ks.C_eta)[tail]))
    e_tti_inf = float(np.mean(ks.C_eta[n, lag]))
    return c_tti_0, c_tti_inf, c_star, e_tti_0, e_tti_inf


def extract_equilibrium(ks: KernelSet, window: float = 0.25) -> EquilibriumExtract:
    """Stationary-tail estimates of the equilibrium errors and precisions.

    The same-time plateau is averaged over the last `window` fraction of the
    grid; the decorrelated plateau uses C(T, s) with s in
    [T*window, 2*T*window]. Half-window values are reported as a sensitivity
    diagnostic (they should agree when the run has truly equilibrated).
    """
    if not 0 < window <= 0.5:
        raise ValueError("window must lie in (0, 1/2]")
    delta, sigma2 = ks.delta, ks.sigma2

    def compute(w):
        c0, cinf, cstar, e0, einf = _tail_means(ks, w)
        mse = c0 - cinf
        mse_star = ks.C_star_star - 2.0 * cstar + cinf
        ymse = (sigma2 ** 2 / delta) * (e0 - einf)
        ymse_star = (sigma2 ** 2 / delta) * (2.0 * e0 - einf) - sigma2
        omega = delta / (sigma2 + mse)
        omega_star = delta / (sigma2 + mse_star)
        return c0, cinf, cstar, mse, mse_star, ymse, ymse_star, omega, omega_star

    c0, cinf, cstar, mse, mse_star, ymse, ymse_star, om, oms = compute(window)
    sens = {}
    try:
        h = compute(window / 2.0)
        sens = {"window": window / 2.0, "mse": h[3], "mse_star": h[4],
                "ymse": h[5], "ymse_star": h[6]}
    except ValueError:
        pass
    return EquilibriumExtract(c_tti_0=c0, c_tti_inf=cinf, c_star=cstar,
                              mse=mse, mse_star=mse_star, ymse=ymse,
                              ymse_star=ymse_star, omega=om, omega_star=oms,
                              sensitivity=sens)


@dataclass(frozen=True)
class ValidationReport:
    symmetry_defect_c_theta: float
    symmetry_defect_c_eta: float
    min_eig_c_theta: float
    min_eig_c_eta: float
    causality_violations: int
    boundary_residual: float          # max |R_theta(i+1, i) - gamma|
    eta_sum_residual: float           # max |R_eta_star(i) + sum_j R_eta(i, j)|
    eta_first_residual: float         # |R_eta(1, 0) - delta*gamma/sigma^4|
    tti_drift: float
    fdt_residual: float
    jitter_events: int
    passed_structural: bool           # symmetry, PSD, causality
    passed: bool                      # structural and discrete identities


def validate_kernels(ks: KernelSet, eig_floor: float = -1e-8,
                     identity_tol: float = 1e-10) -> ValidationReport:
    """Structural diagnostics; never raises, reports."""
    n = ks.n_steps
    sym_t = float(np.max(np.abs(ks.C_theta - ks.C_theta.T)))
    sym_e = float(np.max(np.abs(ks.C_eta - ks.C_eta.T)))
    eig_t = float(np.linalg.eigvalsh(0.5 * (ks.C_theta + ks.C_theta.T))[0])
    eig_e = float(np.linalg.eigvalsh(0.5 * (ks.C_eta + ks.C_eta.T))[0])
    upper = np.triu_indices(n + 1, k=0)
    causality = int(np.count_nonzero(ks.R_theta[upper])
                    + np.count_nonzero(ks.R_eta[upper]))
    idx = np.arange(n)
    boundary = float(np.max(np.abs(ks.R_theta[idx + 1, idx] - ks.gamma)))
    eta_sum = float(np.max(np.abs(ks.R_eta_star + ks.R_eta.sum(axis=1))))
    eta_first = float(abs(ks.R_eta[1, 0] - ks.delta * ks.gamma / ks.sigma2 ** 2)) \
        if n >= 1 else 0.0

    # stationarity of the tail: same-lag entries should not drift with t
    n_tail = max(3, int(np.floor(0.25 * n)))
    t0 = n + 1 - n_tail
    drift = 0.0
    for lag_steps in range(n_tail):
        vals = np.array([ks.C_theta[t, t - lag_steps]
                         for t in range(t0 + lag_steps, n + 1)])
        if vals.size >= 2:
            drift = max(drift, float(vals.max() - vals.min()))

    # fluctuation-dissipation on the tail: gamma-scaled response vs the
    # negative lag-derivative of the correlation, informational only; lag 1
    # is skipped because its response entry is the pinned discrete identity
    fdt = 0.0
    if n_tail >= 5:
        lags = np.arange(2, n_tail - 1)
        c = ks.C_theta[n, n - lags.max() - 1: n + 1][::-1]   # c[tau] over lags
        r = ks.R_theta[n, n - lags] / ks.gamma
        dc = (c[lags + 1] - c[lags - 1]) / (2.0 * ks.gamma)
        fdt = float(np.max(np.abs(r + dc)))

    eta_scale = max(1.0, ks.delta / ks.sigma2 ** 2)
    structural = (sym_t <= 1e-10 * max(1.0, abs(ks.C_star_star))
                  and sym_e <= 1e-9 * eta_scale
                  and eig_t >= eig_floor and eig_e >= eig_floor * eta_scale
                  and causality == 0)
    passed = (structural
              and boundary <= identity_tol
              and eta_sum <= identity_tol * eta_scale
              and eta_first <= identity_tol)
    return ValidationReport(
        symmetry_defect_c_theta=sym_t, symmetry_defect_c_eta=sym_e,
        min_eig_c_theta=eig_t, min_eig_c_eta=eig_e,
        causality_violations=causality, boundary_residual=boundary,
        eta_sum_residual=eta_sum, eta_first_residual=eta_first,
        tti_drift=drift, fdt_residual=fdt,
        jitter_events=int(ks.meta.get("jitter_events", 0)),
        passed_structural=structural, passed=passed)


def compare_kernelsets(a: KernelSet, b: KernelSet, floor: float,
                       include_eta: bool = True) -> dict:
    """Entrywise comparison |a-b| / (se_a + se_b + floor).

    Returns per-kernel maxima and the overall max z-score. Both sets must
    share the same grid. Response entries are compared strictly below the
    diagonal; eta-side kernels carry no standard errors (deterministic given
    the theta side), so their z-scores are |diff|/floor.
    """
    if a.times.shape != b.times.shape or not np.allclose(a.times, b.times):
        raise ValueError("kernel sets live on different grids")
    if floor <= 0:
        raise ValueError("floor must be > 0")
    n = a.n_steps
    low = np.tril_indices(n + 1, k=-1)
    out = {}

    def z(x, y, sx, sy):
        return np.abs(x - y) / (sx + sy + floor)

    out["C_theta"] = float(np.max(z(a.C_theta, b.C_theta,
                                    a.C_theta_se, b.C_theta_se)))
    out["C_theta_star"] = float(np.max(z(a.C_theta_star, b.C_theta_star,
                                         a.C_theta_star_se, b.C_theta_star_se)))
    out["R_theta"] = float(np.max(z(a.R_theta[low], b.R_theta[low],
                                    a.R_theta_se[low], b.R_theta_se[low])))
    if include_eta:
        zero = 0.0
        out["C_eta"] = float(np.max(z(a.C_eta, b.C_eta, zero, zero)))
        out["R_eta"] = float(np.max(z(a.R_eta[low], b.R_eta[low], zero, zero)))
        out["R_eta_star"] = float(np.max(z(a.R_eta_star, b.R_eta_star,
                                           zero, zero)))
    out["max_z"] = max(v for k, v in out.items())
    return out
