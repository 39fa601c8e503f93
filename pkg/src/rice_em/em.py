"""EM estimation of tensor, scale, and noise under Rician magnitudes.

The magnitude likelihood is augmented with a latent Poisson count per
measurement, which turns the M-step for the tensor coefficients into a
log-linear problem.  One sweep runs the E-step, an inner stabilized
Fisher-scoring loop for theta, then closed-form coordinate updates for
sigma^2 and S0^2, in that order; each stage maximizes (or at least never
decreases) the same expected augmented log-likelihood, so the marginal
Rician log-likelihood is nondecreasing sweep over sweep.

``fit_map`` adds a scale-invariant 1/sigma^2 prior, a Gamma(c1, c2) prior
on S0^2, and an optional Gaussian precision Omega on theta; with Omega =
0 and vanishing c1, c2 it reproduces the ML fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import fit_ls, fit_wls
from .rician import augmented_expectation, log_bessel_i0
from .synth import AcquisitionScheme, VoxelData
from .tensor import (
    TensorParams,
    coefficient_count,
    eigen_2nd_order,
    fractional_anisotropy,
    matrix_from_order2,
    mean_diffusivity,
    order2_from_matrix,
)

__all__ = [
    "FitOptions",
    "PriorSpec",
    "FitState",
    "FitReport",
    "ScoringInfo",
    "InitializationError",
    "DegenerateDataError",
    "e_step",
    "m_step_sigma",
    "m_step_s0",
    "score_theta",
    "fisher_info_theta",
    "scoring_step",
    "initialize",
    "fit_mle",
    "fit_map",
    "expected_augmented_loglik",
    "marginal_loglik",
]

_S0_FLOOR = 1e-12


class InitializationError(ValueError):
    """Raised when the log-linear initializer has too little to work with."""


class DegenerateDataError(ValueError):
    """Raised when an M-step update is undefined for the data at hand."""


@dataclass
class FitOptions:
    """Knobs of the EM loop; defaults are the tested configuration."""

    alpha: float = 0.1
    max_em_iters: int = 500
    max_scoring_iters: int = 50
    tol_theta: float = 1e-6
    tol_loglik: float = 1e-8
    scoring_tol: float = 1e-6
    anneal_threshold: float = 1e-4
    init_method: str = "wls"
    init_b_cutoff: float | None = 1000.0
    positivity_projection: bool = False
    positivity_floor: float = 1e-7

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.init_method not in ("ls", "wls"):
            raise ValueError(f"init_method must be 'ls' or 'wls', got {self.init_method!r}")
        for name in ("max_em_iters", "max_scoring_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("tol_theta", "tol_loglik", "scoring_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class PriorSpec:
    """Priors for MAP fitting; the 1/sigma^2 scale prior is always active.

    omega is a (d, d) symmetric PSD precision for theta (None means no
    shrinkage); S0^2 carries a Gamma(c1, c2) prior with both constants
    tiny by default.
    """

    omega: np.ndarray | None = None
    c1: float = 1e-6
    c2: float = 1e-6
    # the sigma^2 prior is the scale-invariant improper 1/sigma^2; fixed
    sigma_prior: str = "scale-invariant"

    def __post_init__(self):
        if self.sigma_prior != "scale-invariant":
            raise ValueError("only the scale-invariant sigma^2 prior is supported")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("c1 and c2 must be > 0")
        if self.omega is not None:
            om = np.asarray(self.omega, dtype=float)
            if om.ndim != 2 or om.shape[0] != om.shape[1]:
                raise ValueError("omega must be square")
            if not np.allclose(om, om.T, atol=1e-12):
                raise ValueError("omega must be symmetric")
            if np.any(np.linalg.eigvalsh(om) < -1e-12 * max(1.0, np.abs(om).max())):
                raise ValueError("omega must be positive semidefinite")
            object.__setattr__(self, "omega", om)


@dataclass
class FitState:
    """Current parameters and augmentation moments of a running fit."""

    theta: TensorParams
    s0_sq: float
    sigma_sq: float
    n_expect: np.ndarray
    iteration: int = 0
    marginal_loglik: float = -math.inf

    def __post_init__(self):
        if self.s0_sq <= 0 or self.sigma_sq <= 0:
            raise ValueError("s0_sq and sigma_sq must be > 0")


@dataclass(frozen=True)
class ScoringInfo:
    steps: int
    converged: bool
    stalled: bool
    surrogate_gain: float


@dataclass(frozen=True)
class FitReport:
    """Converged estimates, objective trace, and derived scalar metrics."""

    method: str
    order: int
    theta: TensorParams
    s0_sq: float
    sigma_sq: float
    converged: bool
    iterations: int
    loglik: float
    loglik_trace: np.ndarray
    n_expect: np.ndarray | None = None
    flags: tuple[str, ...] = ()

    @property
    def fa(self) -> float | None:
        """Fractional anisotropy; defined for order-2 fits only."""
        if self.order != 2 or np.all(self.theta.theta == 0.0):
            return None
        return fractional_anisotropy(eigen_2nd_order(self.theta))

    @property
    def md(self) -> float:
        return mean_diffusivity(self.theta)


def _as_y(data) -> np.ndarray:
    y = data.y if isinstance(data, VoxelData) else np.asarray(data, dtype=float)
    if y.ndim != 1:
        raise ValueError("data must be a 1-d magnitude array or VoxelData")
    return y


def _exp_2ztheta(Z, theta):
    with np.errstate(over="ignore", under="ignore"):
        return np.exp(2.0 * (Z @ theta))


def e_step(state: FitState, Z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Conditional mean of the augmented counts at the current parameters.

    tau_i = Y_i S0 exp(Z_i theta) / (2 sigma^2); zero measurements get an
    exact zero.
    """
    with np.errstate(over="ignore", under="ignore"):
        amp = math.sqrt(state.s0_sq) * np.exp(Z @ state.theta.theta)
        tau = y * amp / (2.0 * state.sigma_sq)
    tau = np.where(y == 0.0, 0.0, tau)
    return augmented_expectation(tau)


def m_step_sigma(state: FitState, Z: np.ndarray, y: np.ndarray) -> float:
    """Exact sigma^2 maximizer given theta, S0^2, and the counts."""
    e2 = _exp_2ztheta(Z, state.theta.theta)
    numer = float(np.sum(state.s0_sq * e2 + y * y))
    if numer == 0.0:
        raise DegenerateDataError("all magnitudes and signal factors are zero")
    return numer / (2.0 * y.size + 4.0 * float(np.sum(state.n_expect)))


def m_step_s0(state: FitState, Z: np.ndarray) -> float:
    """Exact S0^2 maximizer given theta, sigma^2, and the counts.

    A zero count total (all-zero data) returns the floor value 1e-12;
    callers flag the voxel as degenerate.
    """
    total_n = float(np.sum(state.n_expect))
    if total_n == 0.0:
        return _S0_FLOOR
    e2 = _exp_2ztheta(Z, state.theta.theta)
    return 2.0 * state.sigma_sq * total_n / float(np.sum(e2))


def score_theta(state: FitState, Z: np.ndarray) -> np.ndarray:
    """Gradient of the expected augmented log-likelihood in theta."""
    e2 = _exp_2ztheta(Z, state.theta.theta)
    return 2.0 * (Z.T @ state.n_expect) - (state.s0_sq / state.sigma_sq) * (Z.T @ e2)


def fisher_info_theta(state: FitState, Z: np.ndarray) -> np.ndarray:
    """Expected information in theta: 2 (S0^2/sigma^2) Z' diag(exp(2 Z theta)) Z."""
    e2 = _exp_2ztheta(Z, state.theta.theta)
    return 2.0 * (state.s0_sq / state.sigma_sq) * ((Z * e2[:, None]).T @ Z)


def _theta_surrogate(theta, Z, n_expect, s0_sq, sigma_sq, omega=None):
    # theta-dependent part of the expected augmented log-likelihood
    e2 = _exp_2ztheta(Z, theta)
    val = 2.0 * float((Z @ theta) @ n_expect) - s0_sq / (2.0 * sigma_sq) * float(np.sum(e2))
    if omega is not None:
        val -= 0.5 * float(theta @ (omega @ theta))
    return val if np.isfinite(val) else -math.inf


def expected_augmented_loglik(theta, s0_sq, sigma_sq, Z, y, n_expect) -> float:
    """Expected augmented log-likelihood up to count-only constants.

    sum_i [ n_i log t_i - (n_i + 1) log sigma^2 - t_i - y_i^2/(2 sigma^2) ]
    with t_i = S0^2 exp(2 Z_i theta) / (2 sigma^2).
    """
    theta = theta.theta if isinstance(theta, TensorParams) else np.asarray(theta, dtype=float)
    e2 = _exp_2ztheta(Z, theta)
    t = s0_sq * e2 / (2.0 * sigma_sq)
    with np.errstate(divide="ignore", invalid="ignore"):
        logt = np.where(t > 0.0, np.log(np.where(t > 0.0, t, 1.0)), -math.inf)
        count_part = np.where(n_expect > 0.0, n_expect * logt, 0.0)
    val = float(np.sum(count_part))
    val -= float(np.sum(n_expect + 1.0)) * math.log(sigma_sq)
    val -= float(np.sum(t)) + float(np.sum(y * y)) / (2.0 * sigma_sq)
    return val


def marginal_loglik(state: FitState, Z: np.ndarray, y: np.ndarray) -> float:
    """Marginal Rician log-likelihood of the data at the state parameters.

    Zero rows enter through the parameter-dependent part of the vanishing-
    magnitude limit, -log sigma^2 - t_i, so the value moves consistently
    with the EM updates that keep those rows in play.
    """
    return _marginal_loglik_parts(state.theta.theta, state.s0_sq, state.sigma_sq, Z, y)


def _marginal_loglik_parts(theta, s0_sq, sigma_sq, Z, y) -> float:
    with np.errstate(over="ignore", under="ignore"):
        s = math.sqrt(s0_sq) * np.exp(Z @ theta)
    if not np.all(np.isfinite(s)):
        return -math.inf
    pos = y > 0.0
    val = -y.size * math.log(sigma_sq) - float(np.sum(y * y + s * s)) / (2.0 * sigma_sq)
    if pos.any():
        yp = y[pos]
        val += float(np.sum(np.log(yp))) + float(np.sum(log_bessel_i0(yp * s[pos] / sigma_sq)))
    return val


def _log_prior(theta, s0_sq, sigma_sq, prior: PriorSpec) -> float:
    val = (prior.c1 - 1.0) * math.log(s0_sq) - prior.c2 * s0_sq - math.log(sigma_sq)
    if prior.omega is not None:
        val -= 0.5 * float(theta @ (prior.omega @ theta))
    return val


def scoring_step(
    state: FitState,
    Z: np.ndarray,
    options: FitOptions,
    alpha: float | None = None,
    omega: np.ndarray | None = None,
) -> tuple[TensorParams, ScoringInfo]:
    """Inner stabilized Fisher-scoring loop for theta at fixed counts.

    Each step solves ((1 - alpha) J + alpha S S') delta = S and
    backtracks (up to 30 halvings) until the surrogate does not decrease.
    A singular system gets one ridge retry of 1e-10 tr/d; persistent
    failure stalls the loop.  Iteration stops when the accepted relative
    step falls below ``options.scoring_tol`` or after
    ``options.max_scoring_iters`` steps.
    """
    a = options.alpha if alpha is None else alpha
    d = state.theta.n_coeff
    theta = state.theta.theta.copy()
    n = state.n_expect
    q = _theta_surrogate(theta, Z, n, state.s0_sq, state.sigma_sq, omega)
    q_start = q
    converged = False
    stalled = False
    steps = 0
    for steps in range(1, options.max_scoring_iters + 1):
        e2 = _exp_2ztheta(Z, theta)
        score = 2.0 * (Z.T @ n) - (state.s0_sq / state.sigma_sq) * (Z.T @ e2)
        if omega is not None:
            score = score - omega @ theta
        if not np.all(np.isfinite(score)):
            stalled = True
            break
        if float(np.linalg.norm(score)) == 0.0:
            converged = True
            break
        info = 2.0 * (state.s0_sq / state.sigma_sq) * ((Z * e2[:, None]).T @ Z)
        if omega is not None:
            info = info + omega
        M = (1.0 - a) * info + a * np.outer(score, score)
        delta = None
        for ridge in (0.0, 1e-10 * float(np.trace(M)) / d):
            try:
                cand = np.linalg.solve(M + ridge * np.eye(d), score)
            except np.linalg.LinAlgError:
                continue
            if np.all(np.isfinite(cand)):
                delta = cand
                break
        if delta is None:
            stalled = True
            break
        accepted = None
        t = 1.0
        for _ in range(31):
            trial = theta + t * delta
            q_trial = _theta_surrogate(trial, Z, n, state.s0_sq, state.sigma_sq, omega)
            if q_trial >= q:
                accepted = trial
                q = q_trial
                break
            t *= 0.5
        if accepted is None:
            stalled = True
            break
        step_norm = float(np.linalg.norm(t * delta))
        theta = accepted
        if step_norm <= options.scoring_tol * max(float(np.linalg.norm(theta)), 1e-300):
            converged = True
            break
    return TensorParams(state.theta.order, theta), ScoringInfo(
        steps=steps, converged=converged, stalled=stalled, surrogate_gain=q - q_start
    )


def initialize(scheme: AcquisitionScheme, data, order: int = 2, options: FitOptions | None = None) -> FitState:
    """Log-linear starting point: LS or WLS coefficients on low-b rows,
    noise variance from the residual scale mapped to magnitude units."""
    options = options or FitOptions()
    y = _as_y(data)
    fitter = fit_wls if options.init_method == "wls" else fit_ls
    try:
        rep = fitter(scheme, y, order, options.init_b_cutoff)
    except ValueError as exc:
        raise InitializationError(str(exc)) from None
    # noise-free data yields zero residuals; floor sigma^2 at a level that
    # keeps the first E-step finite (the M-step replaces it immediately)
    sigma_floor = 1e-12 * float(np.mean(y * y)) + np.finfo(float).tiny
    return FitState(
        theta=rep.theta,
        s0_sq=rep.s0_sq,
        sigma_sq=max(rep.sigma_sq, sigma_floor),
        n_expect=np.zeros(y.size),
        iteration=0,
        marginal_loglik=_marginal_loglik_parts(
            rep.theta.theta, rep.s0_sq, rep.sigma_sq, scheme.design_matrix(order), y
        ),
    )


def _project_positive(theta: TensorParams, floor: float) -> tuple[TensorParams, bool]:
    eig = eigen_2nd_order(theta)
    if eig.eigenvalues[2] >= floor:
        return theta, False
    lam = np.maximum(eig.eigenvalues, floor)
    D = eig.eigenvectors @ np.diag(lam) @ eig.eigenvectors.T
    return order2_from_matrix(D), True


def _degenerate_report(method, order, m) -> FitReport:
    return FitReport(
        method=method,
        order=order,
        theta=TensorParams(order, np.zeros(coefficient_count(order))),
        s0_sq=_S0_FLOOR,
        sigma_sq=float(np.finfo(float).tiny),
        converged=False,
        iterations=0,
        loglik=math.nan,
        loglik_trace=np.array([]),
        n_expect=np.zeros(m),
        flags=("degenerate",),
    )


def _run_em(scheme, data, order, options, prior, method) -> FitReport:
    options = options or FitOptions()
    y = _as_y(data)
    if y.size != scheme.size:
        raise ValueError(f"data has {y.size} rows, scheme expects {scheme.size}")
    if not np.any(y > 0.0):
        return _degenerate_report(method, order, y.size)
    Z = scheme.design_matrix(order)
    state = initialize(scheme, y, order, options)
    omega = prior.omega if prior is not None else None

    def objective() -> float:
        val = marginal_loglik(state, Z, y)
        if prior is not None:
            val += _log_prior(state.theta.theta, state.s0_sq, state.sigma_sq, prior)
        return val

    trace = [objective()]
    alpha = options.alpha
    flags: list[str] = []
    converged = False
    for sweep in range(1, options.max_em_iters + 1):
        state.n_expect = e_step(state, Z, y)
        theta_old = state.theta.theta
        new_theta, sinfo = scoring_step(state, Z, options, alpha=alpha, omega=omega)
        if options.positivity_projection and order == 2:
            new_theta, changed = _project_positive(new_theta, options.positivity_floor)
            if changed and "positivity-projected" not in flags:
                flags.append("positivity-projected")
        rel_step = float(np.linalg.norm(new_theta.theta - theta_old)) / max(
            float(np.linalg.norm(theta_old)), 1e-300
        )
        state.theta = new_theta
        if prior is None:
            state.sigma_sq = m_step_sigma(state, Z, y)
            s0_new = m_step_s0(state, Z)
            if s0_new == _S0_FLOOR and float(np.sum(state.n_expect)) == 0.0:
                if "degenerate" not in flags:
                    flags.append("degenerate")
        else:
            e2 = _exp_2ztheta(Z, state.theta.theta)
            numer = float(np.sum(state.s0_sq * e2 + y * y))
            state.sigma_sq = 0.5 * numer / (float(np.sum(2.0 * state.n_expect + 1.0)) + 1.0)
            s0_new = (float(np.sum(state.n_expect)) + prior.c1) / (
                float(np.sum(e2)) / (2.0 * state.sigma_sq) + prior.c2
            )
        state.s0_sq = s0_new
        state.iteration = sweep
        trace.append(objective())
        if sinfo.surrogate_gain < options.anneal_threshold:
            alpha = 0.0
        stalled_last = sinfo.stalled
        if rel_step <= options.tol_theta and abs(trace[-1] - trace[-2]) <= options.tol_loglik:
            converged = True
            break
    state.marginal_loglik = marginal_loglik(state, Z, y)
    if not converged and "non-converged" not in flags:
        flags.append("non-converged")
    if not converged and stalled_last and "scoring-stalled" not in flags:
        flags.append("scoring-stalled")
    return FitReport(
        method=method,
        order=order,
        theta=state.theta,
        s0_sq=float(state.s0_sq),
        sigma_sq=float(state.sigma_sq),
        converged=converged,
        iterations=state.iteration,
        loglik=state.marginal_loglik,
        loglik_trace=np.asarray(trace),
        n_expect=state.n_expect,
        flags=tuple(flags),
    )


def fit_mle(scheme: AcquisitionScheme, data, order: int = 2, options: FitOptions | None = None) -> FitReport:
    """Maximum-likelihood EM fit of (theta, S0^2, sigma^2)."""
    return _run_em(scheme, data, order, options, prior=None, method="MLE")


def fit_map(
    scheme: AcquisitionScheme,
    data,
    prior: PriorSpec | None = None,
    order: int = 2,
    options: FitOptions | None = None,
) -> FitReport:
    """Penalized EM fit; with omega None and tiny c1, c2 it tracks the MLE.

    The reported loglik is the plain marginal log-likelihood; the trace
    is the penalized objective that the sweeps actually ascend.
    """
    return _run_em(scheme, data, order, options, prior=prior or PriorSpec(), method="MAP")
