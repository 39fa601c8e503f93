"""Reference estimators: log-linear LS/WLS and direct Rician maximization.

The log-linear fits regress log Y on the tensor design (optionally only
rows with b below a cutoff, the usual way of dodging the noise floor) and
map the residual scale back to a magnitude-domain noise variance.  The
direct method maximizes the exact Rician log-likelihood by Newton ascent
on theta with coordinate updates for the two variance-like parameters;
it serves as an independent check on the EM fixed point and as the
computational yardstick.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rician import bessel_ratio_i1_i0, log_bessel_i0
from .synth import AcquisitionScheme, VoxelData
from .tensor import TensorParams, coefficient_count

__all__ = [
    "BaselineReport",
    "fit_ls",
    "fit_wls",
    "rician_direct_loglik",
    "rician_direct_gradient",
    "fit_rician_direct",
]


@dataclass(frozen=True)
class BaselineReport:
    """Estimates plus bookkeeping from one baseline fit."""

    method: str
    order: int
    theta: TensorParams
    s0_sq: float
    sigma_sq: float
    converged: bool
    iterations: int
    loglik: float | None = None
    flags: tuple[str, ...] = ()


def _as_y(data) -> np.ndarray:
    y = data.y if isinstance(data, VoxelData) else np.asarray(data, dtype=float)
    if y.ndim != 1:
        raise ValueError("data must be a 1-d magnitude array or VoxelData")
    return y


def _loglinear_passes(scheme, y, order, b_cutoff, passes):
    """Shared LS/WLS core; returns (log_s0, theta, sigma_sq, n_used).

    Pass 1 is unweighted; later passes reweight by the squared fitted
    signal amplitudes (normalized to mean 1, so the weights do not react
    to a global rescaling of Y).  sigma_sq maps the variance of the
    first-pass log residuals back through the squared geometric-mean
    fitted signal.
    """
    y = _as_y(y)
    if y.size != scheme.size:
        raise ValueError(f"data has {y.size} rows, scheme expects {scheme.size}")
    p = coefficient_count(order) + 1
    b = scheme.b_values
    mask = y > 0
    if b_cutoff is not None:
        mask &= b <= b_cutoff
    n_used = int(mask.sum())
    if n_used < p:
        raise ValueError(
            f"insufficient usable rows: {n_used} positive rows with "
            f"b <= {b_cutoff if b_cutoff is not None else 'inf'} "
            f"(need at least {p} of {y.size})"
        )
    Z = scheme.design_matrix(order)[mask]
    X = np.column_stack([np.ones(n_used), Z])
    logy = np.log(y[mask])

    def solve(weights):
        sw = np.sqrt(weights)
        beta, _, rank, _ = np.linalg.lstsq(X * sw[:, None], logy * sw, rcond=None)
        if rank < p:
            raise ValueError(
                f"rank-deficient design: rank {rank} < {p} parameters "
                f"(order {order}, {n_used} usable rows)"
            )
        return beta

    beta = solve(np.ones(n_used))
    resid = logy - X @ beta
    var_log = float(resid @ resid) / max(1, n_used - p)
    gmean_signal = math.exp(float(np.mean(X @ beta)))
    sigma_sq = var_log * gmean_signal * gmean_signal
    for _ in range(passes - 1):
        w = np.exp(2.0 * (X @ beta))
        w /= w.mean()
        beta = solve(w)
    return float(beta[0]), beta[1:], sigma_sq, n_used


def fit_ls(scheme, data, order: int = 2, b_cutoff: float | None = None) -> BaselineReport:
    """Ordinary least squares on log magnitudes (zero rows dropped)."""
    log_s0, theta, sigma_sq, _ = _loglinear_passes(scheme, data, order, b_cutoff, passes=1)
    return BaselineReport(
        method="LS" if b_cutoff is None else "LS-truncated",
        order=order,
        theta=TensorParams(order, theta),
        s0_sq=math.exp(2.0 * log_s0),
        sigma_sq=sigma_sq,
        converged=True,
        iterations=1,
    )


def fit_wls(scheme, data, order: int = 2, b_cutoff: float | None = None) -> BaselineReport:
    """Weighted least squares; two reweighted passes after the LS pass."""
    log_s0, theta, sigma_sq, _ = _loglinear_passes(scheme, data, order, b_cutoff, passes=3)
    return BaselineReport(
        method="WLS" if b_cutoff is None else "WLS-truncated",
        order=order,
        theta=TensorParams(order, theta),
        s0_sq=math.exp(2.0 * log_s0),
        sigma_sq=sigma_sq,
        converged=True,
        iterations=3,
    )


def _censored(y: np.ndarray, y_floor: float | None) -> np.ndarray:
    """Replace exact zeros by a small positive magnitude for the direct fit."""
    if not np.any(y == 0.0):
        return y
    if y_floor is None:
        positive = y[y > 0]
        if positive.size == 0:
            raise ValueError("all magnitudes are zero; nothing to fit")
        y_floor = 0.5 * float(positive.min())
    return np.where(y == 0.0, y_floor, y)


def _direct_parts(theta, s0_sq, sigma_sq, Z, y):
    s0 = math.sqrt(s0_sq)
    with np.errstate(over="ignore", under="ignore"):
        ez = np.exp(Z @ theta)
        s = s0 * ez
        u = y * s / sigma_sq
    return ez, s, u


def rician_direct_loglik(theta, s0_sq, sigma_sq, scheme, data, y_floor=None) -> float:
    """Exact Rician log-likelihood (sum of log densities) of the data.

    Zero magnitudes are censored at ``y_floor`` (default: half the
    smallest positive magnitude) so every row has a finite log density.
    """
    theta = theta.theta if isinstance(theta, TensorParams) else np.asarray(theta, dtype=float)
    order = 2 if theta.size == 6 else 4
    y = _censored(_as_y(data), y_floor)
    Z = scheme.design_matrix(order)
    _, s, u = _direct_parts(theta, s0_sq, sigma_sq, Z, y)
    if not np.all(np.isfinite(s)):
        return -np.inf
    val = np.sum(np.log(y)) - y.size * math.log(sigma_sq)
    val -= float(np.sum(y * y + s * s)) / (2.0 * sigma_sq)
    val += float(np.sum(log_bessel_i0(u)))
    return float(val)


def rician_direct_gradient(theta, s0_sq, sigma_sq, scheme, data, y_floor=None):
    """Analytic gradient of ``rician_direct_loglik`` over (theta, S0^2, sigma^2).

    Returns (d_theta, d_s0_sq, d_sigma_sq).  Uses g = I1/I0 evaluated at
    u_i = Y_i S_i / sigma^2.
    """
    theta = theta.theta if isinstance(theta, TensorParams) else np.asarray(theta, dtype=float)
    order = 2 if theta.size == 6 else 4
    y = _censored(_as_y(data), y_floor)
    Z = scheme.design_matrix(order)
    ez, s, u = _direct_parts(theta, s0_sq, sigma_sq, Z, y)
    m = y.size
    g = bessel_ratio_i1_i0(u)
    gu = g * u
    d_theta = Z.T @ (gu - s * s / sigma_sq)
    if s0_sq == 0.0:
        # S0 -> 0 limit of g(u) u / S0^2 is y^2 exp(2 Z theta) / (2 sigma^4)
        d_s0 = float(np.sum(y * y * ez * ez)) / (4.0 * sigma_sq**2) - float(
            np.sum(ez * ez)
        ) / (2.0 * sigma_sq)
    else:
        d_s0 = (float(np.sum(gu)) / s0_sq - float(np.sum(ez * ez)) / sigma_sq) / 2.0
    d_sigma = (
        -m / sigma_sq
        + float(np.sum(y * y + s * s)) / (2.0 * sigma_sq**2)
        - float(np.sum(gu)) / sigma_sq
    )
    return d_theta, d_s0, d_sigma


def _ratio_prime_terms(u, g):
    """u g(u) and u^2 (1 - g(u)^2), the pieces of the curvature sums."""
    return u * g, u * u * (1.0 - g) * (1.0 + g)


def _direct_theta_hessian(Z, s, u, g, sigma_sq):
    ug, u2one = _ratio_prime_terms(u, g)
    w = -2.0 * s * s / sigma_sq + u2one
    return (Z * w[:, None]).T @ Z


def _approx_fisher_theta(Z, s, sigma_sq):
    w = s * s / sigma_sq - 0.5
    return (Z * w[:, None]).T @ Z


def fit_rician_direct(
    scheme,
    data,
    order: int = 2,
    init_method: str = "wls",
    init_b_cutoff: float | None = 1000.0,
    max_iters: int = 500,
    grad_tol: float = 1e-6,
    use_approx_fisher: bool = False,
    y_floor: float | None = None,
    early_stop: bool = False,
) -> BaselineReport:
    """Maximize the exact Rician log-likelihood by damped Newton ascent.

    theta takes full Newton steps with the analytic Hessian (or the
    high-SNR approximate information matrix when ``use_approx_fisher``);
    sigma^2 and S0^2 take score-direction steps sized by a backtracking
    line search that warm-starts from the last accepted step (no
    curvature is evaluated for these two).  Every step is backtracked
    until the log-likelihood does not decrease; negative-curvature theta
    systems fall back to damped gradient steps.

    The loop stops on gradient norm < ``grad_tol`` or after ``max_iters``
    iterations.  On strongly weighted designs the gradient carries terms
    of order 1e6 and its float floor can sit above 1e-6, so a run may
    spend its full iteration budget; ``early_stop`` adds an exit once a
    whole pass fails to move the log-likelihood at float resolution.
    """
    y = _censored(_as_y(data), y_floor)
    init = (fit_wls if init_method == "wls" else fit_ls)(scheme, y, order, init_b_cutoff)
    theta = init.theta.theta.copy()
    s0_sq = init.s0_sq
    sigma_sq = init.sigma_sq
    Z = scheme.design_matrix(order)
    m = y.size
    sum_log_y = float(np.sum(np.log(y)))

    def loglik(th, s0v, sgv):
        if s0v <= 0 or sgv <= 0:
            return -np.inf
        with np.errstate(over="ignore", under="ignore"):
            s = math.sqrt(s0v) * np.exp(Z @ th)
        if not np.all(np.isfinite(s)):
            return -np.inf
        val = sum_log_y - m * math.log(sgv)
        val -= float(np.sum(y * y + s * s)) / (2.0 * sgv)
        val += float(np.sum(log_bessel_i0(y * s / sgv)))
        return val

    def backtrack(update, current):
        # update(t) -> candidate params tuple; halve until no decrease.
        # 15 halvings take the step below 1e-4 of the proposal; anything
        # still rejected there is numerically a no-op, so give up.
        t = 1.0
        for _ in range(16):
            cand = update(t)
            val = loglik(*cand)
            if np.isfinite(val) and val >= current:
                return cand, val, True
            t *= 0.5
        return None, current, False

    def parts_at(th, s0v, sgv):
        ez, s, u = _direct_parts(th, s0v, sgv, Z, y)
        g = bessel_ratio_i1_i0(u)
        return ez, s, u, g, g * u

    cur = loglik(theta, s0_sq, sigma_sq)
    ez, s, u, g, gu = parts_at(theta, s0_sq, sigma_sq)
    converged = False
    stalled = False
    # per-coordinate line-search memory: first bracket moves the scale
    # parameters by 10% of their current value along the score direction
    mem_sigma = mem_s0 = 0.1
    it = 0
    for it in range(1, max_iters + 1):
        ll_at_entry = cur
        grad_theta = Z.T @ (gu - s * s / sigma_sq)
        if use_approx_fisher:
            curv = _approx_fisher_theta(Z, s, sigma_sq)
        else:
            curv = -_direct_theta_hessian(Z, s, u, g, sigma_sq)
        try:
            np.linalg.cholesky(curv + 1e-12 * np.trace(curv) / curv.shape[0] * np.eye(curv.shape[0]))
            delta = np.linalg.solve(curv, grad_theta)
        except np.linalg.LinAlgError:
            scale = float(np.abs(np.diag(curv)).max()) or 1.0
            delta = grad_theta / scale
        cand, cur, ok = backtrack(lambda t: (theta + t * delta, s0_sq, sigma_sq), cur)
        if ok:
            theta = cand[0]
            ez, s, u, g, gu = parts_at(theta, s0_sq, sigma_sq)

        # sigma^2 coordinate: step along the score, sized by a warm-started
        # backtracking search (fraction of the current value, doubled after
        # a full-step acceptance, decayed by the halvings otherwise)
        d_sigma = -m / sigma_sq + float(np.sum(y * y + s * s)) / (2 * sigma_sq**2) - float(np.sum(gu)) / sigma_sq
        if d_sigma != 0.0:
            step = math.copysign(min(mem_sigma, 0.5) * sigma_sq, d_sigma)
            cand, cur, ok = backtrack(lambda t: (theta, s0_sq, sigma_sq + t * step), cur)
            if ok:
                accepted_frac = abs(cand[2] - sigma_sq) / sigma_sq
                mem_sigma = min(max(2.0 * accepted_frac, 1e-12), 0.5)
                sigma_sq = cand[2]
                ez, s, u, g, gu = parts_at(theta, s0_sq, sigma_sq)
            else:
                mem_sigma = max(mem_sigma * 2.0**-16, 1e-12)

        # S0^2 coordinate, same scheme
        d_s0 = (float(np.sum(gu)) / s0_sq - float(np.sum(ez * ez)) / sigma_sq) / 2.0
        if d_s0 != 0.0:
            step = math.copysign(min(mem_s0, 0.5) * s0_sq, d_s0)
            cand, cur, ok = backtrack(lambda t: (theta, s0_sq + t * step, sigma_sq), cur)
            if ok:
                accepted_frac = abs(cand[1] - s0_sq) / s0_sq
                mem_s0 = min(max(2.0 * accepted_frac, 1e-12), 0.5)
                s0_sq = cand[1]
                ez, s, u, g, gu = parts_at(theta, s0_sq, sigma_sq)
            else:
                mem_s0 = max(mem_s0 * 2.0**-16, 1e-12)

        d_theta = Z.T @ (gu - s * s / sigma_sq)
        d_s0 = (float(np.sum(gu)) / s0_sq - float(np.sum(ez * ez)) / sigma_sq) / 2.0
        d_sigma = -m / sigma_sq + float(np.sum(y * y + s * s)) / (2 * sigma_sq**2) - float(np.sum(gu)) / sigma_sq
        if math.hypot(float(np.linalg.norm(d_theta)), math.hypot(d_s0, d_sigma)) < grad_tol:
            converged = True
            break
        if early_stop and cur <= ll_at_entry:
            # a full pass changed nothing at float resolution: numerical
            # fixed point even though the raw gradient norm never reached
            # the absolute tolerance
            stalled = True
            break

    flags: tuple[str, ...] = ()
    if stalled:
        flags = ("gradient-floor",)
    elif not converged:
        flags = ("non-converged",)
    return BaselineReport(
        method="Rician-direct",
        order=order,
        theta=TensorParams(order, theta),
        s0_sq=float(s0_sq),
        sigma_sq=float(sigma_sq),
        converged=converged or stalled,
        iterations=it,
        loglik=cur,
        flags=flags,
    )
