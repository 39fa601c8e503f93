"""Evaluation statistics for fitted voxels: SNR curves, MSE tables, and
per-direction fitted-signal curves.

Everything here is pure aggregation over fit reports; nothing mutates its
inputs, so concurrent use is safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .synth import AcquisitionScheme, GroundTruth, VoxelData
from .tensor import design_columns

__all__ = [
    "SnrCurve",
    "MethodMse",
    "MseTable",
    "snr_curve",
    "raw_snr_curve",
    "mse_report",
    "signal_curve",
]


@dataclass(frozen=True)
class SnrCurve:
    """Estimated signal-to-noise per b-value knot."""

    knots: np.ndarray
    snr: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        snr = np.asarray(self.snr, dtype=float)
        if knots.shape != snr.shape or knots.ndim != 1:
            raise ValueError("knots and snr must be 1-d arrays of equal length")
        if np.any(snr < 0):
            raise ValueError("snr values must be nonnegative")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "snr", snr)


@dataclass(frozen=True)
class MethodMse:
    """Error summary of one estimation method against the ground truth."""

    theta_mse: np.ndarray
    theta_mse_mean: float
    sigma_sq_mse: float
    signal_mse: np.ndarray

    def __post_init__(self):
        if np.any(self.theta_mse < 0) or self.sigma_sq_mse < 0 or np.any(self.signal_mse < 0):
            raise ValueError("mean squared errors cannot be negative")


@dataclass(frozen=True)
class MseTable:
    knots: np.ndarray
    methods: dict[str, MethodMse]


def _fitted_signal(fit, Z: np.ndarray) -> np.ndarray:
    return math.sqrt(fit.s0_sq) * np.exp(Z @ fit.theta.theta)


def snr_curve(fit, scheme: AcquisitionScheme) -> SnrCurve:
    """Fitted SNR per knot: mean over directions of S0_hat exp(Z theta_hat),
    divided by sigma_hat."""
    Z = scheme.design_matrix(fit.order)
    signal = _fitted_signal(fit, Z)
    sigma = math.sqrt(fit.sigma_sq)
    idx = scheme.knot_index
    snr = np.array([
        float(np.mean(signal[idx == k])) / sigma for k in range(scheme.knots.size)
    ])
    return SnrCurve(knots=scheme.knots.copy(), snr=snr)


def raw_snr_curve(data, scheme: AcquisitionScheme) -> SnrCurve:
    """Diagnostic moment-based variant: mean(Y)/sd(Y) within each knot.

    Pools directions and repetitions, so direction-to-direction signal
    spread inflates the denominator; useful as a model-free cross-check,
    not as the primary curve.
    """
    y = data.y if isinstance(data, VoxelData) else np.asarray(data, dtype=float)
    if y.size != scheme.size:
        raise ValueError(f"data has {y.size} rows, scheme expects {scheme.size}")
    idx = scheme.knot_index
    snr = np.empty(scheme.knots.size)
    for k in range(scheme.knots.size):
        yk = y[idx == k]
        sd = float(np.std(yk, ddof=1)) if yk.size > 1 else 0.0
        snr[k] = float(np.mean(yk)) / sd if sd > 0.0 else math.inf
    return SnrCurve(knots=scheme.knots.copy(), snr=snr)


def _single_truth(truth) -> GroundTruth:
    if isinstance(truth, GroundTruth):
        return truth
    truths = list(truth)
    if not truths:
        raise ValueError("no ground truth given")
    first = truths[0]
    for other in truths[1:]:
        same = (
            other.s0_true == first.s0_true
            and other.sigma_sq_true == first.sigma_sq_true
            and other.theta_true.order == first.theta_true.order
            and np.array_equal(other.theta_true.theta, first.theta_true.theta)
        )
        if not same:
            raise ValueError("mixed ground truths: all fits must share one truth")
    return first


def mse_report(
    fits_by_method: Mapping[str, Sequence],
    truth: GroundTruth | Sequence[GroundTruth],
    scheme: AcquisitionScheme,
) -> MseTable:
    """Per-method MSE of theta (per coefficient and unweighted mean),
    sigma^2, and the fitted signal at each knot.

    ``truth`` may be a single GroundTruth or one per dataset; differing
    truths are rejected because the squared errors would not be
    comparable.
    """
    gt = _single_truth(truth)
    order = gt.theta_true.order
    Z = scheme.design_matrix(order)
    true_signal = gt.s0_true * np.exp(Z @ gt.theta_true.theta)
    idx = scheme.knot_index
    n_knots = scheme.knots.size

    methods: dict[str, MethodMse] = {}
    for name, fits in fits_by_method.items():
        fits = list(fits)
        if not fits:
            raise ValueError(f"method {name!r} has no fits")
        th_sq = np.zeros(gt.theta_true.n_coeff)
        sig_sq = 0.0
        signal_sq = np.zeros(n_knots)
        for fit in fits:
            if fit.order != order:
                raise ValueError(
                    f"method {name!r} fit has order {fit.order}, truth is order {order}"
                )
            th_sq += (fit.theta.theta - gt.theta_true.theta) ** 2
            sig_sq += (fit.sigma_sq - gt.sigma_sq_true) ** 2
            diff_sq = (_fitted_signal(fit, Z) - true_signal) ** 2
            signal_sq += np.array(
                [float(np.mean(diff_sq[idx == k])) for k in range(n_knots)]
            )
        n = len(fits)
        theta_mse = th_sq / n
        methods[name] = MethodMse(
            theta_mse=theta_mse,
            theta_mse_mean=float(np.mean(theta_mse)),
            sigma_sq_mse=sig_sq / n,
            signal_mse=signal_sq / n,
        )
    return MseTable(knots=scheme.knots.copy(), methods=methods)


def signal_curve(fit, scheme: AcquisitionScheme, b: float) -> np.ndarray:
    """Fitted signal S0_hat exp(z(b, g) theta_hat) for each scheme direction."""
    matches = np.isclose(scheme.knots, b, rtol=1e-12, atol=0.0)
    if not matches.any():
        knot_list = ", ".join(f"{k:g}" for k in scheme.knots)
        raise ValueError(f"b = {b:g} is not a scheme knot; knots are: {knot_list}")
    b_exact = float(scheme.knots[int(np.argmax(matches))])
    cols = design_columns(scheme.directions, fit.order)
    z = -b_exact * cols
    return math.sqrt(fit.s0_sq) * np.exp(z @ fit.theta.theta)
