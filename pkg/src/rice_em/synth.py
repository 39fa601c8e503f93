"""Synthetic multi-shell acquisition schemes and Rician magnitude data.

The default protocol mirrors a single-voxel bench setting: 32 gradient
directions, 15 b-value knots from 0 to 14000 s/mm^2 (the nonzero knots
geometrically spaced from 62), three repetitions, m = 1440 rows.  Two
reference noise levels are provided; ground-truth tensors are synthetic
fixtures and are labeled as such wherever they are written out.

All sampling is driven by seeded PCG64 generators; the seed of every
dataset is recorded so any file can be regenerated bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    TensorParams,
    coefficient_count,
    design_columns,
    fourth_order_from_matrices,
    positivity_check,
)

__all__ = [
    "AcquisitionScheme",
    "GroundTruth",
    "VoxelData",
    "make_scheme",
    "default_knots",
    "default_scheme",
    "default_truth",
    "synthesize",
    "make_ensemble",
    "derive_seed",
    "HIGH_NOISE_SIGMA_SQ",
    "LOW_NOISE_SIGMA_SQ",
    "DEFAULT_S0",
]

HIGH_NOISE_SIGMA_SQ = 93.0405
LOW_NOISE_SIGMA_SQ = 12.8821
DEFAULT_S0 = 250.0
DEFAULT_SEED = 424242

_FIXTURE_EIGENVALUES = np.array([1.7e-3, 4.0e-4, 2.0e-4])
_FIXTURE_SHAPE_B = np.array([1.4, 0.9, 0.7])


@dataclass(frozen=True)
class AcquisitionScheme:
    """Knots x directions x repetitions factorial design.

    Row layout: repetition blocks are outermost, directions next, knots
    innermost, so rows [0, K*G) form one complete repetition.
    """

    knots: np.ndarray
    directions: np.ndarray
    repetitions: int

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        dirs = np.asarray(self.directions, dtype=float)
        if knots.ndim != 1 or knots.size < 1:
            raise ValueError("knots must be a non-empty 1-d array")
        if np.any(knots < 0) or np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be nonnegative and strictly ascending")
        if dirs.ndim != 2 or dirs.shape[1] != 3:
            raise ValueError("directions must have shape (n, 3)")
        norms = np.linalg.norm(dirs, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("directions must be unit vectors")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "directions", dirs)

    @property
    def size(self) -> int:
        return self.knots.size * len(self.directions) * self.repetitions

    @property
    def b_values(self) -> np.ndarray:
        return np.tile(self.knots, len(self.directions) * self.repetitions)

    @property
    def gradients(self) -> np.ndarray:
        one_rep = np.repeat(self.directions, self.knots.size, axis=0)
        return np.tile(one_rep, (self.repetitions, 1))

    @property
    def knot_index(self) -> np.ndarray:
        return np.tile(np.arange(self.knots.size), len(self.directions) * self.repetitions)

    @property
    def direction_index(self) -> np.ndarray:
        one_rep = np.repeat(np.arange(len(self.directions)), self.knots.size)
        return np.tile(one_rep, self.repetitions)

    def design_matrix(self, order: int) -> np.ndarray:
        """Rows Z_i with Z_i theta = -b_i d(g_i); cached per order."""
        cache = self.__dict__.setdefault("_design_cache", {})
        if order not in cache:
            cols = design_columns(self.gradients, order)
            cache[order] = -self.b_values[:, None] * cols
        return cache[order]


@dataclass(frozen=True)
class GroundTruth:
    """True tensor, scale, and noise level behind a synthetic voxel."""

    theta_true: TensorParams
    s0_true: float
    sigma_sq_true: float
    seed: int

    def __post_init__(self):
        if not np.isfinite(self.s0_true) or self.s0_true <= 0:
            raise ValueError("s0_true must be positive")
        if not np.isfinite(self.sigma_sq_true) or self.sigma_sq_true <= 0:
            raise ValueError("sigma_sq_true must be positive")
        if not positivity_check(self.theta_true).passed:
            raise ValueError("theta_true must have a positive diffusivity profile")


@dataclass(frozen=True)
class VoxelData:
    """Magnitude measurements aligned with the rows of a scheme."""

    voxel_id: int
    y: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 1 or not np.all(np.isfinite(y)) or np.any(y < 0):
            raise ValueError("y must be a finite nonnegative 1-d array")
        object.__setattr__(self, "y", y)


def _hemisphere_spiral(n: int) -> np.ndarray:
    k = np.arange(n, dtype=float)
    z = 1.0 - (k + 0.5) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden = math.pi * (3.0 - math.sqrt(5.0))
    phi = golden * k
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def repulsion_directions(n: int, iterations: int = 400) -> np.ndarray:
    """n unit directions spread by electrostatic repulsion on the hemisphere.

    Starts from a golden-spiral seed and runs a fixed number of descent
    steps on the antipodally symmetric Coulomb energy, so the result is
    deterministic.  Points are kept in the z >= 0 hemisphere.
    """
    if n < 6:
        raise ValueError(f"need at least 6 directions, got {n}")
    pts = _hemisphere_spiral(n)
    step = 0.05 / n ** 1.5
    for _ in range(iterations):
        diff = pts[:, None, :] - pts[None, :, :]
        anti = pts[:, None, :] + pts[None, :, :]
        d2 = np.sum(diff * diff, axis=2) + np.eye(n)
        a2 = np.sum(anti * anti, axis=2)
        force = np.sum(diff / d2[:, :, None] ** 1.5, axis=1)
        force += np.sum(anti / a2[:, :, None] ** 1.5, axis=1)
        force -= np.sum(force * pts, axis=1, keepdims=True) * pts
        pts = pts + step * force
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        flip = pts[:, 2] < 0.0
        pts[flip] *= -1.0
    return pts


def min_pairwise_angle_deg(directions: np.ndarray) -> float:
    """Smallest angle between any two directions, antipodes identified."""
    dots = np.abs(directions @ directions.T)
    np.fill_diagonal(dots, 0.0)
    return math.degrees(math.acos(min(1.0, dots.max())))


def default_knots() -> np.ndarray:
    return np.concatenate([[0.0], np.geomspace(62.0, 14000.0, 14)])


def make_scheme(n_directions: int = 32, knots=None, repetitions: int = 3) -> AcquisitionScheme:
    if knots is None:
        knots = default_knots()
    return AcquisitionScheme(
        knots=np.asarray(knots, dtype=float),
        directions=repulsion_directions(n_directions),
        repetitions=repetitions,
    )


def default_scheme() -> AcquisitionScheme:
    return make_scheme(32, None, 3)


def _fixture_rotation() -> np.ndarray:
    # fixed ZYZ rotation so the fixture tensors have generic off-diagonals
    a, b, c = 0.3, 0.8, 0.5

    def rz(t):
        return np.array([
            [math.cos(t), -math.sin(t), 0.0],
            [math.sin(t), math.cos(t), 0.0],
            [0.0, 0.0, 1.0],
        ])

    def ry(t):
        return np.array([
            [math.cos(t), 0.0, math.sin(t)],
            [0.0, 1.0, 0.0],
            [-math.sin(t), 0.0, math.cos(t)],
        ])

    return rz(a) @ ry(b) @ rz(c)


def fixture_tensor(order: int) -> TensorParams:
    """Deterministic positive ground-truth tensor used by the simulator."""
    R = _fixture_rotation()
    A = R @ np.diag(_FIXTURE_EIGENVALUES) @ R.T
    if order == 2:
        return TensorParams(
            2, np.array([A[0, 0], A[1, 1], A[2, 2], A[0, 1], A[0, 2], A[1, 2]])
        )
    if order == 4:
        B = R @ np.diag(_FIXTURE_SHAPE_B) @ R.T
        return fourth_order_from_matrices(A, B)
    raise ValueError(f"order must be 2 or 4, got {order}")


def default_truth(
    order: int = 2,
    noise: str | float = "high",
    s0: float = DEFAULT_S0,
    seed: int = DEFAULT_SEED,
) -> GroundTruth:
    """Synthetic-fixture truth at one of the two reference noise levels."""
    if noise == "high":
        sigma_sq = HIGH_NOISE_SIGMA_SQ
    elif noise == "low":
        sigma_sq = LOW_NOISE_SIGMA_SQ
    else:
        sigma_sq = float(noise)
    return GroundTruth(
        theta_true=fixture_tensor(order),
        s0_true=s0,
        sigma_sq_true=sigma_sq,
        seed=seed,
    )


def noise_free_signal(scheme: AcquisitionScheme, truth: GroundTruth) -> np.ndarray:
    Z = scheme.design_matrix(truth.theta_true.order)
    return truth.s0_true * np.exp(Z @ truth.theta_true.theta)


def synthesize(
    scheme: AcquisitionScheme,
    truth: GroundTruth,
    seed: int | None = None,
    zero_floor: float | None = None,
    voxel_id: int = 0,
) -> VoxelData:
    """One voxel of Rician magnitudes; optional quantization to zero.

    Each row draws |(S_i + g1 sigma) + i g2 sigma| with row-wise
    independent standard normals.  ``zero_floor`` floors magnitudes below
    the threshold to exactly 0 (off by default).
    """
    used_seed = truth.seed if seed is None else seed
    s = noise_free_signal(scheme, truth)
    rng = np.random.default_rng(used_seed)
    sigma = math.sqrt(truth.sigma_sq_true)
    real = s + sigma * rng.standard_normal(s.size)
    imag = sigma * rng.standard_normal(s.size)
    y = np.hypot(real, imag)
    if zero_floor is not None:
        y = np.where(y < zero_floor, 0.0, y)
    return VoxelData(voxel_id=voxel_id, y=y, seed=used_seed)


def derive_seed(master: int, index: int) -> int:
    """Stable per-dataset seed derived from a master seed and an index."""
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1, np.uint64)[0])


def make_ensemble(
    scheme: AcquisitionScheme,
    truth: GroundTruth,
    n_datasets: int,
    zero_floor: float | None = None,
) -> list[VoxelData]:
    """Independent replicate datasets with recorded per-dataset seeds."""
    if n_datasets < 1:
        raise ValueError("n_datasets must be >= 1")
    return [
        synthesize(
            scheme, truth, seed=derive_seed(truth.seed, i), zero_floor=zero_floor, voxel_id=i
        )
        for i in range(n_datasets)
    ]
