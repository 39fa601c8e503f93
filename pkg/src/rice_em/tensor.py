"""Diffusion tensor parameterization for orders 2 and 4.

The log-signal is linear in the unique tensor coefficients: a design row
Z(b, g) satisfies Z theta = -b d(g), where d(g) is the quadratic or
quartic diffusivity form along the unit direction g.  Multinomial
multiplicities of repeated indices are folded into the design row, so
theta always stores one entry per unique coefficient.

Order 2 uses (Dxx, Dyy, Dzz, Dxy, Dxz, Dyz).  Order 4 enumerates the 15
unique coefficients by descending lexicographic exponent triples of
(gx, gy, gz).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GradientControl",
    "TensorParams",
    "EigenDecomposition",
    "PositivityReport",
    "ORDER4_EXPONENTS",
    "ORDER4_MULTIPLICITY",
    "design_row",
    "design_columns",
    "diffusivity",
    "diffusivity_grid",
    "eigen_2nd_order",
    "fractional_anisotropy",
    "mean_diffusivity",
    "positivity_check",
    "matrix_from_order2",
    "order2_from_matrix",
    "fourth_order_from_matrices",
    "fibonacci_sphere",
]

# exponent triples (a, b, c) of gx^a gy^b gz^c, descending lexicographic
ORDER4_EXPONENTS = (
    (4, 0, 0), (3, 1, 0), (3, 0, 1), (2, 2, 0), (2, 1, 1), (2, 0, 2),
    (1, 3, 0), (1, 2, 1), (1, 1, 2), (1, 0, 3), (0, 4, 0), (0, 3, 1),
    (0, 2, 2), (0, 1, 3), (0, 0, 4),
)
ORDER4_MULTIPLICITY = tuple(
    math.factorial(4) // (math.factorial(a) * math.factorial(b) * math.factorial(c))
    for a, b, c in ORDER4_EXPONENTS
)
_COEFF_COUNT = {2: 6, 4: 15}


@dataclass(frozen=True)
class GradientControl:
    """One acquisition setting: b-value and unit gradient direction."""

    b: float
    g: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float)
        if g.shape != (3,) or not np.all(np.isfinite(g)):
            raise ValueError("g must be a finite 3-vector")
        if not np.isfinite(self.b) or self.b < 0:
            raise ValueError(f"b must be finite and >= 0, got {self.b}")
        if self.b > 0 and abs(np.linalg.norm(g) - 1.0) > 1e-9:
            raise ValueError("gradient direction must be unit length when b > 0")
        object.__setattr__(self, "g", g)


@dataclass(frozen=True)
class TensorParams:
    """Unique diffusion tensor coefficients for a given order."""

    order: int
    theta: np.ndarray

    def __post_init__(self):
        if self.order not in _COEFF_COUNT:
            raise ValueError(f"order must be 2 or 4, got {self.order}")
        th = np.asarray(self.theta, dtype=float)
        want = _COEFF_COUNT[self.order]
        if th.shape != (want,):
            raise ValueError(f"order {self.order} needs {want} coefficients, got shape {th.shape}")
        if not np.all(np.isfinite(th)):
            raise ValueError("theta must be finite")
        object.__setattr__(self, "theta", th)

    @property
    def n_coeff(self) -> int:
        return _COEFF_COUNT[self.order]


@dataclass(frozen=True)
class EigenDecomposition:
    """Descending eigenvalues and matching orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


@dataclass(frozen=True)
class PositivityReport:
    passed: bool
    min_diffusivity: float
    min_direction: np.ndarray
    min_eigenvalue: float | None = None


def coefficient_count(order: int) -> int:
    if order not in _COEFF_COUNT:
        raise ValueError(f"order must be 2 or 4, got {order}")
    return _COEFF_COUNT[order]


def design_columns(g: np.ndarray, order: int) -> np.ndarray:
    """Monomial columns with multiplicities, shape (n, n_coeff), for unit rows g."""
    g = np.atleast_2d(np.asarray(g, dtype=float))
    x, y, z = g[:, 0], g[:, 1], g[:, 2]
    if order == 2:
        return np.stack([x * x, y * y, z * z, 2 * x * y, 2 * x * z, 2 * y * z], axis=1)
    if order == 4:
        cols = [
            m * x**a * y**b * z**c
            for (a, b, c), m in zip(ORDER4_EXPONENTS, ORDER4_MULTIPLICITY)
        ]
        return np.stack(cols, axis=1)
    raise ValueError(f"order must be 2 or 4, got {order}")


def design_row(control: GradientControl, order: int) -> np.ndarray:
    """Row Z with Z theta = -b d(g); zero row when b = 0."""
    n = coefficient_count(order)
    if control.b == 0:
        return np.zeros(n)
    return -control.b * design_columns(control.g[None, :], order)[0]


def diffusivity(params: TensorParams, g: np.ndarray) -> float:
    """Apparent diffusivity d(g) along the unit direction g."""
    g = np.asarray(g, dtype=float)
    if g.shape != (3,) or abs(np.linalg.norm(g) - 1.0) > 1e-9:
        raise ValueError("g must be a unit 3-vector")
    return float(design_columns(g[None, :], params.order)[0] @ params.theta)


def diffusivity_grid(params: TensorParams, directions: np.ndarray) -> np.ndarray:
    """d(g) for many unit rows at once."""
    return design_columns(directions, params.order) @ params.theta


def matrix_from_order2(params: TensorParams) -> np.ndarray:
    if params.order != 2:
        raise ValueError("matrix form exists only for order 2")
    dxx, dyy, dzz, dxy, dxz, dyz = params.theta
    return np.array([[dxx, dxy, dxz], [dxy, dyy, dyz], [dxz, dyz, dzz]])


def order2_from_matrix(D: np.ndarray) -> TensorParams:
    D = np.asarray(D, dtype=float)
    return TensorParams(2, np.array([D[0, 0], D[1, 1], D[2, 2], D[0, 1], D[0, 2], D[1, 2]]))


def _cardano_eigenvalues(A: np.ndarray) -> np.ndarray:
    """Descending eigenvalues of a symmetric 3x3 via the trigonometric cubic."""
    p1 = A[0, 1] ** 2 + A[0, 2] ** 2 + A[1, 2] ** 2
    q = np.trace(A) / 3.0
    if p1 == 0.0:
        return np.sort(np.diag(A))[::-1].copy()
    p2 = np.sum((np.diag(A) - q) ** 2) + 2.0 * p1
    p = math.sqrt(p2 / 6.0)
    B = (A - q * np.eye(3)) / p
    # in exact arithmetic det(B)/2 lies in [-1, 1]; clip roundoff
    r = min(1.0, max(-1.0, np.linalg.det(B) / 2.0))
    phi = math.acos(r) / 3.0
    e1 = q + 2.0 * p * math.cos(phi)
    e3 = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
    e2 = 3.0 * q - e1 - e3
    return np.array([e1, e2, e3])


def _null_direction(M: np.ndarray, scale: float, avoid: np.ndarray | None) -> np.ndarray:
    """Best cross-product null vector of a (near) rank-2 symmetric M."""
    crosses = [
        np.cross(M[0], M[1]),
        np.cross(M[0], M[2]),
        np.cross(M[1], M[2]),
    ]
    norms = [np.linalg.norm(c) for c in crosses]
    k = int(np.argmax(norms))
    if norms[k] > 1e-10 * scale * scale:
        return crosses[k] / norms[k]
    # repeated eigenvalue: null space is a plane (or everything)
    if avoid is not None:
        e = np.eye(3)[int(np.argmin(np.abs(avoid)))]
        v = e - (e @ avoid) * avoid
        return v / np.linalg.norm(v)
    rows = np.linalg.norm(M, axis=1)
    j = int(np.argmax(rows))
    if rows[j] <= 1e-14 * scale:
        return np.array([1.0, 0.0, 0.0])
    n = M[j] / rows[j]
    e = np.eye(3)[int(np.argmin(np.abs(n)))]
    v = e - (e @ n) * n
    return v / np.linalg.norm(v)


def eigen_2nd_order(params: TensorParams) -> EigenDecomposition:
    """Closed-form symmetric 3x3 eigendecomposition, descending order.

    Eigenvalues come from Cardano's formula; eigenvectors from cross
    products of the shifted matrix, taking the best-separated eigenvalue
    first so near-degenerate pairs stay stable.  The basis is then
    re-orthonormalized and the eigenvalues refreshed as Rayleigh
    quotients, which keeps the reconstruction error at roundoff level.
    """
    A = matrix_from_order2(params)
    scale = max(float(np.max(np.abs(A))), np.finfo(float).tiny)
    lam = _cardano_eigenvalues(A)
    gap_top = lam[0] - lam[1]
    gap_bot = lam[1] - lam[2]
    if max(gap_top, gap_bot) <= 1e-12 * scale:
        V = np.eye(3)
    else:
        eye = np.eye(3)
        if gap_top >= gap_bot:
            v1 = _null_direction(A - lam[0] * eye, scale, avoid=None)
            v3 = _null_direction(A - lam[2] * eye, scale, avoid=v1)
        else:
            v3 = _null_direction(A - lam[2] * eye, scale, avoid=None)
            v1 = _null_direction(A - lam[0] * eye, scale, avoid=v3)
        v3 = v3 - (v3 @ v1) * v1
        v3 /= np.linalg.norm(v3)
        v2 = np.cross(v3, v1)
        V = np.column_stack([v1, v2, v3])
    rayleigh = np.einsum("ij,ik,kj->j", V, A, V)
    order = np.argsort(rayleigh)[::-1]
    return EigenDecomposition(rayleigh[order], V[:, order])


def fractional_anisotropy(eig: EigenDecomposition) -> float:
    """sqrt(3 sum (lam - mean)^2) / sqrt(2 sum lam^2), clamped to [0, 1]."""
    lam = np.asarray(eig.eigenvalues, dtype=float)
    if np.all(lam == 0.0):
        raise ValueError("eigenvalues are all zero; anisotropy undefined")
    mean = lam.mean()
    val = math.sqrt(3.0 * np.sum((lam - mean) ** 2) / (2.0 * np.sum(lam * lam)))
    return min(1.0, max(0.0, val))


# coefficient positions entering the order-4 mean: D1111, D1122, D1133
# singly and D2222, D3333, D2233 doubly
_ORDER4_MD_SINGLE = (0, 3, 5)
_ORDER4_MD_DOUBLE = (10, 14, 12)


def mean_diffusivity(params: TensorParams) -> float:
    """Mean diffusivity; order 2 is trace/3, order 4 the fixed 6-term average.

    The order-4 form (D1111 + D1122 + D1133 + 2 D2222 + 2 D3333
    + 2 D2233) / 5 is asymmetric under axis relabeling; it is kept
    verbatim as the published contract rather than replaced by the
    orientation average.
    """
    th = params.theta
    if params.order == 2:
        return float((th[0] + th[1] + th[2]) / 3.0)
    single = sum(th[i] for i in _ORDER4_MD_SINGLE)
    double = sum(th[i] for i in _ORDER4_MD_DOUBLE)
    return float((single + 2.0 * double) / 5.0)


def fibonacci_sphere(n: int) -> np.ndarray:
    """Deterministic, roughly uniform n-point grid on the unit sphere."""
    k = np.arange(n, dtype=float)
    z = 1.0 - (2.0 * k + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden = math.pi * (3.0 - math.sqrt(5.0))
    phi = golden * k
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def positivity_check(params: TensorParams, grid_size: int = 240) -> PositivityReport:
    """Positive-definiteness of the diffusivity form.

    Order 2 checks the smallest eigenvalue exactly.  Order 4 minimizes
    d(g) over a deterministic sphere grid of ``grid_size`` points
    (at least 60 required).
    """
    if params.order == 2:
        eig = eigen_2nd_order(params)
        lam_min = float(eig.eigenvalues[2])
        return PositivityReport(
            passed=lam_min > 0.0,
            min_diffusivity=lam_min,
            min_direction=eig.eigenvectors[:, 2].copy(),
            min_eigenvalue=lam_min,
        )
    if grid_size < 60:
        raise ValueError(f"grid_size must be >= 60 for order 4, got {grid_size}")
    dirs = fibonacci_sphere(grid_size)
    vals = diffusivity_grid(params, dirs)
    k = int(np.argmin(vals))
    return PositivityReport(
        passed=bool(vals[k] > 0.0),
        min_diffusivity=float(vals[k]),
        min_direction=dirs[k].copy(),
        min_eigenvalue=None,
    )


def fourth_order_from_matrices(A: np.ndarray, B: np.ndarray) -> TensorParams:
    """Unique coefficients of the symmetrized product tensor of A and B.

    The resulting quartic form is (g' A g)(g' B g) on the unit sphere;
    with B = I it reproduces the order-2 diffusivity of A, and with both
    positive definite it is positive.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    full = 0.5 * (np.einsum("ij,kl->ijkl", A, B) + np.einsum("ij,kl->ijkl", B, A))
    sym = np.zeros_like(full)
    import itertools

    for perm in itertools.permutations(range(4)):
        sym += np.transpose(full, perm)
    sym /= 24.0
    theta = np.empty(15)
    for m, (a, b, c) in enumerate(ORDER4_EXPONENTS):
        idx = (0,) * a + (1,) * b + (2,) * c
        theta[m] = sym[idx]
    return TensorParams(4, theta)
