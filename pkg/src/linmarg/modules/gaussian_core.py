"""
Multivariate Gaussians in moment form (mean, cov) and canonical form (H, eta, xi),
plus the factorize/solve/log-det toolkit the rest of the package is built on.

No explicit inverses are taken for density evaluation: every V^-1 x goes through
a Cholesky solve, and ln||2 pi V|| is d ln(2 pi) + ln|V|.
"""
import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from linmarg.config import SYMMETRY_RTOL
from linmarg.errors import DimensionMismatch, NonPositiveDefinite, NotSymmetric, ValidationError

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


def as_vector(values: ArrayLike, name: str = "vector") -> NDArray:
    arr = np.atleast_1d(np.array(values, dtype=float))
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name}: ожидался вектор, получена форма {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: содержит нечисловые значения")
    return arr


def as_matrix(values: ArrayLike, name: str = "matrix") -> NDArray:
    """2-D float copy; a vector is read as a single column."""
    arr = np.array(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name}: ожидалась матрица, получена форма {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: содержит нечисловые значения")
    return arr


def symmetrize(tensor: ArrayLike, name: str = "tensor") -> NDArray:
    """Return (T + T^T)/2 after checking that T was symmetric to SYMMETRY_RTOL."""
    arr = np.atleast_2d(np.asarray(tensor, dtype=float))
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionMismatch(f"{name}: ожидалась квадратная матрица, получена форма {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: содержит нечисловые значения")
    scale = np.max(np.abs(arr)) if arr.size else 0.0
    if scale > 0.0:
        asym = np.max(np.abs(arr - arr.T)) / scale
        if asym > SYMMETRY_RTOL:
            raise NotSymmetric(f"{name}: относительная асимметрия {asym:.3g} превышает {SYMMETRY_RTOL:g}")
    return 0.5 * (arr + arr.T)


class SpdFactor:
    """Cholesky handle on a symmetric positive-definite tensor."""

    def __init__(self, tensor: ArrayLike, name: str = "tensor"):
        arr = symmetrize(tensor, name)
        try:
            self._chol, _ = cho_factor(arr, lower=True, check_finite=False)
        except LinAlgError as e:
            raise NonPositiveDefinite(f"{name}: разложение Холецкого не удалось ({e})") from None
        self.name = name
        self.dim = arr.shape[0]

    @cached_property
    def lower(self) -> NDArray:
        # cho_factor leaves the unused triangle untouched
        return np.tril(self._chol)

    def solve(self, rhs: ArrayLike) -> NDArray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.dim:
            raise DimensionMismatch(f"{self.name}: размерность {self.dim}, правая часть {rhs.shape}")
        return cho_solve((self._chol, True), rhs, check_finite=False)

    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self._chol))))

    def inverse(self) -> NDArray:
        inv = self.solve(np.eye(self.dim))
        return 0.5 * (inv + inv.T)


class DiagonalFactor:
    """Same interface as SpdFactor for a diagonal tensor stored as its diagonal."""

    def __init__(self, diagonal: ArrayLike, name: str = "diagonal"):
        diag = as_vector(diagonal, name)
        if np.any(diag <= 0.0):
            raise NonPositiveDefinite(f"{name}: диагональ должна быть строго положительной")
        self.diagonal = diag
        self.name = name
        self.dim = diag.shape[0]

    @cached_property
    def lower(self) -> NDArray:
        return np.diag(np.sqrt(self.diagonal))

    def solve(self, rhs: ArrayLike) -> NDArray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.dim:
            raise DimensionMismatch(f"{self.name}: размерность {self.dim}, правая часть {rhs.shape}")
        if rhs.ndim == 1:
            return rhs / self.diagonal
        return rhs / self.diagonal.reshape((-1,) + (1,) * (rhs.ndim - 1))

    def log_det(self) -> float:
        return float(np.sum(np.log(self.diagonal)))

    def inverse(self) -> NDArray:
        return np.diag(1.0 / self.diagonal)


def is_positive_definite(tensor: ArrayLike) -> bool:
    try:
        SpdFactor(tensor)
    except NonPositiveDefinite:
        return False
    return True


@dataclass(frozen=True, eq=False)
class GaussianMoment:
    mean: NDArray
    cov: NDArray

    def __post_init__(self):
        mean = as_vector(self.mean, "mean")
        cov = symmetrize(self.cov, "cov")
        if cov.shape[0] != mean.shape[0]:
            raise DimensionMismatch(f"mean длины {mean.shape[0]}, cov формы {cov.shape}")
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @cached_property
    def factor(self) -> SpdFactor:
        # a non-PD cov is a legal value; it only fails once a density is needed
        return SpdFactor(self.cov, "cov")


@dataclass(frozen=True, eq=False)
class GaussianCanonical:
    H: NDArray
    eta: NDArray
    xi: float

    def __post_init__(self):
        H = symmetrize(self.H, "H")
        eta = as_vector(self.eta, "eta")
        if H.shape[0] != eta.shape[0]:
            raise DimensionMismatch(f"eta длины {eta.shape[0]}, H формы {H.shape}")
        H.flags.writeable = False
        eta.flags.writeable = False
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "xi", float(self.xi))

    @property
    def dim(self) -> int:
        return self.eta.shape[0]


def log_pdf(x: ArrayLike, g: GaussianMoment) -> float | NDArray:
    """
    ln N(x | m, V). `x` is a d-vector or an (n, d) stack of points (a plain
    scalar when d == 1); the result is a scalar or an n-vector accordingly.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 and g.dim == 1:
        x = np.atleast_1d(x)
    if x.ndim == 0 or x.ndim > 2 or x.shape[-1] != g.dim:
        raise DimensionMismatch(f"x формы {x.shape} при размерности {g.dim}")
    factor = g.factor
    diff = x - g.mean
    if diff.ndim == 1:
        maha = float(diff @ factor.solve(diff))
    else:
        maha = np.einsum("ij,ji->i", diff, factor.solve(diff.T))
    return -0.5 * (g.dim * LOG_2PI + factor.log_det()) - 0.5 * maha


def to_canonical(g: GaussianMoment) -> GaussianCanonical:
    factor = g.factor
    H = factor.inverse()
    eta = factor.solve(g.mean)
    # eta^T V eta == m^T V^-1 m
    xi = g.dim * LOG_2PI + factor.log_det() + float(g.mean @ eta)
    return GaussianCanonical(H=H, eta=eta, xi=xi)


def from_canonical(c: GaussianCanonical) -> GaussianMoment:
    factor = SpdFactor(c.H, "H")
    return GaussianMoment(mean=factor.solve(c.eta), cov=factor.inverse())


def canonical_log_pdf(x: ArrayLike, c: GaussianCanonical) -> float:
    x = as_vector(x, "x")
    if x.shape[0] != c.dim:
        raise DimensionMismatch(f"x длины {x.shape[0]} при размерности {c.dim}")
    return float(-0.5 * x @ c.H @ x + c.eta @ x - 0.5 * c.xi)


def normalized_canonical(H: ArrayLike, eta: ArrayLike) -> GaussianCanonical:
    """Canonical form with xi chosen so that the density integrates to one."""
    factor = SpdFactor(H, "H")
    eta = as_vector(eta, "eta")
    # ln||2 pi H^-1|| = d ln 2pi - ln|H|
    xi = factor.dim * LOG_2PI - factor.log_det() + float(eta @ factor.solve(eta))
    return GaussianCanonical(H=H, eta=eta, xi=xi)


def multiply(c1: GaussianCanonical, c2: GaussianCanonical) -> tuple[GaussianCanonical, float]:
    """
    Product of two Gaussian densities in the same variable.

    Returns the normalized product and the log of the constant in front of it,
    which equals ln N(m1 | m2, V1 + V2).
    """
    if c1.dim != c2.dim:
        raise DimensionMismatch(f"размерности {c1.dim} и {c2.dim} не совпадают")
    product = normalized_canonical(c1.H + c2.H, c1.eta + c2.eta)
    log_scale = 0.5 * (product.xi - c1.xi - c2.xi)
    return product, log_scale


def affine_draws(g: GaussianMoment, z: ArrayLike) -> NDArray:
    """m + L z for rows of standard normals z (shape (n, d))."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[-1] != g.dim:
        raise DimensionMismatch(f"z формы {z.shape} при размерности {g.dim}")
    return g.mean + z @ g.factor.lower.T


def sample(g: GaussianMoment, n: int, seed: int) -> NDArray:
    if n < 1:
        raise ValidationError(f"число выборок должно быть >= 1, получено {n}")
    rng = np.random.default_rng(seed)
    return affine_draws(g, rng.standard_normal((n, g.dim)))
