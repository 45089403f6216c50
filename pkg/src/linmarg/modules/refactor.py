"""
N(y | M theta, C) N(theta | mu, Lambda) = N(theta | a, A) N(y | b, B)

    A^-1 = Lambda^-1 + M^T C^-1 M
    a    = A (Lambda^-1 mu + M^T C^-1 y)
    b    = M mu
    B    = C + M Lambda M^T

The prior is stored as a precision so that Lambda^-1 = 0 (infinitely wide prior)
is an ordinary input. B^-1 is applied through the Woodbury identity and ln|B|
comes from the determinant lemma whenever K < N; otherwise B is formed densely.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import block_diag

from linmarg.errors import (
    DimensionMismatch,
    ImproperMarginal,
    NonPositiveDefinite,
    SingularPosterior,
    ValidationError,
)
from linmarg.modules.gaussian_core import (
    LOG_2PI,
    DiagonalFactor,
    GaussianMoment,
    SpdFactor,
    as_matrix,
    as_vector,
    symmetrize,
)

logger = logging.getLogger(__name__)

Method = Literal["auto", "woodbury", "dense"]


class NoiseSpec:
    """
    Data noise given as an N x N covariance C, an N x N precision C^-1, or a
    vector of per-point variances (diagonal C). Internally everything is
    expressed through C^-1 applications.
    """

    def __init__(self, kind: str, tensor: NDArray, factor=None):
        self.kind = kind
        self._tensor = tensor
        self._factor = factor
        self.size = tensor.shape[0]

    # --- constructors ---
    @classmethod
    def from_covariance(cls, cov: ArrayLike) -> "NoiseSpec":
        cov = symmetrize(cov, "noise covariance")
        return cls("covariance", cov, SpdFactor(cov, "noise covariance"))

    @classmethod
    def from_precision(cls, precision: ArrayLike) -> "NoiseSpec":
        precision = symmetrize(precision, "noise precision")
        # only non-negative definiteness is required; a factor exists if it is PD
        try:
            factor = SpdFactor(precision, "noise precision")
        except NonPositiveDefinite:
            eig_min = float(np.linalg.eigvalsh(precision).min())
            if eig_min < -1e-12 * max(1.0, float(np.abs(precision).max())):
                raise NonPositiveDefinite(f"noise precision: отрицательное собственное значение {eig_min:.3g}")
            factor = None
        return cls("precision", precision, factor)

    @classmethod
    def from_variances(cls, variances: ArrayLike) -> "NoiseSpec":
        factor = DiagonalFactor(variances, "noise variances")
        return cls("diagonal", factor.diagonal, factor)

    @classmethod
    def from_sigmas(cls, sigmas: ArrayLike) -> "NoiseSpec":
        sigmas = as_vector(sigmas, "sigma_y")
        if np.any(sigmas <= 0.0):
            raise ValidationError("sigma_y: все значения должны быть положительными")
        return cls.from_variances(sigmas**2)

    @classmethod
    def block_diagonal(cls, specs: list["NoiseSpec"]) -> "NoiseSpec":
        if all(s.kind == "diagonal" for s in specs):
            return cls.from_variances(np.concatenate([s._tensor for s in specs]))
        return cls.from_covariance(block_diag(*[s.dense_covariance() for s in specs]))

    # --- operations ---
    @property
    def is_diagonal(self) -> bool:
        return self.kind == "diagonal"

    def precision_apply(self, values: ArrayLike) -> NDArray:
        """C^-1 applied along the first (data) axis of a vector or matrix."""
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.size:
            raise DimensionMismatch(f"шум размерности {self.size}, аргумент формы {values.shape}")
        if self.kind == "precision":
            return self._tensor @ values
        return self._factor.solve(values)

    def precision_apply_stack(self, stack: NDArray) -> NDArray:
        """C^-1 applied to every member of a (G, N, k) stack."""
        if stack.shape[1] != self.size:
            raise DimensionMismatch(f"шум размерности {self.size}, стек формы {stack.shape}")
        if self.kind == "diagonal":
            return stack / self._tensor[None, :, None]
        return self.dense_precision() @ stack

    def log_det_cov(self) -> float:
        """ln|C|."""
        if self.kind == "precision":
            if self._factor is None:
                raise NonPositiveDefinite("noise precision вырождена: ln|C| не определён")
            return -self._factor.log_det()
        return self._factor.log_det()

    def dense_covariance(self) -> NDArray:
        if self.kind == "covariance":
            return self._tensor.copy()
        if self.kind == "diagonal":
            return np.diag(self._tensor)
        if self._factor is None:
            raise NonPositiveDefinite("noise precision вырождена: C не существует")
        return self._factor.inverse()

    def dense_precision(self) -> NDArray:
        if self.kind == "precision":
            return self._tensor.copy()
        return self._factor.inverse()

    def __repr__(self) -> str:
        return f"NoiseSpec(kind={self.kind!r}, size={self.size})"


@dataclass(frozen=True, eq=False)
class LinearGaussianModel:
    design: NDArray
    noise: NoiseSpec
    prior_mean: NDArray
    prior_precision: NDArray

    def __post_init__(self):
        design = as_matrix(self.design, "design")
        n, k = design.shape
        if n < 1 or k < 1:
            raise DimensionMismatch(f"design формы {design.shape}: нужны N >= 1 и K >= 1")
        if not isinstance(self.noise, NoiseSpec):
            raise ValidationError("noise должен быть NoiseSpec")
        if self.noise.size != n:
            raise DimensionMismatch(f"design содержит {n} строк, шум размерности {self.noise.size}")
        mean = as_vector(self.prior_mean, "prior_mean")
        precision = symmetrize(self.prior_precision, "prior_precision")
        if mean.shape[0] != k or precision.shape[0] != k:
            raise DimensionMismatch(
                f"K={k}, prior_mean длины {mean.shape[0]}, prior_precision формы {precision.shape}"
            )
        for arr in (design, mean, precision):
            arr.flags.writeable = False
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "prior_mean", mean)
        object.__setattr__(self, "prior_precision", precision)

    @classmethod
    def with_prior_covariance(cls, design, noise, prior_mean, prior_cov) -> "LinearGaussianModel":
        return cls(design, noise, prior_mean, SpdFactor(prior_cov, "prior covariance").inverse())

    @classmethod
    def with_prior_variances(cls, design, noise, prior_mean, prior_variances) -> "LinearGaussianModel":
        variances = as_vector(prior_variances, "prior variances")
        if np.any(variances <= 0.0):
            raise ValidationError("prior variances: все значения должны быть положительными")
        return cls(design, noise, prior_mean, np.diag(1.0 / variances))

    @classmethod
    def with_wide_prior(cls, design, noise) -> "LinearGaussianModel":
        k = as_matrix(design, "design").shape[1]
        return cls(design, noise, np.zeros(k), np.zeros((k, k)))

    @property
    def n_data(self) -> int:
        return self.design.shape[0]

    @property
    def n_params(self) -> int:
        return self.design.shape[1]

    @property
    def is_wide_prior(self) -> bool:
        return not np.any(self.prior_precision)

    @cached_property
    def prior_factor(self) -> SpdFactor | None:
        """Cholesky of Lambda^-1, or None when the prior is improper."""
        try:
            return SpdFactor(self.prior_precision, "prior_precision")
        except NonPositiveDefinite:
            return None

    @property
    def is_proper(self) -> bool:
        return self.prior_factor is not None

    def prior_covariance(self) -> NDArray:
        if self.prior_factor is None:
            raise ImproperMarginal("априорное распределение несобственное: Lambda не существует")
        return self.prior_factor.inverse()


@dataclass(frozen=True)
class MarginalLikelihood:
    defined: bool
    value: float | None = None
    reason: str | None = None

    @classmethod
    def undefined(cls, reason: str) -> "MarginalLikelihood":
        return cls(defined=False, value=None, reason=reason)

    def require(self) -> float:
        if not self.defined:
            raise ImproperMarginal(f"маргинальное правдоподобие не определено: {self.reason}")
        return self.value

    def to_json(self) -> dict:
        if self.defined:
            return {"status": "defined", "value": self.value}
        return {"status": "undefined", "reason": self.reason}


class Refactorization:
    """The four outputs a, A, b, B of the refactoring plus cached factorizations."""

    def __init__(self, model: LinearGaussianModel, y: NDArray, posterior_factor: SpdFactor,
                 a: NDArray, b: NDArray, method: str):
        self.model = model
        self.y = y
        self.posterior_factor = posterior_factor
        self.a = a
        self.b = b
        self.method = method
        self._dense_b_factor: SpdFactor | None = None

    @cached_property
    def A(self) -> NDArray:
        return self.posterior_factor.inverse()

    @property
    def improper(self) -> bool:
        return not self.model.is_proper

    @cached_property
    def log_det_B(self) -> float | None:
        if self.improper:
            return None
        if self.method == "dense":
            return self._b_factor().log_det()
        return _logdet_b_from_factors(self.model.noise, self.posterior_factor, self.model.prior_factor)

    def b_precision_apply(self, v: ArrayLike) -> NDArray:
        """B^-1 v."""
        if self.improper:
            raise ImproperMarginal("B не определена при несобственном априорном распределении")
        v = np.asarray(v, dtype=float)
        if self.method == "dense":
            return self._b_factor().solve(v)
        return _woodbury_from_factor(self.model.noise, self.model.design, self.posterior_factor, v)

    @cached_property
    def marginal(self) -> MarginalLikelihood:
        if self.improper:
            return MarginalLikelihood.undefined("improper prior: Lambda^-1 is singular")
        r = self.y - self.b
        maha = float(r @ self.b_precision_apply(r))
        value = -0.5 * (self.model.n_data * LOG_2PI + self.log_det_B) - 0.5 * maha
        return MarginalLikelihood(defined=True, value=value)

    @property
    def log_marginal(self) -> float | None:
        return self.marginal.value

    def posterior(self) -> GaussianMoment:
        return GaussianMoment(mean=self.a, cov=self.A)

    def _b_factor(self) -> SpdFactor:
        if self._dense_b_factor is None:
            self._dense_b_factor = SpdFactor(dense_b_tensor(self.model), "B")
        return self._dense_b_factor


def _posterior_precision(model: LinearGaussianModel) -> tuple[NDArray, NDArray]:
    """(Lambda^-1 + M^T C^-1 M, C^-1 M)."""
    cinv_m = model.noise.precision_apply(model.design)
    fisher = model.design.T @ cinv_m
    return symmetrize(model.prior_precision + fisher, "A^-1"), cinv_m


def _factor_posterior(precision: NDArray) -> SpdFactor:
    try:
        return SpdFactor(precision, "A^-1")
    except NonPositiveDefinite as e:
        raise SingularPosterior(f"Lambda^-1 + M^T C^-1 M не является положительно определённой: {e}") from None


def _woodbury_from_factor(noise: NoiseSpec, design: NDArray, posterior_factor: SpdFactor, v: NDArray) -> NDArray:
    cinv_v = noise.precision_apply(v)
    cinv_m = noise.precision_apply(design)
    return cinv_v - cinv_m @ posterior_factor.solve(design.T @ cinv_v)


def _logdet_b_from_factors(noise: NoiseSpec, posterior_factor: SpdFactor, prior_factor: SpdFactor) -> float:
    # ln|I + M^T C^-1 M Lambda| = ln|A^-1| - ln|Lambda^-1|
    return posterior_factor.log_det() - prior_factor.log_det() + noise.log_det_cov()


def _choose_method(model: LinearGaussianModel, method: Method) -> str:
    if method not in ("auto", "woodbury", "dense"):
        raise ValidationError(f"неизвестный метод {method!r}")
    if method != "auto":
        return method
    return "woodbury" if model.n_params < model.n_data else "dense"


def refactor(model: LinearGaussianModel, y: ArrayLike, method: Method = "auto") -> Refactorization:
    y = as_vector(y, "y")
    if y.shape[0] != model.n_data:
        raise DimensionMismatch(f"y длины {y.shape[0]}, design содержит {model.n_data} строк")
    precision, cinv_m = _posterior_precision(model)
    factor = _factor_posterior(precision)
    a = factor.solve(model.prior_precision @ model.prior_mean + cinv_m.T @ y)
    b = model.design @ model.prior_mean
    chosen = _choose_method(model, method)
    logger.debug(f"Рефакторизация: N={model.n_data}, K={model.n_params}, путь={chosen}")
    return Refactorization(model, y, factor, a, b, chosen)


def posterior(model: LinearGaussianModel, y: ArrayLike) -> GaussianMoment:
    return refactor(model, y).posterior()


def log_marginal_likelihood(model: LinearGaussianModel, y: ArrayLike, method: Method = "auto") -> float:
    if not model.is_proper:
        raise ImproperMarginal("Lambda^-1 вырождена: маргинальное правдоподобие не определено")
    return refactor(model, y, method).marginal.require()


def woodbury_apply(noise: NoiseSpec, design: ArrayLike, prior_precision: ArrayLike, v: ArrayLike) -> NDArray:
    """
    B^-1 v = C^-1 v - C^-1 M (Lambda^-1 + M^T C^-1 M)^-1 M^T C^-1 v,
    never forming the N x N tensor B.
    """
    design = as_matrix(design, "design")
    prior_precision = symmetrize(prior_precision, "prior_precision")
    cinv_m = noise.precision_apply(design)
    factor = _factor_posterior(prior_precision + design.T @ cinv_m)
    return _woodbury_from_factor(noise, design, factor, np.asarray(v, dtype=float))


def logdet_B(noise: NoiseSpec, design: ArrayLike, prior_precision: ArrayLike) -> float:
    """ln|C + M Lambda M^T| evaluated in the K x K space (determinant lemma)."""
    design = as_matrix(design, "design")
    prior_precision = symmetrize(prior_precision, "prior_precision")
    try:
        prior_factor = SpdFactor(prior_precision, "prior_precision")
    except NonPositiveDefinite:
        raise ImproperMarginal("Lambda^-1 вырождена: ln|B| бесконечен") from None
    cinv_m = noise.precision_apply(design)
    factor = _factor_posterior(prior_precision + design.T @ cinv_m)
    return _logdet_b_from_factors(noise, factor, prior_factor)


def dense_b_tensor(model: LinearGaussianModel) -> NDArray:
    """B = C + M Lambda M^T formed explicitly."""
    lam = model.prior_covariance()
    return symmetrize(model.noise.dense_covariance() + model.design @ lam @ model.design.T, "B")


def prior_predictive(model: LinearGaussianModel) -> GaussianMoment:
    """N(y | b, B) as an explicit Gaussian in data space."""
    return GaussianMoment(mean=model.design @ model.prior_mean, cov=dense_b_tensor(model))


def refactor_scalar(m: ArrayLike, noise: NoiseSpec, mu: float, lam: float, y: ArrayLike):
    """
    K = 1: the design is a single model vector m scaled by theta, the prior is
    N(theta | mu, lam) with a scalar variance. Only dot products are needed.

    Returns (a, A, b, Refactorization).
    """
    m = as_vector(m, "m")
    y = as_vector(y, "y")
    if not lam > 0.0:
        raise ValidationError(f"lambda должна быть положительной, получено {lam}")
    if m.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"m длины {m.shape[0]}, y длины {y.shape[0]}")
    cinv_m = noise.precision_apply(m)
    info = float(m @ cinv_m)
    precision = 1.0 / lam + info
    if not precision > 0.0:
        raise SingularPosterior("1/lambda + m^T C^-1 m не положительно")
    A = 1.0 / precision
    a = A * (mu / lam + float(cinv_m @ y))
    b = mu * m
    model = LinearGaussianModel(m[:, None], noise, [mu], [[1.0 / lam]])
    factor = _factor_posterior(np.array([[precision]]))
    return a, A, b, Refactorization(model, y, factor, np.array([a]), b, "woodbury")


def batched_log_marginal(designs: ArrayLike, noise: NoiseSpec, prior_mean: ArrayLike,
                         prior_precision: ArrayLike, y: ArrayLike) -> NDArray:
    """
    ln N(y | b, B) for every design in a (G, N, K) stack, through the Woodbury
    identity and the determinant lemma, vectorized over G.
    """
    designs = np.asarray(designs, dtype=float)
    if designs.ndim != 3:
        raise DimensionMismatch(f"ожидался стек матриц (G, N, K), получена форма {designs.shape}")
    y = as_vector(y, "y")
    mu = as_vector(prior_mean, "prior_mean")
    prior_precision = symmetrize(prior_precision, "prior_precision")
    g, n, k = designs.shape
    if y.shape[0] != n or mu.shape[0] != k or prior_precision.shape[0] != k:
        raise DimensionMismatch(f"стек {designs.shape}, y длины {y.shape[0]}, mu длины {mu.shape[0]}")
    try:
        prior_factor = SpdFactor(prior_precision, "prior_precision")
    except NonPositiveDefinite:
        raise ImproperMarginal("Lambda^-1 вырождена: маргинальное правдоподобие не определено") from None

    cinv_m = noise.precision_apply_stack(designs)
    precision = prior_precision + np.swapaxes(designs, 1, 2) @ cinv_m
    precision = 0.5 * (precision + np.swapaxes(precision, 1, 2))
    try:
        chol = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError:
        raise SingularPosterior("A^-1 не является положительно определённой хотя бы для одной матрицы стека") from None

    r = y[None, :] - designs @ mu
    cinv_r = noise.precision_apply(r.T).T
    u = np.einsum("gnk,gn->gk", cinv_m, r)
    w = np.linalg.solve(precision, u[..., None])[..., 0]
    maha = np.einsum("gn,gn->g", r, cinv_r) - np.einsum("gk,gk->g", u, w)
    log_det_b = (2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
                 - prior_factor.log_det() + noise.log_det_cov())
    return -0.5 * (n * LOG_2PI + log_det_b) - 0.5 * maha
