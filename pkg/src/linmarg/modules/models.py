"""Design matrices M(P) for the worked models. Columns follow the (alpha, beta, gamma, ...) order."""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from linmarg.errors import DimensionMismatch, InvalidDegree, InvalidFrequency, ValidationError
from linmarg.modules.gaussian_core import as_matrix, as_vector

logger = logging.getLogger(__name__)

PARAM_NAMES = ("alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta")
SINUSOID_COLUMNS = ("alpha", "beta", "gamma")


def _names(k: int) -> tuple[str, ...]:
    if k <= len(PARAM_NAMES):
        return PARAM_NAMES[:k]
    return tuple(f"theta{i}" for i in range(k))


def _check_omega(omega: float) -> float:
    try:
        omega = float(omega)
    except (TypeError, ValueError):
        raise InvalidFrequency(f"частота должна быть числом, получено {omega!r}") from None
    if not math.isfinite(omega) or omega <= 0.0:
        raise InvalidFrequency(f"частота должна быть конечной и положительной, получено {omega}")
    return omega


def polynomial_design(x: ArrayLike, degree: int) -> NDArray:
    """Row i is (x_i^degree, ..., x_i, 1)."""
    if isinstance(degree, bool) or not isinstance(degree, (int, np.integer)) or degree < 0:
        raise InvalidDegree(f"степень должна быть целым числом >= 0, получено {degree!r}")
    x = as_vector(x, "x")
    return np.vander(x, int(degree) + 1)


def sinusoid_design(x: ArrayLike, omega: float) -> NDArray:
    """Row i is (cos(omega x_i), sin(omega x_i), 1)."""
    omega = _check_omega(omega)
    x = as_vector(x, "x")
    phase = omega * x
    return np.column_stack([np.cos(phase), np.sin(phase), np.ones_like(x)])


def sinusoid_design_stack(x: ArrayLike, omegas: ArrayLike) -> NDArray:
    """(G, N, 3) stack of sinusoid designs, one per frequency."""
    x = as_vector(x, "x")
    omegas = as_vector(omegas, "omegas")
    if np.any(omegas <= 0.0):
        raise InvalidFrequency("все частоты должны быть положительными")
    phase = omegas[:, None] * x[None, :]
    return np.stack([np.cos(phase), np.sin(phase), np.ones_like(phase)], axis=-1)


def model_curve(design: ArrayLike, theta: ArrayLike) -> NDArray:
    """
    M theta. `theta` may be a single K-vector or an (S, K) stack, in which
    case one curve per row is returned with shape (S, N).
    """
    design = as_matrix(design, "design")
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != design.shape[1] or theta.ndim > 2:
        raise DimensionMismatch(f"design формы {design.shape}, theta формы {theta.shape}")
    return theta @ design.T


@dataclass(frozen=True, eq=False)
class DesignSpec:
    kind: str
    degree: int | None = None
    omega: float | None = None
    matrix: NDArray | None = None
    column_names: tuple[str, ...] = field(default=())

    @classmethod
    def polynomial(cls, degree: int) -> "DesignSpec":
        if isinstance(degree, bool) or not isinstance(degree, (int, np.integer)) or degree < 0:
            raise InvalidDegree(f"степень должна быть целым числом >= 0, получено {degree!r}")
        return cls(kind="polynomial", degree=int(degree), column_names=_names(int(degree) + 1))

    @classmethod
    def sinusoid(cls, omega: float) -> "DesignSpec":
        return cls(kind="sinusoid", omega=_check_omega(omega), column_names=SINUSOID_COLUMNS)

    @classmethod
    def custom(cls, matrix: ArrayLike, column_names: tuple[str, ...] | None = None) -> "DesignSpec":
        matrix = as_matrix(matrix, "design")
        matrix.flags.writeable = False
        names = tuple(column_names) if column_names else _names(matrix.shape[1])
        if len(names) != matrix.shape[1]:
            raise DimensionMismatch(f"{len(names)} имён для {matrix.shape[1]} столбцов")
        return cls(kind="custom", matrix=matrix, column_names=names)

    @property
    def n_params(self) -> int:
        return len(self.column_names)

    def build(self, x: ArrayLike | None = None) -> NDArray:
        if self.kind == "polynomial":
            return polynomial_design(x, self.degree)
        if self.kind == "sinusoid":
            return sinusoid_design(x, self.omega)
        if self.kind == "custom":
            if x is not None and len(np.atleast_1d(x)) != self.matrix.shape[0]:
                raise DimensionMismatch(f"design содержит {self.matrix.shape[0]} строк, x длины {len(x)}")
            return self.matrix.copy()
        raise ValidationError(f"неизвестный тип модели {self.kind!r}")
