"""
Information-form folding of independent data blocks (y_j, M_j, C_j):

    start:   A_0^-1 = Lambda^-1,  x_0 = Lambda^-1 mu,  a_0 = mu
    block j: A_j^-1 = A_{j-1}^-1 + M_j^T C_j^-1 M_j
             x_j    = x_{j-1} + M_j^T C_j^-1 y_j
             a_j    = A_j x_j
             b_j = M_j a_{j-1},  B_j = C_j + M_j A_{j-1} M_j^T

The final (a, A) does not depend on block order; the per-block (b_j, B_j) do.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.typing import ArrayLike, NDArray

from linmarg.errors import DimensionMismatch, NonPositiveDefinite, SingularPosterior
from linmarg.modules.gaussian_core import (
    GaussianMoment,
    SpdFactor,
    as_matrix,
    as_vector,
    is_positive_definite,
    log_pdf,
    symmetrize,
)
from linmarg.modules.refactor import MarginalLikelihood, NoiseSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DataBlock:
    y: NDArray
    design: NDArray
    noise: NoiseSpec

    def __post_init__(self):
        y = as_vector(self.y, "y")
        design = as_matrix(self.design, "design")
        if design.shape[0] != y.shape[0] or self.noise.size != y.shape[0]:
            raise DimensionMismatch(
                f"блок: y длины {y.shape[0]}, design формы {design.shape}, шум размерности {self.noise.size}"
            )
        y.flags.writeable = False
        design.flags.writeable = False
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "design", design)

    @property
    def n_params(self) -> int:
        return self.design.shape[1]


@dataclass(frozen=True, eq=False)
class SequentialState:
    precision: NDArray
    info_vector: NDArray
    mean: NDArray
    # None while the running precision has never been positive definite
    cumulative_log_marginal: float | None
    evidence_partial: bool = False
    n_blocks: int = 0

    @cached_property
    def factor(self) -> SpdFactor | None:
        try:
            return SpdFactor(self.precision, "A^-1")
        except NonPositiveDefinite:
            return None

    @property
    def mean_defined(self) -> bool:
        return self.factor is not None

    @property
    def dim(self) -> int:
        return self.info_vector.shape[0]

    def posterior(self) -> GaussianMoment | None:
        if self.factor is None:
            return None
        return GaussianMoment(mean=self.mean, cov=self.factor.inverse())


@dataclass
class SequentialResult:
    posterior: GaussianMoment | None
    predictives: list[GaussianMoment | None]
    log_marginal: MarginalLikelihood
    partial: bool
    # sum of the block predictives that were evaluated, also when partial
    accumulated: float | None
    state: SequentialState = field(repr=False)


def sequential_init(prior_mean: ArrayLike, prior_precision: ArrayLike) -> SequentialState:
    mu = as_vector(prior_mean, "prior_mean")
    precision = symmetrize(prior_precision, "prior_precision")
    if precision.shape[0] != mu.shape[0]:
        raise DimensionMismatch(f"prior_mean длины {mu.shape[0]}, prior_precision формы {precision.shape}")
    eig_min = float(np.linalg.eigvalsh(precision).min())
    if eig_min < -1e-12 * max(1.0, float(np.abs(precision).max())):
        raise NonPositiveDefinite(f"prior_precision: отрицательное собственное значение {eig_min:.3g}")
    start = 0.0 if is_positive_definite(precision) else None
    return SequentialState(precision, precision @ mu, mu, cumulative_log_marginal=start)


def sequential_update(state: SequentialState, block: DataBlock) -> tuple[SequentialState, GaussianMoment | None]:
    """
    Absorb one block. The returned predictive N(y_j | b_j, B_j) is None when
    the running precision before this block was singular.
    """
    if block.n_params != state.dim:
        raise DimensionMismatch(f"блок с K={block.n_params}, состояние с K={state.dim}")
    cinv_m = block.noise.precision_apply(block.design)
    precision = symmetrize(state.precision + block.design.T @ cinv_m, "A^-1")
    info = state.info_vector + cinv_m.T @ block.y

    predictive = None
    cumulative = state.cumulative_log_marginal
    partial = state.evidence_partial
    if state.factor is not None:
        prev_cov = state.factor.inverse()
        predictive = GaussianMoment(
            mean=block.design @ state.mean,
            cov=block.noise.dense_covariance() + block.design @ prev_cov @ block.design.T,
        )
        cumulative += float(log_pdf(block.y, predictive))

    try:
        factor = SpdFactor(precision, "A^-1")
    except NonPositiveDefinite:
        if state.factor is not None:
            raise SingularPosterior(f"блок {state.n_blocks + 1}: A^-1 перестала быть положительно определённой") from None
        logger.debug(f"Последовательно: после блока {state.n_blocks + 1} точность всё ещё вырождена")
        return SequentialState(precision, info, state.mean, None, partial, state.n_blocks + 1), None

    if cumulative is None:
        # evidence starts counting only after the precision became PD
        cumulative = 0.0
        partial = True
    new_state = SequentialState(precision, info, factor.solve(info), cumulative, partial, state.n_blocks + 1)
    return new_state, predictive


def sequential_run(prior_mean: ArrayLike, prior_precision: ArrayLike, blocks: list[DataBlock]) -> SequentialResult:
    state = sequential_init(prior_mean, prior_precision)
    predictives = []
    for block in blocks:
        state, predictive = sequential_update(state, block)
        predictives.append(predictive)

    if state.cumulative_log_marginal is None:
        marginal = MarginalLikelihood.undefined("running precision never became positive definite")
    elif state.evidence_partial:
        marginal = MarginalLikelihood.undefined("improper prior start: evidence covers only later blocks")
    else:
        marginal = MarginalLikelihood(defined=True, value=state.cumulative_log_marginal)
    logger.debug(f"Последовательно: {len(blocks)} блоков, маргинал определён={marginal.defined}")
    return SequentialResult(
        posterior=state.posterior(),
        predictives=predictives,
        log_marginal=marginal,
        partial=state.evidence_partial,
        accumulated=state.cumulative_log_marginal,
        state=state,
    )


def concatenate_blocks(blocks: list[DataBlock]) -> tuple[NDArray, NDArray, NoiseSpec]:
    """Stacked y, stacked M and block-diagonal noise of the same problem."""
    if not blocks:
        raise DimensionMismatch("нет блоков для объединения")
    ks = {b.n_params for b in blocks}
    if len(ks) != 1:
        raise DimensionMismatch(f"блоки с разным K: {sorted(ks)}")
    y = np.concatenate([b.y for b in blocks])
    design = np.vstack([b.design for b in blocks])
    return y, design, NoiseSpec.block_diagonal([b.noise for b in blocks])
