"""
Inference with one nonlinear parameter (the sinusoid frequency omega).

The linear parameters are marginalized in closed form at every omega of a
log-spaced grid. Frequencies are then drawn by rejection against the
log-uniform prior, and one conditional draw of (alpha, beta, gamma) is made
per accepted frequency.
"""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.signal import find_peaks
from scipy.special import logsumexp

from linmarg.config import (
    DEFAULT_GRID_SIZE,
    DEFAULT_OMEGA_MAX,
    DEFAULT_OMEGA_MIN,
    ENVELOPE_MARGIN_NATS,
    MAX_PROPOSALS,
    PROPOSAL_BATCH,
    SCAN_CHUNK_SIZE,
)
from linmarg.errors import DegenerateScan, EnvelopeTooLoose, InvalidDomain, ValidationError
from linmarg.modules.gaussian_core import affine_draws, as_vector
from linmarg.modules.models import SINUSOID_COLUMNS, sinusoid_design, sinusoid_design_stack
from linmarg.modules.refactor import LinearGaussianModel, Refactorization, batched_log_marginal, refactor

if TYPE_CHECKING:
    from linmarg.data_manager.dataset import Dataset

logger = logging.getLogger(__name__)

# the prior support is closed, with this much relative slack at both ends
SUPPORT_RTOL = 1e-12
# non-finite log-likelihoods are treated as this far below the scan maximum
LOG_FLOOR_NATS = 1000.0


def _check_domain(lo: float, hi: float) -> tuple[float, float]:
    lo, hi = float(lo), float(hi)
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo <= 0.0 or hi <= lo:
        raise InvalidDomain(f"нужно 0 < lo < hi, получено ({lo}, {hi})")
    return lo, hi


def in_support(omega: ArrayLike, lo: float, hi: float) -> NDArray:
    omega = np.asarray(omega, dtype=float)
    return (omega >= lo * (1.0 - SUPPORT_RTOL)) & (omega <= hi * (1.0 + SUPPORT_RTOL))


def log_uniform_prior(omega: ArrayLike, lo: float, hi: float) -> float | NDArray:
    """ln p(omega) for p uniform in ln(omega) on (lo, hi); -inf outside."""
    lo, hi = _check_domain(lo, hi)
    arr = np.asarray(omega, dtype=float)
    inside = in_support(arr, lo, hi) & (arr > 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.where(inside, -np.log(arr) - math.log(math.log(hi / lo)), -np.inf)
    if value.ndim == 0:
        return float(value)
    return value


def log_grid(lo: float, hi: float, n_grid: int) -> NDArray:
    """omega_g = exp(ln lo + g (ln hi - ln lo) / (G - 1)), g = 0..G-1."""
    lo, hi = _check_domain(lo, hi)
    if n_grid < 2:
        raise ValidationError(f"размер сетки должен быть >= 2, получено {n_grid}")
    g = np.arange(n_grid, dtype=float)
    log_lo = math.log(lo)
    return np.exp(log_lo + g * (math.log(hi) - log_lo) / (n_grid - 1))


@dataclass(frozen=True, eq=False)
class FrequencyScan:
    omegas: NDArray
    log_marginal: NDArray
    log_prior: NDArray
    log_post_unnorm: NDArray
    lo: float
    hi: float

    def __post_init__(self):
        arrays = [np.array(a, dtype=float) for a in (self.omegas, self.log_marginal, self.log_prior, self.log_post_unnorm)]
        if len({a.shape for a in arrays}) != 1 or arrays[0].ndim != 1 or arrays[0].shape[0] < 2:
            raise ValidationError("столбцы скана должны быть векторами одинаковой длины >= 2")
        if np.any(np.diff(arrays[0]) <= 0.0):
            raise ValidationError("сетка частот должна строго возрастать")
        for name, arr in zip(("omegas", "log_marginal", "log_prior", "log_post_unnorm"), arrays):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def from_log_marginal(cls, omegas: ArrayLike, log_marginal: ArrayLike, lo: float, hi: float) -> "FrequencyScan":
        """Scan built from given log-likelihood values; the prior column is filled in."""
        log_prior = log_uniform_prior(np.asarray(omegas, dtype=float), lo, hi)
        log_marginal = np.asarray(log_marginal, dtype=float)
        return cls(omegas, log_marginal, log_prior, log_marginal + log_prior, lo, hi)

    @property
    def n_grid(self) -> int:
        return self.omegas.shape[0]


@dataclass(frozen=True, eq=False)
class OmegaDraws:
    omegas: NDArray
    accepted: int
    proposals: int
    seed: int

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposals if self.proposals else 0.0


@dataclass(frozen=True, eq=False)
class JointSamples:
    rows: NDArray
    seed: int
    accepted: int
    proposals: int
    columns: tuple[str, ...] = SINUSOID_COLUMNS + ("omega",)

    @property
    def theta(self) -> NDArray:
        return self.rows[:, :-1]

    @property
    def omegas(self) -> NDArray:
        return self.rows[:, -1]

    def __len__(self) -> int:
        return self.rows.shape[0]


def _scan_chunk(data: "Dataset", prior_mean: NDArray, prior_precision: NDArray, omegas: NDArray) -> NDArray:
    designs = sinusoid_design_stack(data.x, omegas)
    return batched_log_marginal(designs, data.noise(), prior_mean, prior_precision, data.y)


def frequency_scan(
    data: "Dataset",
    prior_mean: ArrayLike,
    prior_precision: ArrayLike,
    lo: float = DEFAULT_OMEGA_MIN,
    hi: float = DEFAULT_OMEGA_MAX,
    n_grid: int = DEFAULT_GRID_SIZE,
    threads: int = 1,
) -> FrequencyScan:
    """
    ln p(y | omega) + ln p(omega) on the log grid. The grid is cut into chunks
    of fixed size, so the result does not depend on the number of threads.
    """
    started = time.perf_counter()
    omegas = log_grid(lo, hi, n_grid)
    prior_mean = as_vector(prior_mean, "prior_mean")
    prior_precision = np.asarray(prior_precision, dtype=float)
    chunks = [omegas[i:i + SCAN_CHUNK_SIZE] for i in range(0, n_grid, SCAN_CHUNK_SIZE)]

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: _scan_chunk(data, prior_mean, prior_precision, c), chunks))
    else:
        parts = [_scan_chunk(data, prior_mean, prior_precision, c) for c in chunks]

    log_marginal = np.concatenate(parts)
    log_prior = log_uniform_prior(omegas, lo, hi)
    scan = FrequencyScan(omegas, log_marginal, log_prior, log_marginal + log_prior, lo, hi)
    logger.info(
        f"Скан: {n_grid} частот в ({lo:g}, {hi:g}) за {time.perf_counter() - started:.2f} с, потоков {threads}"
    )
    return scan


def _floored_log_likelihood(scan: FrequencyScan) -> NDArray:
    logl = scan.log_marginal
    finite = np.isfinite(logl)
    if not np.any(finite):
        raise DegenerateScan("все значения ln p(y|omega) равны -inf")
    top = float(np.max(logl[finite]))
    return np.where(finite, logl, top - LOG_FLOOR_NATS)


def rejection_sample_omega(
    scan: FrequencyScan,
    n: int,
    seed: int,
    margin: float = ENVELOPE_MARGIN_NATS,
    max_proposals: int = MAX_PROPOSALS,
    batch: int = PROPOSAL_BATCH,
) -> OmegaDraws:
    """
    Propose omega from the log-uniform prior, accept with probability
    exp(logL(omega) - max logL - margin), logL interpolated linearly in ln(omega).
    """
    if n < 1:
        raise ValidationError(f"число выборок должно быть >= 1, получено {n}")
    logl = _floored_log_likelihood(scan)
    envelope = float(np.max(logl)) + margin
    log_nodes = np.log(scan.omegas)
    log_lo, log_hi = math.log(scan.lo), math.log(scan.hi)
    rng = np.random.default_rng(seed)

    accepted: list[NDArray] = []
    n_accepted = 0
    proposals = 0
    while n_accepted < n:
        if proposals >= max_proposals:
            rate = n_accepted / proposals
            logger.error(f"Сэмплер: исчерпан лимит {max_proposals} предложений, принято {n_accepted} из {n}")
            raise EnvelopeTooLoose("слишком низкая доля принятия", acceptance_rate=rate, proposals=proposals)
        size = min(batch, max_proposals - proposals)
        log_omega = rng.uniform(log_lo, log_hi, size)
        u = rng.uniform(size=size)
        keep = u < np.exp(np.interp(log_omega, log_nodes, logl) - envelope)
        kept = np.flatnonzero(keep)
        need = n - n_accepted
        if kept.shape[0] >= need:
            # proposals are counted up to the draw that completed the sample
            proposals += int(kept[need - 1]) + 1
            kept = kept[:need]
        else:
            proposals += size
        accepted.append(np.exp(log_omega[kept]))
        n_accepted += kept.shape[0]

    omegas = np.concatenate(accepted)
    draws = OmegaDraws(omegas=omegas, accepted=n, proposals=proposals, seed=seed)
    logger.info(f"Сэмплер: {n} частот из {proposals} предложений, доля принятия {draws.acceptance_rate:.4f}")
    return draws


def grid_posterior_weights(scan: FrequencyScan) -> NDArray:
    """
    Posterior mass of every grid cell. On a log grid the cell width in omega
    is proportional to omega, so the mass is p(y|omega) p(omega) omega.
    """
    log_mass = scan.log_post_unnorm + np.log(scan.omegas)
    if not np.any(np.isfinite(log_mass)):
        raise DegenerateScan("апостериорная плотность равна нулю на всей сетке")
    return np.exp(log_mass - logsumexp(log_mass))


def grid_multinomial_sample(scan: FrequencyScan, n: int, seed: int) -> OmegaDraws:
    """Draw grid frequencies directly with the normalized grid weights."""
    if n < 1:
        raise ValidationError(f"число выборок должно быть >= 1, получено {n}")
    weights = grid_posterior_weights(scan)
    rng = np.random.default_rng(seed)
    idx = rng.choice(scan.n_grid, size=n, p=weights)
    return OmegaDraws(omegas=scan.omegas[idx], accepted=n, proposals=n, seed=seed)


def log_evidence(scan: FrequencyScan) -> float:
    """ln of the integral of p(y|omega) p(omega) d omega, trapezoid rule on the grid."""
    lp = scan.log_post_unnorm
    if not np.any(np.isfinite(lp)):
        raise DegenerateScan("апостериорная плотность равна нулю на всей сетке")
    log_half_width = np.log(0.5 * np.diff(scan.omegas))
    terms = np.concatenate([lp[:-1] + log_half_width, lp[1:] + log_half_width])
    return float(logsumexp(terms))


def scan_summary(scan: FrequencyScan, mode_window_nats: float = 10.0) -> dict:
    lp = scan.log_post_unnorm
    if not np.any(np.isfinite(lp)):
        raise DegenerateScan("апостериорная плотность равна нулю на всей сетке")
    best = int(np.nanargmax(np.where(np.isfinite(lp), lp, -np.inf)))
    best_marginal = int(np.argmax(np.where(np.isfinite(scan.log_marginal), scan.log_marginal, -np.inf)))
    threshold = float(lp[best]) - mode_window_nats
    peaks, _ = find_peaks(np.where(np.isfinite(lp), lp, threshold - 1.0), height=threshold)
    n_modes = int(peaks.shape[0])
    if lp[0] >= threshold and lp[0] > lp[1]:
        n_modes += 1
    if lp[-1] >= threshold and lp[-1] > lp[-2]:
        n_modes += 1
    return {
        "grid_size": scan.n_grid,
        "omega_min": scan.lo,
        "omega_max": scan.hi,
        "omega_map": float(scan.omegas[best]),
        "log_post_max": float(lp[best]),
        "omega_max_marginal": float(scan.omegas[best_marginal]),
        "log_marginal_max": float(scan.log_marginal[best_marginal]),
        "log_evidence": log_evidence(scan),
        "modes_within_window": n_modes,
        "mode_window_nats": mode_window_nats,
    }


def conditional_posterior(data: "Dataset", prior_mean: ArrayLike, prior_precision: ArrayLike, omega: float) -> Refactorization:
    model = LinearGaussianModel(sinusoid_design(data.x, omega), data.noise(), prior_mean, prior_precision)
    return refactor(model, data.y)


def joint_posterior_samples(
    data: "Dataset",
    prior_mean: ArrayLike,
    prior_precision: ArrayLike,
    omega_draws: OmegaDraws | ArrayLike,
    seed: int,
    lo: float = DEFAULT_OMEGA_MIN,
    hi: float = DEFAULT_OMEGA_MAX,
) -> JointSamples:
    """One draw of (alpha, beta, gamma) from N(theta | a(omega), A(omega)) per frequency."""
    if isinstance(omega_draws, OmegaDraws):
        omegas, accepted, proposals = omega_draws.omegas, omega_draws.accepted, omega_draws.proposals
    else:
        omegas = as_vector(omega_draws, "omega_draws")
        accepted = proposals = omegas.shape[0]
    omegas = as_vector(omegas, "omega_draws")
    lo, hi = _check_domain(lo, hi)
    if not np.all(in_support(omegas, lo, hi)):
        raise InvalidDomain(f"частоты вне носителя априорного распределения ({lo:g}, {hi:g})")

    rng = np.random.default_rng(seed)
    z = rng.standard_normal((omegas.shape[0], len(SINUSOID_COLUMNS)))
    rows = np.empty((omegas.shape[0], len(SINUSOID_COLUMNS) + 1))
    for i, omega in enumerate(omegas):
        post = conditional_posterior(data, prior_mean, prior_precision, float(omega)).posterior()
        rows[i, :-1] = affine_draws(post, z[i])[0]
        rows[i, -1] = omega
    logger.info(f"Сэмплер: {rows.shape[0]} совместных выборок (alpha, beta, gamma, omega)")
    return JointSamples(rows=rows, seed=seed, accepted=accepted, proposals=proposals)
