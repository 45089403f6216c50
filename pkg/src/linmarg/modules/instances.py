"""Seeded random problem instances with controlled conditioning, for the verify suite and the tests."""
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from linmarg.modules.refactor import LinearGaussianModel, NoiseSpec
from linmarg.modules.sequential import DataBlock

NOISE_KINDS = ("covariance", "precision", "diagonal")


def random_rotation(rng: np.random.Generator, d: int) -> NDArray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    # sign fix makes q Haar-distributed
    return q * np.sign(np.diag(r))


def random_spd(rng: np.random.Generator, d: int, cond: float = 1e3, scale: float = 1.0) -> NDArray:
    """Symmetric positive-definite d x d tensor with condition number `cond`."""
    q = random_rotation(rng, d)
    eig = scale * np.logspace(0.0, np.log10(cond), d) if d > 1 else np.array([scale])
    spd = (q * eig) @ q.T
    return 0.5 * (spd + spd.T)


def random_noise(rng: np.random.Generator, n: int, kind: str, cond: float = 1e2) -> NoiseSpec:
    if kind == "diagonal":
        return NoiseSpec.from_variances(rng.uniform(0.2, 2.0, n) ** 2)
    cov = random_spd(rng, n, cond, scale=rng.uniform(0.1, 1.0))
    if kind == "covariance":
        return NoiseSpec.from_covariance(cov)
    return NoiseSpec.from_precision(np.linalg.inv(cov))


@dataclass(frozen=True, eq=False)
class RandomInstance:
    model: LinearGaussianModel
    y: NDArray
    theta_true: NDArray


def random_instance(
    rng: np.random.Generator,
    n: int | None = None,
    k: int | None = None,
    max_n: int = 8,
    max_k: int = 4,
    noise_kind: str | None = None,
    proper: bool = True,
    max_log_cond: float = 3.0,
) -> RandomInstance:
    """
    Random (M, C, mu, Lambda^-1, y). An improper instance has Lambda^-1 = 0 and
    N >= K so that M has full column rank with probability one.
    """
    k = k or int(rng.integers(1, max_k + 1))
    if n is None:
        n = int(rng.integers(k if not proper else 1, max(max_n, k) + 1))
    kind = noise_kind or NOISE_KINDS[int(rng.integers(len(NOISE_KINDS)))]
    design = rng.standard_normal((n, k))
    noise = random_noise(rng, n, kind, cond=10.0 ** rng.uniform(0.0, max_log_cond))
    mu = rng.standard_normal(k)
    if proper:
        prior_precision = np.linalg.inv(random_spd(rng, k, 10.0 ** rng.uniform(0.0, max_log_cond), scale=rng.uniform(0.5, 4.0)))
        prior_precision = 0.5 * (prior_precision + prior_precision.T)
        theta = mu + np.linalg.cholesky(np.linalg.inv(prior_precision)) @ rng.standard_normal(k)
    else:
        prior_precision = np.zeros((k, k))
        theta = rng.standard_normal(k) * 3.0
    y = design @ theta + np.linalg.cholesky(noise.dense_covariance()) @ rng.standard_normal(n)
    model = LinearGaussianModel(design, noise, mu, prior_precision)
    return RandomInstance(model=model, y=y, theta_true=theta)


def random_blocks(rng: np.random.Generator, j: int, k: int, max_rows: int = 4) -> list[DataBlock]:
    blocks = []
    for _ in range(j):
        rows = int(rng.integers(1, max_rows + 1))
        kind = NOISE_KINDS[int(rng.integers(len(NOISE_KINDS)))]
        design = rng.standard_normal((rows, k))
        noise = random_noise(rng, rows, kind)
        y = design @ rng.standard_normal(k) + rng.standard_normal(rows)
        blocks.append(DataBlock(y=y, design=design, noise=noise))
    return blocks
