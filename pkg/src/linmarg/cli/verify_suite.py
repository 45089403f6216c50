"""
Property checks run by `linmarg verify`: random instances with controlled
conditioning plus the two shipped data sets. Every property is checked against
an oracle that does not share code paths with the fast implementation (explicit
inverses, dense B, quadrature, the stacked problem).
"""
import itertools
import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import quad

from linmarg.data_manager.dataset import load_dataset
from linmarg.data_manager.report import to_jsonable
from linmarg.modules.gaussian_core import GaussianMoment, log_pdf, sample
from linmarg.modules.instances import random_blocks, random_instance
from linmarg.modules.models import polynomial_design
from linmarg.modules.refactor import LinearGaussianModel, NoiseSpec, dense_b_tensor, refactor
from linmarg.modules.sampling import conditional_posterior
from linmarg.modules.sequential import concatenate_blocks, sequential_run

logger = logging.getLogger(__name__)

EXERCISE1_PRIOR_MEAN = np.array([1.0, 3.0, 9.0])
EXERCISE1_PRIOR_VARIANCES = np.array([25.0, 4.0, 64.0])
EXERCISE1_DESIGN = np.array([
    [0.36, -0.6, 1.0],
    [4.0, 2.0, 1.0],
    [7.29, 2.7, 1.0],
    [12.96, 3.6, 1.0],
])
EXERCISE2_PRIOR_MEAN = np.zeros(3)
EXERCISE2_PRIOR_VARIANCES = np.array([25.0, 25.0, 100.0])
EXERCISE2_OMEGA = 1.27

QUADRATURE_CASES = 50
THETA_POINTS = 20
CALIBRATION_DRAWS = 100_000


@dataclass
class PropertyResult:
    name: str
    criterion: str
    passed: bool
    checked: int
    detail: str = ""
    elapsed: float = 0.0
    failing_input: dict | None = field(default=None, repr=False)

    def dump(self) -> str:
        return json.dumps(to_jsonable(self.failing_input or {}), ensure_ascii=False)


class _Failed(Exception):
    def __init__(self, detail: str, failing_input: dict):
        super().__init__(detail)
        self.failing_input = failing_input


def _model_dump(model: LinearGaussianModel, y: np.ndarray, **extra) -> dict:
    return {
        "design": model.design,
        "noise_cov": model.noise.dense_covariance(),
        "prior_mean": model.prior_mean,
        "prior_precision": model.prior_precision,
        "y": y,
        **extra,
    }


def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _slogdet(tensor: np.ndarray) -> float:
    sign, value = np.linalg.slogdet(tensor)
    return value if sign > 0 else -math.inf


# --- oracles ---
def dense_posterior_oracle(model: LinearGaussianModel, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(a, A) from explicit inverses."""
    cinv = np.linalg.inv(model.noise.dense_covariance())
    cov = np.linalg.inv(model.prior_precision + model.design.T @ cinv @ model.design)
    return cov @ (model.prior_precision @ model.prior_mean + model.design.T @ cinv @ y), cov


def joint_log_density(model: LinearGaussianModel, y: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    """ln N(y|M theta, C) + ln N(theta|mu, Lambda) for rows of theta, with explicit inverses."""
    thetas = np.atleast_2d(thetas)
    n, k = model.design.shape
    cov = model.noise.dense_covariance()
    cinv = np.linalg.inv(cov)
    r = y[None, :] - thetas @ model.design.T
    log_lik = -0.5 * (n * math.log(2 * math.pi) + _slogdet(cov)) - 0.5 * np.einsum("gi,ij,gj->g", r, cinv, r)
    d = thetas - model.prior_mean
    log_prior = (-0.5 * k * math.log(2 * math.pi) + 0.5 * _slogdet(model.prior_precision)
                 - 0.5 * np.einsum("gi,ij,gj->g", d, model.prior_precision, d))
    return log_lik + log_prior


def quadrature_log_marginal(model: LinearGaussianModel, y: np.ndarray, nodes: int = 160) -> float:
    """ln of the integral over theta of the joint density; adaptive for K=1, Gauss-Legendre grid for K=2."""
    a, cov = dense_posterior_oracle(model, y)
    shift = float(joint_log_density(model, y, a)[0])
    if model.n_params == 1:
        prior_sd = 1.0 / math.sqrt(model.prior_precision[0, 0])
        lo, hi = model.prior_mean[0] - 12 * prior_sd, model.prior_mean[0] + 12 * prior_sd
        peak = float(a[0])
        value, _ = quad(
            lambda t: math.exp(float(joint_log_density(model, y, [[t]])[0]) - shift),
            lo, hi, points=[peak] if lo < peak < hi else None, epsabs=0.0, epsrel=1e-11, limit=400,
        )
        return shift + math.log(value)
    if model.n_params == 2:
        x, w = leggauss(nodes)
        sd = np.sqrt(np.diag(cov))
        axes = [a[i] + 12 * sd[i] * x for i in range(2)]
        weights = np.outer(w, w) * (12 * sd[0]) * (12 * sd[1])
        t0, t1 = np.meshgrid(axes[0], axes[1], indexing="ij")
        grid = np.column_stack([t0.ravel(), t1.ravel()])
        values = np.exp(joint_log_density(model, y, grid) - shift).reshape(nodes, nodes)
        return shift + math.log(float(np.sum(weights * values)))
    raise ValueError("квадратура реализована только для K = 1 и K = 2")


def exercise1_oracle_map() -> np.ndarray:
    data = load_dataset("fixture:exercise1")
    model = LinearGaussianModel.with_prior_variances(
        polynomial_design(data.x, 2), data.noise(), EXERCISE1_PRIOR_MEAN, EXERCISE1_PRIOR_VARIANCES
    )
    return np.round(dense_posterior_oracle(model, data.y)[0], 2)


# --- properties ---
def check_exercise1(rng, cases, target=None) -> int:
    data = load_dataset("fixture:exercise1")
    model = LinearGaussianModel.with_prior_variances(
        polynomial_design(data.x, 2), data.noise(), EXERCISE1_PRIOR_MEAN, EXERCISE1_PRIOR_VARIANCES
    )
    expected = exercise1_oracle_map() if target is None else np.asarray(target, dtype=float)
    a = refactor(model, data.y).a
    if np.any(np.abs(a - expected) > 0.005):
        raise _Failed(f"MAP {np.round(a, 4).tolist()} не совпадает с {expected.tolist()} в пределах 0.005",
                      {"data": "fixture:exercise1", "map": a, "target": expected})
    return 1


def check_design_matrix(rng, cases) -> int:
    data = load_dataset("fixture:exercise1")
    design = polynomial_design(data.x, 2)
    if design.shape != EXERCISE1_DESIGN.shape or not np.allclose(design, EXERCISE1_DESIGN, rtol=1e-15, atol=0.0):
        raise _Failed("матрица плана не совпадает с напечатанной", {"design": design})
    if not np.array_equal(design[:, 0], data.x * data.x) or not np.array_equal(design[:, 1], data.x):
        raise _Failed("столбцы x^2 и x не точные", {"design": design})
    return 1


def check_refactor_identity(rng, cases) -> int:
    for case in range(cases):
        inst = random_instance(rng)
        model, y = inst.model, inst.y
        result = refactor(model, y)
        post = result.posterior()
        thetas = sample(post, THETA_POINTS, int(rng.integers(2**31)))
        lhs = joint_log_density(model, y, thetas)
        rhs = log_pdf(thetas, post) + result.marginal.require()
        gap = float(np.max(np.abs(lhs - rhs)))
        if gap > 1e-9:
            raise _Failed(f"случай {case}: |lhs - rhs| = {gap:.3g}", _model_dump(model, y, thetas=thetas))
    return cases


def check_determinant_product(rng, cases) -> int:
    for case in range(cases):
        inst = random_instance(rng)
        model, y = inst.model, inst.y
        result = refactor(model, y)
        log_det_a = -result.posterior_factor.log_det()
        log_det_b = _slogdet(dense_b_tensor(model))
        log_det_lambda = -model.prior_factor.log_det()
        gap = abs(log_det_a + log_det_b - model.noise.log_det_cov() - log_det_lambda)
        if gap > 1e-9:
            raise _Failed(f"случай {case}: невязка {gap:.3g}", _model_dump(model, y))
    return cases


def check_quadrature(rng, cases) -> int:
    n_cases = min(cases, QUADRATURE_CASES)
    for case in range(n_cases):
        k = 1 + case % 2
        inst = random_instance(rng, k=k, max_n=6, max_log_cond=2.0)
        model, y = inst.model, inst.y
        value = refactor(model, y).marginal.require()
        oracle = quadrature_log_marginal(model, y)
        if abs(value - oracle) > 1e-6 * max(1.0, abs(oracle)):
            raise _Failed(f"случай {case} (K={k}): {value!r} против квадратуры {oracle!r}", _model_dump(model, y))
    return n_cases


def check_fast_paths(rng, cases) -> int:
    for case in range(cases):
        k = int(rng.integers(1, 9))
        inst = random_instance(rng, n=int(rng.integers(k + 1, 65)), k=k)
        model, y = inst.model, inst.y
        result = refactor(model, y, method="woodbury")
        dense_b = dense_b_tensor(model)
        v = rng.standard_normal(model.n_data)
        wood = result.b_precision_apply(v)
        oracle = np.linalg.solve(dense_b, v)
        if _rel(wood, oracle) > 1e-8:
            raise _Failed(f"случай {case}: Woodbury, отн. ошибка {_rel(wood, oracle):.3g}", _model_dump(model, y, v=v))
        lemma, dense = result.log_det_B, _slogdet(dense_b)
        if abs(lemma - dense) > 1e-8 * max(1.0, abs(dense)):
            raise _Failed(f"случай {case}: ln|B| {lemma!r} против {dense!r}", _model_dump(model, y))
    return cases


def check_sequential(rng, cases) -> int:
    for case in range(cases):
        k = int(rng.integers(1, 5))
        blocks = random_blocks(rng, 3, k)
        inst = random_instance(rng, n=1, k=k)
        mu, prior_precision = inst.model.prior_mean, inst.model.prior_precision
        y, design, noise = concatenate_blocks(blocks)
        full = refactor(LinearGaussianModel(design, noise, mu, prior_precision), y)
        dump = {"prior_mean": mu, "prior_precision": prior_precision,
                "blocks": [{"y": b.y, "design": b.design, "noise_cov": b.noise.dense_covariance()} for b in blocks]}
        reference = None
        for order in itertools.permutations(range(3)):
            run = sequential_run(mu, prior_precision, [blocks[i] for i in order])
            if _rel(run.posterior.mean, full.a) > 1e-10 or _rel(run.posterior.cov, full.A) > 1e-10:
                raise _Failed(f"случай {case}, порядок {order}: (a, A) не совпадает с объединённой задачей", dump)
            if abs(run.log_marginal.require() - full.marginal.require()) > 1e-9:
                raise _Failed(f"случай {case}, порядок {order}: суммарный маргинал отличается", dump)
            if reference is None:
                reference = run
            elif _rel(run.posterior.mean, reference.posterior.mean) > 1e-10 or _rel(run.posterior.cov, reference.posterior.cov) > 1e-10:
                raise _Failed(f"случай {case}: результат зависит от порядка блоков", dump)
    return cases


def check_wide_prior(rng, cases) -> int:
    for case in range(cases):
        inst = random_instance(rng, proper=False)
        model, y = inst.model, inst.y
        result = refactor(model, y)
        cinv = np.linalg.inv(model.noise.dense_covariance())
        gls = np.linalg.inv(model.design.T @ cinv @ model.design) @ model.design.T @ cinv @ y
        if _rel(result.a, gls) > 1e-8:
            raise _Failed(f"случай {case}: отн. отклонение от МНК {_rel(result.a, gls):.3g}", _model_dump(model, y))
        if result.marginal.defined:
            raise _Failed(f"случай {case}: маргинал должен быть не определён", _model_dump(model, y))
    return cases


def check_conditional_calibration(rng, cases) -> int:
    data = load_dataset("fixture:exercise2")
    prior_precision = np.diag(1.0 / EXERCISE2_PRIOR_VARIANCES)
    post = conditional_posterior(data, EXERCISE2_PRIOR_MEAN, prior_precision, EXERCISE2_OMEGA).posterior()
    seed = int(rng.integers(2**31))
    draws = sample(post, CALIBRATION_DRAWS, seed)
    n = draws.shape[0]
    var = np.diag(post.cov)
    mean_err = np.abs(draws.mean(axis=0) - post.mean) / np.sqrt(var / n)
    cov_se = np.sqrt((np.outer(var, var) + post.cov**2) / n)
    cov_err = np.abs(np.cov(draws, rowvar=False) - post.cov) / cov_se
    if np.any(mean_err > 4.0) or np.any(cov_err > 4.0):
        raise _Failed(f"отклонение выборки: среднее {mean_err.max():.2f} SE, ковариация {cov_err.max():.2f} SE",
                      {"data": "fixture:exercise2", "omega": EXERCISE2_OMEGA, "seed": seed})
    return 1


PROPERTIES: list[tuple[str, str, Callable]] = [
    ("exercise1_map", "критерий 1", check_exercise1),
    ("design_matrix", "критерий 2", check_design_matrix),
    ("refactor_identity", "критерий 3", check_refactor_identity),
    ("determinant_product", "критерий 4", check_determinant_product),
    ("quadrature_oracle", "критерий 5", check_quadrature),
    ("woodbury_dense", "критерий 6", check_fast_paths),
    ("sequential_equivalence", "критерий 7", check_sequential),
    ("wide_prior_gls", "критерий 8", check_wide_prior),
    ("conditional_calibration", "критерий 10", check_conditional_calibration),
]


def run_verify(seed: int = 0, cases: int = 200, exercise1_target=None) -> list[PropertyResult]:
    results = []
    for index, (name, criterion, check) in enumerate(PROPERTIES):
        # every property gets its own stream so that --cases does not shift the others
        rng = np.random.default_rng([seed, index])
        started = time.perf_counter()
        try:
            if check is check_exercise1:
                checked = check(rng, cases, exercise1_target)
            else:
                checked = check(rng, cases)
            result = PropertyResult(name, criterion, True, checked)
        except _Failed as e:
            result = PropertyResult(name, criterion, False, 0, detail=str(e), failing_input=e.failing_input)
        result.elapsed = time.perf_counter() - started
        level = logging.DEBUG if result.passed else logging.WARNING
        logger.log(level, f"Проверка: {name} {'OK' if result.passed else 'FAIL'} за {result.elapsed:.2f} с")
        results.append(result)
    return results


def format_results(results: list[PropertyResult]) -> str:
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"[{status}] {r.name:<24} {r.criterion:<12} случаев: {r.checked:<4} {r.elapsed:6.2f} с"
                     + (f"  {r.detail}" if r.detail else ""))
    return "\n".join(lines)
