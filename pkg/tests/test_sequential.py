import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from linmarg.errors import DimensionMismatch
from linmarg.modules.instances import random_blocks, random_spd
from linmarg.modules.models import polynomial_design
from linmarg.modules.refactor import LinearGaussianModel, NoiseSpec, dense_b_tensor, refactor
from linmarg.modules.sequential import (
    DataBlock,
    concatenate_blocks,
    sequential_init,
    sequential_run,
    sequential_update,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def rel(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-300)


def random_prior(rng, k):
    return rng.standard_normal(k), np.linalg.inv(random_spd(rng, k, 100.0))


def test_init_unit_prior():
    state = sequential_init([0.0, 0.0], np.eye(2))
    np.testing.assert_array_equal(state.info_vector, [0.0, 0.0])
    np.testing.assert_array_equal(state.mean, [0.0, 0.0])
    assert state.cumulative_log_marginal == 0.0


def test_init_exercise1_prior(exercise1_prior):
    """x_0 = Lambda^-1 mu = (1/25, 3/4, 9/64)"""
    mu, precision = exercise1_prior
    state = sequential_init(mu, precision)
    np.testing.assert_allclose(state.info_vector, [1 / 25, 3 / 4, 9 / 64], rtol=1e-15)


def test_init_improper_prior():
    """Lambda^-1 = 0: x_0 = 0, среднее записано как mu, но не определено"""
    state = sequential_init([5.0, -1.0], np.zeros((2, 2)))
    np.testing.assert_array_equal(state.info_vector, [0.0, 0.0])
    np.testing.assert_array_equal(state.mean, [5.0, -1.0])
    assert not state.mean_defined
    assert state.cumulative_log_marginal is None
    assert state.posterior() is None


def test_init_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        sequential_init([0.0, 0.0, 0.0], np.eye(2))


def test_single_block_equals_refactor(rng):
    """J=1 воспроизводит (a, A, b, B) прямой рефакторизации"""
    mu, precision = random_prior(rng, 3)
    block = random_blocks(rng, 1, 3, max_rows=6)[0]
    model = LinearGaussianModel(block.design, block.noise, mu, precision)
    direct = refactor(model, block.y)
    state, predictive = sequential_update(sequential_init(mu, precision), block)
    np.testing.assert_allclose(state.mean, direct.a, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(state.posterior().cov, direct.A, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(predictive.mean, direct.b, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(predictive.cov, dense_b_tensor(model), rtol=1e-10, atol=1e-10)
    assert state.cumulative_log_marginal == pytest.approx(direct.log_marginal, abs=1e-9)


def test_exercise1_split_into_two_blocks(exercise1, exercise1_prior):
    """Строки 1-2 и 3-4 по отдельности дают тот же MAP, что и вся таблица"""
    mu, precision = exercise1_prior
    design = polynomial_design(exercise1.x, 2)
    variances = exercise1.sigma_y**2
    blocks = [
        DataBlock(exercise1.y[:2], design[:2], NoiseSpec.from_variances(variances[:2])),
        DataBlock(exercise1.y[2:], design[2:], NoiseSpec.from_variances(variances[2:])),
    ]
    result = sequential_run(mu, precision, blocks)
    direct = refactor(LinearGaussianModel(design, exercise1.noise(), mu, precision), exercise1.y)
    np.testing.assert_allclose(result.posterior.mean, direct.a, rtol=1e-10)
    np.testing.assert_allclose(np.round(result.posterior.mean, 2), np.round(direct.a, 2))


def test_empty_block_list_returns_prior():
    precision = np.diag([0.5, 2.0])
    result = sequential_run([1.0, 2.0], precision, [])
    np.testing.assert_allclose(result.posterior.mean, [1.0, 2.0])
    np.testing.assert_allclose(result.posterior.cov, np.linalg.inv(precision))
    assert result.predictives == []
    assert result.log_marginal.defined and result.log_marginal.value == 0.0


@settings(deadline=None, max_examples=25)
@given(seed=seeds)
def test_order_invariance_and_concatenation(seed):
    """Все 6 порядков трёх блоков: одинаковые (a, A), совпадающие с объединённой задачей"""
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 5))
    mu, precision = random_prior(rng, k)
    blocks = random_blocks(rng, 3, k)
    y, design, noise = concatenate_blocks(blocks)
    full = refactor(LinearGaussianModel(design, noise, mu, precision), y)
    runs = [sequential_run(mu, precision, [blocks[i] for i in order]) for order in itertools.permutations(range(3))]
    for run in runs:
        assert rel(run.posterior.mean, full.a) <= 1e-10
        assert rel(run.posterior.cov, full.A) <= 1e-10
        assert run.log_marginal.value == pytest.approx(full.log_marginal, abs=1e-9)
        assert rel(run.posterior.mean, runs[0].posterior.mean) <= 1e-10


def test_block_predictives_depend_on_order(rng):
    mu, precision = random_prior(rng, 2)
    blocks = random_blocks(rng, 3, 2, max_rows=3)
    forward = sequential_run(mu, precision, blocks)
    backward = sequential_run(mu, precision, blocks[::-1])
    assert not np.allclose(forward.predictives[-1].mean, backward.predictives[0].mean)


def test_precision_is_monotone(rng):
    mu, precision = random_prior(rng, 3)
    state = sequential_init(mu, precision)
    for block in random_blocks(rng, 4, 3):
        new_state, _ = sequential_update(state, block)
        assert np.linalg.eigvalsh(new_state.precision - state.precision).min() >= -1e-10
        state = new_state


def test_improper_start_flags_partial_evidence(rng):
    """Несобственный старт: предсказания появляются только после того, как точность стала положительно определённой"""
    k = 2
    first = DataBlock([1.0], [[1.0, 0.5]], NoiseSpec.from_variances([1.0]))
    rest = random_blocks(rng, 2, k)
    result = sequential_run(np.zeros(k), np.zeros((k, k)), [first] + rest)
    assert result.predictives[0] is None
    assert result.partial
    assert not result.log_marginal.defined
    assert result.accumulated is not None
    y, design, noise = concatenate_blocks([first] + rest)
    direct = refactor(LinearGaussianModel(design, noise, np.zeros(k), np.zeros((k, k))), y)
    np.testing.assert_allclose(result.posterior.mean, direct.a, rtol=1e-9)


def test_improper_prior_never_resolved():
    block = DataBlock([1.0], [[1.0, 1.0]], NoiseSpec.from_variances([1.0]))
    result = sequential_run([0.0, 0.0], np.zeros((2, 2)), [block])
    assert result.posterior is None
    assert result.predictives == [None]
    assert not result.log_marginal.defined
    assert result.accumulated is None


def test_block_dimension_checks():
    with pytest.raises(DimensionMismatch):
        DataBlock([1.0, 2.0], [[1.0]], NoiseSpec.from_variances([1.0, 1.0]))
    block = DataBlock([1.0], [[1.0, 2.0, 3.0]], NoiseSpec.from_variances([1.0]))
    with pytest.raises(DimensionMismatch):
        sequential_update(sequential_init([0.0], [[1.0]]), block)
