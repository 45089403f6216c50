"""
Конфигурация для pytest тестов.
Обеспечивает правильные пути импорта и общие фикстуры.
"""
import sys
from pathlib import Path

import numpy as np
import pytest

# Добавляем src в путь для импорта модулей
project_root = Path(__file__).parent.parent
src_path = project_root / "src"
if str(src_path) not in sys.path:
    sys.path.insert(0, str(src_path))

from linmarg.data_manager.dataset import load_dataset  # noqa: E402


@pytest.fixture
def rng():
    """Детерминированный генератор для одного теста"""
    return np.random.default_rng(20240607)


@pytest.fixture
def exercise1():
    return load_dataset("fixture:exercise1")


@pytest.fixture
def exercise2():
    return load_dataset("fixture:exercise2")


@pytest.fixture
def exercise1_prior():
    """(mu, Lambda^-1) для квадратичной модели: mu=(1,3,9), Lambda=diag(25,4,64)"""
    return np.array([1.0, 3.0, 9.0]), np.diag(1.0 / np.array([25.0, 4.0, 64.0]))


@pytest.fixture
def exercise2_prior():
    """(mu, Lambda^-1) для синусоиды: mu=0, Lambda=diag(25,25,100)"""
    return np.zeros(3), np.diag(1.0 / np.array([25.0, 25.0, 100.0]))
