"""
Конфигурация pytest для тестов.

Маркеры:
- integration: прогоны, затрагивающие несколько модулей (обучение, CLI)
- slow: длительные эксперименты; запускаются только при SDAN_RUN_SLOW=1
"""

import os
import sys
from pathlib import Path

import numpy as np
import pytest

# Добавляем корневую директорию проекта в путь
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from config import GenConfig, ModelConfig  # noqa: E402
from tensor_core import float64_mode  # noqa: E402
from zoom_synth import procedural_source, synth_pair  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "integration: многомодульные прогоны")
    config.addinivalue_line("markers", "slow: длительные эксперименты (SDAN_RUN_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if os.getenv("SDAN_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="длительный тест, установите SDAN_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    """Генератор с фиксированным seed."""
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    """Хранение тензоров в float64 на время теста."""
    with float64_mode(True):
        yield


@pytest.fixture
def tiny_config():
    """Крошечная конфигурация модели: C=8, один остаточный блок, x2."""
    return ModelConfig(base_channels=8, num_res_blocks=1, scale=2, reduction=4)


@pytest.fixture
def tiny_gen_config():
    """Маленький процедурный набор: LR 16x16, x2, сдвиги до 2 px."""
    return GenConfig(scale=2, crop_lr=16, shift_max=2, count=8, seed=3, procedural=2)


@pytest.fixture
def project_dir():
    return project_root


@pytest.fixture
def tiny_pairs(tiny_gen_config):
    """Четыре пары из одного процедурного исходника с известными сдвигами."""
    source = procedural_source(0, tiny_gen_config.min_source_size + 4, tiny_gen_config.seed)
    shifts = [(0, 0), (1, 0), (0, -1), (-2, 2)]
    return [
        synth_pair(source, shift, tiny_gen_config, (4, 4), f"{i:06d}")
        for i, shift in enumerate(shifts)
    ]
