"""
Модуль оптимизатора Adam.

Состояние (моменты и счетчик шагов) хранится отдельно от модели и
обновляет массивы параметров на месте.
"""

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from config import TrainConfig
from exceptions import ConfigError


@dataclass
class AdamState:
    """Первый и второй моменты по именам параметров и номер шага."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=OrderedDict)
    v: Dict[str, np.ndarray] = field(default_factory=OrderedDict)

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "AdamState":
        if cfg.lr < 0:
            raise ConfigError(f"скорость обучения не может быть отрицательной, получено {cfg.lr}")
        return cls(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)


def adam_update(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState) -> AdamState:
    """
    Один шаг Adam с коррекцией смещения моментов.

    При lr = 0 параметры не изменяются (побитово).

    Args:
        params: Массивы параметров, обновляются на месте
        grads: Градиенты с теми же именами
        state: Состояние оптимизатора

    Returns:
        Обновленное состояние (тот же объект)
    """
    if set(params) != set(grads):
        raise ConfigError("имена параметров и градиентов не совпадают")

    state.step += 1
    bias1 = 1 - state.beta1 ** state.step
    bias2 = 1 - state.beta2 ** state.step
    for name, param in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(param.shape, dtype=np.float64)
            v = np.zeros(param.shape, dtype=np.float64)
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        if state.lr == 0:
            continue
        update = state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        param -= update.astype(param.dtype)
    return state
