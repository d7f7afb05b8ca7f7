"""
Модуль тензорного ядра.

Класс Tensor - плотный 4-мерный массив (batch, channel, height, width)
с необязательным буфером градиента. Это универсальный тип значений,
через который общаются все остальные модули.

Модуль предоставляет дифференцируемые примитивы и их сопряженные
(backward) операции:
- conv2d / conv2d_backward (свертка с нулевым дополнением, im2col)
- activation / activation_backward (relu, sigmoid)
- space_to_depth / depth_to_space (упаковка и pixel shuffle)
- global_avg_pool, concat_channels, flip

Общего графа автодифференцирования нет: каждая составная операция
явно сцепляет backward-функции примитивов.

Особенности:
- Хранение во float32; режим float64 (float64_mode) существует только
  для наборов проверки градиентов
- Раскладка каналов упаковки фиксирована: c*K*K + ky*K + kx
- Производная relu в нуле равна 0
"""

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from config import config
from exceptions import ConfigError, DimensionError, NonFiniteValueError


FLIP_AXES = {"horizontal": 3, "vertical": 2}
ACTIVATIONS = ("relu", "sigmoid")


def storage_dtype() -> type:
    """Текущий тип хранения тензоров (float32 или float64)."""
    return np.float64 if config.tensor.float64 else np.float32


def set_float64(enabled: bool) -> None:
    """Глобально включить или выключить 64-битное хранение."""
    config.tensor.float64 = bool(enabled)


@contextmanager
def float64_mode(enabled: bool = True):
    """
    Контекстный менеджер 64-битного режима.

    Все тензоры, созданные внутри блока, хранятся во float64.
    Используется наборами проверки градиентов.
    """
    previous = config.tensor.float64
    config.tensor.float64 = bool(enabled)
    try:
        yield
    finally:
        config.tensor.float64 = previous


class Tensor:
    """
    Плотный 4-мерный тензор (n, c, h, w) в построчной раскладке.

    Данные приводятся к текущему типу хранения. В проверяемом режиме
    (config.tensor.check_finite) NaN и Inf отвергаются при создании.
    Тензоры неизменяемы после создания, кроме явных операций обновления
    параметров (оптимизатор меняет data на месте).
    """

    __slots__ = ("data", "grad")

    def __init__(self, data, grad=None, check: Optional[bool] = None):
        """
        Args:
            data: Массив или вложенный список формы (n, c, h, w)
            grad: Необязательный буфер градиента той же формы
            check: Переопределяет config.tensor.check_finite для этого тензора

        Raises:
            DimensionError: Если массив не 4-мерный или grad другой формы
            NonFiniteValueError: Если в проверяемом режиме есть NaN/Inf
        """
        arr = np.asarray(data, dtype=storage_dtype())
        if arr.ndim != 4:
            raise DimensionError(f"ожидался 4-мерный тензор, получено ndim={arr.ndim}")

        do_check = config.tensor.check_finite if check is None else check
        if do_check and arr.size and not np.isfinite(arr).all():
            raise NonFiniteValueError(f"форма {arr.shape}")

        self.data = arr
        self.grad = None
        if grad is not None:
            grad_arr = np.asarray(grad, dtype=arr.dtype)
            if grad_arr.shape != arr.shape:
                raise DimensionError(
                    f"форма градиента {grad_arr.shape} не совпадает с формой данных {arr.shape}"
                )
            self.grad = grad_arr

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "Tensor":
        return cls(np.zeros(tuple(shape), dtype=storage_dtype()))

    @classmethod
    def full(cls, shape: Sequence[int], value: float) -> "Tensor":
        return cls(np.full(tuple(shape), value, dtype=storage_dtype()))

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        return self.data.shape

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def c(self) -> int:
        return self.data.shape[1]

    @property
    def h(self) -> int:
        return self.data.shape[2]

    @property
    def w(self) -> int:
        return self.data.shape[3]

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), None if self.grad is None else self.grad.copy())

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


@dataclass
class ConvParams:
    """
    Параметры сверточного слоя.

    weight: Tensor формы (c_out, c_in, k, k), k нечетное
    bias: вектор длины c_out
    stride: положительный шаг
    pad: нулевое дополнение с каждой стороны
    """

    weight: Tensor
    bias: np.ndarray
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if not isinstance(self.weight, Tensor):
            self.weight = Tensor(self.weight)
        o, _, kh, kw = self.weight.shape
        if kh != kw:
            raise ConfigError(f"ядро должно быть квадратным, получено {kh}x{kw}")
        if kh % 2 == 0:
            raise ConfigError(f"размер ядра должен быть нечетным, получено {kh}")
        if self.stride < 1:
            raise ConfigError(f"шаг должен быть положительным, получено {self.stride}")
        if self.pad < 0:
            raise ConfigError(f"дополнение не может быть отрицательным, получено {self.pad}")
        self.bias = np.asarray(self.bias, dtype=self.weight.data.dtype).reshape(-1)
        if self.bias.shape[0] != o:
            raise DimensionError(f"длина bias {self.bias.shape[0]} не равна c_out={o}")

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    @property
    def k(self) -> int:
        return self.weight.shape[2]

    @classmethod
    def create(cls, c_in: int, c_out: int, k: int, rng: np.random.Generator,
               stride: int = 1, pad: Optional[int] = None, zero: bool = False) -> "ConvParams":
        """
        Создание слоя с равномерной инициализацией, масштабированной по fan-in.

        Веса и bias берутся из U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
        При zero=True веса и bias нулевые (финальный слой головы смещений).
        По умолчанию pad = k // 2 (сохранение пространственного размера).
        """
        if pad is None:
            pad = k // 2
        shape = (c_out, c_in, k, k)
        if zero:
            weight = np.zeros(shape)
            bias = np.zeros(c_out)
        else:
            bound = 1.0 / np.sqrt(c_in * k * k)
            weight = rng.uniform(-bound, bound, size=shape)
            bias = rng.uniform(-bound, bound, size=c_out)
        return cls(Tensor(weight), bias, stride=stride, pad=pad)

    def arrays(self) -> Dict[str, np.ndarray]:
        """Именованные массивы параметров (ссылки, не копии)."""
        return {"weight": self.weight.data, "bias": self.bias}


def _output_size(size: int, k: int, stride: int, pad: int, what: str) -> int:
    span = size + 2 * pad - k
    if span < 0 or span % stride != 0:
        raise DimensionError(
            f"{what}: ({size} + 2*{pad} - {k}) не делится нацело на шаг {stride}"
        )
    return span // stride + 1


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _im2col(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Окна (n, h_out, w_out, c*k*k) из уже дополненного входа."""
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = windows.shape[:4]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho, wo, c * k * k)


def _check_conv(input: Tensor, params: ConvParams) -> Tuple[int, int]:
    if input.c != params.c_in:
        raise DimensionError(f"вход имеет {input.c} каналов, слой ожидает {params.c_in}")
    ho = _output_size(input.h, params.k, params.stride, params.pad, "высота")
    wo = _output_size(input.w, params.k, params.stride, params.pad, "ширина")
    return ho, wo


def conv2d(input: Tensor, params: ConvParams) -> Tensor:
    """
    Двумерная свертка (кросс-корреляция) с нулевым дополнением.

    Значение в каждой выходной точке - скалярное произведение ядра
    с окном дополненного входа плюс bias.

    Args:
        input: Тензор (n, c_in, h, w)
        params: Параметры слоя

    Returns:
        Тензор (n, c_out, h_out, w_out)

    Raises:
        DimensionError: При несовпадении каналов или неделимости размеров
    """
    _check_conv(input, params)
    cols = _im2col(_pad(input.data, params.pad), params.k, params.stride)
    wmat = params.weight.data.reshape(params.c_out, -1)
    out = cols @ wmat.T + params.bias
    return Tensor(np.ascontiguousarray(out.transpose(0, 3, 1, 2)))


def conv2d_backward(input: Tensor, params: ConvParams,
                    grad_out: Tensor) -> Tuple[Tensor, Tensor, np.ndarray]:
    """
    Аналитические градиенты скаляра sum(grad_out * conv2d(input)).

    Returns:
        Кортеж (grad_input, grad_weight, grad_bias)
    """
    ho, wo = _check_conv(input, params)
    expected = (input.n, params.c_out, ho, wo)
    if grad_out.shape != expected:
        raise DimensionError(f"grad_out имеет форму {grad_out.shape}, ожидалось {expected}")

    k, stride, pad = params.k, params.stride, params.pad
    xp = _pad(input.data, pad)
    cols = _im2col(xp, k, stride)
    g = grad_out.data.transpose(0, 2, 3, 1)
    wmat = params.weight.data.reshape(params.c_out, -1)

    grad_weight = (g.reshape(-1, params.c_out).T @ cols.reshape(-1, cols.shape[-1]))
    grad_bias = grad_out.data.sum(axis=(0, 2, 3))

    # col2im: окна накладываются, поэтому вклад каждого отвода ядра суммируется
    dcols = (g @ wmat).reshape(input.n, ho, wo, params.c_in, k, k)
    dxp = np.zeros_like(xp)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                dcols[..., i, j].transpose(0, 3, 1, 2)
    if pad:
        dxp = dxp[:, :, pad:-pad, pad:-pad]

    return (
        Tensor(np.ascontiguousarray(dxp)),
        Tensor(grad_weight.reshape(params.weight.shape)),
        grad_bias,
    )


def activation(input: Tensor, kind: str) -> Tensor:
    """Поэлементная активация: relu = max(0, x), sigmoid = 1/(1+e^-x)."""
    if kind == "relu":
        return Tensor(np.maximum(input.data, 0))
    if kind == "sigmoid":
        return Tensor(expit(input.data))
    raise ConfigError(f"неизвестная активация {kind!r}, ожидается одна из {ACTIVATIONS}")


def activation_backward(input: Tensor, kind: str, grad_out: Tensor) -> Tensor:
    """Градиент активации по входу; производная relu в нуле равна 0."""
    if grad_out.shape != input.shape:
        raise DimensionError(f"grad_out {grad_out.shape} не совпадает со входом {input.shape}")
    if kind == "relu":
        return Tensor(grad_out.data * (input.data > 0))
    if kind == "sigmoid":
        s = expit(input.data)
        return Tensor(grad_out.data * s * (1 - s))
    raise ConfigError(f"неизвестная активация {kind!r}, ожидается одна из {ACTIVATIONS}")


def space_to_depth(input: Tensor, K: int) -> Tensor:
    """
    Упаковка: перенос блоков K x K пространства в каналы.

    output[n][c*K*K + ky*K + kx][y][x] = input[n][c][y*K + ky][x*K + kx]

    Raises:
        DimensionError: Если h или w не делится на K
    """
    if K < 1:
        raise ConfigError(f"K должно быть положительным, получено {K}")
    n, c, h, w = input.shape
    if h % K or w % K:
        raise DimensionError(f"пространственный размер {h}x{w} не делится на K={K}")
    x = input.data.reshape(n, c, h // K, K, w // K, K)
    return Tensor(np.ascontiguousarray(
        x.transpose(0, 1, 3, 5, 2, 4).reshape(n, c * K * K, h // K, w // K)
    ))


def depth_to_space(input: Tensor, K: int) -> Tensor:
    """
    Распаковка (pixel shuffle): точная обратная операция к space_to_depth.

    Raises:
        DimensionError: Если число каналов не делится на K*K
    """
    if K < 1:
        raise ConfigError(f"K должно быть положительным, получено {K}")
    n, ck, h, w = input.shape
    if ck % (K * K):
        raise DimensionError(f"число каналов {ck} не делится на K*K={K * K}")
    c = ck // (K * K)
    x = input.data.reshape(n, c, K, K, h, w)
    return Tensor(np.ascontiguousarray(
        x.transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * K, w * K)
    ))


def global_avg_pool(input: Tensor) -> Tensor:
    """Среднее по пространству: (n, c, h, w) -> (n, c, 1, 1)."""
    if input.h < 1 or input.w < 1:
        raise DimensionError(f"пустой пространственный размер {input.h}x{input.w}")
    return Tensor(input.data.mean(axis=(2, 3), keepdims=True))


def global_avg_pool_backward(input_shape: Sequence[int], grad_out: Tensor) -> Tensor:
    n, c, h, w = input_shape
    grad = np.broadcast_to(grad_out.data / (h * w), (n, c, h, w))
    return Tensor(np.ascontiguousarray(grad))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Конкатенация по каналам: сначала каналы a, затем b."""
    if (a.n, a.h, a.w) != (b.n, b.h, b.w):
        raise DimensionError(f"несовпадение n/h/w при конкатенации: {a.shape} и {b.shape}")
    return Tensor(np.concatenate([a.data, b.data], axis=1))


def concat_channels_backward(grad_out: Tensor, split: int) -> Tuple[Tensor, Tensor]:
    """Разбиение градиента обратно на части [0, split) и [split, c)."""
    if not 0 <= split <= grad_out.c:
        raise DimensionError(f"точка разбиения {split} вне [0, {grad_out.c}]")
    return (
        Tensor(np.ascontiguousarray(grad_out.data[:, :split])),
        Tensor(np.ascontiguousarray(grad_out.data[:, split:])),
    )


def _flip_axes(axes: Iterable[str]) -> Tuple[int, ...]:
    result = []
    for axis in axes:
        if axis not in FLIP_AXES:
            raise ConfigError(f"неизвестная ось отражения {axis!r}, ожидается horizontal или vertical")
        result.append(FLIP_AXES[axis])
    return tuple(sorted(set(result)))


def flip(input: Tensor, axes: Iterable[str]) -> Tensor:
    """
    Пространственное отражение по заданным осям.

    horizontal отражает ширину, vertical - высоту. Отражение - инволюция,
    поэтому оно же служит своей backward-операцией.
    """
    dims = _flip_axes(axes)
    if not dims:
        return Tensor(input.data.copy())
    return Tensor(np.ascontiguousarray(np.flip(input.data, axis=dims)))
