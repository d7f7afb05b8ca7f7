"""
Модуль ветви обучения смещений.

Содержит:
- channel attention (squeeze-and-excitation без bias): пул -> fc -> relu -> fc -> sigmoid -> масштаб
- Cross Packing Attention: упаковка space_to_depth -> channel attention -> распаковка
- извлечение признаков опорного изображения с flip-аугментацией
- голову смещений: конкатенация -> внимание -> [упаковка P] -> conv -> relu -> conv C->2 (или 2*k*k)
  -> [повтор блоками P x P]

Каждая операция имеет парную backward-функцию, которая пересчитывает
промежуточные значения прямого прохода и сцепляет градиенты примитивов.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from deform_align import OffsetField
from exceptions import ConfigError, DimensionError
from tensor_core import (
    ConvParams,
    Tensor,
    activation,
    activation_backward,
    concat_channels,
    concat_channels_backward,
    conv2d,
    conv2d_backward,
    depth_to_space,
    flip,
    global_avg_pool,
    global_avg_pool_backward,
    space_to_depth,
    storage_dtype,
)


# Ветви flip-аугментации: тождество и три нетривиальных отражения
FLIP_VARIANTS: Tuple[Tuple[str, ...], ...] = (
    (),
    ("horizontal",),
    ("vertical",),
    ("horizontal", "vertical"),
)


def effective_reduction(channels: int, reduction: int) -> int:
    """
    Фактический коэффициент сжатия r.

    r ограничивается так, чтобы c/r >= 4 (при c < 4 r = 1), и
    уменьшается до ближайшего делителя c.
    """
    r = max(1, min(reduction, channels // 4))
    while channels % r:
        r -= 1
    return r


@dataclass
class AttentionParams:
    """
    Параметры channel attention.

    fc1: (c/r, c), fc2: (c, c/r); bias отсутствует.
    Нелинейности фиксированы: relu в скрытом слое, sigmoid на гейтах.
    """

    fc1: np.ndarray
    fc2: np.ndarray

    def __post_init__(self):
        self.fc1 = np.asarray(self.fc1, dtype=storage_dtype())
        self.fc2 = np.asarray(self.fc2, dtype=storage_dtype())
        hidden, c = self.fc1.shape
        if self.fc2.shape != (c, hidden):
            raise ConfigError(f"fc2 должен иметь форму {(c, hidden)}, получено {self.fc2.shape}")
        if hidden < 1 or c % hidden:
            raise ConfigError(f"число каналов {c} не делится на скрытую размерность {hidden}")

    @property
    def c(self) -> int:
        return self.fc1.shape[1]

    @property
    def reduction(self) -> int:
        return self.fc1.shape[1] // self.fc1.shape[0]

    @classmethod
    def create(cls, channels: int, reduction: int, rng: np.random.Generator) -> "AttentionParams":
        """Инициализация U(-1/sqrt(fan_in), 1/sqrt(fan_in)) для обоих слоев."""
        hidden = channels // effective_reduction(channels, reduction)
        fc1 = rng.uniform(-1 / np.sqrt(channels), 1 / np.sqrt(channels), size=(hidden, channels))
        fc2 = rng.uniform(-1 / np.sqrt(hidden), 1 / np.sqrt(hidden), size=(channels, hidden))
        return cls(fc1, fc2)


@dataclass
class CpaParams:
    """Параметры Cross Packing Attention: размер упаковки K и внутреннее внимание."""

    K: int
    inner: AttentionParams

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError(f"размер упаковки K должен быть положительным, получено {self.K}")
        if self.inner.c % (self.K * self.K):
            raise ConfigError(
                f"внутреннее внимание на {self.inner.c} каналов не соответствует упаковке K={self.K}"
            )

    @classmethod
    def create(cls, channels: int, K: int, reduction: int, rng: np.random.Generator) -> "CpaParams":
        return cls(K, AttentionParams.create(channels * K * K, reduction, rng))


AttentionLike = Optional[Union[AttentionParams, CpaParams]]


def _gates(F: Tensor, p: AttentionParams):
    if F.c != p.c:
        raise ConfigError(f"вход внимания имеет {F.c} каналов, параметры рассчитаны на {p.c}")
    pooled = global_avg_pool(F)
    z = pooled.data[:, :, 0, 0]
    a = Tensor((z @ p.fc1.T)[:, :, None, None])
    b = activation(a, "relu")
    s = Tensor((b.data[:, :, 0, 0] @ p.fc2.T)[:, :, None, None])
    g = activation(s, "sigmoid")
    return z, a, b, s, g


def channel_attention(F: Tensor, p: AttentionParams) -> Tensor:
    """
    Channel attention: F, масштабированный по каналам гейтами
    g = sigmoid(fc2(relu(fc1(global_avg_pool(F))))).
    """
    *_, g = _gates(F, p)
    return Tensor(F.data * g.data)


def channel_attention_backward(F: Tensor, p: AttentionParams,
                               grad_out: Tensor) -> Tuple[Tensor, Dict[str, np.ndarray]]:
    """
    Градиенты channel attention по входу и весам fc1, fc2.

    Градиент по входу складывается из прямой ветви (масштаб гейтами)
    и ветви через пул и гейты.
    """
    if grad_out.shape != F.shape:
        raise DimensionError(f"grad_out {grad_out.shape} не совпадает со входом {F.shape}")
    z, a, b, s, g = _gates(F, p)
    G = grad_out.data

    dg = (G * F.data).sum(axis=(2, 3), keepdims=True)
    ds = activation_backward(s, "sigmoid", Tensor(dg)).data[:, :, 0, 0]
    grad_fc2 = ds.T @ b.data[:, :, 0, 0]
    db = Tensor((ds @ p.fc2)[:, :, None, None])
    da = activation_backward(a, "relu", db).data[:, :, 0, 0]
    grad_fc1 = da.T @ z
    dz = Tensor((da @ p.fc1)[:, :, None, None])

    grad_input = G * g.data + global_avg_pool_backward(F.shape, dz).data
    return Tensor(grad_input), {"fc1": grad_fc1, "fc2": grad_fc2}


def _check_packing(F: Tensor, p: CpaParams) -> None:
    if F.h % p.K or F.w % p.K:
        raise ConfigError(f"пространственный размер {F.h}x{F.w} не делится на K={p.K}")
    if p.inner.c != F.c * p.K * p.K:
        raise ConfigError(
            f"внутреннее внимание рассчитано на {p.inner.c} каналов, "
            f"упаковка дает {F.c * p.K * p.K}"
        )


def cross_packing_attention(F: Tensor, p: CpaParams) -> Tensor:
    """
    Cross Packing Attention: depth_to_space(channel_attention(space_to_depth(F, K)), K).

    Упаковка переносит пространственный контекст K x K в каналы, поэтому
    дешевое канальное внимание видит пространственные связи. Форма сохраняется.
    """
    _check_packing(F, p)
    packed = space_to_depth(F, p.K)
    return depth_to_space(channel_attention(packed, p.inner), p.K)


def cross_packing_attention_backward(F: Tensor, p: CpaParams,
                                     grad_out: Tensor) -> Tuple[Tensor, Dict[str, np.ndarray]]:
    _check_packing(F, p)
    packed = space_to_depth(F, p.K)
    grad_packed, grads = channel_attention_backward(packed, p.inner, space_to_depth(grad_out, p.K))
    return depth_to_space(grad_packed, p.K), grads


def apply_attention(F: Tensor, attention: AttentionLike) -> Tensor:
    """Применение внимания выбранного вида (None - тождество)."""
    if attention is None:
        return F
    if isinstance(attention, CpaParams):
        return cross_packing_attention(F, attention)
    return channel_attention(F, attention)


def apply_attention_backward(F: Tensor, attention: AttentionLike,
                             grad_out: Tensor) -> Tuple[Tensor, Dict[str, np.ndarray]]:
    if attention is None:
        return grad_out, {}
    if isinstance(attention, CpaParams):
        return cross_packing_attention_backward(F, attention, grad_out)
    return channel_attention_backward(F, attention, grad_out)


def flip_augmented_reference(Yref: Tensor, feat: ConvParams) -> Tensor:
    """
    Признаки опорного изображения с flip-аугментацией.

    Для каждого варианта (тождество, h, v, hv): отражение, relu(conv2d)
    с теми же весами, что и для X, обратное отражение. Результат -
    поэлементное среднее четырех ветвей.
    """
    total = None
    for axes in FLIP_VARIANTS:
        branch = flip(activation(conv2d(flip(Yref, axes), feat), "relu"), axes)
        total = branch.data if total is None else total + branch.data
    return Tensor(total / len(FLIP_VARIANTS))


def flip_augmented_reference_backward(Yref: Tensor, feat: ConvParams,
                                      grad_out: Tensor) -> Tuple[Tensor, Tensor, np.ndarray]:
    """
    Returns:
        Кортеж (grad_Yref, grad_weight, grad_bias), градиенты общих весов
        просуммированы по четырем ветвям
    """
    scaled = Tensor(grad_out.data / len(FLIP_VARIANTS))
    grad_y = np.zeros_like(Yref.data)
    grad_w = np.zeros_like(feat.weight.data)
    grad_b = np.zeros_like(feat.bias)
    for axes in FLIP_VARIANTS:
        flipped = flip(Yref, axes)
        pre = conv2d(flipped, feat)
        grad_pre = activation_backward(pre, "relu", flip(scaled, axes))
        gi, gw, gb = conv2d_backward(flipped, feat, grad_pre)
        grad_y += flip(gi, axes).data
        grad_w += gw.data
        grad_b += gb
    return Tensor(grad_y), Tensor(grad_w), grad_b


def _check_head(F_x: Tensor, F_yref: Tensor, head: List[ConvParams], packing: int) -> None:
    if F_x.shape != F_yref.shape:
        raise DimensionError(f"признаки X {F_x.shape} и опоры {F_yref.shape} различаются по форме")
    if len(head) != 2:
        raise ConfigError(f"голова смещений состоит из 2 сверток, получено {len(head)}")
    if packing < 1:
        raise ConfigError(f"упаковка головы смещений должна быть положительной, получено {packing}")
    if F_x.h % packing or F_x.w % packing:
        raise DimensionError(f"пространственный размер {F_x.h}x{F_x.w} не делится на упаковку {packing}")


def _offset_mode(channels: int) -> str:
    return "squared" if channels == 2 else "per_point"


def repeat_blocks(theta: Tensor, K: int) -> Tensor:
    """Повторение каждого пикселя блоком K x K: (n, c, h, w) -> (n, c, K*h, K*w)."""
    return Tensor(np.repeat(np.repeat(theta.data, K, axis=2), K, axis=3))


def repeat_blocks_backward(grad_out: Tensor, K: int) -> Tensor:
    """Сумма градиента по блокам K x K."""
    n, c, h, w = grad_out.shape
    return Tensor(grad_out.data.reshape(n, c, h // K, K, w // K, K).sum(axis=(3, 5)))


def offset_head(F_x: Tensor, F_yref: Tensor, attention: AttentionLike,
                head: List[ConvParams], packing: int = 1) -> OffsetField:
    """
    Голова смещений: Θ = conv(relu(conv(attention(concat(F_x, F_yref))))).

    При packing = P > 1 свертки головы работают на space_to_depth(·, P):
    охват по пространству растет в P раз, смещения считаются на сетке
    h/P x w/P и повторяются блоками P x P.

    Финальный слой инициализируется нулями (веса и bias), поэтому
    свежая модель выдает Θ ≡ 0.

    Args:
        F_x, F_yref: Признаки формы (n, C, h, w)
        attention: None, AttentionParams (на 2C каналов) или CpaParams
        head: Две свертки [2C*P*P -> C, C -> 2 или 2*k*k]
        packing: Упаковка P входа головы (h и w делятся на P)
    """
    _check_head(F_x, F_yref, head, packing)
    fused = apply_attention(concat_channels(F_x, F_yref), attention)
    hidden = activation(conv2d(space_to_depth(fused, packing), head[0]), "relu")
    theta = conv2d(hidden, head[1])
    if packing > 1:
        theta = repeat_blocks(theta, packing)
    return OffsetField(theta, _offset_mode(theta.c))


def offset_head_backward(F_x: Tensor, F_yref: Tensor, attention: AttentionLike,
                         head: List[ConvParams], grad_offsets: Tensor, packing: int = 1):
    """
    Градиенты головы смещений.

    Returns:
        Кортеж (grad_F_x, grad_F_yref, attention_grads, head_grads), где
        head_grads - список пар (grad_weight, grad_bias) для каждой свертки
    """
    _check_head(F_x, F_yref, head, packing)
    cat = concat_channels(F_x, F_yref)
    packed = space_to_depth(apply_attention(cat, attention), packing)
    pre = conv2d(packed, head[0])
    hidden = activation(pre, "relu")

    if packing > 1:
        grad_offsets = repeat_blocks_backward(grad_offsets, packing)
    grad_hidden, gw2, gb2 = conv2d_backward(hidden, head[1], grad_offsets)
    grad_pre = activation_backward(pre, "relu", grad_hidden)
    grad_packed, gw1, gb1 = conv2d_backward(packed, head[0], grad_pre)
    grad_cat, attention_grads = apply_attention_backward(cat, attention, depth_to_space(grad_packed, packing))
    grad_x, grad_y = concat_channels_backward(grad_cat, F_x.c)
    return grad_x, grad_y, attention_grads, [(gw1, gb1), (gw2, gb2)]
