"""
Модуль деформируемой свертки.

Реализует выравнивание признаков деформируемой сверткой в двух режимах:
- squared: одно смещение (dy, dx) на все окно k x k в каждой точке, поле 2 x H x W
- per_point: отдельное смещение для каждого отвода ядра, поле 2*k*k x H x W

Значения в дробных координатах берутся билинейной интерполяцией;
соседи вне изображения дают 0. Из смещений выводится маска
валидности: точка валидна, если смещенный центр окна остается
внутри изображения.

Раскладка каналов смещений: squared - [dy, dx]; per_point - пары
(dy_t, dx_t) для отвода t = i*k + j (построчно по ядру).
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from config import OFFSET_MODES
from exceptions import ConfigError, DimensionError
from tensor_core import ConvParams, Tensor, storage_dtype


# Маска валидности хранится как обычный тензор (n, 1, h, w) со значениями {0, 1}
ValidityMask = Tensor


@dataclass
class OffsetField:
    """
    Поле смещений Θ в пикселях разрешения признаков.

    data: Tensor (n, 2, h, w) для squared или (n, 2*k*k, h, w) для per_point
    mode: "squared" или "per_point"
    """

    data: Tensor
    mode: str = "squared"

    def __post_init__(self):
        if self.mode not in OFFSET_MODES:
            raise ConfigError(f"неизвестный режим смещений {self.mode!r}, ожидается один из {OFFSET_MODES}")
        if self.mode == "squared" and self.data.c != 2:
            raise ConfigError(f"режим squared требует 2 канала смещений, получено {self.data.c}")
        if self.mode == "per_point" and (self.data.c < 2 or self.data.c % 2):
            raise ConfigError(f"режим per_point требует 2*k*k каналов, получено {self.data.c}")

    @classmethod
    def zeros(cls, n: int, h: int, w: int, mode: str = "squared", k: int = 3) -> "OffsetField":
        channels = 2 if mode == "squared" else 2 * k * k
        return cls(Tensor.zeros((n, channels, h, w)), mode)

    def tap_offsets(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        """
        Смещения по отводам ядра.

        Returns:
            Кортеж (dy, dx), каждый формы (k*k, n, h, w)
        """
        d = self.data.data
        if self.mode == "squared":
            dy = np.broadcast_to(d[:, 0], (k * k,) + d[:, 0].shape)
            dx = np.broadcast_to(d[:, 1], (k * k,) + d[:, 1].shape)
            return dy, dx
        if self.data.c != 2 * k * k:
            raise ConfigError(
                f"per_point: {self.data.c} каналов смещений не соответствует ядру {k}x{k} "
                f"(нужно {2 * k * k})"
            )
        return d[:, 0::2].transpose(1, 0, 2, 3), d[:, 1::2].transpose(1, 0, 2, 3)

    def center_offsets(self) -> Tuple[np.ndarray, np.ndarray]:
        """Смещение центра окна (для per_point - среднее по отводам), формы (n, h, w)."""
        d = self.data.data
        if self.mode == "squared":
            return d[:, 0], d[:, 1]
        return d[:, 0::2].mean(axis=1), d[:, 1::2].mean(axis=1)


def bilinear_sample(feature: Tensor, y: float, x: float, channel: int, batch: int) -> float:
    """
    Билинейная интерполяция одного значения признака.

    Соседи вне [0, h) x [0, w) дают вклад 0, поэтому функция определена
    для любых координат.
    """
    h, w = feature.h, feature.w
    y0 = int(np.floor(y))
    x0 = int(np.floor(x))
    ly = y - y0
    lx = x - x0
    value = 0.0
    for yy, wy in ((y0, 1 - ly), (y0 + 1, ly)):
        for xx, wx in ((x0, 1 - lx), (x0 + 1, lx)):
            if 0 <= yy < h and 0 <= xx < w:
                value += wy * wx * float(feature.data[batch, channel, yy, xx])
    return value


class _Corners:
    """
    Четыре соседа билинейной интерполяции для массива координат.

    Хранит обрезанные индексы, веса с учетом валидности и производные
    весов по y и x (правосторонние в целых точках за счет floor).
    """

    def __init__(self, ys: np.ndarray, xs: np.ndarray, h: int, w: int):
        y0 = np.floor(ys)
        x0 = np.floor(xs)
        ly = ys - y0
        lx = xs - x0
        y0 = y0.astype(np.int64)
        x0 = x0.astype(np.int64)

        self.index: List[Tuple[np.ndarray, np.ndarray]] = []
        self.weight: List[np.ndarray] = []
        self.dweight_y: List[np.ndarray] = []
        self.dweight_x: List[np.ndarray] = []
        for oy, wy, dwy in ((0, 1 - ly, -1.0), (1, ly, 1.0)):
            for ox, wx, dwx in ((0, 1 - lx, -1.0), (1, lx, 1.0)):
                yc = y0 + oy
                xc = x0 + ox
                valid = (yc >= 0) & (yc < h) & (xc >= 0) & (xc < w)
                self.index.append((np.clip(yc, 0, h - 1), np.clip(xc, 0, w - 1)))
                self.weight.append(wy * wx * valid)
                self.dweight_y.append(dwy * wx * valid)
                self.dweight_x.append(wy * dwx * valid)


def bilinear_gather(data: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """
    Векторная билинейная выборка.

    Args:
        data: Массив (n, c, h, w)
        ys, xs: Координаты формы (n, H, W) или (H, W)

    Returns:
        Массив (n, c, H, W); значения вне изображения равны 0
    """
    n, c, h, w = data.shape
    ys = np.broadcast_to(ys, (n,) + np.shape(ys)[-2:])
    xs = np.broadcast_to(xs, ys.shape)
    corners = _Corners(ys, xs, h, w)
    samples, _ = _gather(data.transpose(0, 2, 3, 1), corners)
    return np.ascontiguousarray(samples.transpose(0, 3, 1, 2))


def _batch_index(shape: Tuple[int, ...]) -> np.ndarray:
    return np.arange(shape[0]).reshape((-1,) + (1,) * (len(shape) - 1))


def _gather(xt: np.ndarray, corners: _Corners) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Выборка из xt (n, h, w, c); возвращает (n, H, W, c) и значения соседей."""
    bi = _batch_index(corners.weight[0].shape)
    values = [xt[bi, yc, xc] for yc, xc in corners.index]
    out = sum(v * wgt[..., None] for v, wgt in zip(values, corners.weight))
    return out, values


def _check(feature: Tensor, offsets: OffsetField, params: ConvParams) -> int:
    k = params.k
    if feature.c != params.c_in:
        raise DimensionError(f"признак имеет {feature.c} каналов, слой ожидает {params.c_in}")
    if (offsets.data.n, offsets.data.h, offsets.data.w) != (feature.n, feature.h, feature.w):
        raise DimensionError(
            f"размер поля смещений {offsets.data.shape} не совпадает с признаком {feature.shape}"
        )
    if params.stride != 1:
        raise ConfigError(f"деформируемая свертка поддерживает только шаг 1, получено {params.stride}")
    if params.pad != k // 2:
        raise ConfigError(f"деформируемая свертка требует pad = k // 2 = {k // 2}, получено {params.pad}")
    expected = 2 if offsets.mode == "squared" else 2 * k * k
    if offsets.data.c != expected:
        raise ConfigError(
            f"режим {offsets.mode} с ядром {k}x{k} требует {expected} каналов смещений, "
            f"получено {offsets.data.c}"
        )
    return k


def _tap_corners(feature: Tensor, offsets: OffsetField, k: int) -> List[_Corners]:
    n, _, h, w = feature.shape
    r = k // 2
    dy, dx = offsets.tap_offsets(k)
    py = np.arange(h, dtype=np.float64).reshape(1, h, 1)
    px = np.arange(w, dtype=np.float64).reshape(1, 1, w)
    corners = []
    for t in range(k * k):
        i, j = divmod(t, k)
        ys = py + (i - r) + dy[t]
        xs = px + (j - r) + dx[t]
        corners.append(_Corners(np.broadcast_to(ys, (n, h, w)), np.broadcast_to(xs, (n, h, w)), h, w))
    return corners


def _sample_columns(feature: Tensor, corners: List[_Corners]) -> Tuple[np.ndarray, list]:
    """Колонки (n, h, w, c, k*k) деформированных окон и значения соседей."""
    xt = feature.data.transpose(0, 2, 3, 1)
    columns = []
    cached = []
    # Отводы накапливаются в фиксированном порядке t = 0..k*k-1
    for tap in corners:
        sample, values = _gather(xt, tap)
        columns.append(sample)
        cached.append(values)
    return np.stack(columns, axis=-1), cached


def deform_conv_forward(feature: Tensor, offsets: OffsetField, params: ConvParams) -> Tensor:
    """
    Прямой проход деформируемой свертки (шаг 1, выход того же размера).

    Для каждой точки p и каждого отвода (i, j) ядра значение берется в
    p + (i - k//2, j - k//2) + Δ, где Δ - общее смещение точки (squared)
    или смещение отвода (per_point), и умножается на вес w[:, :, i, j].

    Raises:
        DimensionError: При несовпадении размеров поля и признака
        ConfigError: При неверном числе каналов смещений для режима
    """
    k = _check(feature, offsets, params)
    corners = _tap_corners(feature, offsets, k)
    cols, _ = _sample_columns(feature, corners)
    n, h, w = feature.n, feature.h, feature.w
    wmat = params.weight.data.reshape(params.c_out, -1)
    out = cols.reshape(n, h, w, -1) @ wmat.T + params.bias
    return Tensor(np.ascontiguousarray(out.transpose(0, 3, 1, 2)))


def deform_conv_backward(feature: Tensor, offsets: OffsetField, params: ConvParams,
                         grad_out: Tensor) -> Tuple[Tensor, Tensor, Tensor, np.ndarray]:
    """
    Аналитические градиенты деформируемой свертки.

    Градиент по смещениям идет через зависимость билинейных весов от
    (dy, dx); в режиме squared градиенты всех отводов суммируются в одно
    общее смещение точки.

    Returns:
        Кортеж (grad_feature, grad_offsets, grad_weight, grad_bias)
    """
    k = _check(feature, offsets, params)
    n, c, h, w = feature.shape
    if grad_out.shape != (n, params.c_out, h, w):
        raise DimensionError(f"grad_out имеет форму {grad_out.shape}, ожидалось {(n, params.c_out, h, w)}")

    corners = _tap_corners(feature, offsets, k)
    cols, cached = _sample_columns(feature, corners)

    g = grad_out.data.transpose(0, 2, 3, 1)
    wmat = params.weight.data.reshape(params.c_out, -1)
    grad_weight = g.reshape(-1, params.c_out).T @ cols.reshape(-1, c * k * k)
    grad_bias = grad_out.data.sum(axis=(0, 2, 3))
    dcols = (g @ wmat).reshape(n, h, w, c, k * k)

    grad_xt = np.zeros((n, h, w, c), dtype=np.float64)
    grad_dy = np.zeros((k * k, n, h, w), dtype=np.float64)
    grad_dx = np.zeros((k * k, n, h, w), dtype=np.float64)
    bi = _batch_index((n, h, w))
    for t, tap in enumerate(corners):
        dval = dcols[..., t]
        for (yc, xc), wgt, dwy, dwx, value in zip(
            tap.index, tap.weight, tap.dweight_y, tap.dweight_x, cached[t]
        ):
            np.add.at(grad_xt, (np.broadcast_to(bi, yc.shape), yc, xc), dval * wgt[..., None])
            grad_dy[t] += (dval * value).sum(axis=-1) * dwy
            grad_dx[t] += (dval * value).sum(axis=-1) * dwx

    if offsets.mode == "squared":
        grad_offsets = np.stack([grad_dy.sum(axis=0), grad_dx.sum(axis=0)], axis=1)
    else:
        grad_offsets = np.empty((n, 2 * k * k, h, w), dtype=np.float64)
        grad_offsets[:, 0::2] = grad_dy.transpose(1, 0, 2, 3)
        grad_offsets[:, 1::2] = grad_dx.transpose(1, 0, 2, 3)

    return (
        Tensor(np.ascontiguousarray(grad_xt.transpose(0, 3, 1, 2))),
        Tensor(grad_offsets),
        Tensor(grad_weight.reshape(params.weight.shape)),
        grad_bias.astype(storage_dtype()),
    )


def validity_mask(offsets: OffsetField, h: int, w: int) -> ValidityMask:
    """
    Маска валидности M' на разрешении смещений.

    mask(p) = 1, если смещенный центр p + Δ(p) лежит в [0, h) x [0, w).
    Отводы ядра и дополнение на валидность не влияют; в режиме
    per_point используется среднее смещение отводов.
    """
    if (offsets.data.h, offsets.data.w) != (h, w):
        raise DimensionError(f"поле смещений {offsets.data.shape} не соответствует размеру {h}x{w}")
    dy, dx = offsets.center_offsets()
    cy = np.arange(h).reshape(1, h, 1) + dy
    cx = np.arange(w).reshape(1, 1, w) + dx
    valid = (cy >= 0) & (cy < h) & (cx >= 0) & (cx < w)
    return Tensor(valid[:, None].astype(storage_dtype()))


def upsample_mask(mask: ValidityMask, s: int) -> ValidityMask:
    """Повторение маски ближайшим соседом с коэффициентом s: (n,1,h,w) -> (n,1,s*h,s*w)."""
    if s < 1:
        raise ConfigError(f"коэффициент увеличения маски должен быть положительным, получено {s}")
    return Tensor(np.repeat(np.repeat(mask.data, s, axis=2), s, axis=3))
