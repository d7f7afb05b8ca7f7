"""
Модуль метрик качества.

- psnr: пиковое отношение сигнал/шум (MSE = 0 дает ограничитель 99 дБ)
- masked_psnr: PSNR только по пикселям маски
- ssim: среднее локальное SSIM с гауссовым окном 11x11, σ = 1.5, K1 = 0.01, K2 = 0.03
- contextual_distance: среднее по x минимума косинусного расстояния до y

Признаки для контекстной дистанции - патчи изображения (тождественный
экстрактор) или карты первой свертки модели; предобученные сети не используются.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import convolve2d

from config import config
from exceptions import ConfigError, DimensionError, UndefinedResultError
from tensor_core import Tensor, activation, conv2d


ZERO_NORM = 1e-12
CHUNK = 1024


def _same_shape(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"формы {a.shape} и {b.shape} не совпадают")


def psnr(a: Tensor, b: Tensor, peak: float = 1.0) -> float:
    """
    PSNR в дБ: 10 * log10(peak^2 / MSE).

    При MSE = 0 возвращается config.metrics.psnr_cap.
    """
    _same_shape(a, b)
    mse = float(np.mean((a.data.astype(np.float64) - b.data.astype(np.float64)) ** 2))
    if mse == 0:
        return config.metrics.psnr_cap
    return float(10 * np.log10(peak * peak / mse))


def masked_psnr(a: Tensor, b: Tensor, mask: Tensor, peak: float = 1.0) -> float:
    """
    PSNR по пикселям, где mask = 1 (маска формы (n, 1, h, w)).

    Raises:
        UndefinedResultError: Если маска полностью нулевая
    """
    _same_shape(a, b)
    if mask.shape != (a.n, 1, a.h, a.w):
        raise DimensionError(f"маска {mask.shape} не соответствует изображению {a.shape}")
    count = float(mask.data.sum()) * a.c
    if count == 0:
        raise UndefinedResultError("маска для PSNR полностью нулевая")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    mse = float((diff ** 2 * mask.data).sum() / count)
    if mse == 0:
        return config.metrics.psnr_cap
    return float(10 * np.log10(peak * peak / mse))


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    """Нормированное двумерное гауссово окно size x size."""
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(coords ** 2) / (2 * sigma ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def ssim_map(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> np.ndarray:
    """Карта локального SSIM для двух 2-D массивов (только полные окна)."""
    m = config.metrics
    window = gaussian_window(m.ssim_window, m.ssim_sigma)
    c1 = (m.ssim_k1 * peak) ** 2
    c2 = (m.ssim_k2 * peak) ** 2

    def filt(x):
        return convolve2d(x, window, mode="valid")

    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    numerator = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    denominator = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return numerator / denominator


def ssim(a: Tensor, b: Tensor, peak: float = 1.0) -> float:
    """
    Среднее SSIM по всем батчам и каналам.

    Raises:
        DimensionError: Если формы различаются или изображение меньше окна
    """
    _same_shape(a, b)
    size = config.metrics.ssim_window
    if a.h < size or a.w < size:
        raise DimensionError(f"изображение {a.h}x{a.w} меньше окна SSIM {size}x{size}")
    x = a.data.astype(np.float64)
    y = b.data.astype(np.float64)
    maps = [ssim_map(x[n, c], y[n, c], peak) for n in range(a.n) for c in range(a.c)]
    return float(np.mean(maps))


@dataclass
class FeatureSet:
    """
    Набор векторов признаков одной размерности.

    points: массив (N, d)
    origin: происхождение, например "identity-patch(3)" или "model-layer(feat)"
    """

    points: np.ndarray
    origin: str = "identity-patch(3)"

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2:
            raise DimensionError(f"точки признаков должны иметь форму (N, d), получено {self.points.shape}")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]


def patch_features(image: Tensor, patch: int = None, stride: int = None) -> FeatureSet:
    """
    Тождественный экстрактор: патчи patch x patch с шагом stride, d = c * patch^2.
    """
    patch = patch or config.metrics.cx_patch
    stride = stride or config.metrics.cx_stride
    if image.h < patch or image.w < patch:
        raise DimensionError(f"изображение {image.h}x{image.w} меньше патча {patch}")
    windows = sliding_window_view(image.data, (patch, patch), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, gh, gw = windows.shape[:4]
    points = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * gh * gw, c * patch * patch)
    return FeatureSet(points, f"identity-patch({patch})")


def model_features(model, image: Tensor, stride: int = None) -> FeatureSet:
    """Признаки relu(conv(image)) первого слоя модели в точках решетки с шагом stride."""
    stride = stride or config.metrics.cx_stride
    if image.c != model.feat.c_in:
        raise ConfigError(
            f"первая свертка модели ожидает {model.feat.c_in} каналов, изображение имеет {image.c}"
        )
    fmap = activation(conv2d(image, model.feat), "relu").data[:, :, ::stride, ::stride]
    points = fmap.transpose(0, 2, 3, 1).reshape(-1, fmap.shape[1])
    return FeatureSet(points, "model-layer(feat)")


def contextual_distance(x_feats: FeatureSet, y_feats: FeatureSet) -> float:
    """
    Контекстная дистанция: (1/N) * Σ_i min_j dist(x_i, y_j).

    dist - косинусное расстояние (1 - cos) после вычитания среднего по
    y_feats из обоих наборов. Нулевой вектор находится на расстоянии 1
    от всех, кроме другого нулевого вектора (расстояние 0). Несимметрична.

    Raises:
        UndefinedResultError: Если один из наборов пуст
        DimensionError: Если размерности признаков различаются
    """
    if len(x_feats) == 0 or len(y_feats) == 0:
        raise UndefinedResultError("набор признаков пуст")
    if x_feats.dim != y_feats.dim:
        raise DimensionError(f"размерности признаков {x_feats.dim} и {y_feats.dim} различаются")

    center = y_feats.points.mean(axis=0)
    x = x_feats.points - center
    y = y_feats.points - center
    x_norm = np.linalg.norm(x, axis=1)
    y_norm = np.linalg.norm(y, axis=1)
    x_zero = x_norm < ZERO_NORM
    y_zero = y_norm < ZERO_NORM
    y_unit = y / np.where(y_zero, 1.0, y_norm)[:, None]

    minima = np.empty(len(x))
    # Блоки по x фиксированного размера: порядок редукции не зависит от числа потоков
    for start in range(0, len(x), CHUNK):
        stop = min(start + CHUNK, len(x))
        xs = x[start:stop] / np.where(x_zero[start:stop], 1.0, x_norm[start:stop])[:, None]
        dist = np.clip(1.0 - xs @ y_unit.T, 0.0, 2.0)
        xz = x_zero[start:stop, None]
        dist = np.where(xz | y_zero[None, :], 1.0, dist)
        dist = np.where(xz & y_zero[None, :], 0.0, dist)
        minima[start:stop] = dist.min(axis=1)
    return float(minima.mean())
