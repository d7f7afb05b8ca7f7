"""
Модуль функций потерь.

- l1_loss: среднее абсолютное отклонение
- misaligned_l1: L1 после компенсации известного смещения (аналитическая оценка, не для обучения)
- masked_zoom_loss: функция потерь обучения по X', Y', X̃, Y и маскам M', M

Маскированные слагаемые нормируются на число валидных элементов
(маска x каналы), а не на общее число элементов.
"""

from typing import Tuple, Union

import numpy as np

from deform_align import bilinear_gather
from exceptions import DimensionError, UndefinedResultError
from sdan_model import ForwardOutput
from tensor_core import Tensor


Displacement = Union[Tuple[float, float], np.ndarray, Tensor]


def _same_shape(A: Tensor, B: Tensor) -> None:
    if A.shape != B.shape:
        raise DimensionError(f"формы {A.shape} и {B.shape} не совпадают")


def l1_loss(A: Tensor, B: Tensor) -> float:
    """Среднее |A - B| по всем элементам."""
    _same_shape(A, B)
    return float(np.abs(A.data.astype(np.float64) - B.data).mean())


def l1_loss_backward(A: Tensor, B: Tensor) -> Tensor:
    """Градиент l1_loss по A (sign(A - B) / N, производная в нуле равна 0)."""
    _same_shape(A, B)
    return Tensor(np.sign(A.data - B.data) / A.data.size)


def _displacement_field(F_R: Displacement, n: int, h: int, w: int) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(F_R, Tensor):
        F_R = F_R.data
    field = np.asarray(F_R, dtype=np.float64)
    if field.shape == (2,):
        return np.full((n, h, w), field[0]), np.full((n, h, w), field[1])
    if field.shape == (2, h, w):
        field = field[None]
    if field.ndim != 4 or field.shape[1:] != (2, h, w) or field.shape[0] not in (1, n):
        raise DimensionError(f"поле смещений формы {field.shape} не соответствует изображению {h}x{w}")
    field = np.broadcast_to(field, (n, 2, h, w))
    return field[:, 0], field[:, 1]


def misaligned_l1(A: Tensor, B: Tensor, F_R: Displacement) -> float:
    """
    L1 с компенсацией рассогласования.

    Для каждой точки i изображения B значение A берется билинейно в
    i + F_R(i); точки, чей образ выходит за [0, h-1] x [0, w-1],
    исключаются из среднего.

    Args:
        A, B: Тензоры одной формы
        F_R: Глобальное смещение (dy, dx) или поле (2, h, w) / (n, 2, h, w)

    Raises:
        UndefinedResultError: Если валидных точек нет
    """
    _same_shape(A, B)
    n, c, h, w = A.shape
    dy, dx = _displacement_field(F_R, n, h, w)
    ys = np.arange(h).reshape(1, h, 1) + dy
    xs = np.arange(w).reshape(1, 1, w) + dx
    # Допуск на округление координат, полученных из целых сдвигов
    tol = 1e-9
    valid = (ys >= -tol) & (ys <= h - 1 + tol) & (xs >= -tol) & (xs <= w - 1 + tol)
    count = int(valid.sum())
    if count == 0:
        raise UndefinedResultError("после компенсации смещения не осталось валидных точек")

    sampled = bilinear_gather(A.data.astype(np.float64), ys, xs)
    diff = np.abs(sampled - B.data) * valid[:, None]
    return float(diff.sum() / (count * c))


def _masked_term(pred: Tensor, target: Tensor, mask: Tensor, what: str) -> Tuple[np.ndarray, float]:
    _same_shape(pred, target)
    if (mask.n, mask.c, mask.h, mask.w) != (pred.n, 1, pred.h, pred.w):
        raise DimensionError(f"маска {mask.shape} не соответствует {what} {pred.shape}")
    count = float(mask.data.sum()) * pred.c
    if count == 0:
        raise UndefinedResultError(f"маска для {what} полностью нулевая")
    diff = pred.data.astype(np.float64) - target.data
    return diff, count


def masked_zoom_loss(out: ForwardOutput, Y: Tensor, Yref: Tensor) -> float:
    """
    Функция потерь обучения:
    sum(|X' - Y'| * M') / count(M') + sum(|X̃ - Y| * M) / count(M).

    Raises:
        UndefinedResultError: Если маски полностью нулевые
    """
    diff_lr, count_lr = _masked_term(out.aligned, Yref, out.mask_lr, "X'")
    diff_hr, count_hr = _masked_term(out.zoomed, Y, out.mask_hr, "X̃")
    term_lr = (np.abs(diff_lr) * out.mask_lr.data).sum() / count_lr
    term_hr = (np.abs(diff_hr) * out.mask_hr.data).sum() / count_hr
    return float(term_lr + term_hr)


def masked_zoom_loss_backward(out: ForwardOutput, Y: Tensor, Yref: Tensor) -> Tuple[Tensor, Tensor]:
    """
    Градиенты masked_zoom_loss по X̃ и X'.

    Returns:
        Кортеж (grad_zoomed, grad_aligned)
    """
    diff_lr, count_lr = _masked_term(out.aligned, Yref, out.mask_lr, "X'")
    diff_hr, count_hr = _masked_term(out.zoomed, Y, out.mask_hr, "X̃")
    grad_aligned = np.sign(diff_lr) * out.mask_lr.data / count_lr
    grad_zoomed = np.sign(diff_hr) * out.mask_hr.data / count_hr
    return Tensor(grad_zoomed), Tensor(grad_aligned)
