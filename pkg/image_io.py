"""
Модуль ввода-вывода изображений.

Чтение и запись 8-битных RGB-изображений PNG и бинарного PPM (P6)
через Pillow. При чтении значения линейно отображаются в [0, 1], при
записи обрезаются и округляются до 8 бит.
"""

from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from exceptions import DimensionError, ImageDecodeError
from tensor_core import Tensor


FORMATS = {".png": "PNG", ".ppm": "PPM"}


def read_image(path: Union[str, Path]) -> Tensor:
    """
    Чтение изображения в тензор (1, 3, h, w) со значениями в [0, 1].

    Raises:
        ImageDecodeError: Если файл не читается или не является изображением
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
    except (OSError, UnidentifiedImageError, ValueError) as e:
        raise ImageDecodeError(str(path), str(e))
    return Tensor((rgb / 255.0).transpose(2, 0, 1)[None])


def to_uint8(tensor: Tensor) -> np.ndarray:
    """Квантование тензора (1, 3, h, w) в массив (h, w, 3) uint8."""
    if tensor.n != 1 or tensor.c != 3:
        raise DimensionError(f"ожидалось изображение (1, 3, h, w), получено {tensor.shape}")
    scaled = np.clip(tensor.data[0], 0.0, 1.0) * 255.0
    return np.rint(scaled).astype(np.uint8).transpose(1, 2, 0)


def _format_for(path: Path, fmt: Optional[str]) -> str:
    if fmt is not None:
        key = "." + fmt.lower().lstrip(".")
    else:
        key = path.suffix.lower()
    if key not in FORMATS:
        raise ImageDecodeError(str(path), f"неподдерживаемый формат {key or '(без расширения)'}")
    return FORMATS[key]


def write_image(tensor: Tensor, path: Union[str, Path], fmt: Optional[str] = None) -> Path:
    """
    Запись тензора (1, 3, h, w) в PNG или PPM (P6).

    Формат определяется по fmt или расширению файла.
    """
    path = Path(path)
    image_format = _format_for(path, fmt)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        Image.fromarray(to_uint8(tensor)).save(path, format=image_format)
    except OSError as e:
        raise ImageDecodeError(str(path), str(e))
    return path


def write_mask(mask: Tensor, path: Union[str, Path]) -> Path:
    """Запись бинарной маски (1, 1, h, w) как полутонового PNG (0 или 255)."""
    path = Path(path)
    if mask.n != 1 or mask.c != 1:
        raise DimensionError(f"ожидалась маска (1, 1, h, w), получено {mask.shape}")
    values = np.where(mask.data[0, 0] > 0.5, 255, 0).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        Image.fromarray(values).save(path, format="PNG")
    except OSError as e:
        raise ImageDecodeError(str(path), str(e))
    return path


def bicubic_upscale(tensor: Tensor, factor: int) -> Tensor:
    """
    Бикубическое увеличение каждого канала (базовый предсказатель для оценки).

    Работает в режиме Pillow "F" (float32), без 8-битного квантования.
    """
    n, c, h, w = tensor.shape
    out = np.empty((n, c, h * factor, w * factor), dtype=np.float32)
    for b in range(n):
        for ch in range(c):
            plane = Image.fromarray(tensor.data[b, ch].astype(np.float32))
            out[b, ch] = np.asarray(plane.resize((w * factor, h * factor), Image.Resampling.BICUBIC))
    return Tensor(out)
