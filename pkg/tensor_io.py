"""
Модуль бинарного формата тензоров SDTN.

Формат: магические байты "SDTN", байт версии 0x01, u32 LE ndim (всегда 4),
четыре u32 LE размера (n, c, h, w), затем n*c*h*w чисел IEEE-754 float32 LE
в построчном порядке. Используется для чекпойнтов, наборов данных и
дампов смещений.
"""

import struct
from pathlib import Path
from typing import Union

import numpy as np

from exceptions import TensorFormatError
from tensor_core import Tensor


MAGIC = b"SDTN"
VERSION = 1
HEADER = struct.Struct("<4sBI4I")


def encode_tensor(tensor: Tensor) -> bytes:
    """Сериализация тензора в байты SDTN (данные всегда во float32)."""
    header = HEADER.pack(MAGIC, VERSION, 4, *tensor.shape)
    return header + np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()


def decode_tensor(payload: bytes, source: str = "<bytes>") -> Tensor:
    """
    Разбор байтов SDTN.

    Args:
        payload: Содержимое файла
        source: Имя источника для сообщений об ошибках

    Raises:
        TensorFormatError: При неверной сигнатуре, версии или длине
    """
    if len(payload) < HEADER.size:
        raise TensorFormatError(source, f"файл короче заголовка ({len(payload)} байт)")

    magic, version, ndim, n, c, h, w = HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise TensorFormatError(source, f"неверная сигнатура {magic!r}")
    if version != VERSION:
        raise TensorFormatError(source, f"неподдерживаемая версия {version}")
    if ndim != 4:
        raise TensorFormatError(source, f"ожидалось ndim=4, получено {ndim}")

    expected = n * c * h * w * 4
    body = payload[HEADER.size:]
    if len(body) != expected:
        raise TensorFormatError(source, f"ожидалось {expected} байт данных, получено {len(body)}")

    data = np.frombuffer(body, dtype="<f4").reshape(n, c, h, w)
    # check=False: формат допускает любые float, проверку делает потребитель
    return Tensor(data.astype(np.float32), check=False)


def save_tensor(tensor: Tensor, path: Union[str, Path]) -> Path:
    """Запись тензора в файл SDTN."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensor(tensor))
    return path


def load_tensor(path: Union[str, Path]) -> Tensor:
    """
    Чтение тензора из файла SDTN.

    Raises:
        TensorFormatError: Если файл не читается или поврежден
    """
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise TensorFormatError(str(path), str(e))
    return decode_tensor(payload, str(path))
