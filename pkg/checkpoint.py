"""
Модуль чекпойнтов.

Чекпойнт - каталог:
- <имя>.sdtn: каждый параметр как 4-мерный тензор SDTN
- manifest.txt: строки "имя<TAB>логическая форма<TAB>роль", отсортированные по имени
- config.json: ModelConfig и seed инициализации

Содержимое зависит только от параметров и конфигурации, поэтому два
одинаковых запуска дают побайтно равные каталоги.
"""

import json
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from config import ModelConfig
from exceptions import CheckpointError, ConfigError, TensorFormatError
from logger_config import logger
from sdan_model import SdanModel
from tensor_core import Tensor
from tensor_io import load_tensor, save_tensor


MANIFEST = "manifest.txt"
CONFIG = "config.json"


def _as_4d(array: np.ndarray) -> np.ndarray:
    if array.ndim == 4:
        return array
    if array.ndim == 1:
        return array.reshape(1, -1, 1, 1)
    if array.ndim == 2:
        return array.reshape((1, 1) + array.shape)
    raise CheckpointError("<memory>", f"неподдерживаемая размерность параметра {array.ndim}")


def _format_shape(shape: Tuple[int, ...]) -> str:
    return "x".join(str(d) for d in shape)


def _parse_shape(text: str) -> Tuple[int, ...]:
    return tuple(int(d) for d in text.split("x"))


def save_checkpoint(model: SdanModel, path: Union[str, Path]) -> Path:
    """
    Сохранение модели в каталог чекпойнта.

    Raises:
        CheckpointError: При ошибке записи
    """
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        arrays = model.named_arrays()
        roles = model.roles()
        lines = []
        for name in sorted(arrays):
            array = arrays[name]
            save_tensor(Tensor(_as_4d(array).astype(np.float32), check=False), path / f"{name}.sdtn")
            lines.append(f"{name}\t{_format_shape(array.shape)}\t{roles[name]}")
        (path / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")

        payload = {"model": model.config.to_dict(), "seed": model.seed}
        (path / CONFIG).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise CheckpointError(str(path), str(e))

    logger.debug(f"Чекпойнт сохранен: {path} ({len(lines)} параметров)")
    return path


def load_checkpoint(path: Union[str, Path]) -> SdanModel:
    """
    Загрузка модели из каталога чекпойнта.

    Raises:
        CheckpointError: Если каталог, манифест, конфигурация или тензоры повреждены
    """
    path = Path(path)
    try:
        payload = json.loads((path / CONFIG).read_text(encoding="utf-8"))
        model_config = ModelConfig.from_dict(payload["model"])
        seed = int(payload.get("seed", 0))
        manifest = (path / MANIFEST).read_text(encoding="utf-8").splitlines()
    except (OSError, ValueError, KeyError, TypeError, ConfigError) as e:
        raise CheckpointError(str(path), f"не удалось прочитать конфигурацию или манифест: {e}")

    arrays = {}
    for line_no, line in enumerate(manifest, 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise CheckpointError(str(path), f"{MANIFEST}:{line_no}: ожидалось 3 поля, получено {len(parts)}")
        name, shape_text, _ = parts
        try:
            shape = _parse_shape(shape_text)
            tensor = load_tensor(path / f"{name}.sdtn")
            arrays[name] = tensor.data.reshape(shape)
        except (ValueError, TensorFormatError) as e:
            raise CheckpointError(str(path), f"параметр {name}: {e}")

    model = SdanModel.create(model_config, seed)
    model.load_arrays(arrays, str(path))
    logger.debug(f"Чекпойнт загружен: {path} ({model.parameter_count()} значений)")
    return model
