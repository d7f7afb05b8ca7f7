"""
Модуль для валидации входных данных.

Предоставляет функции для проверки каталогов, путей к изображениям
и согласованности конфигураций модели и генератора данных.
"""

import os
from pathlib import Path

from config import ATTENTION_KINDS, DATA_MODES, OFFSET_MODES, GenConfig, ModelConfig
from exceptions import CheckpointError, ConfigError, DatasetError, ValidationError


IMAGE_SUFFIXES = (".png", ".ppm")


def _normalize(path: str, what: str) -> Path:
    if not path:
        raise ValidationError(f"Путь к {what} не может быть пустым")
    return Path(os.path.normpath(str(path).strip().strip('"')))


def validate_source_dir(source_dir: str) -> Path:
    """
    Валидация каталога с HR-исходниками.

    Args:
        source_dir: Путь к каталогу

    Returns:
        Path объект

    Raises:
        ValidationError: Если путь пуст
        DatasetError: Если каталог не существует или не содержит файлов
    """
    path_obj = _normalize(source_dir, "каталогу исходников")

    if not path_obj.exists():
        raise DatasetError(str(path_obj), "каталог исходников не найден")
    if not path_obj.is_dir():
        raise DatasetError(str(path_obj), "путь исходников не является каталогом")
    if not any(p.is_file() for p in path_obj.iterdir()):
        raise DatasetError(str(path_obj), "каталог исходников пуст")

    return path_obj


def validate_dataset_dir(dataset_dir: str) -> Path:
    """
    Валидация каталога набора данных (manifest.tsv + pairs/).

    Raises:
        ValidationError: Если путь пуст
        DatasetError: Если каталога нет или его структура нарушена
    """
    path_obj = _normalize(dataset_dir, "набору данных")

    if not path_obj.is_dir():
        raise DatasetError(str(path_obj), "каталог набора данных не найден")
    if not (path_obj / "manifest.tsv").is_file():
        raise DatasetError(str(path_obj), "нет manifest.tsv")
    if not (path_obj / "pairs").is_dir():
        raise DatasetError(str(path_obj), "нет каталога pairs/")

    return path_obj


def validate_checkpoint_dir(checkpoint_dir: str) -> Path:
    """
    Валидация каталога чекпойнта (manifest.txt + config.json).

    Raises:
        ValidationError: Если путь пуст
        CheckpointError: Если каталог не является чекпойнтом
    """
    path_obj = _normalize(checkpoint_dir, "чекпойнту")

    if not path_obj.is_dir():
        raise CheckpointError(str(path_obj), "каталог чекпойнта не найден")
    for name in ("manifest.txt", "config.json"):
        if not (path_obj / name).is_file():
            raise CheckpointError(str(path_obj), f"нет файла {name}")

    return path_obj


def validate_output_dir(output_dir: str) -> Path:
    """
    Валидация выходного каталога.

    Каталог создается при отсутствии; существующий файл с тем же
    именем отвергается.

    Raises:
        ValidationError: Если путь занят файлом или каталог не создается
    """
    path_obj = _normalize(output_dir, "выходному каталогу")

    if path_obj.exists() and not path_obj.is_dir():
        raise ValidationError(f"Выходной путь не является каталогом: {path_obj}")

    try:
        path_obj.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ValidationError(f"Не удалось создать выходной каталог: {e}")

    return path_obj


def validate_image_path(image_path: str, must_exist: bool = True) -> Path:
    """
    Валидация пути к изображению PNG или PPM.

    Args:
        image_path: Путь к изображению
        must_exist: Требовать существование файла (для входных изображений)

    Raises:
        ValidationError: Если расширение не поддерживается или файла нет
    """
    path_obj = _normalize(image_path, "изображению")

    if path_obj.suffix.lower() not in IMAGE_SUFFIXES:
        raise ValidationError(
            f"Неподдерживаемый формат изображения: {path_obj.suffix or '(без расширения)'}. "
            f"Ожидается .png или .ppm"
        )
    if must_exist and not path_obj.is_file():
        raise ValidationError(f"Изображение не найдено: {path_obj}")

    return path_obj


def _is_power_of_two(value: int) -> bool:
    return value > 0 and (value & (value - 1)) == 0


def validate_model_config(cfg: ModelConfig) -> None:
    """
    Проверка согласованности конфигурации модели.

    Raises:
        ConfigError: При недопустимом значении любого поля
    """
    if cfg.in_channels not in (3, 4):
        raise ConfigError(f"in_channels должно быть 3 (RGB) или 4 (RAW), получено {cfg.in_channels}")
    if cfg.base_channels < 1:
        raise ConfigError(f"base_channels должно быть положительным, получено {cfg.base_channels}")
    if cfg.num_res_blocks < 1:
        raise ConfigError(f"нужен хотя бы один остаточный блок, получено {cfg.num_res_blocks}")
    if not _is_power_of_two(cfg.scale):
        raise ConfigError(f"масштаб должен быть степенью двойки, получено {cfg.scale}")
    if cfg.offset_mode not in OFFSET_MODES:
        raise ConfigError(f"offset_mode должно быть одним из {OFFSET_MODES}, получено {cfg.offset_mode!r}")
    if cfg.attention not in ATTENTION_KINDS:
        raise ConfigError(f"attention должно быть одним из {ATTENTION_KINDS}, получено {cfg.attention!r}")
    if cfg.kernel_size < 1 or cfg.kernel_size % 2 == 0:
        raise ConfigError(f"размер ядра должен быть нечетным, получено {cfg.kernel_size}")
    if cfg.packing_size < 1:
        raise ConfigError(f"packing_size должно быть положительным, получено {cfg.packing_size}")
    if cfg.reduction < 1:
        raise ConfigError(f"reduction должно быть положительным, получено {cfg.reduction}")
    if cfg.offset_packing < 1:
        raise ConfigError(f"offset_packing должно быть положительным, получено {cfg.offset_packing}")


def validate_gen_config(cfg: GenConfig) -> None:
    """
    Проверка конфигурации генератора набора данных.

    Ровно один источник: каталог (source_dir) или процедурные изображения.

    Raises:
        ConfigError: При недопустимом значении или конфликте источников
    """
    if (cfg.source_dir is None) == (cfg.procedural <= 0):
        raise ConfigError("нужно указать ровно один источник: --src или --procedural")
    if not _is_power_of_two(cfg.scale):
        raise ConfigError(f"масштаб должен быть степенью двойки, получено {cfg.scale}")
    if cfg.crop_lr < 1:
        raise ConfigError(f"crop_lr должно быть положительным, получено {cfg.crop_lr}")
    if cfg.shift_max < 0:
        raise ConfigError(f"shift_max не может быть отрицательным, получено {cfg.shift_max}")
    if cfg.count < 1:
        raise ConfigError(f"count должно быть положительным, получено {cfg.count}")
    if cfg.mode not in DATA_MODES:
        raise ConfigError(f"mode должно быть одним из {DATA_MODES}, получено {cfg.mode!r}")
    if cfg.mode == "raw" and cfg.crop_lr % 2:
        raise ConfigError(f"в режиме raw crop_lr должно быть четным, получено {cfg.crop_lr}")
