"""
Модуль конфигурации проекта.

Содержит все настройки и константы, используемые в проекте: параметры
тензорного ядра, архитектуры модели, генерации данных, обучения, проверки
градиентов и метрик. Позволяет легко изменять параметры без модификации
основного кода: значения по умолчанию переопределяются переменными окружения
(в том числе из файла .env) и плоским файлом конфигурации `key = value`.
"""

from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, Optional
import os

from dotenv import load_dotenv

from exceptions import ConfigError

# Переменные окружения могут задаваться в .env в корне запуска
load_dotenv()


OFFSET_MODES = ("squared", "per_point")
ATTENTION_KINDS = ("none", "channel", "cpa")
DATA_MODES = ("rgb", "raw")


@dataclass
class TensorConfig:
    """Конфигурация тензорного ядра."""

    check_finite: bool = True  # Отвергать NaN/Inf при создании тензора
    deterministic: bool = False  # Фиксированный порядок редукций и один поток
    threads: int = 0  # Ограничение рабочих потоков (0 = автоматически)
    float64: bool = False  # Хранение в 64 битах (только для проверки градиентов)

    def worker_count(self) -> int:
        """Количество рабочих потоков с учетом режима детерминизма."""
        if self.deterministic:
            return 1
        if self.threads > 0:
            return self.threads
        return os.cpu_count() or 1


@dataclass
class ModelConfig:
    """
    Конфигурация архитектуры SDAN.

    Оси абляции: offset_mode (squared / per_point), attention (none / channel / cpa),
    flip_aug, align_enabled. in_channels = 4 означает RAW-режим (упакованный
    RGGB-вход половинного разрешения и одна дополнительная ступень x2).
    """

    in_channels: int = 3
    base_channels: int = 64
    num_res_blocks: int = 4
    scale: int = 4
    offset_mode: str = "squared"
    attention: str = "cpa"
    flip_aug: bool = True
    align_enabled: bool = True
    kernel_size: int = 3
    packing_size: int = 4  # K для Cross Packing Attention
    reduction: int = 16  # r для channel attention (ограничивается так, что c/r >= 4)
    offset_packing: int = 1  # P: свертки головы смещений на space_to_depth(·, P)

    @property
    def raw(self) -> bool:
        return self.in_channels == 4

    @property
    def upscale(self) -> int:
        """Полный коэффициент увеличения от входа модели до X̃."""
        return self.scale * (2 if self.raw else 1)

    @property
    def num_upsample_stages(self) -> int:
        return self.upscale.bit_length() - 1

    @property
    def offset_channels(self) -> int:
        if self.offset_mode == "squared":
            return 2
        return 2 * self.kernel_size * self.kernel_size

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"неизвестные поля ModelConfig: {sorted(unknown)}")
        return cls(**data)


@dataclass
class GenConfig:
    """Конфигурация генератора синтетических рассогласованных пар."""

    source_dir: Optional[str] = None  # Каталог HR-исходников (или None при procedural > 0)
    scale: int = 4
    crop_lr: int = 64
    shift_max: int = 8  # Максимальный |сдвиг| в LR-пикселях
    count: int = 64
    seed: int = 0
    mode: str = "rgb"
    fractional: bool = False  # Дробные сдвиги вместо целых
    procedural: int = 0  # Количество процедурных исходников вместо source_dir

    @property
    def crop_hr(self) -> int:
        return self.crop_lr * self.scale

    @property
    def min_source_size(self) -> int:
        """Минимальная сторона исходника, вмещающая оба окна при любом сдвиге."""
        return self.crop_lr * self.scale + 2 * self.shift_max * self.scale


@dataclass
class TrainConfig:
    """Конфигурация обучения (Adam без расписания)."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    epochs: int = 300
    checkpoint_every: int = 10  # Сохранять чекпойнт каждые N эпох
    val_count: int = 4  # Количество последних пар, отложенных для валидации
    seed: int = 0


@dataclass
class GradcheckConfig:
    """Конфигурация проверки градиентов конечными разностями."""

    # Шаг центральной разности; численная производная - экстраполяция
    # Ричардсона по шагам eps и eps/2 (ошибка усечения порядка eps^4)
    eps: float = 2e-4
    # Шаг для модели целиком: меньше пересечений изломов ReLU и L1 при
    # ошибке округления функции потерь порядка 1e-11
    model_eps: float = 5e-5
    trials: int = 100
    model_trials: int = 100
    coords_per_arg: int = 12  # Сколько координат каждого аргумента проверять за испытание
    tol_f64: float = 1e-6
    tol_f32: float = 1e-4
    # Нижняя граница знаменателя относительной ошибки: доля от max|аналитического
    # градиента| по всем аргументам испытания
    rel_floor_f64: float = 1e-3
    rel_floor_f32: float = 1e-2
    # Порог составных проверок во float32: аналитическая сторона копит
    # округление через всю сеть. Во float64 действует tol_f64 для всех операций
    composite_tol_f32: Dict[str, float] = field(
        default_factory=lambda: {"model_loss": 1e-3}
    )


@dataclass
class MetricsConfig:
    """Конфигурация метрик качества."""

    psnr_cap: float = 99.0  # Значение PSNR при MSE = 0
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03
    cx_patch: int = 3  # Размер патча для тождественного экстрактора признаков
    cx_stride: int = 8  # Шаг патчей (ограничивает число точек в контекстной дистанции)


class Config:
    """
    Главный класс конфигурации проекта.

    Объединяет все конфигурации и предоставляет единую точку доступа.
    Можно расширять через переменные окружения или файл конфигурации.
    """

    def __init__(self):
        """Инициализация конфигурации с возможностью переопределения через переменные окружения."""
        self.tensor = TensorConfig()
        self.model = ModelConfig()
        self.gen = GenConfig()
        self.train = TrainConfig()
        self.gradcheck = GradcheckConfig()
        self.metrics = MetricsConfig()
        self.log_level = "INFO"

        # Загрузка настроек из переменных окружения (если есть)
        self._load_from_env()

    def _load_from_env(self):
        """Загрузка настроек из переменных окружений."""
        threads = os.getenv("SDAN_THREADS")
        if threads:
            try:
                self.tensor.threads = max(0, int(threads))
            except ValueError:
                raise ConfigError(f"SDAN_THREADS должно быть целым числом, получено {threads!r}")

        if os.getenv("SDAN_CHECK_FINITE"):
            self.tensor.check_finite = parse_bool(os.getenv("SDAN_CHECK_FINITE"))

        if os.getenv("SDAN_DETERMINISTIC"):
            self.tensor.deterministic = parse_bool(os.getenv("SDAN_DETERMINISTIC"))

        if os.getenv("SDAN_LOG_LEVEL"):
            self.log_level = os.getenv("SDAN_LOG_LEVEL").upper()


def parse_bool(value: str) -> bool:
    """Разбор логического значения из текста (true/false, on/off, yes/no, 1/0)."""
    text = str(value).strip().lower()
    if text in ("1", "true", "on", "yes"):
        return True
    if text in ("0", "false", "off", "no"):
        return False
    raise ConfigError(f"ожидалось логическое значение, получено {value!r}")


def parse_config_file(path: str) -> Dict[str, str]:
    """
    Чтение плоского файла конфигурации.

    Формат: одна пара `key = value` на строку, `#` начинает комментарий,
    пустые строки игнорируются, вложенности нет. Дефисы в ключах
    приводятся к подчеркиваниям, чтобы `shift-max` и `shift_max` совпадали.

    Args:
        path: Путь к файлу конфигурации

    Returns:
        Словарь ключ -> строковое значение

    Raises:
        ConfigError: Если файл не читается или строка некорректна
    """
    file_path = Path(path)
    try:
        text = file_path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"не удалось прочитать файл конфигурации {path}: {e}")

    values: Dict[str, str] = {}
    for line_no, raw_line in enumerate(text.splitlines(), 1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: ожидается 'key = value', получено {raw_line!r}")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if not key:
            raise ConfigError(f"{path}:{line_no}: пустой ключ")
        values[key] = value.strip()
    return values


# Глобальный экземпляр конфигурации
config = Config()
