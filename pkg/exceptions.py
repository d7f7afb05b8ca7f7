"""
Кастомные исключения для проекта.

Предоставляет специфичные исключения для лучшей обработки ошибок
и более информативных сообщений об ошибках. Каждое исключение несет
код возврата CLI (exit_code), чтобы командная строка могла отобразить
ошибку в стабильный контракт кодов: 2 - конфигурация, 3 - ввод/вывод,
4 - расхождение обучения, 5 - провал проверки градиентов.
"""

from typing import Iterable, Optional


class SdanError(Exception):
    """Базовое исключение для всех ошибок проекта."""

    exit_code: int = 2


class ValidationError(SdanError):
    """Ошибка валидации входных данных."""

    def __init__(self, message: str):
        super().__init__(f"Ошибка валидации: {message}")


class ConfigError(SdanError):
    """Ошибка конфигурации (флаги, файл конфигурации, параметры модели)."""

    def __init__(self, message: str):
        super().__init__(f"Ошибка конфигурации: {message}")


class DimensionError(SdanError):
    """Несовпадение размерностей тензоров."""

    def __init__(self, message: str):
        super().__init__(f"Ошибка размерности: {message}")


class NonFiniteValueError(SdanError):
    """В тензоре обнаружены NaN или Inf (проверяемый режим)."""

    def __init__(self, where: str = ""):
        message = "Тензор содержит NaN или Inf"
        if where:
            message += f": {where}"
        super().__init__(message)
        self.where = where


class UndefinedResultError(SdanError):
    """Результат не определен (пустое множество валидных элементов и т.п.)."""

    def __init__(self, reason: str = ""):
        message = "Результат не определен"
        if reason:
            message += f". Причина: {reason}"
        super().__init__(message)
        self.reason = reason


class ImageDecodeError(SdanError):
    """Ошибка при чтении или записи изображения."""

    exit_code = 3

    def __init__(self, file_path: str, reason: str = ""):
        message = f"Не удалось декодировать изображение: {file_path}"
        if reason:
            message += f". Причина: {reason}"
        super().__init__(message)
        self.file_path = file_path
        self.reason = reason


class TensorFormatError(SdanError):
    """Файл не является корректным дампом тензора SDTN."""

    exit_code = 3

    def __init__(self, file_path: str, reason: str = ""):
        message = f"Некорректный файл тензора: {file_path}"
        if reason:
            message += f". Причина: {reason}"
        super().__init__(message)
        self.file_path = file_path
        self.reason = reason


class CheckpointError(SdanError):
    """Ошибка при сохранении или загрузке чекпойнта."""

    exit_code = 3

    def __init__(self, path: str, reason: str = ""):
        message = f"Ошибка чекпойнта: {path}"
        if reason:
            message += f". Причина: {reason}"
        super().__init__(message)
        self.path = path
        self.reason = reason


class DatasetError(SdanError):
    """Ошибка при чтении каталога набора данных."""

    exit_code = 3

    def __init__(self, path: str, reason: str = ""):
        message = f"Ошибка набора данных: {path}"
        if reason:
            message += f". Причина: {reason}"
        super().__init__(message)
        self.path = path
        self.reason = reason


class GenerationError(SdanError):
    """Ошибка при генерации синтетического набора данных."""

    exit_code = 3

    def __init__(self, reason: str = ""):
        message = "Ошибка генерации набора данных"
        if reason:
            message += f". Причина: {reason}"
        super().__init__(message)
        self.reason = reason


class ExportError(SdanError):
    """Ошибка при экспорте результатов."""

    exit_code = 3

    def __init__(self, output_path: str, reason: str = ""):
        message = f"Ошибка при экспорте в файл: {output_path}"
        if reason:
            message += f". Причина: {reason}"
        super().__init__(message)
        self.output_path = output_path
        self.reason = reason


class TrainingDivergenceError(SdanError):
    """Обучение разошлось (NaN в функции потерь)."""

    exit_code = 4

    def __init__(self, step: int, loss: Optional[float] = None):
        message = f"Обучение разошлось на шаге {step}"
        if loss is not None:
            message += f" (loss = {loss})"
        super().__init__(message)
        self.step = step
        self.loss = loss


class GradcheckFailure(SdanError):
    """Аналитические градиенты не совпали с конечными разностями."""

    exit_code = 5

    def __init__(self, ops: Iterable[str]):
        self.ops = list(ops)
        super().__init__(
            "Проверка градиентов не пройдена для операций: " + ", ".join(self.ops)
        )
