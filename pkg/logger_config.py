"""
Модуль для настройки логирования в проекте.

Предоставляет единую систему логирования для всех модулей проекта.
Консольный вывод идет в stderr: stdout зарезервирован под таблицы
результатов, которые должны совпадать побайтно между запусками.
"""

import logging
import sys
from pathlib import Path
from typing import Optional


def setup_logger(
    name: str = "sdan",
    level: int = logging.INFO,
    log_file: Optional[str] = None,
    format_string: Optional[str] = None
) -> logging.Logger:
    """
    Настройка логгера для проекта.

    Сам логгер пропускает все уровни: level применяется к консольному
    обработчику, а файловый обработчик получает и записи DEBUG.
    Повторный вызов перенастраивает уровень консоли и добавляет файловый
    обработчик, если он еще не подключен (CLI вызывает функцию после
    разбора флагов).

    Args:
        name: Имя логгера
        level: Уровень консольного вывода (logging.DEBUG, INFO, WARNING, ERROR)
        log_file: Путь к файлу для записи логов (опционально)
        format_string: Кастомный формат строки логирования (опционально)

    Returns:
        Настроенный логгер
    """
    logger = logging.getLogger(name)
    logger.setLevel(logging.DEBUG)
    logger.propagate = False

    # Формат по умолчанию
    if format_string is None:
        format_string = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    formatter = logging.Formatter(format_string)

    # Обработчик для консоли (один на логгер)
    console_handlers = [
        h for h in logger.handlers
        if isinstance(h, logging.StreamHandler) and not isinstance(h, logging.FileHandler)
    ]
    if console_handlers:
        for handler in console_handlers:
            handler.setLevel(level)
    else:
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setLevel(level)
        console_handler.setFormatter(formatter)
        logger.addHandler(console_handler)

    # Обработчик для файла (если указан)
    if log_file:
        log_path = Path(log_file).resolve()
        already = any(
            isinstance(h, logging.FileHandler) and Path(h.baseFilename) == log_path
            for h in logger.handlers
        )
        if not already:
            log_path.parent.mkdir(parents=True, exist_ok=True)
            file_handler = logging.FileHandler(str(log_path), encoding='utf-8')
            file_handler.setLevel(logging.DEBUG)  # В файл пишем все
            file_handler.setFormatter(formatter)
            logger.addHandler(file_handler)

    return logger


# Глобальный логгер для проекта
logger = setup_logger()
