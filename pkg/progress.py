"""
Прогресс-бары и цветные статусы для длительных операций.

Бар выводится в stderr и только в терминал: при перенаправлении вывода
(тесты, пакетные прогоны) он отключается, чтобы не засорять логи.
"""

import sys
from typing import Iterable, Optional

from colorama import Fore, Style, init
from tqdm import tqdm

init(autoreset=True)

BAR_FORMAT = "{l_bar}{bar}| {n_fmt}/{total_fmt} [{elapsed}<{remaining}, {rate_fmt}]"


def _is_tty(stream) -> bool:
    return hasattr(stream, "isatty") and stream.isatty()


def colored(text: str, color: str) -> str:
    """Окраска текста, если stdout - терминал."""
    if not _is_tty(sys.stdout):
        return text
    return f"{color}{Style.BRIGHT}{text}{Style.RESET_ALL}"


def status_word(ok: bool) -> str:
    """Слово статуса для таблиц: зеленое OK или красное FAIL."""
    return colored("OK", Fore.GREEN) if ok else colored("FAIL", Fore.RED)


def progress(iterable: Iterable, desc: str, unit: str, total: Optional[int] = None,
             color: str = Fore.CYAN) -> Iterable:
    """Обертка tqdm в стиле проекта."""
    enabled = _is_tty(sys.stderr)
    if enabled:
        desc = f"{color}{Style.BRIGHT}{desc}{Style.RESET_ALL}"
    return tqdm(iterable, desc=desc, unit=unit, total=total, leave=False, ncols=100,
                bar_format=BAR_FORMAT, disable=not enabled, file=sys.stderr)
