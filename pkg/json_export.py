"""
Модуль для экспорта результатов в JSON формат.

Класс JSONExporter предоставляет функционал для:
- Экспорта метрик оценки (метаданные, строки по парам, средние)
- Экспорта таблицы проверки градиентов
- Экспорта итогов абляционных экспериментов
- Поддержки форматированного (pretty) и компактного JSON
"""

import json
from pathlib import Path
from typing import Dict, List, Optional

from exceptions import ExportError
from logger_config import logger


class JSONExporter:
    """
    Класс для экспорта результатов в JSON.

    Ключи сортируются, поэтому файл детерминирован при равных данных.
    """

    def __init__(self, output_path: str, pretty: bool = True):
        """
        Инициализация экспортера.

        Args:
            output_path: Путь к выходному JSON файлу
            pretty: Форматировать JSON с отступами (по умолчанию True)
        """
        self.output_path = Path(output_path)
        self.pretty = pretty

        # Убеждаемся, что расширение .json
        if self.output_path.suffix.lower() != '.json':
            self.output_path = self.output_path.with_suffix('.json')

    def _dump(self, payload: Dict) -> Path:
        try:
            self.output_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.output_path, 'w', encoding='utf-8') as f:
                json.dump(payload, f, ensure_ascii=False, sort_keys=True,
                          indent=2 if self.pretty else None)
                f.write("\n")
        except (OSError, TypeError, ValueError) as e:
            logger.error(f"Ошибка при экспорте в JSON: {e}")
            raise ExportError(str(self.output_path), str(e))
        logger.debug(f"JSON записан: {self.output_path}")
        return self.output_path

    def export_metrics(self, rows: List[Dict], means: Dict, metadata: Optional[Dict] = None) -> Path:
        """
        Экспорт метрик оценки.

        Args:
            rows: Метрики по парам
            means: Средние значения
            metadata: Сведения о запуске (чекпойнт, набор данных, предсказатель)
        """
        return self._dump({
            "metadata": metadata or {},
            "rows": rows,
            "means": means,
        })

    def export_experiments(self, arms: List[Dict], verdicts: List[Dict],
                           metadata: Optional[Dict] = None) -> Path:
        """Экспорт итогов абляции и проверенных критериев."""
        return self._dump({
            "metadata": metadata or {},
            "arms": arms,
            "criteria": verdicts,
            "passed": all(v["passed"] for v in verdicts),
        })

    def export_gradcheck(self, results: List[Dict], metadata: Optional[Dict] = None) -> Path:
        """Экспорт таблицы проверки градиентов (op, trials, max_rel_err, tolerance, status)."""
        return self._dump({
            "metadata": metadata or {},
            "ops": results,
            "passed": all(r["status"] == "OK" for r in results),
        })
