"""
Модуль для экспорта результатов в CSV формат.

Класс CSVExporter предоставляет функционал для:
- Экспорта метрик по парам (id, psnr_db, ssim, cx_distance[, offset_error_px]) с итоговой строкой mean
- Экспорта кривой обучения (epoch, step, loss)
- Экспорта валидационных метрик по эпохам (epoch, psnr_db, ssim)
- Экспорта итогов абляционных экспериментов по ветвям

Числа пишутся с фиксированной точностью, поэтому одинаковые запуски
дают побайтно равные файлы.
"""

import csv
from pathlib import Path
from typing import Dict, List, Sequence

from exceptions import ExportError
from logger_config import logger


def format_value(value) -> str:
    """Текстовое представление ячейки: float с 6 знаками, остальное как есть."""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


class CSVExporter:
    """
    Класс для экспорта результатов в CSV.

    Создает файлы в выходном каталоге:
    - metrics.csv - метрики оценки
    - loss_curve.csv - функция потерь по шагам
    - validation.csv - валидация по эпохам
    - experiments.csv - итоги абляции
    """

    def __init__(self, output_dir: str, delimiter: str = ',', encoding: str = 'utf-8'):
        """
        Инициализация экспортера.

        Args:
            output_dir: Директория для сохранения CSV файлов
            delimiter: Разделитель полей (по умолчанию ',')
            encoding: Кодировка файлов
        """
        self.output_dir = Path(output_dir)
        self.delimiter = delimiter
        self.encoding = encoding
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def _write(self, filename: str, columns: Sequence[str], rows: List[Dict]) -> Path:
        path = self.output_dir / filename
        try:
            with open(path, 'w', newline='', encoding=self.encoding) as f:
                writer = csv.writer(f, delimiter=self.delimiter, lineterminator='\n')
                writer.writerow(columns)
                for row in rows:
                    writer.writerow([format_value(row.get(col, "")) for col in columns])
        except OSError as e:
            logger.error(f"Ошибка при экспорте в CSV: {e}")
            raise ExportError(str(path), str(e))
        logger.debug(f"CSV записан: {path} ({len(rows)} строк)")
        return path

    def export_metrics(self, rows: List[Dict], columns: Sequence[str], means: Dict,
                       filename: str = "metrics.csv") -> Path:
        """
        Экспорт метрик по парам и итоговой строки mean.

        Args:
            rows: Строки с ключами из columns
            columns: Порядок столбцов (первый - id)
            means: Средние значения метрик (без id)
        """
        mean_row = dict(means)
        mean_row[columns[0]] = "mean"
        return self._write(filename, columns, list(rows) + [mean_row])

    def export_loss_curve(self, records: List[Dict], filename: str = "loss_curve.csv") -> Path:
        """Экспорт кривой обучения: epoch, step, loss."""
        return self._write(filename, ("epoch", "step", "loss"), records)

    def export_validation(self, records: List[Dict], filename: str = "validation.csv") -> Path:
        """Экспорт валидационных метрик: epoch, psnr_db, ssim."""
        return self._write(filename, ("epoch", "psnr_db", "ssim"), records)

    def export_experiments(self, records: List[Dict], filename: str = "experiments.csv") -> Path:
        """Экспорт итогов абляции по ветвям (без времени выполнения)."""
        columns = ("arm", "final_loss", "psnr_db", "infer_psnr_db", "offset_error_px", "mask_band_ok")
        rows = [{k: ("" if v is None else v) for k, v in r.items()} for r in records]
        return self._write(filename, columns, rows)
