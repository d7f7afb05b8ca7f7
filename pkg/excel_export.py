"""
Модуль для экспорта метрик оценки в Excel файл.

Создаваемые листы:
1. "Пары" - метрики по каждой паре с цветовой индикацией PSNR
2. "Сводка" - средние значения и параметры запуска
"""

from typing import Dict, List, Sequence

from openpyxl import Workbook
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils import get_column_letter

from exceptions import ExportError
from logger_config import logger


COLUMN_TITLES = {
    "id": "Пара",
    "psnr_db": "PSNR, дБ",
    "ssim": "SSIM",
    "cx_distance": "Контекстная дистанция",
    "offset_error_px": "Ошибка смещения, px",
}

HEADER_FILL = PatternFill(start_color="366092", end_color="366092", fill_type="solid")
HEADER_FONT = Font(bold=True, color="FFFFFF", size=11)
GOOD_FILL = PatternFill(start_color="C6EFCE", end_color="C6EFCE", fill_type="solid")
WEAK_FILL = PatternFill(start_color="FFEB9C", end_color="FFEB9C", fill_type="solid")
BORDER = Border(
    left=Side(style='thin'),
    right=Side(style='thin'),
    top=Side(style='thin'),
    bottom=Side(style='thin')
)


class ExcelExporter:
    """
    Класс для экспорта метрик в Excel.

    Строки пар с PSNR не ниже среднего окрашиваются зеленым, остальные желтым.
    """

    def __init__(self, output_path: str):
        """
        Инициализация экспортера.

        Args:
            output_path: Путь к выходному Excel файлу (будет создан или перезаписан)
        """
        self.output_path = output_path
        self.workbook = Workbook()
        self.workbook.remove(self.workbook.active)

    def export_metrics(self, rows: List[Dict], columns: Sequence[str], means: Dict,
                       metadata: Dict = None) -> str:
        """
        Экспорт метрик оценки.

        Raises:
            ExportError: Если файл не удалось сохранить
        """
        self._create_pairs_sheet(self.workbook.create_sheet("Пары", 0), rows, columns, means)
        self._create_summary_sheet(self.workbook.create_sheet("Сводка", 1), columns, means, metadata or {})
        try:
            self.workbook.save(self.output_path)
        except OSError as e:
            logger.error(f"Ошибка при экспорте в Excel: {e}")
            raise ExportError(str(self.output_path), str(e))
        logger.debug(f"Excel записан: {self.output_path}")
        return self.output_path

    def _header(self, worksheet, titles: Sequence[str]) -> None:
        for col_idx, title in enumerate(titles, 1):
            cell = worksheet.cell(row=1, column=col_idx, value=title)
            cell.fill = HEADER_FILL
            cell.font = HEADER_FONT
            cell.alignment = Alignment(horizontal="center", vertical="center", wrap_text=True)
            cell.border = BORDER
            worksheet.column_dimensions[get_column_letter(col_idx)].width = max(12, len(title) + 4)

    def _create_pairs_sheet(self, worksheet, rows: List[Dict], columns: Sequence[str], means: Dict):
        """Создание листа с метриками по парам."""
        self._header(worksheet, [COLUMN_TITLES.get(c, c) for c in columns])
        mean_psnr = means.get("psnr_db")
        for row_idx, row in enumerate(rows, 2):
            good = mean_psnr is None or row.get("psnr_db", 0) >= mean_psnr
            for col_idx, column in enumerate(columns, 1):
                value = row.get(column, "")
                cell = worksheet.cell(row=row_idx, column=col_idx, value=value)
                cell.fill = GOOD_FILL if good else WEAK_FILL
                cell.border = BORDER
                if isinstance(value, float):
                    cell.number_format = "0.0000"
        worksheet.freeze_panes = "A2"

    def _create_summary_sheet(self, worksheet, columns: Sequence[str], means: Dict, metadata: Dict):
        """Создание листа со средними значениями и параметрами запуска."""
        self._header(worksheet, ["Показатель", "Значение"])
        row_idx = 2
        for column in columns[1:]:
            worksheet.cell(row=row_idx, column=1, value=f"Среднее: {COLUMN_TITLES.get(column, column)}")
            cell = worksheet.cell(row=row_idx, column=2, value=means.get(column))
            cell.number_format = "0.0000"
            row_idx += 1
        for key in sorted(metadata):
            worksheet.cell(row=row_idx, column=1, value=key)
            worksheet.cell(row=row_idx, column=2, value=str(metadata[key]))
            row_idx += 1
        worksheet.column_dimensions["A"].width = 36
        worksheet.column_dimensions["B"].width = 40
