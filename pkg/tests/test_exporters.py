"""
Тесты для всех экспортеров (Excel, JSON, CSV).
"""

import csv
import json

import pytest
from openpyxl import load_workbook

from csv_export import CSVExporter, format_value
from excel_export import GOOD_FILL, WEAK_FILL, ExcelExporter
from json_export import JSONExporter


COLUMNS = ("id", "psnr_db", "ssim", "cx_distance", "offset_error_px")


@pytest.fixture
def sample_rows():
    """Фикстура с примерными метриками по парам."""
    return [
        {"id": "000000", "psnr_db": 30.5, "ssim": 0.91, "cx_distance": 0.12, "offset_error_px": 0.4},
        {"id": "000001", "psnr_db": 27.25, "ssim": 0.85, "cx_distance": 0.2, "offset_error_px": 1.1},
    ]


@pytest.fixture
def sample_means():
    """Фикстура со средними значениями."""
    return {"psnr_db": 28.875, "ssim": 0.88, "cx_distance": 0.16, "offset_error_px": 0.75}


class TestCSVExporter:
    """Тесты для CSV экспортера."""

    def test_metrics_with_mean_row(self, tmp_path, sample_rows, sample_means):
        """Тест экспорта метрик с итоговой строкой mean."""
        path = CSVExporter(str(tmp_path)).export_metrics(sample_rows, COLUMNS, sample_means)
        with open(path, encoding="utf-8") as f:
            rows = list(csv.reader(f))
        assert rows[0] == list(COLUMNS)
        assert rows[1] == ["000000", "30.500000", "0.910000", "0.120000", "0.400000"]
        assert rows[-1][0] == "mean"
        assert rows[-1][1] == "28.875000"

    def test_loss_curve(self, tmp_path):
        """Тест экспорта кривой обучения."""
        records = [{"epoch": 1, "step": 1, "loss": 0.5}, {"epoch": 1, "step": 2, "loss": 0.25}]
        path = CSVExporter(str(tmp_path)).export_loss_curve(records)
        assert path.read_text(encoding="utf-8") == "epoch,step,loss\n1,1,0.500000\n1,2,0.250000\n"

    def test_validation_empty(self, tmp_path):
        """Тест: пустая валидация дает файл только с заголовком."""
        path = CSVExporter(str(tmp_path)).export_validation([])
        assert path.read_text(encoding="utf-8") == "epoch,psnr_db,ssim\n"

    def test_custom_delimiter(self, tmp_path, sample_rows, sample_means):
        """Тест пользовательского разделителя."""
        path = CSVExporter(str(tmp_path), delimiter=";").export_metrics(sample_rows, COLUMNS, sample_means)
        assert path.read_text(encoding="utf-8").splitlines()[0] == ";".join(COLUMNS)

    def test_experiments(self, tmp_path):
        """Тест экспорта итогов абляции: пропуски пустые, время не пишется."""
        records = [
            {"arm": "sdcn-cpa-flip", "final_loss": 0.01, "psnr_db": 31.5, "infer_psnr_db": 30.0,
             "offset_error_px": 0.5, "mask_band_ok": True, "seconds": 12.3},
            {"arm": "no-align", "final_loss": 0.02, "psnr_db": 28.0, "infer_psnr_db": 28.0,
             "offset_error_px": None, "mask_band_ok": None, "seconds": 4.0},
        ]
        path = CSVExporter(str(tmp_path)).export_experiments(records)
        assert path.read_text(encoding="utf-8").splitlines() == [
            "arm,final_loss,psnr_db,infer_psnr_db,offset_error_px,mask_band_ok",
            "sdcn-cpa-flip,0.010000,31.500000,30.000000,0.500000,True",
            "no-align,0.020000,28.000000,28.000000,,",
        ]

    def test_format_value(self):
        """Тест форматирования ячеек."""
        assert format_value(1.0) == "1.000000"
        assert format_value(3) == "3"
        assert format_value("id") == "id"

    def test_byte_identical(self, tmp_path, sample_rows, sample_means):
        """Тест: одинаковые данные дают побайтно равные файлы."""
        a = CSVExporter(str(tmp_path / "a")).export_metrics(sample_rows, COLUMNS, sample_means)
        b = CSVExporter(str(tmp_path / "b")).export_metrics(sample_rows, COLUMNS, sample_means)
        assert a.read_bytes() == b.read_bytes()


class TestJSONExporter:
    """Тесты для JSON экспортера."""

    def test_metrics(self, tmp_path, sample_rows, sample_means):
        """Тест экспорта метрик с метаданными."""
        path = JSONExporter(str(tmp_path / "metrics.json")).export_metrics(
            sample_rows, sample_means, {"predictor": "model"}
        )
        payload = json.loads(path.read_text(encoding="utf-8"))
        assert payload["metadata"] == {"predictor": "model"}
        assert payload["rows"][1]["id"] == "000001"
        assert payload["means"]["ssim"] == 0.88

    def test_suffix_added(self, tmp_path, sample_rows, sample_means):
        """Тест: расширение .json добавляется автоматически."""
        path = JSONExporter(str(tmp_path / "metrics")).export_metrics(sample_rows, sample_means)
        assert path.name == "metrics.json"

    def test_gradcheck(self, tmp_path):
        """Тест экспорта таблицы проверки градиентов."""
        results = [
            {"op": "conv2d", "trials": 3, "max_rel_err": 1e-8, "tolerance": 1e-6, "status": "OK"},
            {"op": "flip", "trials": 3, "max_rel_err": 0.5, "tolerance": 1e-6, "status": "FAIL"},
        ]
        path = JSONExporter(str(tmp_path / "gc.json")).export_gradcheck(results, {"f64": True})
        payload = json.loads(path.read_text(encoding="utf-8"))
        assert payload["passed"] is False
        assert [r["op"] for r in payload["ops"]] == ["conv2d", "flip"]

    def test_experiments(self, tmp_path):
        """Тест экспорта абляции: общий итог по всем критериям."""
        verdicts = [
            {"name": "offset_recovery", "passed": True, "detail": "0.4 px"},
            {"name": "psnr_gain", "passed": False, "detail": "1.0 дБ"},
        ]
        path = JSONExporter(str(tmp_path / "exp.json")).export_experiments(
            [{"arm": "sdcn", "psnr_db": 30.0}], verdicts, {"held_out": 4}
        )
        payload = json.loads(path.read_text(encoding="utf-8"))
        assert payload["passed"] is False
        assert payload["metadata"] == {"held_out": 4}
        assert [c["name"] for c in payload["criteria"]] == ["offset_recovery", "psnr_gain"]

    def test_compact(self, tmp_path, sample_rows, sample_means):
        """Тест компактного вывода без отступов."""
        path = JSONExporter(str(tmp_path / "m.json"), pretty=False).export_metrics(sample_rows, sample_means)
        assert len(path.read_text(encoding="utf-8").splitlines()) == 1


class TestExcelExporter:
    """Тесты для Excel экспортера."""

    def test_sheets(self, tmp_path, sample_rows, sample_means):
        """Тест листов и заголовков."""
        path = tmp_path / "metrics.xlsx"
        ExcelExporter(str(path)).export_metrics(sample_rows, COLUMNS, sample_means, {"predictor": "model"})
        workbook = load_workbook(path)
        assert workbook.sheetnames == ["Пары", "Сводка"]
        pairs = workbook["Пары"]
        assert pairs.cell(row=1, column=2).value == "PSNR, дБ"
        assert pairs.cell(row=3, column=1).value == "000001"
        assert pairs.cell(row=2, column=2).value == pytest.approx(30.5)

    def test_row_colors(self, tmp_path, sample_rows, sample_means):
        """Тест: строки с PSNR не ниже среднего зеленые, остальные желтые."""
        path = tmp_path / "metrics.xlsx"
        ExcelExporter(str(path)).export_metrics(sample_rows, COLUMNS, sample_means)
        pairs = load_workbook(path)["Пары"]
        assert pairs.cell(row=2, column=1).fill.start_color.rgb.endswith(GOOD_FILL.start_color.rgb[-6:])
        assert pairs.cell(row=3, column=1).fill.start_color.rgb.endswith(WEAK_FILL.start_color.rgb[-6:])

    def test_summary(self, tmp_path, sample_rows, sample_means):
        """Тест листа сводки."""
        path = tmp_path / "metrics.xlsx"
        ExcelExporter(str(path)).export_metrics(sample_rows, COLUMNS, sample_means, {"seed": 0})
        summary = load_workbook(path)["Сводка"]
        assert summary.cell(row=2, column=1).value == "Среднее: PSNR, дБ"
        assert summary.cell(row=2, column=2).value == pytest.approx(28.875)
        assert summary.cell(row=6, column=1).value == "seed"
