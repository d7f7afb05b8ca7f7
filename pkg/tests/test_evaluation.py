"""
Тесты оценки качества на наборе пар.
"""

from dataclasses import replace

import numpy as np
import pytest

from config import ModelConfig
from evaluation import evaluate_pairs, mean_offset, offset_error, predict
from exceptions import ConfigError
from sdan_model import SdanModel
from tensor_io import load_tensor
from zoom_synth import bayer_pack


class TestPredict:
    """Тесты для predict."""

    def test_oracle_returns_hr(self, tiny_pairs):
        """Тест: предсказатель oracle возвращает HR."""
        assert predict(None, tiny_pairs[0], "oracle") is tiny_pairs[0].hr

    def test_bicubic_shape(self, tiny_pairs):
        """Тест: бикубическое увеличение до размера HR."""
        assert predict(None, tiny_pairs[0], "bicubic").shape == tiny_pairs[0].hr.shape

    def test_model_requires_checkpoint(self, tiny_pairs):
        """Тест отказа для предсказателя model без модели."""
        with pytest.raises(ConfigError):
            predict(None, tiny_pairs[0], "model")

    def test_unknown_predictor(self, tiny_pairs):
        """Тест отказа для неизвестного предсказателя."""
        with pytest.raises(ConfigError):
            predict(None, tiny_pairs[0], "nearest")


class TestOffsets:
    """Тесты ошибки восстановления смещения."""

    def test_fresh_model_mean_offset_is_zero(self, tiny_config, tiny_pairs):
        """Тест: свежая модель выдает нулевое среднее смещение."""
        assert mean_offset(SdanModel.create(tiny_config), tiny_pairs[1]) == (0.0, 0.0)

    def test_error_is_distance_to_truth(self, tiny_config, tiny_pairs):
        """Тест: ошибка свежей модели равна норме истинного сдвига."""
        pair = tiny_pairs[3]
        assert offset_error(SdanModel.create(tiny_config), pair) == pytest.approx(np.hypot(*pair.truth_shift))


@pytest.mark.integration
class TestEvaluatePairs:
    """Тесты для evaluate_pairs."""

    def test_oracle_protocol(self, tiny_pairs):
        """Тест: oracle дает PSNR 99, SSIM 1 и нулевую контекстную дистанцию."""
        rows, columns, means = evaluate_pairs(None, tiny_pairs, predictor="oracle")
        assert columns == ("id", "psnr_db", "ssim", "cx_distance")
        assert means["psnr_db"] == 99.0
        assert means["ssim"] == pytest.approx(1.0)
        assert means["cx_distance"] == pytest.approx(0.0, abs=1e-9)
        assert [r["id"] for r in rows] == [p.id for p in tiny_pairs]

    def test_offset_column_with_truth(self, tiny_config, tiny_pairs):
        """Тест: столбец offset_error_px присутствует при известных сдвигах."""
        rows, columns, means = evaluate_pairs(SdanModel.create(tiny_config), tiny_pairs[:2])
        assert columns[-1] == "offset_error_px"
        assert rows[1]["offset_error_px"] == pytest.approx(1.0)
        assert "offset_error_px" in means

    def test_no_offset_column_without_truth(self, tiny_config, tiny_pairs):
        """Тест: без истинного сдвига столбца нет."""
        pairs = [replace(tiny_pairs[0], truth_shift=None), tiny_pairs[1]]
        _, columns, _ = evaluate_pairs(SdanModel.create(tiny_config), pairs)
        assert "offset_error_px" not in columns

    def test_model_features(self, tiny_config, tiny_pairs):
        """Тест контекстной дистанции на признаках модели."""
        rows, _, _ = evaluate_pairs(SdanModel.create(tiny_config), tiny_pairs[:1], cx_features="model")
        assert rows[0]["cx_distance"] >= 0.0

    def test_model_features_require_model(self, tiny_pairs):
        """Тест отказа для признаков модели без чекпойнта."""
        with pytest.raises(ConfigError):
            evaluate_pairs(None, tiny_pairs, predictor="oracle", cx_features="model")

    def test_dump_outputs(self, tiny_pairs, tmp_path):
        """Тест сохранения предсказаний в SDTN."""
        evaluate_pairs(None, tiny_pairs[:2], predictor="oracle", dump_dir=tmp_path)
        dumped = load_tensor(tmp_path / f"{tiny_pairs[1].id}.zoomed.sdtn")
        np.testing.assert_array_equal(dumped.data, tiny_pairs[1].hr.data)

    def test_raw_rejects_bicubic(self, tiny_pairs):
        """Тест отказа бикубического предсказателя для RAW-пар."""
        pair = replace(tiny_pairs[0], lr=bayer_pack(tiny_pairs[0].lr), mode="raw")
        with pytest.raises(ConfigError):
            evaluate_pairs(None, [pair], predictor="bicubic")

    def test_raw_model_offsets_scaled(self, tiny_pairs):
        """Тест: смещения RAW-модели пересчитываются в RGB LR-пиксели."""
        cfg = ModelConfig(in_channels=4, base_channels=8, num_res_blocks=1, scale=2, reduction=4, packing_size=2)
        model = SdanModel.create(cfg)
        model.named_arrays()["head2.bias"][...] = [0.5, -0.25]
        pair = replace(tiny_pairs[0], lr=bayer_pack(tiny_pairs[0].lr), yref=bayer_pack(tiny_pairs[0].yref), mode="raw")
        dy, dx = mean_offset(model, pair)
        assert dy == pytest.approx(1.0, abs=1e-6)
        assert dx == pytest.approx(-0.5, abs=1e-6)
