"""
Тесты проверки градиентов конечными разностями.
"""

import json

import numpy as np
import pytest

import cli
import deform_align
import gradcheck
from config import GradcheckConfig
from exceptions import ConfigError
from gradcheck import (
    CheckResult,
    GradCase,
    available_ops,
    check_case,
    failed_ops,
    numeric_derivative,
    relative_error,
    run_gradcheck,
    tolerance_for,
)
from tensor_core import Tensor


PRIMITIVES = ["conv2d", "activation", "global_avg_pool", "concat_channels",
              "space_to_depth", "depth_to_space", "flip"]


@pytest.fixture
def corrupted_deform(monkeypatch):
    """deform_conv_backward с градиентом весов, умноженным на 1.1."""
    original = deform_align.deform_conv_backward

    def corrupted(*args, **kwargs):
        gf, go, gw, gb = original(*args, **kwargs)
        return gf, go, Tensor(gw.data * 1.1), gb

    monkeypatch.setattr(deform_align, "deform_conv_backward", corrupted)


class TestHelpers:
    """Тесты вспомогательных функций."""

    def test_relative_error_floor(self):
        """Тест: нижняя граница знаменателя гасит ошибку около нуля."""
        err = relative_error(np.array([1e-9, 1.0]), np.array([0.0, 1.1]), floor=1e-3)
        assert err[0] == pytest.approx(1e-6)
        assert err[1] == pytest.approx(0.1 / 1.1)

    def test_zero_zero(self):
        """Тест: два нуля при нулевой границе дают нулевую ошибку."""
        assert relative_error(np.zeros(1), np.zeros(1), floor=0.0)[0] == 0.0

    def test_tolerances(self):
        """Тест порогов по точности и для составных операций."""
        cfg = GradcheckConfig()
        assert tolerance_for("conv2d", cfg, True) == 1e-6
        assert tolerance_for("conv2d", cfg, False) == 1e-4
        assert tolerance_for("model_loss", cfg, True) == 1e-6
        assert tolerance_for("model_loss", cfg, False) == 1e-3
        assert tolerance_for("offset_head", cfg, True) == 1e-6
        assert tolerance_for("offset_head", cfg, False) == 1e-4

    def test_default_trials(self):
        """Тест: составные проверки по умолчанию идут не меньше 100 испытаний."""
        cfg = GradcheckConfig()
        assert cfg.trials >= 100
        assert cfg.model_trials >= 100

    def test_result_status(self):
        """Тест статуса строки результата."""
        assert CheckResult("x", 1, 1e-7, 1e-6).status == "OK"
        assert CheckResult("x", 1, float("inf"), 1e-6).status == "FAIL"
        assert failed_ops([CheckResult("a", 1, 0.0, 1e-6), CheckResult("b", 1, 1.0, 1e-6)]) == ["b"]

    def test_registered_ops(self):
        """Тест: зарегистрированы все операции."""
        ops = available_ops()
        for name in PRIMITIVES + ["channel_attention", "cross_packing_attention",
                                  "flip_augmented_reference", "deform_conv", "offset_head", "model_loss"]:
            assert name in ops


def _exp_case(eps=None):
    """L = sum(exp(x)): гладкая функция с ненулевой третьей производной."""
    return GradCase(
        args={"x": np.array([0.3, -0.7, 1.1])},
        loss=lambda a: float(np.exp(a["x"]).sum()),
        grads=lambda a: {"x": np.exp(a["x"])},
        eps=eps,
    )


def _abs_at_zero_builder(rng, trial, cfg):
    """|x| около нуля: каждая координата попадает на излом."""
    case = GradCase(
        args={"x": np.full(4, 1e-5)},
        loss=lambda a: float(np.abs(a["x"]).sum()),
        grads=lambda a: {"x": np.sign(a["x"])},
        smooth=False,
    )
    return [case]


class TestCheckCase:
    """Тесты для check_case и numeric_derivative."""

    def test_truncation_removed(self, rng):
        """Тест: экстраполяция убирает ошибку усечения крупного шага."""
        case = _exp_case(eps=1e-2)
        plain = (np.exp(0.3 + 1e-2) - np.exp(0.3 - 1e-2)) / 2e-2
        assert abs(plain - np.exp(0.3)) / np.exp(0.3) > 1e-6
        numeric = numeric_derivative(case, "x", 0, 1e-2, 1e-6, 1e-3)
        assert numeric == pytest.approx(np.exp(0.3), rel=1e-9)
        worst, checked = check_case(case, rng, GradcheckConfig(), True, 1e-6)
        assert checked == 3
        assert worst < 1e-8

    def test_floor_over_all_arguments(self, rng):
        """Тест: градиент, ничтожный на масштабе всей функции, не сравнивается с шумом."""
        case = GradCase(
            args={"x": np.ones(2), "y": np.ones(2)},
            loss=lambda a: float(1e3 * a["x"].sum() + 1e-12 * a["y"].sum()),
            grads=lambda a: {"x": np.full(2, 1e3), "y": np.full(2, 1e-12)},
        )
        worst, checked = check_case(case, rng, GradcheckConfig(), True, 1e-6)
        assert checked == 4
        assert worst < 1e-6

    def test_kink_skipped(self, rng):
        """Тест: координата на изломе пропускается."""
        case = _abs_at_zero_builder(rng, 0, GradcheckConfig())[0]
        assert numeric_derivative(case, "x", 0, 2e-4, 1e-6, 1e-3) is None
        worst, checked = check_case(case, rng, GradcheckConfig(), True, 1e-6)
        assert checked == 0
        assert worst == 0.0

    def test_nothing_checked_fails(self, monkeypatch):
        """Тест: операция без единой проверенной координаты не проходит."""
        monkeypatch.setitem(gradcheck._CHECKS, "abs_at_zero", _abs_at_zero_builder)
        results = run_gradcheck(["abs_at_zero"], trials=2, f64=True)
        assert failed_ops(results) == ["abs_at_zero"]
        assert results[0].max_rel_err == float("inf")

    def test_missing_gradient(self, rng):
        """Тест: отсутствующий градиент дает бесконечную ошибку."""
        case = GradCase(
            args={"x": np.ones(2), "y": np.ones(2)},
            loss=lambda a: float(a["x"].sum() + a["y"].sum()),
            grads=lambda a: {"x": np.ones(2)},
        )
        worst, checked = check_case(case, rng, GradcheckConfig(), True, 1e-6)
        assert worst == float("inf")
        assert checked == 0


class TestRunGradcheck:
    """Тесты для run_gradcheck."""

    def test_primitives_pass_f64(self):
        """Тест: примитивы проходят проверку в float64."""
        results = run_gradcheck(PRIMITIVES, trials=3, f64=True)
        assert failed_ops(results) == []
        assert [r.op for r in results] == PRIMITIVES

    def test_alignment_ops_pass(self):
        """Тест: внимание и деформируемая свертка проходят проверку."""
        ops = ["channel_attention", "cross_packing_attention", "deform_conv"]
        assert failed_ops(run_gradcheck(ops, trials=2, f64=True)) == []

    def test_float32_tolerance(self):
        """Тест: в float32 применяется порог 1e-4."""
        results = run_gradcheck(["conv2d"], trials=2)
        assert results[0].tolerance == 1e-4
        assert results[0].passed

    def test_same_seed_same_result(self):
        """Тест воспроизводимости при одинаковом seed."""
        a = run_gradcheck(["flip"], trials=2, f64=True, seed=3)
        b = run_gradcheck(["flip"], trials=2, f64=True, seed=3)
        assert a[0].max_rel_err == b[0].max_rel_err

    def test_corrupted_backward_detected(self, corrupted_deform):
        """Тест: испорченный градиент весов обнаруживается."""
        results = run_gradcheck(["conv2d", "deform_conv"], trials=2, f64=True)
        assert failed_ops(results) == ["deform_conv"]

    def test_unknown_op(self):
        """Тест отказа для неизвестной операции."""
        with pytest.raises(ConfigError):
            run_gradcheck(["matmul"])

    @pytest.mark.integration
    def test_model_loss_all_variants(self):
        """Тест: функция потерь модели во всех вариантах конфигурации в пределах 1e-6."""
        results = run_gradcheck(["model_loss"], trials=len(gradcheck.MODEL_VARIANTS), f64=True)
        assert results[0].tolerance == 1e-6
        assert failed_ops(results) == []

    @pytest.mark.integration
    def test_attention_ops_f64(self):
        """Тест: внимание и голова смещений в float64 в пределах 1e-6."""
        ops = ["channel_attention", "cross_packing_attention", "offset_head"]
        assert failed_ops(run_gradcheck(ops, trials=12, f64=True)) == []


@pytest.mark.integration
class TestGradcheckCommand:
    """Тесты команды gradcheck."""

    def test_exit_code_on_failure(self, corrupted_deform, capsys):
        """Тест: провал проверки дает код 5 и строку FAIL с именем операции."""
        code = cli.main(["gradcheck", "--op", "deform_conv", "--trials", "1", "--f64"])
        assert code == 5
        out = capsys.readouterr().out
        assert "deform_conv" in out and "FAIL" in out

    def test_json_report(self, tmp_path, capsys):
        """Тест JSON-отчета."""
        path = tmp_path / "gc.json"
        code = cli.main(["gradcheck", "--op", "flip", "--trials", "1", "--f64", "--json", str(path)])
        assert code == 0
        payload = json.loads(path.read_text(encoding="utf-8"))
        assert payload["metadata"]["f64"] is True
        assert payload["passed"] is True
        assert payload["ops"][0]["op"] == "flip"
        assert payload["ops"][0]["status"] == "OK"


@pytest.mark.slow
class TestFullGradcheck:
    """Полная проверка с настройками по умолчанию."""

    def test_float32(self, capsys):
        """Тест: все операции во float32 проходят проверку."""
        assert cli.main(["gradcheck"]) == 0
        assert "FAIL" not in capsys.readouterr().out

    def test_float64(self, capsys):
        """Тест: все операции во float64 проходят проверку с порогом 1e-6."""
        assert cli.main(["gradcheck", "--f64"]) == 0
        assert "FAIL" not in capsys.readouterr().out
