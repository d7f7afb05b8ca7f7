"""
Тесты для CLI интерфейса.
"""

import csv
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

import cli
from image_io import read_image, write_image
from tensor_core import Tensor
from tensor_io import load_tensor, save_tensor
from zoom_synth import read_manifest


TINY_MODEL = ["--channels", "8", "--blocks", "1", "--reduction", "4"]


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    """Маленький процедурный набор, сгенерированный через CLI."""
    out = tmp_path_factory.mktemp("cli") / "ds"
    code = cli.main(["gen-data", "--procedural", "2", "--out", str(out), "--count", "4",
                     "--scale", "2", "--crop", "16", "--shift-max", "2", "--seed", "3"])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def checkpoint_dir(dataset_dir, tmp_path_factory):
    """Чекпойнт после одной эпохи обучения крошечной модели."""
    run = tmp_path_factory.mktemp("run")
    code = cli.main(["train", "--data", str(dataset_dir), "--out", str(run), "--epochs", "1",
                     "--batch-size", "2", "--val-count", "1", "--checkpoint-every", "0", *TINY_MODEL])
    assert code == 0
    return run / "checkpoints" / "final"


class TestArguments:
    """Тесты разбора аргументов."""

    def test_help(self, project_dir):
        """Тест вывода справки."""
        result = subprocess.run([sys.executable, "cli.py", "--help"], capture_output=True,
                                text=True, cwd=project_dir)
        assert result.returncode == 0
        for command in ("gen-data", "train", "infer", "eval", "gradcheck", "experiments"):
            assert command in result.stdout

    def test_no_command(self):
        """Тест: без подкоманды код 2."""
        assert cli.main([]) == 2

    def test_preset(self):
        """Тест: пресет задает оси абляции."""
        args = cli.resolve_args(["train", "--preset", "dcn"])
        assert (args.offset_mode, args.attention, args.flip_aug, args.no_align) == ("per_point", "none", "off", False)

    @pytest.mark.parametrize("row, expected", [
        (1, ("per_point", "none", "off")),
        (2, ("squared", "none", "off")),
        (3, ("squared", "channel", "off")),
        (4, ("squared", "cpa", "off")),
        (5, ("squared", "cpa", "on")),
    ])
    def test_table_row_presets(self, row, expected):
        """Тест: пресеты table2-row-N задают строки абляции по порядку."""
        args = cli.resolve_args(["train", "--preset", f"table2-row-{row}"])
        assert (args.offset_mode, args.attention, args.flip_aug) == expected
        assert args.no_align is False

    def test_flag_overrides_preset(self):
        """Тест: явный флаг важнее пресета."""
        args = cli.resolve_args(["train", "--preset", "sdcn-ca", "--attention", "cpa"])
        assert args.attention == "cpa"
        assert args.offset_mode == "squared"

    def test_offset_mode_hyphen(self):
        """Тест: per-point и per_point равнозначны."""
        assert cli.resolve_args(["train", "--offset-mode", "per-point"]).offset_mode == "per_point"

    def test_config_file(self, tmp_path):
        """Тест: значения из файла конфигурации приводятся к типам флагов."""
        path = tmp_path / "train.conf"
        path.write_text("# обучение\nepochs = 3\nlr = 0.01\nno-align = true\nflip_aug = off\n", encoding="utf-8")
        args = cli.resolve_args(["train", "--config", str(path)])
        assert args.epochs == 3
        assert args.lr == 0.01
        assert args.no_align is True
        assert args.flip_aug == "off"

    def test_precedence(self, tmp_path):
        """Тест приоритетов: файл < пресет < явные флаги."""
        path = tmp_path / "train.conf"
        path.write_text("attention = channel\nepochs = 5\n", encoding="utf-8")
        args = cli.resolve_args(["train", "--config", str(path), "--preset", "sdcn-cpa"])
        assert args.attention == "cpa"
        assert args.epochs == 5
        args = cli.resolve_args(["train", "--config", str(path), "--preset", "sdcn-cpa",
                                 "--attention", "none", "--epochs", "7"])
        assert args.attention == "none"
        assert args.epochs == 7

    def test_preset_from_config_file(self, tmp_path):
        """Тест: пресет можно задать в файле конфигурации."""
        path = tmp_path / "train.conf"
        path.write_text("preset = sdcn-cpa-flip\n", encoding="utf-8")
        args = cli.resolve_args(["train", "--config", str(path)])
        assert args.flip_aug == "on" and args.attention == "cpa"

    @pytest.mark.parametrize("content", ["unknown_key = 1\n", "epochs = many\n", "attention = full\n", "no equals\n"])
    def test_bad_config_file(self, tmp_path, content):
        """Тест: некорректный файл конфигурации дает код 2."""
        path = tmp_path / "bad.conf"
        path.write_text(content, encoding="utf-8")
        assert cli.main(["train", "--config", str(path), "--data", "x", "--out", "y"]) == 2

    def test_missing_required(self, capsys):
        """Тест: отсутствие обязательных параметров дает код 2."""
        assert cli.main(["train"]) == 2
        assert "--data" in capsys.readouterr().err


@pytest.mark.integration
class TestGenData:
    """Тесты команды gen-data."""

    def test_summary_and_manifest(self, tmp_path, capsys):
        """Тест сводки и манифеста."""
        out = tmp_path / "ds"
        code = cli.main(["gen-data", "--procedural", "1", "--out", str(out), "--count", "3",
                         "--scale", "2", "--crop", "16", "--shift-max", "1"])
        assert code == 0
        assert "Сгенерировано пар: 3" in capsys.readouterr().out
        assert len(read_manifest(out)) == 3

    def test_raw_mode(self, tmp_path):
        """Тест режима raw: lr упакован в 4 канала."""
        out = tmp_path / "raw"
        code = cli.main(["gen-data", "--procedural", "1", "--out", str(out), "--count", "1",
                         "--scale", "2", "--crop", "16", "--shift-max", "1", "--mode", "raw"])
        assert code == 0
        assert load_tensor(out / "pairs" / "000000.lr.sdtn").shape == (1, 4, 8, 8)

    def test_two_sources(self, tmp_path):
        """Тест: --src вместе с --procedural дает код 2."""
        code = cli.main(["gen-data", "--src", str(tmp_path), "--procedural", "1", "--out", str(tmp_path / "o")])
        assert code == 2

    def test_missing_source_dir(self, tmp_path):
        """Тест: отсутствующий каталог исходников дает код 3."""
        assert cli.main(["gen-data", "--src", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 3

    def test_failure_removes_new_output(self, tmp_path):
        """Тест: при ошибке генерации новый каталог результата удаляется."""
        src = tmp_path / "src"
        src.mkdir()
        write_image(Tensor.zeros((1, 3, 8, 8)), src / "small.png")
        out = tmp_path / "o"
        assert cli.main(["gen-data", "--src", str(src), "--out", str(out), "--crop", "16"]) == 3
        assert not out.exists()
        assert list(tmp_path.iterdir()) == [src]

    def test_smaller_rerun_leaves_no_stale_pairs(self, tmp_path):
        """Тест: повторная генерация меньшего набора не оставляет старых пар."""
        out = tmp_path / "ds"
        args = ["gen-data", "--procedural", "1", "--out", str(out), "--scale", "2", "--crop", "16", "--shift-max", "1"]
        assert cli.main(args + ["--count", "3"]) == 0
        (out / "notes.txt").write_text("keep", encoding="utf-8")
        assert cli.main(args + ["--count", "1"]) == 0
        assert len(read_manifest(out)) == 1
        assert sorted(p.name for p in (out / "pairs").iterdir()) == [
            "000000.hr.sdtn", "000000.lr.sdtn", "000000.yref.sdtn"]
        assert (out / "notes.txt").read_text(encoding="utf-8") == "keep"
        assert sorted(p.name for p in tmp_path.iterdir()) == ["ds"]

    def test_failure_keeps_previous_dataset(self, tmp_path):
        """Тест: ошибка генерации не трогает прежний набор."""
        out = tmp_path / "ds"
        assert cli.main(["gen-data", "--procedural", "1", "--out", str(out), "--count", "2",
                         "--scale", "2", "--crop", "16", "--shift-max", "1"]) == 0
        before = {p.name: p.read_bytes() for p in (out / "pairs").iterdir()}
        manifest = (out / "manifest.tsv").read_bytes()
        src = tmp_path / "src"
        src.mkdir()
        write_image(Tensor.zeros((1, 3, 8, 8)), src / "small.png")
        assert cli.main(["gen-data", "--src", str(src), "--out", str(out), "--crop", "16"]) == 3
        assert {p.name: p.read_bytes() for p in (out / "pairs").iterdir()} == before
        assert (out / "manifest.tsv").read_bytes() == manifest
        assert sorted(p.name for p in tmp_path.iterdir()) == ["ds", "src"]


@pytest.mark.integration
class TestTrainInferEval:
    """Сквозные тесты train / infer / eval."""

    def test_same_seed_runs_byte_identical(self, dataset_dir, tmp_path, monkeypatch):
        """Тест: два запуска train с одним seed дают побайтно одинаковые файлы."""
        monkeypatch.setattr(cli.config.tensor, "deterministic", cli.config.tensor.deterministic)
        runs = []
        for name in ("a", "b"):
            out = tmp_path / name
            code = cli.main(["train", "--data", str(dataset_dir), "--out", str(out), "--epochs", "2",
                             "--batch-size", "2", "--val-count", "1", "--checkpoint-every", "1",
                             "--seed", "7", "--deterministic", *TINY_MODEL])
            assert code == 0
            runs.append({p.relative_to(out).as_posix(): p.read_bytes() for p in out.rglob("*") if p.is_file()})
        assert "loss_curve.csv" in runs[0]
        assert "checkpoints/final/manifest.txt" in runs[0]
        assert any(name.endswith(".sdtn") for name in runs[0])
        assert runs[0] == runs[1]

    def test_train_outputs(self, checkpoint_dir):
        """Тест: обучение пишет финальный чекпойнт и кривые."""
        assert (checkpoint_dir / "manifest.txt").exists()
        run = checkpoint_dir.parent.parent
        with open(run / "loss_curve.csv", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 2
        assert np.isfinite(float(rows[0]["loss"]))

    def test_train_missing_dataset(self, tmp_path):
        """Тест: отсутствующий набор данных дает код 3."""
        assert cli.main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 3

    def test_infer_image(self, checkpoint_dir, tmp_path, rng):
        """Тест инференса PNG с выгрузкой смещений и маски."""
        write_image(Tensor(rng.uniform(size=(1, 3, 16, 16))), tmp_path / "photo.png")
        out = tmp_path / "out"
        code = cli.main(["infer", "--checkpoint", str(checkpoint_dir), "--input", str(tmp_path / "photo.png"),
                         "--out", str(out), "--dump-offsets", "--dump-mask"])
        assert code == 0
        assert read_image(out / "photo.zoomed.png").shape == (1, 3, 32, 32)
        assert load_tensor(out / "photo.offsets.sdtn").shape == (1, 2, 16, 16)
        assert (out / "photo.mask.png").exists()

    def test_infer_tensor_ppm(self, checkpoint_dir, tmp_path, rng):
        """Тест инференса тензора SDTN с выводом в PPM."""
        save_tensor(Tensor(rng.uniform(size=(1, 3, 16, 16))), tmp_path / "x.sdtn")
        out = tmp_path / "out"
        code = cli.main(["infer", "--checkpoint", str(checkpoint_dir), "--input", str(tmp_path / "x.sdtn"),
                         "--out", str(out), "--format", "ppm"])
        assert code == 0
        assert (out / "x.zoomed.ppm").read_bytes().startswith(b"P6\n32 32\n255\n")

    def test_infer_missing_checkpoint(self, tmp_path):
        """Тест: отсутствующий чекпойнт дает код 3."""
        code = cli.main(["infer", "--checkpoint", str(tmp_path / "none"), "--input", "a.png", "--out", str(tmp_path)])
        assert code == 3

    def test_infer_corrupted_checkpoint(self, checkpoint_dir, tmp_path, rng):
        """Тест: поврежденный чекпойнт дает код 3."""
        broken = tmp_path / "broken"
        shutil.copytree(checkpoint_dir, broken)
        (broken / "final.weight.sdtn").write_bytes(b"SDTN")
        save_tensor(Tensor(rng.uniform(size=(1, 3, 16, 16))), tmp_path / "x.sdtn")
        code = cli.main(["infer", "--checkpoint", str(broken), "--input", str(tmp_path / "x.sdtn"),
                         "--out", str(tmp_path / "o")])
        assert code == 3

    def test_eval_oracle(self, dataset_dir, tmp_path, capsys):
        """Тест: предсказатель oracle дает PSNR 99 и SSIM 1 в строке mean."""
        out = tmp_path / "report"
        code = cli.main(["eval", "--data", str(dataset_dir), "--out", str(out), "--predictor", "oracle",
                         "--json", "--xlsx"])
        assert code == 0
        stdout = capsys.readouterr().out
        assert stdout.splitlines()[0] == "id\tpsnr_db\tssim\tcx_distance"
        with open(out / "metrics.csv", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        assert rows[-1]["id"] == "mean"
        assert rows[-1]["psnr_db"] == "99.000000"
        assert rows[-1]["ssim"] == "1.000000"
        payload = json.loads((out / "metrics.json").read_text(encoding="utf-8"))
        assert payload["metadata"]["predictor"] == "oracle"
        assert (out / "metrics.xlsx").exists()

    def test_eval_model(self, dataset_dir, checkpoint_dir, tmp_path):
        """Тест: оценка модели содержит столбец ошибки смещения."""
        out = tmp_path / "report"
        code = cli.main(["eval", "--checkpoint", str(checkpoint_dir), "--data", str(dataset_dir),
                         "--out", str(out), "--dump-outputs", "--limit", "2"])
        assert code == 0
        header = (out / "metrics.csv").read_text(encoding="utf-8").splitlines()[0]
        assert header == "id,psnr_db,ssim,cx_distance,offset_error_px"
        assert len(list((out / "outputs").glob("*.zoomed.sdtn"))) == 2

    def test_eval_model_requires_checkpoint(self, dataset_dir, tmp_path):
        """Тест: предсказатель model без чекпойнта дает код 2."""
        assert cli.main(["eval", "--data", str(dataset_dir), "--out", str(tmp_path)]) == 2


@pytest.mark.integration
class TestExperiments:
    """Тесты команды experiments."""

    def test_reports(self, dataset_dir, tmp_path, capsys):
        """Тест: три ветви по умолчанию, CSV и JSON с критериями."""
        out = tmp_path / "exp"
        code = cli.main(["experiments", "--data", str(dataset_dir), "--out", str(out), "--held-out", "1",
                         "--epochs", "1", "--batch-size", "2", "--json", *TINY_MODEL])
        assert code == 0
        with open(out / "experiments.csv", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        assert [r["arm"] for r in rows] == list(cli.DEFAULT_ARMS)
        assert rows[-1]["offset_error_px"] == ""
        payload = json.loads((out / "experiments.json").read_text(encoding="utf-8"))
        assert payload["metadata"]["held_out"] == 1
        assert [c["name"] for c in payload["criteria"]] == [
            "offset_recovery", "mask_band", "psnr_order", "psnr_gain"]
        assert "psnr_order" in capsys.readouterr().out

    def test_arms_flag(self, dataset_dir, tmp_path):
        """Тест: --arms выбирает ветви, включая синонимы строк таблицы."""
        out = tmp_path / "exp"
        code = cli.main(["experiments", "--data", str(dataset_dir), "--out", str(out), "--held-out", "1",
                         "--epochs", "1", "--arms", "table2-row-1", "no-align", *TINY_MODEL])
        assert code == 0
        lines = (out / "experiments.csv").read_text(encoding="utf-8").splitlines()
        assert [line.split(",")[0] for line in lines[1:]] == ["table2-row-1", "no-align"]

    @pytest.mark.parametrize("held_out", ["0", "4"])
    def test_held_out_range(self, dataset_dir, tmp_path, held_out):
        """Тест: отложенных пар должно быть от 1 до числа пар минус один."""
        code = cli.main(["experiments", "--data", str(dataset_dir), "--out", str(tmp_path / "exp"),
                         "--held-out", held_out, "--epochs", "1", *TINY_MODEL])
        assert code == 2

    def test_missing_dataset(self, tmp_path):
        """Тест: отсутствующий набор данных дает код 3."""
        assert cli.main(["experiments", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 3


@pytest.mark.slow
class TestAblationAcceptance:
    """Абляция на наборе со сдвигами до 8 px: восстановление сдвига и порядок PSNR."""

    def test_full_model_recovers_shift(self, tmp_path):
        """Тест: полная модель находит сдвиг с точностью 1 px и выигрывает не меньше 2 дБ."""
        data = tmp_path / "ds"
        assert cli.main(["gen-data", "--procedural", "16", "--out", str(data), "--count", "256",
                         "--scale", "4", "--crop", "32", "--shift-max", "8", "--seed", "11"]) == 0
        out = tmp_path / "exp"
        code = cli.main(["experiments", "--data", str(data), "--out", str(out), "--held-out", "32",
                         "--channels", "32", "--blocks", "2", "--offset-packing", "4",
                         "--epochs", "40", "--batch-size", "8", "--lr", "1e-3", "--seed", "5", "--json"])
        assert code == 0
        payload = json.loads((out / "experiments.json").read_text(encoding="utf-8"))
        verdicts = {c["name"]: c for c in payload["criteria"]}
        for name in ("offset_recovery", "mask_band", "psnr_order", "psnr_gain"):
            assert verdicts[name]["passed"], verdicts[name]["detail"]
