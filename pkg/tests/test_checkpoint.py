"""
Тесты сохранения и загрузки чекпойнтов.
"""

import json

import numpy as np
import pytest

from checkpoint import load_checkpoint, save_checkpoint
from config import ModelConfig
from exceptions import CheckpointError
from sdan_model import SdanModel


def tree_bytes(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


class TestCheckpoint:
    """Тесты для save_checkpoint и load_checkpoint."""

    def test_round_trip(self, tiny_config, tmp_path, rng):
        """Тест: загруженная модель совпадает с сохраненной."""
        model = SdanModel.create(tiny_config, seed=4)
        model.named_arrays()["head2.weight"][...] = rng.normal(size=model.head[1].weight.shape)
        loaded = load_checkpoint(save_checkpoint(model, tmp_path / "ckpt"))
        assert loaded.config == model.config
        assert loaded.seed == 4
        for name, value in model.named_arrays().items():
            np.testing.assert_array_equal(loaded.named_arrays()[name], value)

    def test_manifest_sorted_with_roles(self, tiny_config, tmp_path):
        """Тест: манифест отсортирован по имени и содержит форму и роль."""
        path = save_checkpoint(SdanModel.create(tiny_config), tmp_path / "ckpt")
        lines = (path / "manifest.txt").read_text(encoding="utf-8").splitlines()
        names = [line.split("\t")[0] for line in lines]
        assert names == sorted(names)
        entry = dict((l.split("\t")[0], l.split("\t")[1:]) for l in lines)
        assert entry["head2.weight"] == ["2x8x3x3", "offset"]
        assert entry["final.bias"] == ["3", "output"]
        assert entry["attention.fc1"][1] == "offset"

    def test_config_json(self, tiny_config, tmp_path):
        """Тест содержимого config.json."""
        path = save_checkpoint(SdanModel.create(tiny_config, seed=9), tmp_path / "ckpt")
        payload = json.loads((path / "config.json").read_text(encoding="utf-8"))
        assert payload["seed"] == 9
        assert ModelConfig.from_dict(payload["model"]) == tiny_config

    def test_byte_identical(self, tiny_config, tmp_path):
        """Тест: два сохранения одной модели побайтно равны."""
        model = SdanModel.create(tiny_config)
        a = save_checkpoint(model, tmp_path / "a")
        b = save_checkpoint(model, tmp_path / "b")
        assert tree_bytes(a) == tree_bytes(b)

    def test_missing_tensor(self, tiny_config, tmp_path):
        """Тест отказа при отсутствующем тензоре параметра."""
        path = save_checkpoint(SdanModel.create(tiny_config), tmp_path / "ckpt")
        (path / "final.bias.sdtn").unlink()
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_corrupted_tensor(self, tiny_config, tmp_path):
        """Тест отказа для поврежденного тензора."""
        path = save_checkpoint(SdanModel.create(tiny_config), tmp_path / "ckpt")
        (path / "mid.weight.sdtn").write_bytes(b"garbage")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_shape_mismatch(self, tiny_config, tmp_path):
        """Тест отказа, когда форма в манифесте не совпадает с моделью."""
        path = save_checkpoint(SdanModel.create(tiny_config), tmp_path / "ckpt")
        manifest = path / "manifest.txt"
        manifest.write_text(manifest.read_text(encoding="utf-8").replace("2x8x3x3", "1x16x3x3"), encoding="utf-8")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_directory(self, tmp_path):
        """Тест отказа для отсутствующего каталога."""
        with pytest.raises(CheckpointError) as exc:
            load_checkpoint(tmp_path / "nope")
        assert exc.value.exit_code == 3
