"""
Модуль обучения SDAN.

train_step выполняет прямой проход, вычисляет функцию потерь с масками,
обратный проход и шаг Adam. Trainer прогоняет эпохи по перемешанному
набору, ведет кривую обучения и валидацию, сохраняет чекпойнты.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from checkpoint import save_checkpoint
from config import TrainConfig
from csv_export import CSVExporter
from evaluation import score
from exceptions import NonFiniteValueError, TrainingDivergenceError, ValidationError
from logger_config import logger
from losses import masked_zoom_loss, masked_zoom_loss_backward
from optimizer import AdamState, adam_update
from progress import progress
from sdan_model import SdanModel, backward, forward_with_cache, infer
from zoom_synth import MisalignedPair, stack_pairs


def _step(model: SdanModel, batch: Sequence[MisalignedPair], state: AdamState) -> Tuple[float, float]:
    if not batch:
        raise ValidationError("батч не может быть пустым")
    step = state.step + 1
    X, Y, Yref = stack_pairs(batch)
    try:
        out, cache = forward_with_cache(model, X, Yref)
        loss = masked_zoom_loss(out, Y, Yref)
        if not np.isfinite(loss):
            raise TrainingDivergenceError(step, loss)
        grad_zoomed, grad_aligned = masked_zoom_loss_backward(out, Y, Yref)
        grads = backward(model, cache, grad_zoomed, grad_aligned)
    except NonFiniteValueError:
        raise TrainingDivergenceError(step)
    if not all(np.isfinite(g).all() for g in grads.values()):
        raise TrainingDivergenceError(step, loss)

    adam_update(model.named_arrays(), grads, state)
    return loss, float(np.abs(out.offsets.data.data).mean())


def train_step(model: SdanModel, batch: Sequence[MisalignedPair],
               opt_state: AdamState) -> Tuple[float, AdamState]:
    """
    Один шаг обучения на батче пар.

    Returns:
        Кортеж (значение функции потерь до обновления, состояние оптимизатора)

    Raises:
        TrainingDivergenceError: Если функция потерь или градиенты не конечны
    """
    loss, _ = _step(model, batch, opt_state)
    return loss, opt_state


@dataclass
class TrainResult:
    """Итоги обучения."""

    loss_curve: List[Dict] = field(default_factory=list)
    validation: List[Dict] = field(default_factory=list)
    checkpoints: List[Path] = field(default_factory=list)
    best_psnr: Optional[float] = None
    best_ssim: Optional[float] = None


def validate(model: SdanModel, pairs: Sequence[MisalignedPair]) -> Tuple[float, float]:
    """Средние PSNR и SSIM инференса {X, X} относительно HR."""
    scores = [score(infer(model, pair.lr), pair.hr) for pair in pairs]
    return float(np.mean([s[0] for s in scores])), float(np.mean([s[1] for s in scores]))


def split_pairs(pairs: Sequence[MisalignedPair], val_count: int) -> Tuple[List, List]:
    """Последние val_count пар откладываются для валидации (хотя бы одна пара остается для обучения)."""
    val_count = max(0, min(val_count, len(pairs) - 1))
    cut = len(pairs) - val_count
    return list(pairs[:cut]), list(pairs[cut:])


class Trainer:
    """
    Цикл обучения.

    Порядок пар в эпохе берется из default_rng(seed), поэтому при равном
    seed и детерминированном режиме кривые и чекпойнты совпадают побайтно.
    """

    def __init__(self, model: SdanModel, train_cfg: TrainConfig, out_dir: Optional[str] = None):
        """
        Args:
            model: Обучаемая модель (параметры меняются на месте)
            train_cfg: Гиперпараметры
            out_dir: Каталог для чекпойнтов и CSV (None - ничего не сохранять)
        """
        self.model = model
        self.cfg = train_cfg
        self.out_dir = Path(out_dir) if out_dir else None
        self.state = AdamState.from_config(train_cfg)

    def _save(self, name: str, result: TrainResult) -> None:
        if self.out_dir is None:
            return
        path = save_checkpoint(self.model, self.out_dir / "checkpoints" / name)
        result.checkpoints.append(path)
        logger.info(f"Чекпойнт сохранен: {path}")

    def fit(self, train_pairs: Sequence[MisalignedPair],
            val_pairs: Sequence[MisalignedPair] = ()) -> TrainResult:
        """
        Обучение на train_pairs с валидацией на val_pairs после каждой эпохи.

        Raises:
            TrainingDivergenceError: При расхождении на каком-либо шаге
        """
        if not train_pairs:
            raise ValidationError("обучающая выборка пуста")
        result = TrainResult()
        rng = np.random.default_rng(self.cfg.seed)
        batch_size = max(1, self.cfg.batch_size)

        for epoch in range(1, self.cfg.epochs + 1):
            order = rng.permutation(len(train_pairs))
            batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
            offsets = []
            for idx in progress(batches, desc=f"Эпоха {epoch}", unit="батч", total=len(batches)):
                loss, mean_offset = _step(self.model, [train_pairs[i] for i in idx], self.state)
                offsets.append(mean_offset)
                result.loss_curve.append({"epoch": epoch, "step": self.state.step, "loss": loss})

            epoch_losses = [r["loss"] for r in result.loss_curve if r["epoch"] == epoch]
            message = (f"Эпоха {epoch}/{self.cfg.epochs}: loss = {np.mean(epoch_losses):.6f}, "
                       f"среднее |Θ| = {np.mean(offsets):.4f}")
            if val_pairs:
                val_psnr, val_ssim = validate(self.model, val_pairs)
                result.validation.append({"epoch": epoch, "psnr_db": val_psnr, "ssim": val_ssim})
                if result.best_psnr is None or val_psnr > result.best_psnr:
                    result.best_psnr, result.best_ssim = val_psnr, val_ssim
                message += f", валидация PSNR = {val_psnr:.3f} дБ, SSIM = {val_ssim:.4f}"
            logger.info(message)

            if self.cfg.checkpoint_every > 0 and epoch % self.cfg.checkpoint_every == 0:
                self._save(f"epoch_{epoch:04d}", result)

        self._save("final", result)
        if self.out_dir is not None:
            exporter = CSVExporter(str(self.out_dir))
            exporter.export_loss_curve(result.loss_curve)
            exporter.export_validation(result.validation)
        return result
