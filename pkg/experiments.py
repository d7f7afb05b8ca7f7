"""
Модуль абляционных экспериментов на синтетическом наборе.

Каждая ветвь абляции обучается с одинаковыми seed, данными и бюджетом;
на отложенных парах считаются:
- psnr_db: PSNR X̃ = forward(lr, yref) относительно HR по области,
  валидной при истинном сдвиге (одинаковой для всех ветвей)
- infer_psnr_db: PSNR инференса {X, X} по всему изображению
- offset_error_px: средняя ||Θ̄ - truth_shift|| (только при выравнивании)
- mask_band_ok: маска M обнуляет освобожденную сдвигом полосу на каждой паре

check_criteria сверяет итоги с порогами восстановления смещений и
порядка PSNR между полной моделью, squared-only и выключенным выравниванием.
"""

import time
from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from config import ModelConfig, TrainConfig
from deform_align import OffsetField, upsample_mask, validity_mask
from evaluation import offset_error
from exceptions import ConfigError
from logger_config import logger
from quality_metrics import masked_psnr, psnr
from sdan_model import SdanModel, forward, infer
from tensor_core import Tensor
from trainer import Trainer
from zoom_synth import MisalignedPair


# Пороги по умолчанию: средняя ошибка смещения и выигрыш полной модели
MAX_OFFSET_ERROR_PX = 1.0
MIN_PSNR_GAIN_DB = 2.0


@dataclass
class ArmResult:
    """Итоги одной ветви абляции на отложенных парах."""

    arm: str
    final_loss: float
    psnr_db: float
    infer_psnr_db: float
    offset_error_px: Optional[float]
    mask_band_ok: Optional[bool]
    seconds: float = 0.0

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class Verdict:
    """Результат проверки одного критерия."""

    name: str
    passed: bool
    detail: str

    def to_dict(self) -> Dict:
        return asdict(self)


def truth_mask(pair: MisalignedPair, margin: float = 0.0) -> Tensor:
    """
    Маска HR-пикселей, чей источник при истинном сдвиге лежит внутри LR.

    margin > 0 уменьшает |сдвиг| по каждой оси на margin: остается ядро
    освобожденной полосы, которое обязано быть нулевым в маске модели.
    """
    if pair.truth_shift is None:
        raise ConfigError(f"у пары {pair.id} нет истинного сдвига")
    rgb_h = pair.lr.h * (2 if pair.mode == "raw" else 1)
    rgb_w = pair.lr.w * (2 if pair.mode == "raw" else 1)
    s = pair.hr.h // rgb_h
    shift = np.array(pair.truth_shift, dtype=np.float64)
    shift = np.sign(shift) * np.maximum(np.abs(shift) - margin, 0.0)
    field = np.broadcast_to(shift[None, :, None, None], (1, 2, rgb_h, rgb_w)).copy()
    return upsample_mask(validity_mask(OffsetField(Tensor(field)), rgb_h, rgb_w), s)


def _mask_band_ok(model: SdanModel, pair: MisalignedPair, margin: float) -> bool:
    mask = forward(model, pair.lr, pair.yref).mask_hr.data
    core = truth_mask(pair, margin).data
    return bool(np.all(mask[core == 0] == 0))


def evaluate_arm(arm: str, model: SdanModel, pairs: Sequence[MisalignedPair],
                 final_loss: float, margin: float = MAX_OFFSET_ERROR_PX) -> ArmResult:
    """Метрики обученной ветви на отложенных парах."""
    psnrs, infer_psnrs, errors, bands = [], [], [], []
    for pair in pairs:
        zoomed = forward(model, pair.lr, pair.yref).zoomed
        psnrs.append(masked_psnr(zoomed, pair.hr, truth_mask(pair)))
        infer_psnrs.append(psnr(infer(model, pair.lr), pair.hr))
        if model.config.align_enabled:
            errors.append(offset_error(model, pair))
            bands.append(_mask_band_ok(model, pair, margin))
    return ArmResult(
        arm=arm,
        final_loss=final_loss,
        psnr_db=float(np.mean(psnrs)),
        infer_psnr_db=float(np.mean(infer_psnrs)),
        offset_error_px=float(np.mean(errors)) if errors else None,
        mask_band_ok=all(bands) if bands else None,
    )


def run_ablation(arms: Dict[str, ModelConfig], train_pairs: Sequence[MisalignedPair],
                 held_out: Sequence[MisalignedPair], train_cfg: TrainConfig,
                 seed: int = 0) -> List[ArmResult]:
    """
    Обучение и оценка всех ветвей с одинаковыми seed, данными и бюджетом.

    Args:
        arms: Имя ветви -> конфигурация модели
        train_pairs: Обучающие пары
        held_out: Отложенные пары (в обучении не участвуют)
        train_cfg: Гиперпараметры обучения, общие для всех ветвей
        seed: Seed инициализации моделей
    """
    if not held_out:
        raise ConfigError("нужна хотя бы одна отложенная пара")
    results = []
    for name, model_cfg in arms.items():
        logger.info(f"Ветвь {name}: {model_cfg.offset_mode}, attention = {model_cfg.attention}, "
                    f"flip = {model_cfg.flip_aug}, align = {model_cfg.align_enabled}")
        started = time.perf_counter()
        model = SdanModel.create(model_cfg, seed)
        fit = Trainer(model, replace(train_cfg, val_count=0)).fit(train_pairs)
        final_loss = float(fit.loss_curve[-1]["loss"]) if fit.loss_curve else float("nan")
        result = evaluate_arm(name, model, held_out, final_loss)
        result.seconds = time.perf_counter() - started
        logger.info(f"Ветвь {name}: PSNR = {result.psnr_db:.3f} дБ, ошибка смещения = "
                    f"{result.offset_error_px}, {result.seconds:.0f} с")
        results.append(result)
    return results


def check_criteria(results: Sequence[ArmResult], full: str, squared_only: str, disabled: str,
                   max_offset_px: float = MAX_OFFSET_ERROR_PX,
                   min_gain_db: float = MIN_PSNR_GAIN_DB) -> List[Verdict]:
    """
    Проверка критериев по итогам ветвей.

    Критерий пропускается, если нужной ветви нет среди результатов.
    """
    by_name = {r.arm: r for r in results}
    verdicts = []
    if full in by_name and by_name[full].offset_error_px is not None:
        err = by_name[full].offset_error_px
        verdicts.append(Verdict("offset_recovery", err <= max_offset_px,
                                f"{full}: {err:.3f} px (порог {max_offset_px})"))
        verdicts.append(Verdict("mask_band", bool(by_name[full].mask_band_ok),
                                f"{full}: полоса обнулена на всех парах = {by_name[full].mask_band_ok}"))
    if all(name in by_name for name in (full, squared_only, disabled)):
        a, b, c = (by_name[name].psnr_db for name in (full, squared_only, disabled))
        verdicts.append(Verdict("psnr_order", a > b > c,
                                f"{full} {a:.3f} > {squared_only} {b:.3f} > {disabled} {c:.3f}"))
    if full in by_name and disabled in by_name:
        gain = by_name[full].psnr_db - by_name[disabled].psnr_db
        verdicts.append(Verdict("psnr_gain", gain >= min_gain_db,
                                f"{full} - {disabled} = {gain:.3f} дБ (порог {min_gain_db})"))
    return verdicts
