"""
Модуль оценки качества на наборе пар.

Предсказатели:
- model: инференс SDAN по {X, X}
- bicubic: бикубическое увеличение LR (только RGB)
- oracle: сам HR (проверка протокола: PSNR 99, SSIM 1)

Для каждой пары считаются PSNR, SSIM, контекстная дистанция и, если
известен истинный сдвиг, ошибка восстановления смещения.
"""

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from exceptions import ConfigError
from image_io import bicubic_upscale
from logger_config import logger
from progress import progress
from quality_metrics import contextual_distance, model_features, patch_features, psnr, ssim
from sdan_model import SdanModel, forward, infer
from tensor_core import Tensor
from tensor_io import save_tensor
from zoom_synth import MisalignedPair


PREDICTORS = ("model", "bicubic", "oracle")
CX_FEATURES = ("identity", "model")
BASE_COLUMNS = ("id", "psnr_db", "ssim", "cx_distance")


def predict(model: Optional[SdanModel], pair: MisalignedPair, predictor: str = "model") -> Tensor:
    """
    Предсказание X̃ для пары выбранным предсказателем.

    Raises:
        ConfigError: При неизвестном предсказателе или bicubic в режиме raw
    """
    if predictor == "model":
        if model is None:
            raise ConfigError("предсказатель model требует чекпойнт")
        return infer(model, pair.lr)
    if predictor == "bicubic":
        if pair.lr.c != 3:
            raise ConfigError("бикубический предсказатель поддерживает только RGB-пары")
        return bicubic_upscale(pair.lr, pair.hr.h // pair.lr.h)
    if predictor == "oracle":
        return pair.hr
    raise ConfigError(f"неизвестный предсказатель {predictor!r}, ожидается один из {PREDICTORS}")


def score(prediction: Tensor, target: Tensor) -> Tuple[float, float]:
    """PSNR и SSIM предсказания относительно HR."""
    return psnr(prediction, target), ssim(prediction, target)


def mean_offset(model: SdanModel, pair: MisalignedPair) -> Tuple[float, float]:
    """
    Среднее по пространству смещение Θ̄ из forward(lr, yref) в LR-пикселях RGB.

    В режиме raw смещения измеряются на половинном разрешении и умножаются на 2.
    """
    out = forward(model, pair.lr, pair.yref)
    dy, dx = out.offsets.center_offsets()
    factor = 2.0 if model.config.raw else 1.0
    return float(dy.mean()) * factor, float(dx.mean()) * factor


def offset_error(model: SdanModel, pair: MisalignedPair) -> float:
    """Евклидова норма ||Θ̄ - truth_shift|| в LR-пикселях."""
    dy, dx = mean_offset(model, pair)
    ty, tx = pair.truth_shift
    return float(np.hypot(dy - ty, dx - tx))


def evaluate_pairs(model: Optional[SdanModel], pairs: Sequence[MisalignedPair],
                   predictor: str = "model", cx_features: str = "identity",
                   dump_dir: Optional[Path] = None) -> Tuple[List[Dict], Tuple[str, ...], Dict]:
    """
    Метрики по парам и средние значения.

    Столбец offset_error_px присутствует, только если у всех пар известен
    истинный сдвиг и предсказатель - модель.

    Returns:
        Кортеж (rows, columns, means)
    """
    if cx_features not in CX_FEATURES:
        raise ConfigError(f"неизвестный экстрактор признаков {cx_features!r}, ожидается один из {CX_FEATURES}")
    if cx_features == "model" and model is None:
        raise ConfigError("экстрактор model требует чекпойнт")

    with_offsets = predictor == "model" and all(p.truth_shift is not None for p in pairs)
    columns = BASE_COLUMNS + (("offset_error_px",) if with_offsets else ())

    rows = []
    for pair in progress(pairs, desc="Оценка", unit="пара", total=len(pairs)):
        prediction = predict(model, pair, predictor)
        p, s = score(prediction, pair.hr)
        if cx_features == "model":
            fx, fy = model_features(model, prediction), model_features(model, pair.hr)
        else:
            fx, fy = patch_features(prediction), patch_features(pair.hr)
        row = {"id": pair.id, "psnr_db": p, "ssim": s, "cx_distance": contextual_distance(fx, fy)}
        if with_offsets:
            row["offset_error_px"] = offset_error(model, pair)
        rows.append(row)
        if dump_dir is not None:
            save_tensor(prediction, Path(dump_dir) / f"{pair.id}.zoomed.sdtn")

    means = {col: float(np.mean([r[col] for r in rows])) for col in columns[1:]}
    logger.info(
        "Средние метрики: " + ", ".join(f"{col} = {means[col]:.4f}" for col in columns[1:])
    )
    return rows, columns, means
