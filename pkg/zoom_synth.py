"""
Модуль синтетического набора рассогласованных пар.

Замена реального набора оптического зума: из HR-исходника вырезаются
два окна, смещенные на известный сдвиг, и уменьшаются box-фильтром.

Соглашение о сдвиге: lr(p + d) = yref(p), то есть LR-окно берется в
точке origin - s*d. Идеальное выученное смещение squared-режима равно d.

Каталог набора:
- pairs/NNNNNN.{lr,hr,yref}.sdtn
- manifest.tsv со столбцами id, dy, dx, scale, mode
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from config import GenConfig, config
from deform_align import bilinear_gather
from exceptions import DatasetError, DimensionError, GenerationError, ImageDecodeError, TensorFormatError
from image_io import read_image
from logger_config import logger
from progress import progress
from tensor_core import Tensor
from tensor_io import load_tensor, save_tensor
from validators import validate_gen_config


MANIFEST_HEADER = ("id", "dy", "dx", "scale", "mode")
SOURCE_SUFFIXES = (".png", ".ppm", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


@dataclass
class MisalignedPair:
    """
    Пара LR/HR с опорой и известным сдвигом.

    lr: (1, 3, h, w) или (1, 4, h/2, w/2) в режиме raw
    hr: (1, 3, s*h, s*w)
    yref: та же форма, что lr (box-уменьшение hr, в raw упакованное)
    truth_shift: (dy, dx) в LR-пикселях RGB-разрешения
    """

    lr: Tensor
    hr: Tensor
    yref: Tensor
    truth_shift: Optional[Tuple[float, float]]
    scale: int
    id: str = ""
    mode: str = "rgb"


def box_downsample(tensor: Tensor, s: int) -> Tensor:
    """Уменьшение усреднением блоков s x s."""
    n, c, h, w = tensor.shape
    if h % s or w % s:
        raise DimensionError(f"размер {h}x{w} не делится на масштаб {s}")
    return Tensor(tensor.data.reshape(n, c, h // s, s, w // s, s).mean(axis=(3, 5)))


def bayer_pack(rgb: Tensor) -> Tensor:
    """
    Имитация RGGB-мозаики и упаковка в 4 канала половинного разрешения.

    Порядок каналов: [R(четн, четн), G1(четн, нечетн), G2(нечетн, четн), B(нечетн, нечетн)].

    Raises:
        DimensionError: Если размеры нечетные или каналов не 3
    """
    n, c, h, w = rgb.shape
    if c != 3:
        raise DimensionError(f"bayer_pack ожидает 3 канала, получено {c}")
    if h % 2 or w % 2:
        raise DimensionError(f"bayer_pack требует четных размеров, получено {h}x{w}")
    d = rgb.data
    return Tensor(np.stack([
        d[:, 0, 0::2, 0::2],
        d[:, 1, 0::2, 1::2],
        d[:, 1, 1::2, 0::2],
        d[:, 2, 1::2, 1::2],
    ], axis=1))


def bayer_unpack(packed: Tensor) -> Tensor:
    """Обратная раскладка упакованных фаз в мозаику (n, 1, 2h, 2w)."""
    n, c, h, w = packed.shape
    if c != 4:
        raise DimensionError(f"bayer_unpack ожидает 4 канала, получено {c}")
    mosaic = np.empty((n, 1, 2 * h, 2 * w), dtype=packed.data.dtype)
    mosaic[:, 0, 0::2, 0::2] = packed.data[:, 0]
    mosaic[:, 0, 0::2, 1::2] = packed.data[:, 1]
    mosaic[:, 0, 1::2, 0::2] = packed.data[:, 2]
    mosaic[:, 0, 1::2, 1::2] = packed.data[:, 3]
    return Tensor(mosaic)


def _crop(source: Tensor, top: float, left: float, size: int) -> Tensor:
    """Окно size x size; дробная позиция берется билинейно."""
    _, _, H, W = source.shape
    if top < 0 or left < 0 or top + size > H or left + size > W:
        raise GenerationError(
            f"окно {size}x{size} в ({top}, {left}) выходит за исходник {H}x{W}"
        )
    if float(top).is_integer() and float(left).is_integer():
        t, l = int(top), int(left)
        return Tensor(source.data[:, :, t:t + size, l:l + size])
    ys = (top + np.arange(size)).reshape(size, 1) * np.ones((1, size))
    xs = (left + np.arange(size)).reshape(1, size) * np.ones((size, 1))
    return Tensor(bilinear_gather(source.data.astype(np.float64), ys, xs))


def synth_pair(source_hr: Tensor, shift: Sequence[float], cfg: GenConfig,
               crop_origin: Tuple[int, int], pair_id: str = "") -> MisalignedPair:
    """
    Построение одной рассогласованной пары.

    hr - окно исходника в crop_origin; lr - box-уменьшение окна в
    crop_origin - s*shift; yref - box-уменьшение hr. В режиме raw lr и
    yref дополнительно упаковываются bayer_pack.

    Raises:
        GenerationError: Если какое-либо окно выходит за исходник
    """
    s = cfg.scale
    size = cfg.crop_hr
    dy, dx = float(shift[0]), float(shift[1])
    oy, ox = crop_origin

    hr = _crop(source_hr, oy, ox, size)
    lr = box_downsample(_crop(source_hr, oy - s * dy, ox - s * dx, size), s)
    yref = box_downsample(hr, s)
    if cfg.mode == "raw":
        lr = bayer_pack(lr)
        yref = bayer_pack(yref)
    return MisalignedPair(lr, hr, yref, (dy, dx), s, pair_id, cfg.mode)


def procedural_source(index: int, size: int, seed: int) -> Tensor:
    """
    Процедурный гладкий текстурированный исходник (1, 3, size, size).

    Сумма гауссовых пятен и синусоидальных решеток со случайными
    параметрами из default_rng([seed, index]).
    """
    rng = np.random.default_rng([seed, index, 1])
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    image = np.zeros((3, size, size))
    for _ in range(int(rng.integers(12, 24))):
        cy, cx = rng.uniform(0, 1, size=2)
        sigma = rng.uniform(0.02, 0.12)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
        image += rng.uniform(-0.6, 0.6, size=(3, 1, 1)) * blob
    for _ in range(3):
        freq = rng.uniform(2, 12)
        angle = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * (yy * np.sin(angle) + xx * np.cos(angle)) + phase)
        image += rng.uniform(0.05, 0.2, size=(3, 1, 1)) * wave
    image = (image - image.min()) / max(image.max() - image.min(), 1e-12)
    return Tensor(image[None])


def load_sources(cfg: GenConfig) -> List[Tuple[str, Tensor]]:
    """
    Загрузка исходников: файлы каталога (по имени) или процедурные изображения.

    Нечитаемые и слишком маленькие файлы пропускаются с предупреждением.

    Raises:
        GenerationError: Если не осталось ни одного пригодного исходника
    """
    need = cfg.min_source_size
    if cfg.procedural > 0:
        size = need + 2 * cfg.scale
        return [(f"procedural-{i}", procedural_source(i, size, cfg.seed)) for i in range(cfg.procedural)]

    sources = []
    files = sorted(p for p in Path(cfg.source_dir).iterdir()
                   if p.is_file() and p.suffix.lower() in SOURCE_SUFFIXES)
    for path in files:
        try:
            image = read_image(path)
        except ImageDecodeError as e:
            logger.warning(f"Исходник пропущен: {e}")
            continue
        if image.h < need or image.w < need:
            logger.warning(
                f"Исходник пропущен: {path.name} размером {image.h}x{image.w} меньше требуемых {need}x{need}"
            )
            continue
        sources.append((path.name, image))

    if not sources:
        raise GenerationError(f"в {cfg.source_dir} нет пригодных исходников размером от {need}x{need}")
    return sources


def _draw_pair(index: int, sources: List[Tuple[str, Tensor]], cfg: GenConfig) -> MisalignedPair:
    rng = np.random.default_rng([cfg.seed, index])
    _, source = sources[int(rng.integers(len(sources)))]
    m = cfg.shift_max
    if cfg.fractional:
        shift = rng.uniform(-m, m, size=2) if m > 0 else np.zeros(2)
    else:
        shift = rng.integers(-m, m + 1, size=2).astype(np.float64)

    margin = cfg.scale * m
    limit_y = source.h - cfg.crop_hr - margin
    limit_x = source.w - cfg.crop_hr - margin
    origin = (int(rng.integers(margin, limit_y + 1)), int(rng.integers(margin, limit_x + 1)))
    return synth_pair(source, shift, cfg, origin, f"{index:06d}")


def _format_shift(value: Optional[float]) -> str:
    if value is None:
        return "-"
    return str(int(value)) if float(value).is_integer() else f"{value:.9g}"


def save_pair(pair: MisalignedPair, out_dir: Path) -> None:
    pairs_dir = out_dir / "pairs"
    save_tensor(pair.lr, pairs_dir / f"{pair.id}.lr.sdtn")
    save_tensor(pair.hr, pairs_dir / f"{pair.id}.hr.sdtn")
    save_tensor(pair.yref, pairs_dir / f"{pair.id}.yref.sdtn")


def write_manifest(pairs: Sequence[MisalignedPair], out_dir: Path) -> Path:
    lines = ["\t".join(MANIFEST_HEADER)]
    for pair in pairs:
        dy, dx = pair.truth_shift or (None, None)
        lines.append("\t".join([pair.id, _format_shift(dy), _format_shift(dx), str(pair.scale), pair.mode]))
    path = out_dir / "manifest.tsv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def generate_dataset(cfg: GenConfig, out_dir: Union[str, Path]) -> List[MisalignedPair]:
    """
    Генерация и сохранение набора из cfg.count пар.

    Каждая пара использует собственный генератор default_rng([seed, i]),
    поэтому параллельная генерация дает тот же результат, что и
    последовательная, а повторный запуск - побайтно равный каталог.

    Raises:
        ConfigError: При некорректной конфигурации
        GenerationError: Если нет пригодных исходников
    """
    validate_gen_config(cfg)
    out_dir = Path(out_dir)
    sources = load_sources(cfg)
    logger.info(f"Пригодных исходников: {len(sources)}; генерация {cfg.count} пар")

    def work(index: int) -> MisalignedPair:
        pair = _draw_pair(index, sources, cfg)
        save_pair(pair, out_dir)
        return pair

    (out_dir / "pairs").mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=config.tensor.worker_count()) as executor:
        pairs = list(progress(executor.map(work, range(cfg.count)), desc="Генерация пар",
                              unit="пара", total=cfg.count))

    write_manifest(pairs, out_dir)
    return pairs


def _parse_shift(text: str) -> Optional[float]:
    """Пустое поле или "-" означает, что истинный сдвиг неизвестен."""
    text = text.strip()
    if text in ("", "-"):
        return None
    return float(text)


def _truth(row: dict) -> Optional[Tuple[float, float]]:
    if row["dy"] is None or row["dx"] is None:
        return None
    return row["dy"], row["dx"]


def read_manifest(dataset_dir: Union[str, Path]) -> List[dict]:
    """
    Чтение manifest.tsv.

    Raises:
        DatasetError: Если заголовок или строки некорректны
    """
    path = Path(dataset_dir) / "manifest.tsv"
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DatasetError(str(path), str(e))
    if not lines or tuple(lines[0].split("\t")) != MANIFEST_HEADER:
        raise DatasetError(str(path), f"ожидался заголовок {' '.join(MANIFEST_HEADER)}")

    rows = []
    for line_no, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != len(MANIFEST_HEADER):
            raise DatasetError(str(path), f"строка {line_no}: ожидалось {len(MANIFEST_HEADER)} полей")
        try:
            rows.append({
                "id": parts[0],
                "dy": _parse_shift(parts[1]),
                "dx": _parse_shift(parts[2]),
                "scale": int(parts[3]),
                "mode": parts[4],
            })
        except ValueError as e:
            raise DatasetError(str(path), f"строка {line_no}: {e}")
    return rows


def load_dataset(dataset_dir: Union[str, Path], limit: Optional[int] = None) -> List[MisalignedPair]:
    """
    Загрузка набора данных в порядке манифеста.

    Raises:
        DatasetError: Если манифест или тензоры пары повреждены
    """
    dataset_dir = Path(dataset_dir)
    rows = read_manifest(dataset_dir)
    if limit is not None:
        rows = rows[:limit]

    pairs = []
    for row in rows:
        base = dataset_dir / "pairs" / row["id"]
        try:
            lr = load_tensor(f"{base}.lr.sdtn")
            hr = load_tensor(f"{base}.hr.sdtn")
            yref = load_tensor(f"{base}.yref.sdtn")
        except TensorFormatError as e:
            raise DatasetError(str(dataset_dir), str(e))
        if lr.shape != yref.shape:
            raise DatasetError(str(dataset_dir), f"пара {row['id']}: lr {lr.shape} и yref {yref.shape} различаются")
        pairs.append(MisalignedPair(lr, hr, yref, _truth(row), row["scale"], row["id"], row["mode"]))

    if not pairs:
        raise DatasetError(str(dataset_dir), "набор данных пуст")
    return pairs


def stack_pairs(pairs: Sequence[MisalignedPair]) -> Tuple[Tensor, Tensor, Tensor]:
    """Объединение пар в батч (X, Y, Yref)."""
    return (
        Tensor(np.concatenate([p.lr.data for p in pairs])),
        Tensor(np.concatenate([p.hr.data for p in pairs])),
        Tensor(np.concatenate([p.yref.data for p in pairs])),
    )
