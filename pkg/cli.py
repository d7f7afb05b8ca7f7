"""
Модуль командной строки SDAN.

Подкоманды:
- gen-data: генерация синтетического набора рассогласованных пар
- train: обучение (переключатели абляции и пресеты ступеней абляции)
- infer: увеличение изображений обученной моделью
- eval: метрики PSNR / SSIM / контекстная дистанция / ошибка смещения
- gradcheck: проверка всех backward-функций конечными разностями
- experiments: абляция на одном наборе с проверкой восстановления смещений и порядка PSNR

Коды выхода: 0 успех, 2 конфигурация, 3 ввод-вывод, 4 расхождение
обучения, 5 провал проверки градиентов.
"""

import argparse
import logging
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from checkpoint import load_checkpoint
from config import (
    ATTENTION_KINDS,
    DATA_MODES,
    OFFSET_MODES,
    GenConfig,
    ModelConfig,
    TrainConfig,
    config,
    parse_bool,
    parse_config_file,
)
from csv_export import CSVExporter
from evaluation import CX_FEATURES, PREDICTORS, evaluate_pairs
from excel_export import ExcelExporter
from exceptions import ConfigError, GradcheckFailure, SdanError
from experiments import check_criteria, run_ablation
from gradcheck import available_ops, failed_ops, run_gradcheck
from image_io import FORMATS, read_image, write_image, write_mask
from json_export import JSONExporter
from logger_config import logger, setup_logger
from progress import status_word
from sdan_model import SdanModel, forward
from tensor_core import Tensor
from tensor_io import load_tensor, save_tensor
from trainer import Trainer, split_pairs
from validators import (
    validate_checkpoint_dir,
    validate_dataset_dir,
    validate_gen_config,
    validate_image_path,
    validate_output_dir,
    validate_source_dir,
)
from zoom_synth import bayer_pack, generate_dataset, load_dataset


# Ступени абляции: DCN, SDCN, + channel attention, + CPA, + flip-аугментация
PRESETS: Dict[str, Dict[str, object]] = {
    "dcn": {"offset_mode": "per_point", "attention": "none", "flip_aug": "off", "no_align": False},
    "sdcn": {"offset_mode": "squared", "attention": "none", "flip_aug": "off", "no_align": False},
    "sdcn-ca": {"offset_mode": "squared", "attention": "channel", "flip_aug": "off", "no_align": False},
    "sdcn-cpa": {"offset_mode": "squared", "attention": "cpa", "flip_aug": "off", "no_align": False},
    "sdcn-cpa-flip": {"offset_mode": "squared", "attention": "cpa", "flip_aug": "on", "no_align": False},
}

# Строки таблицы абляции: table2-row-N - синоним N-й ступени
PRESETS.update({f"table2-row-{n}": PRESETS[name] for n, name in enumerate(PRESETS, start=1)})
PRESETS["no-align"] = {"offset_mode": "squared", "attention": "none", "flip_aug": "off", "no_align": True}

# Ветви experiments по умолчанию: полная модель, squared-only, без выравнивания
DEFAULT_ARMS = ("sdcn-cpa-flip", "sdcn", "no-align")

# Содержимое каталога набора данных, подменяемое gen-data
DATASET_ENTRIES = ("pairs", "manifest.tsv")

# Ключи, которые нельзя задать через файл конфигурации
_NOT_CONFIGURABLE = {"help", "config", "command"}


def _offset_mode(value: str) -> str:
    return value.strip().replace("-", "_")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', type=str, help='Файл конфигурации `key = value` (флаги имеют приоритет)')
    parser.add_argument('--seed', type=int, default=0, help='Seed генераторов (по умолчанию: 0)')
    parser.add_argument(
        '--deterministic',
        action='store_true',
        default=config.tensor.deterministic,
        help='Один рабочий поток и фиксированный порядок: побайтно воспроизводимые результаты'
    )
    parser.add_argument(
        '--log-level',
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
        default=config.log_level,
        help='Уровень логирования (по умолчанию: INFO или SDAN_LOG_LEVEL)'
    )
    parser.add_argument('--log-file', type=str, help='Путь к файлу для записи логов')


def _add_model_args(parser: argparse.ArgumentParser) -> None:
    defaults = ModelConfig()
    parser.add_argument('--channels', type=int, default=defaults.base_channels, help='Число каналов C')
    parser.add_argument('--blocks', type=int, default=defaults.num_res_blocks, help='Число остаточных блоков')
    parser.add_argument('--kernel-size', type=int, default=defaults.kernel_size,
                        help='Ядро деформируемой свертки')
    parser.add_argument('--packing-size', type=int, default=defaults.packing_size, help='K для CPA')
    parser.add_argument('--reduction', type=int, default=defaults.reduction,
                        help='Коэффициент сжатия r внимания')
    parser.add_argument('--offset-packing', type=int, default=defaults.offset_packing,
                        help='Упаковка P входа головы смещений: охват x P (1 - без упаковки)')


def _add_fit_args(parser: argparse.ArgumentParser) -> None:
    defaults = TrainConfig()
    parser.add_argument('--lr', type=float, default=defaults.lr, help='Скорость обучения Adam')
    parser.add_argument('--epochs', type=int, default=defaults.epochs, help='Число эпох')
    parser.add_argument('--batch-size', type=int, default=defaults.batch_size, help='Размер батча')
    parser.add_argument('--limit', type=int, help='Использовать только первые N пар набора')


def create_parser(commands: Optional[Dict[str, argparse.ArgumentParser]] = None) -> argparse.ArgumentParser:
    """
    Создание парсера аргументов командной строки.

    Args:
        commands: Словарь, который заполняется парсерами подкоманд по именам
    """
    commands = {} if commands is None else commands
    parser = argparse.ArgumentParser(
        prog='sdan',
        description='SDAN: выравнивание и увеличение рассогласованных пар изображений',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Примеры использования:

  # Синтетический набор из процедурных исходников:
  python main.py gen-data --procedural 8 --out ds/ --count 64 --scale 4 --shift-max 8 --seed 7

  # Обучение в полной конфигурации (все ступени абляции):
  python main.py train --data ds/ --out run/ --preset sdcn-cpa-flip --epochs 20

  # Увеличение изображения с выгрузкой смещений и маски:
  python main.py infer --checkpoint run/checkpoints/final --input photo.png --out zoomed/ --dump-offsets --dump-mask

  # Оценка на наборе с отчетами JSON и Excel:
  python main.py eval --checkpoint run/checkpoints/final --data ds/ --out report/ --json --xlsx

  # Проверка градиентов в 64 битах:
  python main.py gradcheck --f64

  # Абляция на наборе со сдвигами до 8 пикселей:
  python main.py experiments --data ds/ --out ablation/ --channels 32 --blocks 2 --offset-packing 4 --epochs 10
        """
    )
    subparsers = parser.add_subparsers(dest='command', metavar='{gen-data,train,infer,eval,gradcheck,experiments}')

    # gen-data
    gen = subparsers.add_parser('gen-data', help='Генерация синтетического набора пар')
    _add_common(gen)
    defaults = GenConfig()
    gen.add_argument('--src', type=str, help='Каталог HR-исходников')
    gen.add_argument('--procedural', type=int, default=0,
                     help='Количество процедурных исходников вместо --src')
    gen.add_argument('--out', type=str, help='Каталог набора данных')
    gen.add_argument('--count', type=int, default=defaults.count, help='Количество пар')
    gen.add_argument('--scale', type=int, default=defaults.scale, help='Коэффициент увеличения s')
    gen.add_argument('--crop', type=int, default=defaults.crop_lr, help='Сторона LR-окна в пикселях')
    gen.add_argument('--shift-max', type=int, default=defaults.shift_max,
                     help='Максимальный |сдвиг| в LR-пикселях')
    gen.add_argument('--mode', choices=DATA_MODES, default=defaults.mode, help='rgb или raw (упаковка RGGB)')
    gen.add_argument('--fractional', action='store_true', help='Дробные сдвиги вместо целых')
    commands['gen-data'] = gen

    # train
    train = subparsers.add_parser('train', help='Обучение модели')
    _add_common(train)
    model_defaults, train_defaults = ModelConfig(), TrainConfig()
    train.add_argument('--data', type=str, help='Каталог набора данных')
    train.add_argument('--out', type=str, help='Каталог для чекпойнтов и кривых обучения')
    train.add_argument('--preset', choices=sorted(PRESETS), help='Ступень абляции (набор переключателей)')
    train.add_argument('--offset-mode', type=_offset_mode, choices=OFFSET_MODES,
                       default=model_defaults.offset_mode, metavar='{squared,per-point}',
                       help='Квадратные (SDCN) или поточечные (DCN) смещения')
    train.add_argument('--attention', choices=ATTENTION_KINDS, default=model_defaults.attention,
                       help='Внимание в голове смещений')
    train.add_argument('--flip-aug', choices=['on', 'off'], default='on' if model_defaults.flip_aug else 'off',
                       help='Flip-аугментация признаков опоры')
    train.add_argument('--no-align', action='store_true', help='Отключить деформируемое выравнивание')
    _add_model_args(train)
    _add_fit_args(train)
    train.add_argument('--checkpoint-every', type=int, default=train_defaults.checkpoint_every,
                       help='Сохранять чекпойнт каждые N эпох (0 - только финальный)')
    train.add_argument('--val-count', type=int, default=train_defaults.val_count,
                       help='Количество последних пар для валидации')
    commands['train'] = train

    # infer
    infer = subparsers.add_parser('infer', help='Увеличение изображений обученной моделью')
    _add_common(infer)
    infer.add_argument('--checkpoint', type=str, help='Каталог чекпойнта')
    infer.add_argument('--input', type=str, nargs='+', help='Входные изображения (.png, .ppm) или тензоры .sdtn')
    infer.add_argument('--out', type=str, help='Каталог результатов')
    infer.add_argument('--format', choices=sorted(ext.lstrip('.') for ext in FORMATS), default='png',
                       help='Формат выходных изображений')
    infer.add_argument('--dump-offsets', action='store_true', help='Сохранить поле смещений Θ как .sdtn')
    infer.add_argument('--dump-mask', action='store_true', help='Сохранить маску M как PNG в оттенках серого')
    commands['infer'] = infer

    # eval
    evaluate = subparsers.add_parser('eval', help='Оценка качества на наборе пар')
    _add_common(evaluate)
    evaluate.add_argument('--checkpoint', type=str, help='Каталог чекпойнта (нужен для --predictor model)')
    evaluate.add_argument('--data', type=str, help='Каталог набора данных')
    evaluate.add_argument('--out', type=str, help='Каталог отчетов')
    evaluate.add_argument('--predictor', choices=PREDICTORS, default='model', help='Источник предсказаний')
    evaluate.add_argument('--cx-features', choices=CX_FEATURES, default='identity',
                          help='Признаки для контекстной дистанции')
    evaluate.add_argument('--dump-outputs', action='store_true',
                          help='Сохранить предсказания как .sdtn в <out>/outputs')
    evaluate.add_argument('--json', action='store_true', help='Дополнительно записать metrics.json')
    evaluate.add_argument('--xlsx', action='store_true', help='Дополнительно записать metrics.xlsx')
    evaluate.add_argument('--limit', type=int, help='Оценить только первые N пар')
    commands['eval'] = evaluate

    # gradcheck
    grad = subparsers.add_parser('gradcheck', help='Проверка градиентов конечными разностями')
    _add_common(grad)
    grad.add_argument('--op', type=str, nargs='+', choices=available_ops(), help='Проверить только эти операции')
    grad.add_argument('--trials', type=int, help='Число испытаний на операцию')
    grad.add_argument('--f64', action='store_true', help='Аналитические градиенты в float64')
    grad.add_argument('--json', type=str, help='Записать таблицу результатов в JSON файл')
    commands['gradcheck'] = grad

    # experiments
    exp = subparsers.add_parser('experiments', help='Абляция: обучение и сравнение ветвей на одном наборе')
    _add_common(exp)
    exp.add_argument('--data', type=str, help='Каталог набора данных с истинными сдвигами')
    exp.add_argument('--out', type=str, help='Каталог отчетов')
    exp.add_argument('--arms', type=str, nargs='+', choices=sorted(PRESETS), default=list(DEFAULT_ARMS),
                     help='Ветви абляции (имена пресетов)')
    exp.add_argument('--held-out', type=int, default=32, help='Количество последних пар для оценки')
    _add_model_args(exp)
    _add_fit_args(exp)
    exp.add_argument('--json', action='store_true', help='Дополнительно записать experiments.json')
    commands['experiments'] = exp

    return parser


def _convert(action: argparse.Action, key: str, value: str):
    if isinstance(action, argparse._StoreTrueAction):
        return parse_bool(value)
    convert = action.type or str
    try:
        if action.nargs in ('+', '*'):
            result = [convert(v) for v in value.replace(',', ' ').split()]
            items = result
        else:
            result = convert(value)
            items = [result]
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{key}: некорректное значение {value!r} ({e})")
    if action.choices is not None:
        bad = [item for item in items if item not in action.choices]
        if bad:
            raise ConfigError(f"{key}: значение {bad[0]!r} не входит в {list(action.choices)}")
    return result


def config_file_defaults(subparser: argparse.ArgumentParser, path: str) -> Dict[str, object]:
    """
    Значения из файла конфигурации, приведенные к типам флагов подкоманды.

    Raises:
        ConfigError: При неизвестном ключе или некорректном значении
    """
    actions = {a.dest: a for a in subparser._actions if a.dest not in _NOT_CONFIGURABLE}
    values = {}
    for key, value in parse_config_file(path).items():
        if key not in actions:
            raise ConfigError(f"{path}: неизвестный ключ {key!r}, допустимы: {sorted(actions)}")
        values[key] = _convert(actions[key], key, value)
    return values


def resolve_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """
    Разбор аргументов с учетом приоритетов: значения по умолчанию <
    файл конфигурации < пресет < явные флаги.
    """
    commands: Dict[str, argparse.ArgumentParser] = {}
    parser = create_parser(commands)
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        raise ConfigError("не указана подкоманда")

    subparser = commands[args.command]
    defaults: Dict[str, object] = {}
    if args.config:
        defaults.update(config_file_defaults(subparser, args.config))
    preset = getattr(args, 'preset', None) or defaults.get('preset')
    if preset:
        defaults.update(PRESETS[preset])
    if defaults:
        subparser.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _require(args: argparse.Namespace, *names: str) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n, None) in (None, [])]
    if missing:
        raise ConfigError(f"{args.command}: не указаны обязательные параметры {', '.join(missing)}")


def _banner(args: argparse.Namespace) -> None:
    logger.info("=" * 60)
    logger.info(f"SDAN: {args.command}")
    logger.info("=" * 60)
    for key in sorted(vars(args)):
        logger.info(f"  {key} = {getattr(args, key)}")
    logger.info(f"  threads = {config.tensor.worker_count()}")


def _model_config(args: argparse.Namespace, in_channels: int, scale: int,
                  preset: Optional[str] = None) -> ModelConfig:
    """Конфигурация модели из флагов; preset задает оси абляции вместо флагов."""
    ablation = PRESETS[preset] if preset else {
        key: getattr(args, key) for key in ("offset_mode", "attention", "flip_aug", "no_align")
    }
    return ModelConfig(
        in_channels=in_channels,
        base_channels=args.channels,
        num_res_blocks=args.blocks,
        scale=scale,
        offset_mode=ablation["offset_mode"],
        attention=ablation["attention"],
        flip_aug=ablation["flip_aug"] == 'on',
        align_enabled=not ablation["no_align"],
        kernel_size=args.kernel_size,
        packing_size=args.packing_size,
        reduction=args.reduction,
        offset_packing=args.offset_packing,
    )


def _publish_dataset(staging: Path, out_dir: Path) -> None:
    """Замена pairs/ и manifest.tsv в out_dir готовым набором из staging."""
    retired = staging / ".retired"
    retired.mkdir()
    for name in DATASET_ENTRIES:
        if (out_dir / name).exists():
            (out_dir / name).rename(retired / name)
    for name in DATASET_ENTRIES:
        (staging / name).rename(out_dir / name)
    shutil.rmtree(staging, ignore_errors=True)


def cmd_gen_data(args: argparse.Namespace) -> int:
    """
    Генерация набора во временный соседний каталог с последующей подменой.

    При ошибке прежний набор в --out остается нетронутым.
    """
    _require(args, 'out')
    cfg = GenConfig(
        source_dir=args.src,
        scale=args.scale,
        crop_lr=args.crop,
        shift_max=args.shift_max,
        count=args.count,
        seed=args.seed,
        mode=args.mode,
        fractional=args.fractional,
        procedural=args.procedural,
    )
    validate_gen_config(cfg)
    if cfg.source_dir is not None:
        validate_source_dir(cfg.source_dir)

    out_dir = Path(args.out)
    existed = out_dir.exists()
    out_dir = validate_output_dir(args.out)
    staging = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    try:
        pairs = generate_dataset(cfg, staging)
    except BaseException:
        logger.warning(f"Генерация прервана, частичный результат удаляется: {staging}")
        shutil.rmtree(staging, ignore_errors=True)
        if not existed:
            shutil.rmtree(out_dir, ignore_errors=True)
        raise
    _publish_dataset(staging, out_dir)

    shifts = np.array([p.truth_shift for p in pairs], dtype=np.float64)
    print(f"Сгенерировано пар: {len(pairs)}")
    print(f"Режим: {cfg.mode}, масштаб: x{cfg.scale}, LR-окно: {cfg.crop_lr}x{cfg.crop_lr}")
    for axis, column in (("dy", shifts[:, 0]), ("dx", shifts[:, 1])):
        print(f"Сдвиг {axis}: среднее {column.mean():+.3f}, мин {column.min():+.3f}, макс {column.max():+.3f}")
    print(f"Средний |сдвиг|: {np.hypot(shifts[:, 0], shifts[:, 1]).mean():.3f} px")
    print(f"Набор данных: {out_dir}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    """Обучение; последняя строка вывода - лучшие PSNR/SSIM валидации."""
    _require(args, 'data', 'out')
    data_dir = validate_dataset_dir(args.data)
    out_dir = validate_output_dir(args.out)
    pairs = load_dataset(data_dir, args.limit)
    model_cfg = _model_config(args, pairs[0].lr.c, pairs[0].scale)
    train_cfg = TrainConfig(
        lr=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        checkpoint_every=args.checkpoint_every,
        val_count=args.val_count,
        seed=args.seed,
    )

    model = SdanModel.create(model_cfg, args.seed)
    train_pairs, val_pairs = split_pairs(pairs, train_cfg.val_count)
    logger.info(
        f"Модель: {model.parameter_count()} параметров; обучающих пар {len(train_pairs)}, "
        f"валидационных {len(val_pairs)}"
    )
    result = Trainer(model, train_cfg, str(out_dir)).fit(train_pairs, val_pairs)

    if result.loss_curve:
        first, last = result.loss_curve[0]["loss"], result.loss_curve[-1]["loss"]
        print(f"Функция потерь: {first:.6f} -> {last:.6f} за {len(result.loss_curve)} шагов")
    print(f"Финальный чекпойнт: {result.checkpoints[-1]}")
    if result.best_psnr is None:
        print("Лучшая валидация: нет валидационных пар")
    else:
        print(f"Лучшая валидация: PSNR = {result.best_psnr:.3f} дБ, SSIM = {result.best_ssim:.4f}")
    return 0


def _read_input(path: str, model: SdanModel) -> Tensor:
    """Вход модели: тензор .sdtn как есть или изображение (в режиме raw упакованное RGGB)."""
    if Path(path).suffix.lower() == ".sdtn":
        return load_tensor(path)
    image = read_image(validate_image_path(path))
    return bayer_pack(image) if model.config.raw else image


def cmd_infer(args: argparse.Namespace) -> int:
    """Инференс по {X, X} для каждого входа."""
    _require(args, 'checkpoint', 'input', 'out')
    model = load_checkpoint(validate_checkpoint_dir(args.checkpoint))
    out_dir = validate_output_dir(args.out)

    for path in args.input:
        X = _read_input(path, model)
        out = forward(model, X, X)
        stem = Path(path).name.split(".")[0]
        target = write_image(out.zoomed, out_dir / f"{stem}.zoomed.{args.format}", args.format)
        print(f"{Path(path).name}: {X.h}x{X.w} -> {out.zoomed.h}x{out.zoomed.w}, {target}")
        if args.dump_offsets:
            print(f"  смещения: {save_tensor(out.offsets.data, out_dir / f'{stem}.offsets.sdtn')}")
        if args.dump_mask:
            print(f"  маска: {write_mask(out.mask_hr, out_dir / f'{stem}.mask.png')}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    """Оценка набора: metrics.csv и, по флагам, metrics.json / metrics.xlsx."""
    _require(args, 'data', 'out')
    if args.predictor == 'model' or args.cx_features == 'model':
        _require(args, 'checkpoint')
    data_dir = validate_dataset_dir(args.data)
    out_dir = validate_output_dir(args.out)
    model = load_checkpoint(validate_checkpoint_dir(args.checkpoint)) if args.checkpoint else None
    pairs = load_dataset(data_dir, args.limit)

    dump_dir = validate_output_dir(str(out_dir / "outputs")) if args.dump_outputs else None
    rows, columns, means = evaluate_pairs(model, pairs, args.predictor, args.cx_features, dump_dir)

    CSVExporter(str(out_dir)).export_metrics(rows, columns, means)
    metadata = {
        "checkpoint": args.checkpoint,
        "data": str(data_dir),
        "predictor": args.predictor,
        "cx_features": args.cx_features,
        "pairs": len(rows),
        "seed": args.seed,
    }
    if args.json:
        JSONExporter(str(out_dir / "metrics.json")).export_metrics(rows, means, metadata)
    if args.xlsx:
        ExcelExporter(str(out_dir / "metrics.xlsx")).export_metrics(rows, columns, means, metadata)

    print("\t".join(columns))
    for row in rows + [dict(means, id="mean")]:
        print("\t".join(row["id"] if c == "id" else f"{row[c]:.6f}" for c in columns))
    print(f"Отчет: {out_dir / 'metrics.csv'}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    """Таблица проверки градиентов; провал любой операции дает код 5."""
    results = run_gradcheck(args.op, args.trials, args.f64, args.seed)

    print(f"{'op':<26} {'trials':>6} {'max_rel_err':>12} {'tolerance':>10}  status")
    for r in results:
        print(f"{r.op:<26} {r.trials:>6} {r.max_rel_err:>12.3e} {r.tolerance:>10.0e}  {status_word(r.passed)}")
    if args.json:
        path = JSONExporter(args.json).export_gradcheck(
            [r.to_dict() for r in results], {"f64": args.f64, "seed": args.seed}
        )
        print(f"JSON: {path}")

    failing = failed_ops(results)
    if failing:
        raise GradcheckFailure(failing)
    return 0


def cmd_experiments(args: argparse.Namespace) -> int:
    """Абляция: ветви обучаются на одних данных, итоги и критерии - в таблице и отчетах."""
    _require(args, 'data', 'out')
    data_dir = validate_dataset_dir(args.data)
    out_dir = validate_output_dir(args.out)
    pairs = load_dataset(data_dir, args.limit)
    if any(p.truth_shift is None for p in pairs):
        raise ConfigError("experiments требует набор с истинными сдвигами")
    if not 0 < args.held_out < len(pairs):
        raise ConfigError(f"--held-out должно быть в [1, {len(pairs) - 1}], получено {args.held_out}")
    train_pairs, held_out = split_pairs(pairs, args.held_out)
    arms = {arm: _model_config(args, pairs[0].lr.c, pairs[0].scale, arm) for arm in args.arms}
    train_cfg = TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed)

    results = run_ablation(arms, train_pairs, held_out, train_cfg, args.seed)
    full, squared_only, disabled = DEFAULT_ARMS
    verdicts = check_criteria(results, full, squared_only, disabled)

    records = [r.to_dict() for r in results]
    CSVExporter(str(out_dir)).export_experiments(records)
    if args.json:
        metadata = {"data": str(data_dir), "train_pairs": len(train_pairs), "held_out": len(held_out),
                    "epochs": args.epochs, "seed": args.seed}
        JSONExporter(str(out_dir / "experiments.json")).export_experiments(
            records, [v.to_dict() for v in verdicts], metadata
        )

    print(f"{'arm':<16} {'psnr_db':>9} {'infer_psnr':>10} {'offset_px':>9} {'band':>5} {'loss':>9}")
    for r in results:
        offset = "-" if r.offset_error_px is None else f"{r.offset_error_px:.3f}"
        band = "-" if r.mask_band_ok is None else status_word(r.mask_band_ok)
        print(f"{r.arm:<16} {r.psnr_db:>9.3f} {r.infer_psnr_db:>10.3f} {offset:>9} {band:>5} {r.final_loss:>9.5f}")
    for v in verdicts:
        print(f"{v.name:<16} {status_word(v.passed):<5} {v.detail}")
    print(f"Отчет: {out_dir / 'experiments.csv'}")
    return 0


HANDLERS = {
    'gen-data': cmd_gen_data,
    'train': cmd_train,
    'infer': cmd_infer,
    'eval': cmd_eval,
    'gradcheck': cmd_gradcheck,
    'experiments': cmd_experiments,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Основная функция CLI; возвращает код выхода."""
    try:
        args = resolve_args(argv)
        setup_logger(level=getattr(logging, args.log_level.upper()), log_file=args.log_file)
        config.tensor.deterministic = args.deterministic
        _banner(args)
        return HANDLERS[args.command](args)
    except SdanError as e:
        logger.error(str(e))
        print(f"Ошибка: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        logger.error(f"Ошибка ввода-вывода: {e}")
        print(f"Ошибка ввода-вывода: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
