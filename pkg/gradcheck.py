"""
Модуль проверки градиентов конечными разностями.

Для каждой операции строится скаляр L = <G, op(args)> со случайным G,
аналитические градиенты из backward-функций сравниваются с центральными
разностями D(eps) = (L(x + eps) - L(x - eps)) / (2 * eps) в случайных
координатах. Численная производная - экстраполяция Ричардсона по шагам
eps и eps/2.

Эталон (конечные разности) всегда считается в float64, аналитическая
сторона - в выбранной точности. Входы предварительно округляются до
float32, чтобы обе стороны видели одни и те же значения.

Backward-функции вызываются через атрибуты модулей, поэтому подмена
функции в модуле сразу видна проверке.
"""

from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

import deform_align
import losses
import packing_attention
import sdan_model
import tensor_core
from config import GradcheckConfig, ModelConfig, config
from deform_align import OffsetField
from exceptions import ConfigError, SdanError
from logger_config import logger
from packing_attention import AttentionParams, CpaParams, effective_reduction
from progress import progress
from tensor_core import ConvParams, Tensor, float64_mode


Arrays = Dict[str, np.ndarray]


@dataclass
class GradCase:
    """
    Одно испытание.

    loss: скаляр от аргументов (вызывается в режиме float64)
    grads: аналитические градиенты по аргументам (в выбранной точности)
    smooth: False для функций с изломами (relu, модуль); такие координаты
        дополнительно проверяются на пересечение излома
    total_coords: общее число координат по всем аргументам вместо
        coords_per_arg на каждый аргумент
    """

    args: Arrays
    loss: Callable[[Arrays], float]
    grads: Callable[[Arrays], Arrays]
    smooth: bool = True
    eps: Optional[float] = None
    total_coords: Optional[int] = None


@dataclass
class CheckResult:
    """Строка итоговой таблицы."""

    op: str
    trials: int
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_err)) and self.max_rel_err <= self.tolerance

    @property
    def status(self) -> str:
        return "OK" if self.passed else "FAIL"

    def to_dict(self) -> Dict:
        return {
            "op": self.op,
            "trials": self.trials,
            "max_rel_err": float(self.max_rel_err),
            "tolerance": self.tolerance,
            "status": self.status,
        }


CaseBuilder = Callable[[np.random.Generator, int, GradcheckConfig], List[GradCase]]

_CHECKS: "OrderedDict[str, CaseBuilder]" = OrderedDict()
_MODEL_LEVEL = {"model_loss"}


def register(name: str):
    """Декоратор регистрации построителя испытаний операции."""
    def decorator(builder: CaseBuilder) -> CaseBuilder:
        _CHECKS[name] = builder
        return builder
    return decorator


def available_ops() -> List[str]:
    return list(_CHECKS)


def _q(a) -> np.ndarray:
    """Округление до float32 с хранением в float64."""
    return np.ascontiguousarray(np.asarray(a, dtype=np.float32), dtype=np.float64)


def _dot(G: np.ndarray, t: Tensor) -> float:
    return float(np.sum(G * t.data.astype(np.float64)))


def _away_from_zero(rng: np.random.Generator, x: np.ndarray, margin: float) -> np.ndarray:
    """Перевыборка элементов с |x| < margin (излом relu рядом с точкой)."""
    small = np.abs(x) < margin
    while small.any():
        x[small] = rng.normal(size=int(small.sum()))
        small = np.abs(x) < margin
    return x


def _dithered_offsets(rng: np.random.Generator, shape) -> np.ndarray:
    """Смещения с дробной частью в [0.25, 0.75]: шаг eps не пересекает целые координаты."""
    return rng.integers(-2, 3, size=shape) + rng.uniform(0.25, 0.75, size=shape)


# --- примитивы ---------------------------------------------------------------

@register("conv2d")
def _conv2d(rng, trial, cfg):
    k = int(rng.choice([1, 3]))
    stride = int(rng.choice([1, 2]))
    pad = int(rng.integers(0, k // 2 + 1))
    while True:
        ho, wo = rng.integers(1, 5, size=2)
        h = (ho - 1) * stride + k - 2 * pad
        w = (wo - 1) * stride + k - 2 * pad
        if 1 <= h <= 8 and 1 <= w <= 8:
            break
    n, cin, cout = rng.integers(1, 3), rng.integers(1, 5), rng.integers(1, 5)
    args = {
        "input": _q(rng.normal(size=(n, cin, h, w))),
        "weight": _q(rng.normal(size=(cout, cin, k, k)) * 0.5),
        "bias": _q(rng.normal(size=cout)),
    }
    G = _q(rng.normal(size=(n, cout, ho, wo)))

    def params(a):
        return ConvParams(Tensor(a["weight"]), a["bias"], stride, pad)

    def loss(a):
        return _dot(G, tensor_core.conv2d(Tensor(a["input"]), params(a)))

    def grads(a):
        gi, gw, gb = tensor_core.conv2d_backward(Tensor(a["input"]), params(a), Tensor(G))
        return {"input": gi.data, "weight": gw.data, "bias": gb}

    return [GradCase(args, loss, grads)]


@register("activation")
def _activation(rng, trial, cfg):
    kind = tensor_core.ACTIVATIONS[trial % len(tensor_core.ACTIVATIONS)]
    shape = tuple(rng.integers(1, 5, size=4))
    x = _away_from_zero(rng, rng.normal(size=shape), 2 * cfg.eps)
    args = {"input": _q(x)}
    G = _q(rng.normal(size=shape))

    def loss(a):
        return _dot(G, tensor_core.activation(Tensor(a["input"]), kind))

    def grads(a):
        return {"input": tensor_core.activation_backward(Tensor(a["input"]), kind, Tensor(G)).data}

    return [GradCase(args, loss, grads)]


@register("global_avg_pool")
def _global_avg_pool(rng, trial, cfg):
    n, c, h, w = rng.integers(1, 5, size=4)
    args = {"input": _q(rng.normal(size=(n, c, h, w)))}
    G = _q(rng.normal(size=(n, c, 1, 1)))

    def loss(a):
        return _dot(G, tensor_core.global_avg_pool(Tensor(a["input"])))

    def grads(a):
        return {"input": tensor_core.global_avg_pool_backward(a["input"].shape, Tensor(G)).data}

    return [GradCase(args, loss, grads)]


@register("concat_channels")
def _concat_channels(rng, trial, cfg):
    n, ca, cb, h, w = rng.integers(1, 5, size=5)
    args = {
        "a": _q(rng.normal(size=(n, ca, h, w))),
        "b": _q(rng.normal(size=(n, cb, h, w))),
    }
    G = _q(rng.normal(size=(n, ca + cb, h, w)))

    def loss(a):
        return _dot(G, tensor_core.concat_channels(Tensor(a["a"]), Tensor(a["b"])))

    def grads(a):
        ga, gb = tensor_core.concat_channels_backward(Tensor(G), ca)
        return {"a": ga.data, "b": gb.data}

    return [GradCase(args, loss, grads)]


@register("space_to_depth")
def _space_to_depth(rng, trial, cfg):
    K = int(rng.choice([1, 2, 4]))
    n, c = rng.integers(1, 3, size=2)
    h, w = K * rng.integers(1, 8 // K + 1, size=2)
    args = {"input": _q(rng.normal(size=(n, c, h, w)))}
    G = _q(rng.normal(size=(n, c * K * K, h // K, w // K)))

    def loss(a):
        return _dot(G, tensor_core.space_to_depth(Tensor(a["input"]), K))

    def grads(a):
        return {"input": tensor_core.depth_to_space(Tensor(G), K).data}

    return [GradCase(args, loss, grads)]


@register("depth_to_space")
def _depth_to_space(rng, trial, cfg):
    K = int(rng.choice([1, 2, 4]))
    n, c = rng.integers(1, 3, size=2)
    h, w = rng.integers(1, 8 // K + 1, size=2)
    args = {"input": _q(rng.normal(size=(n, c * K * K, h, w)))}
    G = _q(rng.normal(size=(n, c, h * K, w * K)))

    def loss(a):
        return _dot(G, tensor_core.depth_to_space(Tensor(a["input"]), K))

    def grads(a):
        return {"input": tensor_core.space_to_depth(Tensor(G), K).data}

    return [GradCase(args, loss, grads)]


@register("flip")
def _flip(rng, trial, cfg):
    axes = tuple(a for a in tensor_core.FLIP_AXES if rng.random() < 0.5)
    shape = tuple(rng.integers(1, 5, size=4))
    args = {"input": _q(rng.normal(size=shape))}
    G = _q(rng.normal(size=shape))

    def loss(a):
        return _dot(G, tensor_core.flip(Tensor(a["input"]), axes))

    def grads(a):
        return {"input": tensor_core.flip(Tensor(G), axes).data}

    return [GradCase(args, loss, grads)]


# --- внимание ----------------------------------------------------------------

def _attention_args(rng, c: int, reduction: int) -> Arrays:
    hidden = c // effective_reduction(c, reduction)
    return {
        "fc1": _q(rng.normal(size=(hidden, c))),
        "fc2": _q(rng.normal(size=(c, hidden))),
    }


@register("channel_attention")
def _channel_attention(rng, trial, cfg):
    n = int(rng.integers(1, 3))
    c = int(rng.choice([4, 8]))
    h, w = rng.integers(1, 9, size=2)
    args = {"F": _q(rng.normal(size=(n, c, h, w)) + 0.5)}
    args.update(_attention_args(rng, c, int(rng.choice([1, 2, 4]))))
    G = _q(rng.normal(size=(n, c, h, w)))

    def params(a):
        return AttentionParams(a["fc1"], a["fc2"])

    def loss(a):
        return _dot(G, packing_attention.channel_attention(Tensor(a["F"]), params(a)))

    def grads(a):
        gF, g = packing_attention.channel_attention_backward(Tensor(a["F"]), params(a), Tensor(G))
        return {"F": gF.data, **g}

    return [GradCase(args, loss, grads, smooth=False)]


@register("cross_packing_attention")
def _cross_packing_attention(rng, trial, cfg):
    K = 2
    n, c = rng.integers(1, 3, size=2)
    h, w = K * rng.integers(1, 5, size=2)
    args = {"F": _q(rng.normal(size=(n, c, h, w)) + 0.5)}
    args.update(_attention_args(rng, int(c * K * K), 2))
    G = _q(rng.normal(size=(n, c, h, w)))

    def params(a):
        return CpaParams(K, AttentionParams(a["fc1"], a["fc2"]))

    def loss(a):
        return _dot(G, packing_attention.cross_packing_attention(Tensor(a["F"]), params(a)))

    def grads(a):
        gF, g = packing_attention.cross_packing_attention_backward(Tensor(a["F"]), params(a), Tensor(G))
        return {"F": gF.data, **g}

    return [GradCase(args, loss, grads, smooth=False)]


@register("flip_augmented_reference")
def _flip_augmented_reference(rng, trial, cfg):
    n, cin, cout = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 5)
    h, w = rng.integers(2, 9, size=2)
    args = {
        "Yref": _q(rng.normal(size=(n, cin, h, w))),
        "weight": _q(rng.normal(size=(cout, cin, 3, 3)) * 0.5),
        "bias": _q(rng.normal(size=cout) * 0.1),
    }
    G = _q(rng.normal(size=(n, cout, h, w)))

    def params(a):
        return ConvParams(Tensor(a["weight"]), a["bias"], 1, 1)

    def loss(a):
        return _dot(G, packing_attention.flip_augmented_reference(Tensor(a["Yref"]), params(a)))

    def grads(a):
        gy, gw, gb = packing_attention.flip_augmented_reference_backward(
            Tensor(a["Yref"]), params(a), Tensor(G)
        )
        return {"Yref": gy.data, "weight": gw.data, "bias": gb}

    return [GradCase(args, loss, grads, smooth=False)]


# --- выравнивание ------------------------------------------------------------

@register("deform_conv")
def _deform_conv(rng, trial, cfg):
    cases = []
    for mode in ("squared", "per_point"):
        k = 3
        n, c, cout = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
        h, w = rng.integers(3, 9, size=2)
        channels = 2 if mode == "squared" else 2 * k * k
        args = {
            "feature": _q(rng.normal(size=(n, c, h, w))),
            "offsets": _q(_dithered_offsets(rng, (n, channels, h, w))),
            "weight": _q(rng.normal(size=(cout, c, k, k)) * 0.5),
            "bias": _q(rng.normal(size=cout)),
        }
        G = _q(rng.normal(size=(n, cout, h, w)))

        def unpack(a, mode=mode):
            params = ConvParams(Tensor(a["weight"]), a["bias"], 1, k // 2)
            return Tensor(a["feature"]), OffsetField(Tensor(a["offsets"]), mode), params

        def loss(a, G=G, unpack=unpack):
            return _dot(G, deform_align.deform_conv_forward(*unpack(a)))

        def grads(a, G=G, unpack=unpack):
            gf, go, gw, gb = deform_align.deform_conv_backward(*unpack(a), Tensor(G))
            return {"feature": gf.data, "offsets": go.data, "weight": gw.data, "bias": gb}

        cases.append(GradCase(args, loss, grads))
    return cases


@register("offset_head")
def _offset_head(rng, trial, cfg):
    kind = ("none", "channel", "cpa")[trial % 3]
    mode = ("squared", "per_point")[(trial // 3) % 2]
    packing = (1, 2)[(trial // 6) % 2]
    C = int(rng.choice([2, 4]))
    n = int(rng.integers(1, 3))
    h, w = 2 * rng.integers(2, 5, size=2)
    out_channels = 2 if mode == "squared" else 18
    args = {
        "F_x": _q(np.abs(rng.normal(size=(n, C, h, w)))),
        "F_yref": _q(np.abs(rng.normal(size=(n, C, h, w)))),
        "head1.weight": _q(rng.normal(size=(C, 2 * C * packing ** 2, 3, 3)) * 0.3),
        "head1.bias": _q(rng.normal(size=C) * 0.1),
        "head2.weight": _q(rng.normal(size=(out_channels, C, 3, 3)) * 0.3),
        "head2.bias": _q(rng.normal(size=out_channels) * 0.1),
    }
    if kind == "channel":
        args.update({f"attention.{k}": v for k, v in _attention_args(rng, 2 * C, 2).items()})
    elif kind == "cpa":
        args.update({f"attention.{k}": v for k, v in _attention_args(rng, 2 * C * 4, 2).items()})
    G = _q(rng.normal(size=(n, out_channels, h, w)))

    def unpack(a):
        attention = None
        if kind != "none":
            inner = AttentionParams(a["attention.fc1"], a["attention.fc2"])
            attention = inner if kind == "channel" else CpaParams(2, inner)
        head = [
            ConvParams(Tensor(a["head1.weight"]), a["head1.bias"], 1, 1),
            ConvParams(Tensor(a["head2.weight"]), a["head2.bias"], 1, 1),
        ]
        return Tensor(a["F_x"]), Tensor(a["F_yref"]), attention, head

    def loss(a):
        return _dot(G, packing_attention.offset_head(*unpack(a), packing).data)

    def grads(a):
        gx, gy, attention_grads, head_grads = packing_attention.offset_head_backward(
            *unpack(a), Tensor(G), packing
        )
        result = {"F_x": gx.data, "F_yref": gy.data}
        result.update({f"attention.{k}": v for k, v in attention_grads.items()})
        for i, (gw, gb) in enumerate(head_grads, 1):
            result[f"head{i}.weight"] = gw.data
            result[f"head{i}.bias"] = gb
        return result

    return [GradCase(args, loss, grads, smooth=False)]


# --- модель целиком ----------------------------------------------------------

MODEL_VARIANTS = (
    {"offset_mode": "squared", "attention": "cpa", "flip_aug": True},
    {"offset_mode": "per_point", "attention": "channel", "flip_aug": False},
    {"offset_mode": "squared", "attention": "none", "flip_aug": False, "align_enabled": False},
    {"offset_mode": "squared", "attention": "cpa", "flip_aug": False, "offset_packing": 2},
)


@register("model_loss")
def _model_loss(rng, trial, cfg):
    model_cfg = ModelConfig(
        in_channels=3, base_channels=8, num_res_blocks=1, scale=2,
        packing_size=4, reduction=4, **MODEL_VARIANTS[trial % len(MODEL_VARIANTS)],
    )
    seed = int(rng.integers(0, 2 ** 31))
    reference = sdan_model.SdanModel.create(model_cfg, seed)
    args = OrderedDict((name, _q(arr)) for name, arr in reference.named_arrays().items())
    # Смещения около (0.3, 0.4): билинейные веса не на изломе, маски полные
    bias = np.tile([0.3, 0.4], model_cfg.offset_channels // 2)
    args["head2.bias"] = _q(bias + rng.uniform(-0.05, 0.05, size=bias.shape))
    args["head2.weight"] = _q(rng.normal(size=args["head2.weight"].shape) * 1e-3)

    n, s = 1, model_cfg.upscale
    X = _q(rng.uniform(0, 1, size=(n, 3, 8, 8)))
    Yref = _q(rng.uniform(0, 1, size=(n, 3, 8, 8)))
    Y = _q(rng.uniform(0, 1, size=(n, 3, 8 * s, 8 * s)))
    models: Dict[type, sdan_model.SdanModel] = {}

    def model_for(a):
        dtype = tensor_core.storage_dtype()
        if dtype not in models:
            models[dtype] = sdan_model.SdanModel.create(model_cfg, seed)
        models[dtype].load_arrays(a)
        return models[dtype]

    def loss(a):
        out = sdan_model.forward(model_for(a), Tensor(X), Tensor(Yref))
        return losses.masked_zoom_loss(out, Tensor(Y), Tensor(Yref))

    def grads(a):
        model = model_for(a)
        out, cache = sdan_model.forward_with_cache(model, Tensor(X), Tensor(Yref))
        grad_zoomed, grad_aligned = losses.masked_zoom_loss_backward(out, Tensor(Y), Tensor(Yref))
        return dict(sdan_model.backward(model, cache, grad_zoomed, grad_aligned))

    return [GradCase(args, loss, grads, smooth=False, eps=cfg.model_eps,
                     total_coords=cfg.coords_per_arg)]


# --- запуск ------------------------------------------------------------------

def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    """Поэлементная относительная ошибка |a - n| / max(|a|, |n|, floor)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    with np.errstate(invalid="ignore", divide="ignore"):
        err = np.abs(analytic - numeric) / denom
    return np.where(denom > 0, err, 0.0)


def _central_difference(case: GradCase, name: str, idx: int, eps: float) -> float:
    flat = case.args[name].reshape(-1)
    original = flat[idx]
    flat[idx] = original + eps
    plus = case.loss(case.args)
    flat[idx] = original - eps
    minus = case.loss(case.args)
    flat[idx] = original
    return (plus - minus) / (2 * eps)


def numeric_derivative(case: GradCase, name: str, idx: int, eps: float,
                       tolerance: float, floor: float) -> Optional[float]:
    """
    Численная производная по одной координате.

    Экстраполяция Ричардсона (4 * D(eps/2) - D(eps)) / 3 убирает
    ошибку усечения порядка eps^2. Для функций с изломами расхождение
    D(eps) и D(eps/2) больше порога означает излом внутри шага:
    координата пропускается (возвращается None).
    """
    coarse = _central_difference(case, name, idx, eps)
    fine = _central_difference(case, name, idx, eps / 2)
    if not case.smooth and relative_error(coarse, fine, floor) > tolerance:
        return None
    return (4 * fine - coarse) / 3


def _coordinates(case: GradCase, rng: np.random.Generator, per_arg: int):
    names = list(case.args)
    if case.total_coords is None:
        for name in names:
            size = case.args[name].size
            for idx in rng.choice(size, min(per_arg, size), replace=False):
                yield name, int(idx)
        return
    sizes = np.array([case.args[name].size for name in names])
    bounds = np.cumsum(sizes)
    picks = rng.choice(bounds[-1], min(case.total_coords, int(bounds[-1])), replace=False)
    for flat in np.sort(picks):
        arg = int(np.searchsorted(bounds, flat, side="right"))
        yield names[arg], int(flat - (bounds[arg] - sizes[arg]))


def check_case(case: GradCase, rng: np.random.Generator, cfg: GradcheckConfig,
               f64: bool, tolerance: float) -> Tuple[float, int]:
    """
    Проверка одного испытания.

    Нижняя граница знаменателя относительной ошибки - доля от
    max|аналитического градиента| по всем аргументам сразу: градиенты,
    пренебрежимо малые на масштабе всей функции потерь, не сравниваются
    с шумом округления конечных разностей.

    Returns:
        Кортеж (максимальная относительная ошибка, число проверенных координат).
        Ошибка backward-функции (исключение, отсутствующий градиент,
        несовпадение формы) дает бесконечную ошибку.
    """
    eps = case.eps or cfg.eps
    floor_fraction = cfg.rel_floor_f64 if f64 else cfg.rel_floor_f32
    try:
        with float64_mode(f64):
            analytic = {k: np.asarray(v, dtype=np.float64) for k, v in case.grads(case.args).items()}
    except (SdanError, ValueError) as e:
        logger.debug(f"backward завершился ошибкой: {e}")
        return float("inf"), 0
    for name, arr in case.args.items():
        if name not in analytic or analytic[name].shape != arr.shape:
            logger.debug(f"градиент {name} отсутствует или имеет неверную форму")
            return float("inf"), 0

    scale = max(float(np.abs(analytic[name]).max(initial=0.0)) for name in case.args)
    floor = floor_fraction * scale + np.finfo(np.float64).tiny
    worst, checked = 0.0, 0
    with float64_mode(True):
        for name, idx in _coordinates(case, rng, cfg.coords_per_arg):
            numeric = numeric_derivative(case, name, idx, eps, tolerance, floor)
            if numeric is None:
                logger.debug(f"{name}[{idx}]: излом между eps и eps/2, координата пропущена")
                continue
            a = analytic[name].reshape(-1)[idx]
            worst = max(worst, float(relative_error(a, numeric, floor)))
            checked += 1
    return worst, checked


def tolerance_for(op: str, cfg: GradcheckConfig, f64: bool) -> float:
    if f64:
        return cfg.tol_f64
    return cfg.composite_tol_f32.get(op, cfg.tol_f32)


def run_gradcheck(ops: Optional[Sequence[str]] = None, trials: Optional[int] = None,
                  f64: bool = False, seed: int = 0,
                  cfg: Optional[GradcheckConfig] = None) -> List[CheckResult]:
    """
    Проверка градиентов выбранных операций.

    Операция, у которой ни одна координата не была проверена (все
    пропущены как изломы), считается проваленной.

    Args:
        ops: Имена операций (None - все зарегистрированные)
        trials: Число испытаний на операцию (None - из конфигурации)
        f64: Аналитическая сторона в float64
        seed: Базовый seed; испытание t операции i использует default_rng([seed, i, t])

    Raises:
        ConfigError: При неизвестном имени операции
    """
    cfg = cfg or config.gradcheck
    names = list(ops) if ops else available_ops()
    unknown = [op for op in names if op not in _CHECKS]
    if unknown:
        raise ConfigError(f"неизвестные операции {unknown}, доступны: {available_ops()}")

    results = []
    for op in names:
        op_index = available_ops().index(op)
        count = trials if trials is not None else (
            cfg.model_trials if op in _MODEL_LEVEL else cfg.trials
        )
        tolerance = tolerance_for(op, cfg, f64)
        worst, checked = 0.0, 0
        for trial in progress(range(count), desc=op, unit="исп.", total=count):
            rng = np.random.default_rng([seed, op_index, trial])
            for case in _CHECKS[op](rng, trial, cfg):
                case_worst, case_checked = check_case(case, rng, cfg, f64, tolerance)
                worst = max(worst, case_worst)
                checked += case_checked
        if checked == 0 and np.isfinite(worst):
            logger.warning(f"{op}: все координаты пропущены как изломы, проверка не состоялась")
            worst = float("inf")
        result = CheckResult(op, count, worst, tolerance)
        logger.debug(f"{op}: max_rel_err = {worst:.3e}, проверено координат {checked}, "
                     f"порог {tolerance:.0e}, {result.status}")
        results.append(result)
    return results


def failed_ops(results: Sequence[CheckResult]) -> List[str]:
    return [r.op for r in results if not r.passed]
