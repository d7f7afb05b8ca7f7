"""
Модуль сборки SDAN.

Прямой проход:
1. F_x = relu(conv(X)), F_y = признаки опоры (flip-аугментация или relu(conv(Yref))) с общими весами
2. Θ = offset_head(F_x, F_y) через выбранное внимание (none / channel / cpa)
3. F_a = deform_conv(F_x, Θ); при выключенном выравнивании F_a = conv(F_x), Θ ≡ 0
4. X' = conv(F_a) - выровненный выход на LR-разрешении
5. SR-ствол: остаточные блоки, conv + глобальный skip от F_a, ступени pixel shuffle x2, финальная conv -> X̃
6. M' = validity_mask(Θ), M = upsample_mask(M', upscale)

Обратный проход сцеплен вручную в обратном порядке; возвращает
словарь градиентов с теми же именами, что и named_arrays().
"""

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import ModelConfig
from deform_align import (
    OffsetField,
    deform_conv_backward,
    deform_conv_forward,
    upsample_mask,
    validity_mask,
)
from exceptions import CheckpointError, DimensionError
from logger_config import logger
from packing_attention import (
    AttentionLike,
    AttentionParams,
    CpaParams,
    flip_augmented_reference,
    flip_augmented_reference_backward,
    offset_head,
    offset_head_backward,
)
from tensor_core import (
    ConvParams,
    Tensor,
    activation,
    activation_backward,
    conv2d,
    conv2d_backward,
    depth_to_space,
    space_to_depth,
)
from validators import validate_model_config


@dataclass
class ForwardOutput:
    """Результаты прямого прохода: X̃, X', M, M', Θ."""

    zoomed: Tensor
    aligned: Tensor
    mask_hr: Tensor
    mask_lr: Tensor
    offsets: OffsetField


@dataclass
class SdanModel:
    """
    Параметры SDAN и конфигурация архитектуры.

    Имена параметров (используются оптимизатором и чекпойнтами):
    feat, attention, head1, head2, align, aligned_out, res{i}.conv1/conv2,
    mid, up{i}, final.
    """

    config: ModelConfig
    feat: ConvParams
    attention: AttentionLike
    head: List[ConvParams]
    align: ConvParams
    aligned_out: ConvParams
    res: List[Tuple[ConvParams, ConvParams]]
    mid: ConvParams
    up: List[ConvParams]
    final: ConvParams
    seed: int = 0

    @classmethod
    def create(cls, config: ModelConfig, seed: int = 0) -> "SdanModel":
        """
        Инициализация модели из генератора default_rng(seed).

        Слои создаются в фиксированном порядке, поэтому seed полностью
        определяет параметры. Финальная свертка головы смещений нулевая.
        """
        validate_model_config(config)
        rng = np.random.default_rng(seed)
        C = config.base_channels
        k = config.kernel_size

        feat = ConvParams.create(config.in_channels, C, 3, rng)
        if config.attention == "channel":
            attention: AttentionLike = AttentionParams.create(2 * C, config.reduction, rng)
        elif config.attention == "cpa":
            attention = CpaParams.create(2 * C, config.packing_size, config.reduction, rng)
        else:
            attention = None
        head = [
            ConvParams.create(2 * C * config.offset_packing ** 2, C, 3, rng),
            ConvParams.create(C, config.offset_channels, 3, rng, zero=True),
        ]
        align = ConvParams.create(C, C, k, rng)
        aligned_out = ConvParams.create(C, config.in_channels, 3, rng)
        res = [
            (ConvParams.create(C, C, 3, rng), ConvParams.create(C, C, 3, rng))
            for _ in range(config.num_res_blocks)
        ]
        mid = ConvParams.create(C, C, 3, rng)
        up = [ConvParams.create(C, 4 * C, 3, rng) for _ in range(config.num_upsample_stages)]
        final = ConvParams.create(C, 3, 3, rng)
        return cls(config, feat, attention, head, align, aligned_out, res, mid, up, final, seed)

    def _layers(self):
        """Пары (имя, слой, роль) в фиксированном порядке."""
        layers = [("feat", self.feat, "feature")]
        if self.attention is not None:
            inner = self.attention.inner if isinstance(self.attention, CpaParams) else self.attention
            layers.append(("attention", inner, "offset"))
        layers += [
            ("head1", self.head[0], "offset"),
            ("head2", self.head[1], "offset"),
            ("align", self.align, "align"),
            ("aligned_out", self.aligned_out, "align"),
        ]
        for i, (c1, c2) in enumerate(self.res):
            layers += [(f"res{i}.conv1", c1, "trunk"), (f"res{i}.conv2", c2, "trunk")]
        layers.append(("mid", self.mid, "trunk"))
        layers += [(f"up{i}", conv, "upsample") for i, conv in enumerate(self.up)]
        layers.append(("final", self.final, "output"))
        return layers

    def named_arrays(self) -> "OrderedDict[str, np.ndarray]":
        """Все массивы параметров по именам (ссылки: обновление на месте меняет модель)."""
        arrays = OrderedDict()
        for prefix, layer, _ in self._layers():
            if isinstance(layer, AttentionParams):
                arrays[f"{prefix}.fc1"] = layer.fc1
                arrays[f"{prefix}.fc2"] = layer.fc2
            else:
                arrays[f"{prefix}.weight"] = layer.weight.data
                arrays[f"{prefix}.bias"] = layer.bias
        return arrays

    def roles(self) -> Dict[str, str]:
        """Роль каждого параметра (группа модулей) для манифеста чекпойнта."""
        result = {}
        for prefix, layer, role in self._layers():
            names = ("fc1", "fc2") if isinstance(layer, AttentionParams) else ("weight", "bias")
            for name in names:
                result[f"{prefix}.{name}"] = role
        return result

    def load_arrays(self, arrays: Dict[str, np.ndarray], source: str = "<arrays>") -> None:
        """
        Копирование значений параметров в модель.

        Raises:
            CheckpointError: При отсутствии параметра или несовпадении формы
        """
        own = self.named_arrays()
        missing = set(own) - set(arrays)
        extra = set(arrays) - set(own)
        if missing or extra:
            raise CheckpointError(
                source, f"набор параметров не совпадает: нет {sorted(missing)}, лишние {sorted(extra)}"
            )
        for name, target in own.items():
            value = np.asarray(arrays[name])
            if value.shape != target.shape:
                raise CheckpointError(source, f"{name}: форма {value.shape}, ожидалась {target.shape}")
            target[...] = value

    def clone(self) -> "SdanModel":
        """Независимая копия параметров (снимок для оценки)."""
        copy = SdanModel.create(self.config, self.seed)
        copy.load_arrays({k: v.copy() for k, v in self.named_arrays().items()})
        return copy

    def parameter_count(self) -> int:
        return int(sum(a.size for a in self.named_arrays().values()))


@dataclass
class _Cache:
    X: Tensor
    Yref: Tensor
    pre_x: Tensor
    F_x: Tensor
    F_y: Optional[Tensor]
    pre_y: Optional[Tensor]
    offsets: OffsetField
    F_a: Tensor
    res_inputs: List[Tensor] = field(default_factory=list)
    res_pre: List[Tensor] = field(default_factory=list)
    res_hidden: List[Tensor] = field(default_factory=list)
    trunk_out: Optional[Tensor] = None
    up_inputs: List[Tensor] = field(default_factory=list)
    up_shuffled: List[Tensor] = field(default_factory=list)
    final_input: Optional[Tensor] = None


def _check_inputs(model: SdanModel, X: Tensor, Yref: Tensor) -> None:
    if X.c != model.config.in_channels:
        raise DimensionError(f"вход имеет {X.c} каналов, модель ожидает {model.config.in_channels}")
    if X.shape != Yref.shape:
        raise DimensionError(f"X {X.shape} и опора {Yref.shape} различаются по форме")


def forward_with_cache(model: SdanModel, X: Tensor, Yref: Tensor) -> Tuple[ForwardOutput, _Cache]:
    """Прямой проход с сохранением промежуточных значений для backward."""
    _check_inputs(model, X, Yref)
    cfg = model.config

    pre_x = conv2d(X, model.feat)
    F_x = activation(pre_x, "relu")

    F_y = pre_y = None
    if cfg.align_enabled:
        if cfg.flip_aug:
            F_y = flip_augmented_reference(Yref, model.feat)
        else:
            pre_y = conv2d(Yref, model.feat)
            F_y = activation(pre_y, "relu")
        offsets = offset_head(F_x, F_y, model.attention, model.head, cfg.offset_packing)
        F_a = deform_conv_forward(F_x, offsets, model.align)
    else:
        offsets = OffsetField.zeros(X.n, X.h, X.w, cfg.offset_mode, cfg.kernel_size)
        F_a = conv2d(F_x, model.align)

    cache = _Cache(X, Yref, pre_x, F_x, F_y, pre_y, offsets, F_a)
    aligned = conv2d(F_a, model.aligned_out)

    h = F_a
    for conv1, conv2 in model.res:
        cache.res_inputs.append(h)
        pre = conv2d(h, conv1)
        hidden = activation(pre, "relu")
        cache.res_pre.append(pre)
        cache.res_hidden.append(hidden)
        h = Tensor(h.data + conv2d(hidden, conv2).data)
    cache.trunk_out = h

    u = Tensor(conv2d(h, model.mid).data + F_a.data)
    for conv in model.up:
        cache.up_inputs.append(u)
        shuffled = depth_to_space(conv2d(u, conv), 2)
        cache.up_shuffled.append(shuffled)
        u = activation(shuffled, "relu")
    cache.final_input = u
    zoomed = conv2d(u, model.final)

    mask_lr = validity_mask(offsets, X.h, X.w)
    mask_hr = upsample_mask(mask_lr, cfg.upscale)
    return ForwardOutput(zoomed, aligned, mask_hr, mask_lr, offsets), cache


def forward(model: SdanModel, X: Tensor, Yref: Tensor) -> ForwardOutput:
    """
    Прямой проход SDAN по входу X и опоре Yref одной формы.

    Raises:
        DimensionError: При несовпадении форм или числа каналов
    """
    return forward_with_cache(model, X, Yref)[0]


def infer(model: SdanModel, X: Tensor) -> Tensor:
    """Инференс: опорой служит сам вход, возвращается X̃."""
    out = forward(model, X, X)
    logger.debug(f"Инференс: средний |Θ| = {float(np.abs(out.offsets.data.data).mean()):.4f}")
    return out.zoomed


def backward(model: SdanModel, cache: _Cache, grad_zoomed: Tensor,
             grad_aligned: Tensor) -> "OrderedDict[str, np.ndarray]":
    """
    Градиенты скаляра <grad_zoomed, X̃> + <grad_aligned, X'> по всем параметрам.

    Маски кусочно-постоянны по параметрам и градиента не несут.
    """
    cfg = model.config
    grads: "OrderedDict[str, np.ndarray]" = OrderedDict(
        (name, np.zeros_like(arr)) for name, arr in model.named_arrays().items()
    )

    def put(name: str, gw: Tensor, gb: np.ndarray) -> None:
        grads[f"{name}.weight"] += gw.data
        grads[f"{name}.bias"] += gb

    g, gw, gb = conv2d_backward(cache.final_input, model.final, grad_zoomed)
    put("final", gw, gb)
    for i in reversed(range(len(model.up))):
        g_shuffled = activation_backward(cache.up_shuffled[i], "relu", g)
        g, gw, gb = conv2d_backward(cache.up_inputs[i], model.up[i], space_to_depth(g_shuffled, 2))
        put(f"up{i}", gw, gb)

    g_fa = g.data.copy()
    g_h, gw, gb = conv2d_backward(cache.trunk_out, model.mid, g)
    put("mid", gw, gb)
    for i in reversed(range(len(model.res))):
        conv1, conv2 = model.res[i]
        g_hidden, gw, gb = conv2d_backward(cache.res_hidden[i], conv2, g_h)
        put(f"res{i}.conv2", gw, gb)
        g_pre = activation_backward(cache.res_pre[i], "relu", g_hidden)
        g_branch, gw, gb = conv2d_backward(cache.res_inputs[i], conv1, g_pre)
        put(f"res{i}.conv1", gw, gb)
        g_h = Tensor(g_h.data + g_branch.data)
    g_fa += g_h.data

    g_fa2, gw, gb = conv2d_backward(cache.F_a, model.aligned_out, grad_aligned)
    put("aligned_out", gw, gb)
    g_fa = Tensor(g_fa + g_fa2.data)

    if cfg.align_enabled:
        g_fx, g_theta, gw, gb = deform_conv_backward(cache.F_x, cache.offsets, model.align, g_fa)
        put("align", gw, gb)
        g_fx2, g_fy, attention_grads, head_grads = offset_head_backward(
            cache.F_x, cache.F_y, model.attention, model.head, g_theta, cfg.offset_packing
        )
        for name, grad in attention_grads.items():
            grads[f"attention.{name}"] += grad
        for i, (gw, gb) in enumerate(head_grads, 1):
            put(f"head{i}", gw, gb)
        g_fx = Tensor(g_fx.data + g_fx2.data)

        if cfg.flip_aug:
            _, gw, gb = flip_augmented_reference_backward(cache.Yref, model.feat, g_fy)
        else:
            g_pre_y = activation_backward(cache.pre_y, "relu", g_fy)
            _, gw, gb = conv2d_backward(cache.Yref, model.feat, g_pre_y)
        put("feat", gw, gb)
    else:
        g_fx, gw, gb = conv2d_backward(cache.F_x, model.align, g_fa)
        put("align", gw, gb)

    g_pre_x = activation_backward(cache.pre_x, "relu", g_fx)
    _, gw, gb = conv2d_backward(cache.X, model.feat, g_pre_x)
    put("feat", gw, gb)
    return grads
