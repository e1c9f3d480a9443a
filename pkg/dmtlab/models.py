"""Denoiser ε_θ(x_t, t) and translator f_θ(x_t) networks.

Two families share one descriptor:

* ``mlp``: vector inputs [d]. Three dense layers with a sinusoidal time
  embedding projected into the first hidden layer (denoiser only).
* ``unet``: image inputs [c, h, w] with h, w divisible by 4. Three-level
  conv encoder-decoder (avg-pool down, nearest upsample up, additive skips)
  with the time embedding added as a channel bias at the bottleneck.

Translators also come as ``affine`` maps (x ↦ xW + b). Translators have no
time input and start as the identity map; denoisers start at zero output.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from dmtlab.errors import DimensionError, TimestepRangeError, ValidationError
from dmtlab.rng import make_rng
from dmtlab.tensor import (
    Tensor,
    add,
    add_bias,
    add_channel_bias,
    avg_pool2,
    conv2d,
    matmul,
    relu,
    reshape,
    tanh,
    upsample2,
)

logger = logging.getLogger(__name__)

KINDS = ("mlp", "unet", "affine")
ROLES = ("denoiser", "translator")
ACTIVATIONS = {"tanh": tanh, "relu": relu}


@dataclass(frozen=True)
class Architecture:
    kind: str
    role: str
    input_shape: tuple[int, ...]
    hidden: int = 128
    channels: tuple[int, int, int] = (16, 32, 64)
    time_dim: int = 32
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.kind not in KINDS:
            raise ValidationError(f"Unknown model kind {self.kind!r}")
        if self.role not in ROLES:
            raise ValidationError(f"Unknown model role {self.role!r}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"Unknown activation {self.activation!r}")
        if self.kind in ("mlp", "affine") and len(self.input_shape) != 1:
            raise DimensionError(f"{self.kind} models take vectors, got input shape {self.input_shape}")
        if self.kind == "affine" and self.role != "translator":
            raise ValidationError("affine models are translators only")
        if self.kind == "unet":
            if len(self.input_shape) != 3:
                raise DimensionError(f"unet models take [c, h, w] images, got {self.input_shape}")
            _, h, w = self.input_shape
            if h % 4 or w % 4:
                raise DimensionError(f"unet needs h and w divisible by 4, got {h}x{w}")
            if len(self.channels) != 3:
                raise ValidationError(f"unet needs three channel widths, got {self.channels}")
        if self.role == "denoiser" and self.time_dim < 4:
            raise ValidationError(f"time_dim must be at least 4, got {self.time_dim}")

    @classmethod
    def for_data(cls, input_shape, role: str, kind: str | None = None, **kwargs) -> Architecture:
        if kind is None:
            kind = "mlp" if len(input_shape) == 1 else "unet"
        return cls(kind=kind, role=role, input_shape=tuple(input_shape), **kwargs)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["input_shape"] = list(self.input_shape)
        data["channels"] = list(self.channels)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> Architecture:
        fields = {k: data[k] for k in ("kind", "role", "input_shape", "hidden", "channels", "time_dim", "activation") if k in data}
        return cls(**fields)


def parameter_shapes(arch: Architecture) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, init) in descriptor order. ``init`` is kaiming, zeros or eye."""
    out: list[tuple[str, tuple[int, ...], str]] = []
    final = "zeros"
    if arch.kind == "affine":
        (d,) = arch.input_shape
        return [("weight", (d, d), "eye"), ("bias", (d,), "zeros")]
    if arch.kind == "mlp":
        (d,) = arch.input_shape
        h = arch.hidden
        out += [("w_in", (d, h), "kaiming"), ("b_in", (h,), "zeros")]
        if arch.role == "denoiser":
            out.append(("w_time", (arch.time_dim, h), "kaiming"))
        out += [
            ("w_hid", (h, h), "kaiming"),
            ("b_hid", (h,), "zeros"),
            ("w_out", (h, d), final),
            ("b_out", (d,), "zeros"),
        ]
        return out
    c = arch.input_shape[0]
    c1, c2, c3 = arch.channels
    out += [
        ("enc1_w", (c1, c, 3, 3), "kaiming"),
        ("enc1_b", (c1,), "zeros"),
        ("enc2_w", (c2, c1, 3, 3), "kaiming"),
        ("enc2_b", (c2,), "zeros"),
        ("mid_w", (c3, c2, 3, 3), "kaiming"),
        ("mid_b", (c3,), "zeros"),
    ]
    if arch.role == "denoiser":
        out += [("time_w", (arch.time_dim, c3), "kaiming"), ("time_b", (c3,), "zeros")]
    out += [
        ("dec2_w", (c2, c3, 3, 3), "kaiming"),
        ("dec2_b", (c2,), "zeros"),
        ("dec1_w", (c1, c2, 3, 3), "kaiming"),
        ("dec1_b", (c1,), "zeros"),
        ("out_w", (c, c1, 3, 3), final),
        ("out_b", (c,), "zeros"),
    ]
    return out


def _init_param(shape: tuple[int, ...], init: str, rng: np.random.Generator) -> np.ndarray:
    if init == "zeros":
        return np.zeros(shape)
    if init == "eye":
        return np.eye(shape[0])
    # Kaiming-uniform: fan_in is the first axis of dense weights, c_in*9 for conv kernels
    fan_in = shape[0] if len(shape) == 2 else int(np.prod(shape[1:]))
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def sinusoidal_embedding(t, dim: int) -> np.ndarray:
    """[n] integer timesteps -> [n, dim] sin/cos features."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.pad(emb, ((0, 0), (0, 1)))
    return emb


class _ParameterModel:
    role = ""

    def __init__(self, arch: Architecture, params: dict[str, Tensor], meta: dict | None = None):
        if arch.role != self.role:
            raise ValidationError(f"{type(self).__name__} needs a {self.role} architecture, got {arch.role}")
        expected = parameter_shapes(arch)
        if [name for name, _, _ in expected] != list(params):
            raise ValidationError(f"Parameter names {list(params)} do not match the {arch.kind} descriptor")
        for name, shape, _ in expected:
            if params[name].shape != shape:
                raise DimensionError(f"Parameter {name} has shape {params[name].shape}, expected {shape}")
        self.arch = arch
        self.params = params
        self.meta = dict(meta or {})

    @classmethod
    def initialize(cls, arch: Architecture, seed: int = 0):
        rng = make_rng(seed)
        params = {
            name: Tensor(_init_param(shape, init, rng), requires_grad=True)
            for name, shape, init in parameter_shapes(arch)
        }
        return cls(arch, params)

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def descriptor(self) -> dict:
        data = self.arch.to_dict()
        data["parameter_count"] = self.parameter_count
        data["parameters"] = [[name, list(p.shape)] for name, p in self.params.items()]
        return data

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def clone(self):
        params = {name: Tensor(p.data, requires_grad=True) for name, p in self.params.items()}
        return type(self)(self.arch, params, copy.deepcopy(self.meta))

    def _batched(self, x: Tensor) -> tuple[Tensor, bool]:
        shape = self.arch.input_shape
        if x.shape == shape:
            return reshape(x, (1,) + shape), True
        if x.shape[1:] != shape:
            raise DimensionError(f"Input shape {x.shape} does not match model input {shape}")
        return x, False


def _squeeze(x: Tensor) -> Tensor:
    return reshape(x, x.shape[1:])


def _mlp(p: dict[str, Tensor], x: Tensor, act, time_feat: Tensor | None) -> Tensor:
    h = add_bias(matmul(x, p["w_in"]), p["b_in"])
    if time_feat is not None:
        h = add(h, matmul(time_feat, p["w_time"]))
    h = act(h)
    h = act(add_bias(matmul(h, p["w_hid"]), p["b_hid"]))
    return add_bias(matmul(h, p["w_out"]), p["b_out"])


def _conv(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add_channel_bias(conv2d(x, w), b)


def _unet(p: dict[str, Tensor], x: Tensor, act, time_bias: Tensor | None) -> Tensor:
    e1 = act(_conv(x, p["enc1_w"], p["enc1_b"]))
    e2 = act(_conv(avg_pool2(e1), p["enc2_w"], p["enc2_b"]))
    m = _conv(avg_pool2(e2), p["mid_w"], p["mid_b"])
    if time_bias is not None:
        m = add_channel_bias(m, time_bias)
    m = act(m)
    d2 = add(act(_conv(upsample2(m), p["dec2_w"], p["dec2_b"])), e2)
    d1 = add(act(_conv(upsample2(d2), p["dec1_w"], p["dec1_b"])), e1)
    return _conv(d1, p["out_w"], p["out_b"])


def _timesteps(t, n: int) -> np.ndarray:
    ts = np.full(n, t, dtype=np.int64) if np.ndim(t) == 0 else np.asarray(t, dtype=np.int64)
    if ts.shape != (n,):
        raise DimensionError(f"Got {ts.shape[0]} timesteps for a batch of {n}")
    if np.any(ts < 1):
        raise TimestepRangeError(f"Denoiser timesteps must be >= 1, got min {ts.min()}")
    return ts


class DenoiserModel(_ParameterModel):
    role = "denoiser"

    def __call__(self, x: Tensor, t) -> Tensor:
        return denoiser_forward(self, x, t)

    def predict(self, x: np.ndarray, t: int) -> np.ndarray:
        return denoiser_forward(self, Tensor(x), t).data


class TranslatorModel(_ParameterModel):
    role = "translator"

    def __call__(self, x: Tensor) -> Tensor:
        return translator_forward(self, x)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return translator_forward(self, Tensor(x)).data


def denoiser_forward(m: DenoiserModel, x: Tensor, t) -> Tensor:
    """Predicted noise ε_θ(x, t), same shape as ``x``.

    ``x`` is one input or a batch; ``t`` is one timestep or one per sample.
    """
    xb, single = m._batched(x)
    ts = _timesteps(t, xb.shape[0])
    feat = Tensor(sinusoidal_embedding(ts, m.arch.time_dim))
    act = ACTIVATIONS[m.arch.activation]
    p = m.params
    if m.arch.kind == "mlp":
        out = _mlp(p, xb, act, feat)
    else:
        time_bias = add_bias(matmul(feat, p["time_w"]), p["time_b"])
        out = _unet(p, xb, act, time_bias)
    return _squeeze(out) if single else out


def translator_forward(m: TranslatorModel, x_t: Tensor) -> Tensor:
    """f_θ(x_t), same shape as ``x_t``."""
    xb, single = m._batched(x_t)
    act = ACTIVATIONS[m.arch.activation]
    p = m.params
    if m.arch.kind == "affine":
        out = add_bias(matmul(xb, p["weight"]), p["bias"])
    elif m.arch.kind == "mlp":
        out = add(xb, _mlp(p, xb, act, None))
    else:
        out = add(xb, _unet(p, xb, act, None))
    return _squeeze(out) if single else out


def build_denoiser(arch: Architecture, seed: int = 0) -> DenoiserModel:
    model = DenoiserModel.initialize(arch, seed)
    logger.debug("built %s denoiser with %d parameters", arch.kind, model.parameter_count)
    return model


def build_translator(arch: Architecture, seed: int = 0) -> TranslatorModel:
    model = TranslatorModel.initialize(arch, seed)
    logger.debug("built %s translator with %d parameters", arch.kind, model.parameter_count)
    return model
