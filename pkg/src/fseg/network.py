"""The hierarchical segmentation network: a strided stem convolution, four
stages of frequency-domain (or depthwise-conv baseline) blocks, a decoder
with parameter-free spectral fusion (or a concat-conv skip baseline), and a
spectral-upsampling head.  Parameter/FLOPs accounting and checkpoint I/O
live here too.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import FsegError, GeometryError, ShapeMismatchError
from .spectral import (
    FourierBlockParams,
    PadSpec,
    channel_mlp,
    fourier_fuse,
    global_filter,
    spectral_upsample2x,
)
from .tensor import Parameter, Tensor

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class FsegConfig:
    feature_dims: tuple = (12, 24, 48, 96)
    blocks_per_stage: tuple = (2, 2, 4, 2)
    stem_kernel: int = 7
    stem_stride: int = 2
    mlp_ratio: int = 4
    filter_kind: str = "fourier"  # "fourier" | "dwconv7"
    decoder_kind: str = "fusion"  # "fusion" | "skip"
    pad_mode: str = "double"  # "none" | "double"
    fusion_orientation: str = "skip_highband"
    num_classes: int = 2

    def __post_init__(self):
        self.feature_dims = tuple(self.feature_dims)
        self.blocks_per_stage = tuple(self.blocks_per_stage)
        if len(self.feature_dims) != 4 or len(self.blocks_per_stage) != 4:
            raise ValueError("feature_dims and blocks_per_stage must have 4 entries")
        if any(a >= b for a, b in zip(self.feature_dims, self.feature_dims[1:])):
            raise ValueError(f"feature_dims must be strictly increasing: {self.feature_dims}")
        if any(b < 1 for b in self.blocks_per_stage):
            raise ValueError(f"blocks_per_stage must all be >= 1: {self.blocks_per_stage}")
        if self.filter_kind not in ("fourier", "dwconv7"):
            raise ValueError(f"unknown filter_kind {self.filter_kind!r}")
        if self.decoder_kind not in ("fusion", "skip"):
            raise ValueError(f"unknown decoder_kind {self.decoder_kind!r}")
        if self.pad_mode not in ("none", "double"):
            raise ValueError(f"unknown pad_mode {self.pad_mode!r}")


PRESETS = {
    "fseg-s": dict(feature_dims=(12, 24, 48, 96)),
    "fseg-m": dict(feature_dims=(24, 48, 96, 128)),
    "fseg-l": dict(feature_dims=(48, 96, 128, 256)),
    # a slimmed variant for CPU-scale runs
    "fseg-s-reduced": dict(feature_dims=(8, 16, 32, 64), blocks_per_stage=(1, 1, 2, 1)),
}


def preset_config(name: str, **overrides) -> FsegConfig:
    key = name.lower()
    if key not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    kw = dict(PRESETS[key])
    kw.update(overrides)
    return FsegConfig(**kw)


# ---------------------------------------------------------------------------
# Module system: registered parameters with unique dotted paths
# ---------------------------------------------------------------------------


class Module:
    """Minimal parameter container; children discovered via attributes."""

    def named_parameters(self, prefix=""):
        seen = set()
        for attr, value in vars(self).items():
            yield from _walk(value, f"{prefix}{attr}", seen)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state(self, state: dict):
        named = dict(self.named_parameters())
        if set(named) != set(state):
            missing = sorted(set(named) - set(state))
            extra = sorted(set(state) - set(named))
            raise ShapeMismatchError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, p in named.items():
            arr = state[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise ShapeMismatchError(
                    f"parameter {name}: checkpoint shape {tuple(arr.shape)} != model {tuple(p.shape)}"
                )
            p.data = arr.astype(p.dtype, copy=True)


def _walk(value, path, seen):
    if isinstance(value, Parameter):
        if id(value) in seen:
            raise FsegError(f"parameter registered twice, second path {path}")
        seen.add(id(value))
        value.name = path
        yield path, value
    elif isinstance(value, Module):
        for sub, p in value.named_parameters(prefix=""):
            yield from _walk_named(p, f"{path}.{sub}", seen)
    elif isinstance(value, FourierBlockParams):
        for sub, p in value.named().items():
            yield from _walk(p, f"{path}.{sub}", seen)
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{path}.{i}", seen)


def _walk_named(p, path, seen):
    if id(p) in seen:
        raise FsegError(f"parameter registered twice, second path {path}")
    seen.add(id(p))
    p.name = path
    yield path, p


class Conv3d(Module):
    def __init__(self, cin, cout, k, stride=1, padding=0, groups=1, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        fan_in = (cin // groups) * k**3
        bound = 1.0 / np.sqrt(fan_in)
        self.stride, self.padding, self.groups = stride, padding, groups
        self.weight = Parameter(
            rng.uniform(-bound, bound, (cout, cin // groups, k, k, k)).astype(dtype),
            init_spec="uniform-fanin",
        )
        self.bias = Parameter(np.zeros(cout, dtype=dtype), init_spec="zeros")

    def __call__(self, x):
        return T.conv3d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class ChannelLayerNorm(Module):
    def __init__(self, c, dtype=np.float32):
        self.gamma = Parameter(np.ones(c, dtype=dtype), init_spec="ones")
        self.beta = Parameter(np.zeros(c, dtype=dtype), init_spec="zeros")

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta, axis=0)


class FourierBlock(Module):
    """One encoder block on the spectral path; parameters are bound to the
    stage resolution it was built for."""

    def __init__(self, c, stage_dims, pad_mode, mlp_ratio, rng, dtype=np.float32):
        self.stage_dims = tuple(stage_dims)
        self.pad = PadSpec(pad_mode)
        self.params = FourierBlockParams.create(c, stage_dims, self.pad, mlp_ratio, rng, dtype)

    def __call__(self, x):
        if tuple(x.shape[-3:]) != self.stage_dims:
            raise GeometryError(
                f"fourier block built for {self.stage_dims} got input {tuple(x.shape[-3:])}; "
                "the learned frequency filter is resolution-bound"
            )
        return global_filter(x, self.params, self.pad)


class DWConvBlock(Module):
    """Baseline block: depthwise 7^3 conv in place of the spectral filter."""

    def __init__(self, c, mlp_ratio, rng, dtype=np.float32):
        self.ln1 = ChannelLayerNorm(c, dtype)
        self.dw = Conv3d(c, c, 7, padding=3, groups=c, rng=rng, dtype=dtype)
        self.ln2 = ChannelLayerNorm(c, dtype)
        hid = mlp_ratio * c
        b1 = 1.0 / np.sqrt(c)
        b2 = 1.0 / np.sqrt(hid)
        self.mlp_w1 = Parameter(rng.uniform(-b1, b1, (c, hid)).astype(dtype), init_spec="uniform-fanin")
        self.mlp_b1 = Parameter(np.zeros(hid, dtype=dtype), init_spec="zeros")
        self.mlp_w2 = Parameter(rng.uniform(-b2, b2, (hid, c)).astype(dtype), init_spec="uniform-fanin")
        self.mlp_b2 = Parameter(np.zeros(c, dtype=dtype), init_spec="zeros")

    def __call__(self, x):
        h = self.ln2(self.dw(self.ln1(x)))
        return channel_mlp(h, self.mlp_w1, self.mlp_b1, self.mlp_w2, self.mlp_b2) + x


def _upsample_nearest2x(x: Tensor) -> Tensor:
    c, d, h, w = x.shape
    y = x.reshape(c, d, 1, h, 1, w, 1)
    ones = np.ones((1, 1, 2, 1, 2, 1, 2), dtype=x.dtype)
    return (y * ones).reshape(c, 2 * d, 2 * h, 2 * w)


class FusionLevel(Module):
    """One decoder level: channel projection (plumbing), then the
    parameter-free spectral fusion with the encoder skip, then refinement."""

    def __init__(self, c_in, c_out, orientation, rng, dtype=np.float32):
        self.proj = Conv3d(c_in, c_out, 1, rng=rng, dtype=dtype)
        self.orientation = orientation
        self.refine = Conv3d(c_out, c_out, 3, padding=1, rng=rng, dtype=dtype)

    def fusion_param_count(self):
        return 0  # the fusion junction itself owns no parameters

    def __call__(self, dec, skip):
        d = self.proj(dec)
        fused = fourier_fuse(skip, d, orientation=self.orientation)
        return fused + self.refine(T.gelu(fused))


class SkipLevel(Module):
    """Baseline decoder level: nearest upsample, concat, 1^3 conv merge."""

    def __init__(self, c_in, c_out, rng, dtype=np.float32):
        self.proj = Conv3d(c_in, c_out, 1, rng=rng, dtype=dtype)
        self.merge = Conv3d(2 * c_out, c_out, 1, rng=rng, dtype=dtype)
        self.refine = Conv3d(c_out, c_out, 3, padding=1, rng=rng, dtype=dtype)

    def __call__(self, dec, skip):
        up = _upsample_nearest2x(self.proj(dec))
        merged = self.merge(T.concat([skip, up], axis=0))
        return merged + self.refine(T.gelu(merged))


class FsegModel(Module):
    def __init__(self, config: FsegConfig, input_size, seed: int = 0, dtype=np.float32):
        self.config = config
        self.input_size = tuple(input_size)
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        dims = config.feature_dims

        divisor = config.stem_stride * 2**3
        for ax, n in enumerate(self.input_size):
            if n % divisor:
                raise GeometryError(
                    f"input extent {n} on axis {ax} not divisible by "
                    f"stem_stride*2^3 = {divisor}"
                )

        self.stem = Conv3d(
            1, dims[0], config.stem_kernel, stride=config.stem_stride,
            padding=config.stem_kernel // 2, rng=rng, dtype=dtype,
        )

        self.stage_dims = [
            tuple(n // (config.stem_stride * 2**i) for n in self.input_size) for i in range(4)
        ]
        self.stages = []
        for i in range(4):
            blocks = []
            for _ in range(config.blocks_per_stage[i]):
                if config.filter_kind == "fourier":
                    blocks.append(
                        FourierBlock(dims[i], self.stage_dims[i], config.pad_mode,
                                     config.mlp_ratio, rng, dtype)
                    )
                else:
                    blocks.append(DWConvBlock(dims[i], config.mlp_ratio, rng, dtype))
            self.stages.append(blocks)
        self.downsamples = [
            Conv3d(dims[i], dims[i + 1], 1, rng=rng, dtype=dtype) for i in range(3)
        ]

        if config.decoder_kind == "fusion":
            self.decoder = [
                FusionLevel(dims[i + 1], dims[i], config.fusion_orientation, rng, dtype)
                for i in reversed(range(3))
            ]
        else:
            self.decoder = [SkipLevel(dims[i + 1], dims[i], rng, dtype) for i in reversed(range(3))]

        self.head = Conv3d(dims[0], config.num_classes, 1, rng=rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[0] != 1:
            raise GeometryError(f"expected input [1,D,H,W], got {tuple(x.shape)}")
        divisor = self.config.stem_stride * 2**3
        for ax, n in enumerate(x.shape[1:]):
            if n % divisor:
                raise GeometryError(
                    f"input extent {n} on axis {ax} not divisible by "
                    f"stem_stride*2^3 = {divisor}"
                )
        h = self.stem(x)
        skips = []
        for i in range(4):
            for block in self.stages[i]:
                h = block(h)
            skips.append(h)
            if i < 3:
                h = self.downsamples[i](T.avg_pool3d(h, 2))
        dec = skips[3]
        for level, skip in zip(self.decoder, reversed(skips[:3])):
            dec = level(dec, skip)
        return self.head(spectral_upsample2x(dec))


def build(config: FsegConfig, input_size, seed: int = 0, dtype=np.float32) -> FsegModel:
    return FsegModel(config, input_size, seed=seed, dtype=dtype)


# ---------------------------------------------------------------------------
# Parameter and FLOPs accounting
# ---------------------------------------------------------------------------


@dataclass
class ModelSummary:
    total_params: int
    param_table: list = field(default_factory=list)  # (name, count) pairs
    flops: int = 0
    flop_table: list = field(default_factory=list)
    peak_activation: int = 0
    input_size: tuple = ()
    reference: dict = field(default_factory=dict)


def _param_entries(model: Module):
    for name, p in model.named_parameters():
        n = int(p.size) * (2 if p.is_complex else 1)
        yield name, n


def param_count(model: FsegModel) -> ModelSummary:
    """Exact registry count; complex entries count real and imaginary parts."""
    table = list(_param_entries(model))
    total = sum(n for _, n in table)
    independent = _independent_param_enumeration(model)
    if total != independent:
        raise FsegError(f"registry count {total} != structural enumeration {independent}")
    return ModelSummary(total_params=total, param_table=table, input_size=model.input_size)


def _independent_param_enumeration(model: FsegModel) -> int:
    """Recount by walking raw attribute structure, skipping the registry."""
    total = 0
    stack = [model]
    seen = set()
    while stack:
        obj = stack.pop()
        if isinstance(obj, Parameter):
            if id(obj) not in seen:
                seen.add(id(obj))
                total += int(obj.size) * (2 if obj.is_complex else 1)
        elif isinstance(obj, Module):
            stack.extend(vars(obj).values())
        elif isinstance(obj, FourierBlockParams):
            stack.extend(obj.named().values())
        elif isinstance(obj, (list, tuple)):
            stack.extend(obj)
    return total


def _conv_flops(k, cin, cout, out_vox, groups=1):
    return 2 * k**3 * (cin // groups) * cout * out_vox


def _fft_flops(dims, channels):
    """5*N*log2(N) real-op estimate per axis pass, per channel."""
    vox = int(np.prod(dims))
    return int(sum(5 * vox * np.log2(n) for n in dims) * channels)


def _half_bins(dims):
    return dims[0] * dims[1] * (dims[2] // 2 + 1)


def analytic_params(config: FsegConfig, input_size) -> int:
    """Parameter count computed from the configuration alone (no model)."""
    dims = config.feature_dims
    stage_dims = [
        tuple(n // (config.stem_stride * 2**i) for n in input_size) for i in range(4)
    ]
    total = config.stem_kernel**3 * 1 * dims[0] + dims[0]  # stem
    for i in range(4):
        c = dims[i]
        hid = config.mlp_ratio * c
        per_block = 4 * c + c * hid + hid + hid * c + c  # two LNs + MLP
        if config.filter_kind == "fourier":
            sd = stage_dims[i]
            pd = PadSpec(config.pad_mode).padded_dims(sd)
            per_block += 2 * c * _half_bins(pd) + 2 * c * _half_bins(sd)
        else:
            per_block += 7**3 * c + c  # depthwise 7^3 (Cin/g = 1)
        total += config.blocks_per_stage[i] * per_block
    for i in range(3):
        total += dims[i] * dims[i + 1] + dims[i + 1]  # downsample pointwise
    for i in range(3):
        c_in, c_out = dims[i + 1], dims[i]
        total += c_in * c_out + c_out  # projection
        if config.decoder_kind == "skip":
            total += 2 * c_out * c_out + c_out  # concat-merge 1^3 conv
        total += 27 * c_out * c_out + c_out  # refinement conv
    total += dims[0] * config.num_classes + config.num_classes  # head
    return total


def flops_estimate(config_or_model, input_size=None) -> ModelSummary:
    """Analytic multiply-add accounting for one forward pass.

    Accepts a config (preferred: nothing is allocated) or a built model.
    Convs: 2*k^3*(Cin/g)*Cout*out-voxels.  FFTs: 5*N*log2(N) per axis pass
    per channel.  Complex Hadamard: 6 real ops per bin.  Elementwise and
    normalization traffic is omitted (documented, sub-percent).
    """
    if isinstance(config_or_model, FsegModel):
        config = config_or_model.config
        input_size = input_size or config_or_model.input_size
    else:
        config = config_or_model
        if input_size is None:
            raise ValueError("input_size required when passing a config")
    input_size = tuple(input_size)
    dims = config.feature_dims
    stage_dims = [
        tuple(n // (config.stem_stride * 2**i) for n in input_size) for i in range(4)
    ]
    table = []
    stem_vox = int(np.prod(stage_dims[0]))
    table.append(("stem", _conv_flops(config.stem_kernel, 1, dims[0], stem_vox)))
    for i in range(4):
        c = dims[i]
        sd = stage_dims[i]
        vox = int(np.prod(sd))
        hid = config.mlp_ratio * c
        mlp = 2 * c * hid * vox + 2 * hid * c * vox
        if config.filter_kind == "fourier":
            pd = PadSpec(config.pad_mode).padded_dims(sd)
            transforms = 2 * _fft_flops(pd, c)
            if pd != sd:
                transforms += 2 * _fft_flops(sd, c)
            hadamard = 6 * c * _half_bins(pd)
            block = transforms + hadamard + mlp
        else:
            block = _conv_flops(7, c, c, vox, groups=c) + mlp
        table.append((f"stage{i + 1}", config.blocks_per_stage[i] * block))
        if i < 3:
            down_vox = int(np.prod(stage_dims[i + 1]))
            table.append((f"down{i + 1}", _conv_flops(1, c, dims[i + 1], down_vox)))
    for lvl, i in enumerate(reversed(range(3))):
        c_in, c_out = dims[i + 1], dims[i]
        small = stage_dims[i + 1]
        big = stage_dims[i]
        vox_small = int(np.prod(small))
        vox_big = int(np.prod(big))
        f = _conv_flops(1, c_in, c_out, vox_small)
        if config.decoder_kind == "fusion":
            f += _fft_flops(big, c_out) + _fft_flops(small, c_out) + _fft_flops(big, c_out)
        else:
            f += _conv_flops(1, 2 * c_out, c_out, vox_big)
        f += _conv_flops(3, c_out, c_out, vox_big)
        table.append((f"decoder{lvl + 1}", f))
    head_in = stage_dims[0]
    head_out = input_size
    table.append(("head_upsample", _fft_flops(head_in, dims[0]) + _fft_flops(head_out, dims[0])))
    table.append(("head_conv", _conv_flops(1, dims[0], config.num_classes, int(np.prod(head_out)))))
    total = sum(f for _, f in table)
    peak = 4 * max(
        int(np.prod(sd)) * c * (2 if config.pad_mode == "double" else 1) * 2
        for sd, c in zip(stage_dims, dims)
    )
    return ModelSummary(
        total_params=analytic_params(config, input_size),
        flops=total,
        flop_table=table,
        peak_activation=peak,
        input_size=input_size,
    )


# ---------------------------------------------------------------------------
# Checkpoints: JSON manifest + raw little-endian blob
# ---------------------------------------------------------------------------

_DTYPE_CODES = {
    np.dtype(np.float32): "<f4",
    np.dtype(np.float64): "<f8",
    np.dtype(np.complex64): "<c8",
    np.dtype(np.complex128): "<c16",
}


def save_checkpoint(model: FsegModel, path: str, seed: int = 0, step: int = 0):
    """Write `<path>.json` (manifest) and `<path>.bin` (tensor blob)."""
    entries = []
    offset = 0
    chunks = []
    for name, p in model.named_parameters():
        arr = np.ascontiguousarray(p.data)
        code = _DTYPE_CODES[np.dtype(arr.dtype)]
        raw = arr.astype(code).tobytes()
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": code, "offset": offset,
             "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "config": asdict(model.config),
        "input_size": list(model.input_size),
        "dtype": _DTYPE_CODES[np.dtype(model.dtype)],
        "params": entries,
        "seed": int(seed),
        "step": int(step),
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path + ".json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    with open(path + ".bin", "wb") as f:
        f.write(b"".join(chunks))


def load_checkpoint(path: str):
    """Rebuild the model from `<path>.json` + `<path>.bin`; every tensor
    shape is validated against the manifest."""
    with open(path + ".json") as f:
        manifest = json.load(f)
    blob = open(path + ".bin", "rb").read()
    expected = sum(e["nbytes"] for e in manifest["params"])
    if len(blob) != expected:
        raise ShapeMismatchError(
            f"checkpoint blob is {len(blob)} bytes, manifest expects {expected}"
        )
    cfg = manifest["config"]
    config = FsegConfig(**cfg)
    dtype = np.dtype(manifest["dtype"]).newbyteorder("=")
    model = FsegModel(config, tuple(manifest["input_size"]), seed=manifest["seed"], dtype=dtype.type)
    state = {}
    for e in manifest["params"]:
        arr = np.frombuffer(
            blob, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"])) if e["shape"] else 1,
            offset=e["offset"],
        ).reshape(e["shape"])
        state[e["name"]] = arr
    model.load_state(state)
    return model, manifest
