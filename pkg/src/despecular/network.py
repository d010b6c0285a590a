"""U-shaped encoder / bottleneck / decoder network and its bookkeeping."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .attention import (
    CCATParams,
    FfnParams,
    GDATParams,
    LHDDATParams,
    PSATParams,
    SSSWATParams,
    ccat_block,
    g_dat,
    l_hd_dat,
    make_ccat,
    make_g_dat,
    make_l_hd_dat,
)
from .tensor import ConvParams, conv2d, make_conv
from .validation import ConfigurationError, check_image

MIN_INPUT_SIZE = 8
FFN_RATIO = 2


@dataclass(frozen=True)
class ModelConfig:
    base_width: int = 16
    blocks_per_level: tuple = (1, 1, 1, 1)
    window: int = 8
    shift: int | None = None
    heads: int = 2
    ffn_ratio: int = FFN_RATIO
    global_residual: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "blocks_per_level", tuple(int(n) for n in self.blocks_per_level))
        if self.shift is None:
            object.__setattr__(self, "shift", self.window // 2)
        if self.base_width < 1:
            raise ConfigurationError("base_width must be >= 1")
        if len(self.blocks_per_level) != 4 or min(self.blocks_per_level) < 1:
            raise ConfigurationError("blocks_per_level needs four counts, each >= 1")
        if not 0 <= self.shift < self.window:
            raise ConfigurationError(f"need window > shift >= 0, got window={self.window} shift={self.shift}")
        if self.heads < 1:
            raise ConfigurationError("heads must be >= 1")
        if self.ffn_ratio != FFN_RATIO:
            raise ConfigurationError(f"ffn_ratio is fixed at {FFN_RATIO}")
        for width in self.level_widths[1:]:
            if width % self.heads:
                raise ConfigurationError(f"level width {width} not divisible by heads={self.heads}")

    @property
    def level_widths(self) -> list[int]:
        c = self.base_width
        return [c, 2 * c, 4 * c, 8 * c]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["blocks_per_level"] = list(self.blocks_per_level)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> "ModelConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


PRESETS = {
    "toy": ModelConfig(base_width=16),
    "wide": ModelConfig(base_width=48),
}


@dataclass
class Model:
    config: ModelConfig
    head: ConvParams
    enc0: list[LHDDATParams]
    down0: ConvParams
    enc1: list[CCATParams]
    down1: ConvParams
    enc2: list[CCATParams]
    down2: ConvParams
    bottleneck: list[GDATParams]
    up2: ConvParams
    fuse2: ConvParams
    dec2: list[CCATParams]
    up1: ConvParams
    fuse1: ConvParams
    dec1: list[CCATParams]
    up0: ConvParams
    fuse0: ConvParams
    dec0: list[LHDDATParams]
    tail: ConvParams
    dtype: type = field(default=np.float64, compare=False)

    def named_tensors(self):
        return list(iter_tensors(self))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: arr for name, arr in iter_tensors(self)}

    def load_state_dict(self, tensors: dict[str, np.ndarray]) -> None:
        slots = dict(_iter_slots(self))
        missing = set(slots) - set(tensors)
        extra = set(tensors) - set(slots)
        if missing or extra:
            raise ConfigurationError(
                f"tensor names do not match config: missing={sorted(missing)[:5]} extra={sorted(extra)[:5]}"
            )
        for name, (owner, attr) in slots.items():
            current = getattr(owner, attr)
            new = np.asarray(tensors[name])
            if new.shape != current.shape:
                raise ConfigurationError(f"{name}: expected shape {current.shape}, got {new.shape}")
            setattr(owner, attr, new)

    def astype(self, dtype) -> "Model":
        clone = build_model(self.config, rng=None, dtype=dtype)
        clone.load_state_dict({k: v.astype(dtype) for k, v in self.state_dict().items()})
        clone.dtype = dtype
        return clone


def _iter_slots(obj, prefix=""):
    """Yield (name, (owner, attribute)) for every array reachable from ``obj``."""
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        name = f"{prefix}{f.name}"
        if isinstance(value, np.ndarray):
            yield name, (obj, f.name)
        elif dataclasses.is_dataclass(value):
            yield from _iter_slots(value, name + ".")
        elif isinstance(value, list):
            for i, item in enumerate(value):
                if dataclasses.is_dataclass(item):
                    yield from _iter_slots(item, f"{name}.{i}.")


def iter_tensors(obj):
    for name, (owner, attr) in _iter_slots(obj):
        yield name, getattr(owner, attr)


def build_model(config: ModelConfig, seed: int | None = None, rng="seeded", dtype=np.float64) -> Model:
    """Build a model with seeded fan-in uniform weights.

    ``seed`` overrides ``config.seed``. Passing ``rng=None`` produces an
    all-zero skeleton (layer norms still start at gamma=1, beta=0).
    """
    if rng == "seeded":
        rng = np.random.default_rng(config.seed if seed is None else seed)
    c0, c1, c2, c3 = config.level_widths
    n0, n1, n2, nb = config.blocks_per_level
    h = config.heads

    def conv(cin, cout, k=1, stride=1, padding=0):
        return make_conv(rng, cin, cout, k=k, stride=stride, padding=padding, dtype=dtype)

    def down(cin):
        return conv(cin, 2 * cin, k=3, stride=2, padding=1)

    return Model(
        config=config,
        head=conv(3, c0, k=3, padding=1),
        enc0=[make_l_hd_dat(rng, c0, dtype) for _ in range(n0)],
        down0=down(c0),
        enc1=[make_ccat(rng, c1, h, dtype) for _ in range(n1)],
        down1=down(c1),
        enc2=[make_ccat(rng, c2, h, dtype) for _ in range(n2)],
        down2=down(c2),
        bottleneck=[make_g_dat(rng, c3, h, dtype) for _ in range(nb)],
        up2=conv(c3, c2),
        fuse2=conv(2 * c2, c2),
        dec2=[make_ccat(rng, c2, h, dtype) for _ in range(n2)],
        up1=conv(c2, c1),
        fuse1=conv(2 * c1, c1),
        dec1=[make_ccat(rng, c1, h, dtype) for _ in range(n1)],
        up0=conv(c1, c0),
        fuse0=conv(2 * c0, c0),
        dec0=[make_l_hd_dat(rng, c0, dtype) for _ in range(n0)],
        tail=conv(c0, 3, k=3, padding=1),
        dtype=dtype,
    )


def zero_convolutions(model: Model) -> Model:
    """Zero every conv weight and bias in place; norms, mixers and temperatures keep their values."""

    def visit(obj):
        if isinstance(obj, ConvParams):
            obj.weight[...] = 0
            if obj.bias is not None:
                obj.bias[...] = 0
            return
        if dataclasses.is_dataclass(obj):
            for f in dataclasses.fields(obj):
                visit(getattr(obj, f.name))
        elif isinstance(obj, list):
            for item in obj:
                visit(item)

    visit(model)
    return model


def downsample(x, p: ConvParams):
    """Strided 3x3 conv: doubles width, halves each spatial dim (rounding up)."""
    return conv2d(x, p)


def upsample(x, p: ConvParams, size=None):
    """Nearest-neighbour x2, optional crop to ``size``, then 1x1 conv."""
    up = x.repeat(2, axis=1).repeat(2, axis=2)
    if size is not None:
        up = up[:, : size[0], : size[1]]
    return conv2d(up, p)


def skip_fuse(decoder, encoder, p: ConvParams):
    if decoder.shape[1:] != encoder.shape[1:]:
        raise ConfigurationError(f"skip spatial dims differ: {decoder.shape} vs {encoder.shape}")
    return conv2d(np.concatenate([decoder, encoder], axis=0), p)


def forward(model: Model, image) -> np.ndarray:
    """Run the network on a 3xHxW image and return a 3xHxW map."""
    cfg = model.config
    x = check_image(image, min_size=MIN_INPUT_SIZE, name="input image").astype(model.dtype, copy=False)
    m, s = cfg.window, cfg.shift

    f = conv2d(x, model.head)
    for blk in model.enc0:
        f = l_hd_dat(f, blk, m, s)
    e0 = f
    f = downsample(f, model.down0)
    for blk in model.enc1:
        f = ccat_block(f, blk)
    e1 = f
    f = downsample(f, model.down1)
    for blk in model.enc2:
        f = ccat_block(f, blk)
    e2 = f
    f = downsample(f, model.down2)
    for blk in model.bottleneck:
        f = g_dat(f, blk)

    f = skip_fuse(upsample(f, model.up2, e2.shape[1:]), e2, model.fuse2)
    for blk in model.dec2:
        f = ccat_block(f, blk)
    f = skip_fuse(upsample(f, model.up1, e1.shape[1:]), e1, model.fuse1)
    for blk in model.dec1:
        f = ccat_block(f, blk)
    f = skip_fuse(upsample(f, model.up0, e0.shape[1:]), e0, model.fuse0)
    for blk in model.dec0:
        f = l_hd_dat(f, blk, m, s)
    out = conv2d(f, model.tail)
    if cfg.global_residual:
        out = out + x
    return out


# --------------------------------------------------------------------------
# cost accounting


def count_params(model: Model) -> int:
    return int(sum(arr.size for _, arr in iter_tensors(model)))


def conv_macs(p: ConvParams, h: int, w: int) -> int:
    ho, wo = p.output_size(h, w)
    kh, kw = p.kernel_size
    return p.out_channels * (p.in_channels // p.groups) * kh * kw * ho * wo


def _ceil_to(n, m):
    return -(-n // m) * m


def _ffn_macs(p: FfnParams, h, w):
    return conv_macs(p.conv_in, h, w) + conv_macs(p.conv_mid, h, w) + conv_macs(p.conv_out, h, w)


def _ssswat_macs(p: SSSWATParams, c, h, w, window):
    fp = p.freq
    total = sum(conv_macs(cv, h, w) for cv in (fp.conv_id1, fp.conv_id2, fp.conv_freq, *fp.mlp))
    total += conv_macs(fp.toning, h, w)
    hp, wp = _ceil_to(h, window), _ceil_to(w, window)
    for stage in (p.stage1, p.stage2):
        total += sum(conv_macs(cv, hp, wp) for cv in (stage.wq, stage.wk, stage.wv))
        if p.mode == "pixel":
            total += 2 * hp * wp * window * window * c
        else:
            total += 2 * c * c * hp * wp
    return total + _ffn_macs(p.ffn, h, w)


def _ccat_macs(p: CCATParams, c, h, w):
    n = h * w
    d = c // p.heads
    total = sum(conv_macs(cv, h, w) for cv in (p.qkv.wq, p.qkv.wk, p.qkv.wv, p.out_proj))
    return total + 2 * c * d * n + _ffn_macs(p.ffn, h, w)


def _psat_macs(p: PSATParams, c, h, w):
    n = h * w
    total = sum(conv_macs(cv, h, w) for cv in (p.qkv.wq, p.qkv.wk, p.qkv.wv, p.out_proj))
    return total + 2 * c * n * n + _ffn_macs(p.ffn, h, w)


def count_macs(model: Model, height: int, width: int) -> int:
    """Closed-form multiply-accumulate count of :func:`forward` at ``height`` x ``width``.

    Covers every convolution and attention contraction; FFTs, norms,
    softmax and elementwise ops are not MACs and are excluded.
    """
    cfg = model.config
    c0, c1, c2, c3 = cfg.level_widths
    m = cfg.window
    dims = [(height, width)]
    for _ in range(3):
        h, w = dims[-1]
        dims.append(((h + 1) // 2, (w + 1) // 2))
    (h0, w0), (h1, w1), (h2, w2), (h3, w3) = dims

    total = conv_macs(model.head, h0, w0) + conv_macs(model.tail, h0, w0)
    for blk in model.enc0 + model.dec0:
        total += _ssswat_macs(blk.pixel, c0, h0, w0, m) + _ssswat_macs(blk.channel, c0, h0, w0, m)
    total += conv_macs(model.down0, h0, w0) + conv_macs(model.down1, h1, w1) + conv_macs(model.down2, h2, w2)
    for blk in model.enc1 + model.dec1:
        total += _ccat_macs(blk, c1, h1, w1)
    for blk in model.enc2 + model.dec2:
        total += _ccat_macs(blk, c2, h2, w2)
    for blk in model.bottleneck:
        total += _ccat_macs(blk.ccat, c3, h3, w3) + _psat_macs(blk.psat, c3, h3, w3)
    total += conv_macs(model.up2, h2, w2) + conv_macs(model.fuse2, h2, w2)
    total += conv_macs(model.up1, h1, w1) + conv_macs(model.fuse1, h1, w1)
    total += conv_macs(model.up0, h0, w0) + conv_macs(model.fuse0, h0, w0)
    return int(total)
