"""Convolutional encoders and the coordinate-conditioned MLP decoder."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError
from .field import CoordinateBatch, FeatureGrid
from .volume_io import Volume

ENCODER_VARIANTS = ("rdn", "rescnn_style", "srresnet_style")
# every variant pads its 3^3 convolutions, so any non-empty input is accepted
MIN_INPUT_SIZE = {"rdn": 1, "rescnn_style": 1, "srresnet_style": 1}


@dataclass
class EncoderConfig:
    variant: str = "rdn"
    in_channels: int = 1
    base_channels: int = 64
    num_blocks: int = 8
    convs_per_block: int = 3
    growth_rate: int = 64
    out_channels: int = 128


@dataclass
class DecoderConfig:
    in_features: int = 131
    hidden: int = 256


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        try:
            return cls(EncoderConfig(**d.get("encoder", {})), DecoderConfig(**d.get("decoder", {})))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def for_channels(cls, channels: int, **encoder_kw) -> "ModelConfig":
        """Config whose decoder input width matches ``channels`` features."""
        dec_kw = {k: encoder_kw.pop(k) for k in ("hidden",) if k in encoder_kw}
        return cls(EncoderConfig(out_channels=channels, **encoder_kw),
                   DecoderConfig(in_features=channels + 3, **dec_kw))


def validate_config(config: ModelConfig) -> None:
    enc, dec = config.encoder, config.decoder
    if enc.variant not in ENCODER_VARIANTS:
        raise ConfigError(f"unknown encoder variant {enc.variant!r}; choose from {ENCODER_VARIANTS}")
    for name in ("in_channels", "base_channels", "num_blocks", "convs_per_block", "growth_rate", "out_channels"):
        if getattr(enc, name) < 1:
            raise ConfigError(f"encoder.{name} must be positive")
    if dec.hidden < 1:
        raise ConfigError("decoder.hidden must be positive")
    if dec.in_features != enc.out_channels + 3:
        raise ConfigError(
            f"decoder expects {dec.in_features} inputs but encoder yields "
            f"{enc.out_channels} channels + 3 coordinates = {enc.out_channels + 3}")


def conv3(cin, cout, relu=False):
    m = nn.Conv3d(cin, cout, 3, padding=1)
    m.relu_follows = relu  # selects the init gain
    return m


def conv1(cin, cout):
    m = nn.Conv3d(cin, cout, 1)
    m.relu_follows = False
    return m


# ---------------------------------------------------------------------------
# encoders
# ---------------------------------------------------------------------------

class RDB(nn.Module):
    def __init__(self, channels, growth, n_convs):
        super().__init__()
        self.convs = nn.ModuleList([conv3(channels + i * growth, growth, relu=True) for i in range(n_convs)])
        self.fuse = conv1(channels + n_convs * growth, channels)

    def forward(self, x):
        feats = [x]
        for conv in self.convs:
            feats.append(F.relu(conv(torch.cat(feats, 1))))
        return self.fuse(torch.cat(feats, 1)) + x


class RDNEncoder(nn.Module):
    """3D residual dense network without the upscaling tail."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        g0 = cfg.base_channels
        self.sfe1 = conv3(cfg.in_channels, g0)
        self.sfe2 = conv3(g0, g0)
        self.blocks = nn.ModuleList([RDB(g0, cfg.growth_rate, cfg.convs_per_block) for _ in range(cfg.num_blocks)])
        self.gff1 = conv1(cfg.num_blocks * g0, g0)
        self.gff2 = conv3(g0, g0)
        self.head = conv3(g0, cfg.out_channels)

    def forward(self, x):
        f1 = self.sfe1(x)
        x = self.sfe2(f1)
        outs = []
        for block in self.blocks:
            x = block(x)
            outs.append(x)
        x = self.gff2(self.gff1(torch.cat(outs, 1))) + f1
        return self.head(x)


class ResCNNEncoder(nn.Module):
    """Plain conv+ReLU stack with a global skip (ResCNN pattern)."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        c = cfg.base_channels
        self.entry = conv3(cfg.in_channels, c, relu=True)
        self.body = nn.ModuleList([conv3(c, c, relu=True) for _ in range(cfg.num_blocks)])
        self.exit = conv3(c, c)
        self.head = conv3(c, cfg.out_channels)

    def forward(self, x):
        f = F.relu(self.entry(x))
        x = f
        for conv in self.body:
            x = F.relu(conv(x))
        return self.head(self.exit(x) + f)


class ResBlock(nn.Module):
    def __init__(self, c):
        super().__init__()
        self.conv_a = conv3(c, c, relu=True)
        self.conv_b = conv3(c, c)

    def forward(self, x):
        return x + self.conv_b(F.relu(self.conv_a(x)))


class SRResNetEncoder(nn.Module):
    """Residual blocks (conv-ReLU-conv + skip) with a global skip, no BN, no upsampler."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        c = cfg.base_channels
        self.entry = conv3(cfg.in_channels, c, relu=True)
        self.blocks = nn.ModuleList([ResBlock(c) for _ in range(cfg.num_blocks)])
        self.exit = conv3(c, c)
        self.head = conv3(c, cfg.out_channels)

    def forward(self, x):
        f = F.relu(self.entry(x))
        x = f
        for block in self.blocks:
            x = block(x)
        return self.head(self.exit(x) + f)


_ENCODERS = {"rdn": RDNEncoder, "rescnn_style": ResCNNEncoder, "srresnet_style": SRResNetEncoder}


def receptive_radius(cfg: EncoderConfig) -> int:
    """Voxels of context on each side that can influence one output feature."""
    if cfg.variant == "rdn":
        return 4 + cfg.num_blocks * cfg.convs_per_block
    if cfg.variant == "rescnn_style":
        return 3 + cfg.num_blocks
    return 3 + 2 * cfg.num_blocks


# ---------------------------------------------------------------------------
# decoder
# ---------------------------------------------------------------------------

class Decoder(nn.Module):
    """Eight FC layers; the input vector is added back after the 4th ReLU."""

    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        n_in, hid = cfg.in_features, cfg.hidden
        widths = [(n_in, hid), (hid, hid), (hid, hid), (hid, n_in),
                  (n_in, hid), (hid, hid), (hid, hid), (hid, 1)]
        self.layers = nn.ModuleList([nn.Linear(a, b) for a, b in widths])
        for i, layer in enumerate(self.layers):
            layer.relu_follows = i < len(widths) - 1

    def forward(self, x):
        skip = x
        for i, layer in enumerate(self.layers[:-1]):
            x = F.relu(layer(x))
            if i == 3:
                x = x + skip
        return self.layers[-1](x).squeeze(-1)


# ---------------------------------------------------------------------------

class SRModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        validate_config(config)
        self.config = config
        self.encoder = _ENCODERS[config.encoder.variant](config.encoder)
        self.decoder = Decoder(config.decoder)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def encode(self, lr: torch.Tensor) -> torch.Tensor:
        """(B, d, h, w) intensities -> (B, d, h, w, C) features."""
        return self.encoder(lr.unsqueeze(1)).permute(0, 2, 3, 4, 1)

    def decode(self, coords: torch.Tensor, feats: torch.Tensor) -> torch.Tensor:
        return self.decoder(torch.cat([coords.to(feats.dtype), feats], dim=1))


def param_count(config: ModelConfig) -> int:
    """Closed-form number of learnable scalars for ``config``."""
    enc, dec = config.encoder, config.decoder

    def c3(a, b):
        return 27 * a * b + b

    def c1(a, b):
        return a * b + b

    def fc(a, b):
        return a * b + b

    c = enc.base_channels
    if enc.variant == "rdn":
        g, n = enc.growth_rate, enc.convs_per_block
        block = sum(c3(c + i * g, g) for i in range(n)) + c1(c + n * g, c)
        n_enc = (c3(enc.in_channels, c) + c3(c, c) + enc.num_blocks * block
                 + c1(enc.num_blocks * c, c) + c3(c, c) + c3(c, enc.out_channels))
    elif enc.variant == "rescnn_style":
        n_enc = c3(enc.in_channels, c) + (enc.num_blocks + 1) * c3(c, c) + c3(c, enc.out_channels)
    else:
        n_enc = c3(enc.in_channels, c) + (2 * enc.num_blocks + 1) * c3(c, c) + c3(c, enc.out_channels)

    n_in, h = dec.in_features, dec.hidden
    n_dec = 2 * fc(n_in, h) + 4 * fc(h, h) + fc(h, n_in) + fc(h, 1)
    return n_enc + n_dec


def init_model(config: ModelConfig, rng_seed: int = 0) -> SRModel:
    """Build a model with Kaiming-uniform weights and zero biases.

    Weights are drawn from U(-b, b) with b = sqrt(3 * gain^2 / fan_in): gain^2 = 2
    for layers feeding a ReLU, 1 for layers feeding a sum or the output.
    """
    model = SRModel(config)
    owners = dict(model.named_modules())
    gen = torch.Generator().manual_seed(int(rng_seed))
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                p.zero_()
                continue
            gain2 = 2.0 if getattr(owners[name.rsplit(".", 1)[0]], "relu_follows", False) else 1.0
            bound = math.sqrt(3.0 * gain2 / p[0].numel())
            p.uniform_(-bound, bound, generator=gen)
    return model


def encoder_forward(model: SRModel, lr: Volume) -> FeatureGrid:
    min_size = MIN_INPUT_SIZE[model.config.encoder.variant]
    if min(lr.shape) < min_size:
        raise ShapeError(f"input {lr.shape} smaller than the {min_size}-voxel minimum")
    x = torch.from_numpy(lr.data).to(model.dtype).unsqueeze(0)
    return FeatureGrid(model.encode(x)[0])


def decoder_forward(model: SRModel, coords: CoordinateBatch | torch.Tensor, feats: torch.Tensor) -> torch.Tensor:
    c = coords.coords if isinstance(coords, CoordinateBatch) else torch.as_tensor(coords)
    feats = torch.as_tensor(feats)
    if c.dim() != 2 or c.shape[1] != 3:
        raise ShapeError(f"coords must be (N, 3), got {tuple(c.shape)}")
    if feats.dim() != 2 or feats.shape[0] != c.shape[0]:
        raise ShapeError(f"{c.shape[0]} coords but feature block {tuple(feats.shape)}")
    if feats.shape[1] + 3 != model.config.decoder.in_features:
        raise ShapeError(f"decoder expects {model.config.decoder.in_features - 3} feature channels, got {feats.shape[1]}")
    return model.decode(c, feats.to(model.dtype))
