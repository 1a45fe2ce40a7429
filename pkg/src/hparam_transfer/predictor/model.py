"""Configuration-conditioned hyperparameter predictor and the per-config CNN baseline.

Both models map a batch of degraded images plus configuration inputs to a
padded ``(B, 3)`` prediction in the learning domain (``log10`` lambda,
linear delta and gamma).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ..noise import NoiseSpec, encode_noise_attributes, noise_metadata
from ..solvers import DATA_TERMS, PRIORS, active_mask

ROLE_IDS = {"delta": 0, "lambda": 1, "gamma": 2, "pad": 3}
SCALE_IDS = {"linear": 0, "log10": 1, "none": 2}
HEADS = ("calibrated_slot", "slot_affine", "plain_mlp")
UNKNOWN_ATTRS = np.array([1.0, 0, 0, 0, 0, 0])


@dataclass(frozen=True)
class SlotMeta:
    """Role and scale tag per slot for one configuration."""

    roles: tuple[str, str, str]
    scales: tuple[str, str, str]

    def __post_init__(self):
        for role, scale in zip(self.roles, self.scales):
            if (role == "pad") != (scale == "none"):
                raise ValueError("pad role must pair with scale 'none'")
            if role == "lambda" and scale != "log10":
                raise ValueError("lambda slot is always log10")
            if role in ("delta", "gamma") and scale != "linear":
                raise ValueError(f"{role} slot is always linear")

    @classmethod
    def for_config(cls, d: str, r: str) -> "SlotMeta":
        mask = active_mask(d, r)
        roles, scales = [], []
        for name, on in zip(("delta", "lambda", "gamma"), mask):
            roles.append(name if on else "pad")
            scales.append(("log10" if name == "lambda" else "linear") if on else "none")
        return cls(tuple(roles), tuple(scales))

    def role_ids(self):
        return [ROLE_IDS[r] for r in self.roles]

    def scale_ids(self):
        return [SCALE_IDS[s] for s in self.scales]


@dataclass
class EncoderConfig:
    widths: list = field(default_factory=lambda: [16, 32, 64, 128])
    stages_used: int = 2
    proj_dim: int = 32
    trunk_dim: int = 128
    role_dim: int = 16
    cond_dim: int = 8
    mlp_dim: int = 16
    bilinear_dim: int = 32
    in_channels: int = 3
    dropout: float = 0.1
    # fixed input standardization (x - shift) * gain
    input_shift: float = 0.5
    input_gain: float = 4.0

    def __post_init__(self):
        if not 1 <= self.stages_used <= len(self.widths):
            raise ValueError("stages_used must lie in [1, number of stages]")
        dims = [*self.widths, self.proj_dim, self.trunk_dim, self.role_dim, self.cond_dim,
                self.mlp_dim, self.bilinear_dim, self.in_channels]
        if min(dims) < 1:
            raise ValueError("all dimensions must be >= 1")

    @property
    def embed_dim(self) -> int:
        return self.stages_used * self.proj_dim + 2

    def to_dict(self) -> dict:
        return asdict(self)


def config_key(d: str, r: str) -> str:
    return f"{d}_{r}"


def meta_vector(meta: dict | None) -> np.ndarray:
    """``[sigma_read, ln p_max]``; zeros when no photon-count metadata is known."""
    if not meta:
        return np.zeros(2)
    return np.array([float(meta.get("sigma_read", 0.0)), math.log(float(meta["p_max"]))])


def condition_inputs(spec: NoiseSpec | None, use_attrs: bool = True):
    """Attribute code and metadata vector for one image."""
    attrs = encode_noise_attributes(spec) if use_attrs else UNKNOWN_ATTRS.copy()
    return attrs, meta_vector(noise_metadata(spec))


def _fan_in_init(module: nn.Module):
    # uniform fan-in scaling for weights, zero biases
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight[0].numel()
            bound = 1.0 / math.sqrt(fan_in)
            nn.init.uniform_(m.weight, -bound, bound)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Embedding):
            nn.init.uniform_(m.weight, -0.1, 0.1)


class _ResBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(F.gelu(self.conv1(x)))


class ImageEncoder(nn.Module):
    """Stride-4 stem, residual stages, per-stage 1x1 projection and global pooling."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.widths
        self.stem = nn.Conv2d(cfg.in_channels, w[0], 4, stride=4)
        self.down = nn.ModuleList()
        self.stages = nn.ModuleList()
        self.proj = nn.ModuleList()
        for i in range(cfg.stages_used):
            self.down.append(nn.Identity() if i == 0 else nn.Conv2d(w[i - 1], w[i], 2, stride=2))
            self.stages.append(_ResBlock(w[i]))
            self.proj.append(nn.Conv2d(w[i], cfg.proj_dim, 1))
        # reference (log H, log W) subtracted from the appended size terms; set from
        # the training images so that a single training size gives a zero feature
        self.register_buffer("size_ref", torch.zeros(2))

    def fit_size_ref(self, shapes):
        """Centre the log-size terms on the mean log (H, W) of ``shapes``."""
        logs = np.log(np.array([s[:2] for s in shapes], dtype=np.float64))
        self.size_ref.copy_(torch.from_numpy(logs.mean(axis=0)))

    def forward(self, x):
        h, w = x.shape[-2:]
        if x.shape[1] == 1 and self.cfg.in_channels == 3:
            x = x.expand(-1, 3, -1, -1)
        z = self.stem((x - self.cfg.input_shift) * self.cfg.input_gain)
        pooled = []
        for down, stage, proj in zip(self.down, self.stages, self.proj):
            z = stage(down(z))
            pooled.append(proj(z).mean(dim=(2, 3)))
        logs = (x.new_tensor([math.log(h), math.log(w)]) - self.size_ref).expand(x.shape[0], 2)
        return torch.cat(pooled + [logs], dim=1)


class ConditionEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.d_embed = nn.Embedding(len(DATA_TERMS), cfg.cond_dim)
        self.r_embed = nn.Embedding(len(PRIORS), cfg.cond_dim)
        self.attr_mlp = nn.Sequential(nn.Linear(6, cfg.mlp_dim), nn.GELU(),
                                      nn.Linear(cfg.mlp_dim, cfg.mlp_dim))
        self.meta_mlp = nn.Sequential(nn.Linear(2, cfg.mlp_dim), nn.GELU(),
                                      nn.Linear(cfg.mlp_dim, cfg.mlp_dim))

    @property
    def out_dim(self):
        return 2 * self.d_embed.embedding_dim + 2 * self.attr_mlp[-1].out_features

    def forward(self, d_idx, r_idx, attrs, meta):
        return [self.d_embed(d_idx), self.r_embed(r_idx), self.attr_mlp(attrs), self.meta_mlp(meta)]


class CalibratedSlotHead(nn.Module):
    """Shared bilinear role score, per-(d, r, slot) affine calibration, linear shortcut."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.role = nn.Embedding(len(ROLE_IDS), cfg.role_dim)
        self.scale = nn.Embedding(len(SCALE_IDS), cfg.role_dim)
        self.q = nn.Linear(cfg.trunk_dim, cfg.bilinear_dim)
        self.k = nn.Linear(cfg.role_dim, cfg.bilinear_dim)
        self.a = nn.Parameter(torch.zeros(3, cfg.trunk_dim))
        self.g = nn.ParameterDict()
        self.b = nn.ParameterDict()

    def register(self, key):
        if key not in self.g:
            self.g[key] = nn.Parameter(torch.ones(3, dtype=self.a.dtype))
            self.b[key] = nn.Parameter(torch.zeros(3, dtype=self.a.dtype))

    def forward(self, h, keys, role_ids, scale_ids, cond=None):
        e = self.role(role_ids) + self.scale(scale_ids)              # (B, 3, role_dim)
        s = torch.einsum("bk,bjk->bj", self.q(h), self.k(e))
        g = torch.stack([self.g[k] for k in keys])
        b = torch.stack([self.b[k] for k in keys])
        return g * s + b + h @ self.a.T


class SlotAffineHead(nn.Module):
    """Per-role linear readout plus per-(d, r, slot) offset; no bilinear term, no scale."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.u = nn.Parameter(torch.zeros(len(ROLE_IDS), cfg.trunk_dim))
        self.b = nn.ParameterDict()

    def register(self, key):
        if key not in self.b:
            self.b[key] = nn.Parameter(torch.zeros(3, dtype=self.u.dtype))

    def forward(self, h, keys, role_ids, scale_ids, cond=None):
        u = self.u[role_ids]                                         # (B, 3, trunk_dim)
        b = torch.stack([self.b[k] for k in keys])
        return torch.einsum("bk,bjk->bj", h, u) + b


class PlainMLPHead(nn.Module):
    """Two hidden layers on trunk feature plus condition embeddings, three raw outputs."""

    def __init__(self, cfg: EncoderConfig, cond_dim: int):
        super().__init__()
        self.mlp = nn.Sequential(nn.Linear(cfg.trunk_dim + cond_dim, cfg.trunk_dim), nn.GELU(),
                                 nn.Linear(cfg.trunk_dim, cfg.trunk_dim), nn.GELU(),
                                 nn.Linear(cfg.trunk_dim, 3))
        self.b = nn.ParameterDict()

    def register(self, key):
        if key not in self.b:
            self.b[key] = nn.Parameter(torch.zeros(3, dtype=self.mlp[0].weight.dtype))

    def forward(self, h, keys, role_ids, scale_ids, cond=None):
        b = torch.stack([self.b[k] for k in keys])
        return self.mlp(torch.cat([h, *cond], dim=1)) + b


class HyperPredictor(nn.Module):
    kind = "predictor"

    def __init__(self, cfg: EncoderConfig | None = None, head: str = "calibrated_slot",
                 configs=()):
        super().__init__()
        if head not in HEADS:
            raise ValueError(f"unknown head variant {head!r}")
        self.cfg = cfg or EncoderConfig()
        self.head_variant = head
        c = self.cfg
        self.encoder = ImageEncoder(c)
        self.condition = ConditionEncoder(c)
        self.trunk = nn.Sequential(nn.Linear(c.embed_dim + self.condition.out_dim, c.trunk_dim),
                                   nn.LayerNorm(c.trunk_dim), nn.GELU(), nn.Dropout(c.dropout),
                                   nn.Linear(c.trunk_dim, c.trunk_dim))
        if head == "calibrated_slot":
            self.head = CalibratedSlotHead(c)
        elif head == "slot_affine":
            self.head = SlotAffineHead(c)
        else:
            self.head = PlainMLPHead(c, self.condition.out_dim)
        # log-variances per role (delta, lambda, gamma)
        self.log_var = nn.Parameter(torch.zeros(3))
        _fan_in_init(self)
        # size terms start disconnected; they only gain weight from multi-size data
        with torch.no_grad():
            self.trunk[0].weight[:, c.embed_dim - 2:c.embed_dim] = 0.0
        self.configs: list[tuple[str, str]] = []
        for d, r in configs:
            self.register_config(d, r)

    def register_config(self, d: str, r: str):
        """Add (d, r) rows to the readout; new rows start at g = 1, b = 0."""
        active_mask(d, r)
        if (d, r) not in self.configs:
            self.head.register(config_key(d, r))
            self.configs.append((d, r))

    def check_config(self, d, r):
        if (d, r) not in self.configs:
            raise KeyError(f"configuration ({d}, {r}) is not registered")

    def features(self, images, d, r, attrs, meta):
        """Trunk feature ``h`` and the condition embeddings."""
        n = images.shape[0]
        dev = images.device
        d_idx = torch.full((n,), DATA_TERMS.index(d), dtype=torch.long, device=dev)
        r_idx = torch.full((n,), PRIORS.index(r), dtype=torch.long, device=dev)
        cond = self.condition(d_idx, r_idx, attrs, meta)
        z = torch.cat([self.encoder(images), *cond], dim=1)
        return self.trunk(z), cond

    def forward(self, images, d: str, r: str, attrs, meta):
        self.check_config(d, r)
        h, cond = self.features(images, d, r, attrs, meta)
        sm = SlotMeta.for_config(d, r)
        n = images.shape[0]
        role_ids = torch.tensor(sm.role_ids(), device=images.device).expand(n, 3)
        scale_ids = torch.tensor(sm.scale_ids(), device=images.device).expand(n, 3)
        return self.head(h, [config_key(d, r)] * n, role_ids, scale_ids, cond)

    def depth_of(self, name: str) -> int:
        """Distance from the head for layer-wise learning-rate decay."""
        used = self.cfg.stages_used
        if name.startswith("encoder.stem"):
            return used + 1
        for part in ("stages", "down"):
            if name.startswith(f"encoder.{part}."):
                i = int(name.split(".")[2])
                return used - i
        return 0

    def meta_dict(self) -> dict:
        return {"kind": self.kind, "encoder": self.cfg.to_dict(), "head": self.head_variant,
                "configs": [list(c) for c in self.configs]}


class ConfigCNN(nn.Module):
    """From-scratch per-configuration CNN baseline (no configuration conditioning)."""

    kind = "config_cnn"

    def __init__(self, d: str, r: str, in_channels: int = 3):
        super().__init__()
        self.d, self.r = d, r
        self.configs = [(d, r)]
        self.in_channels = in_channels
        blocks = []
        for cin, cout in ((in_channels, 16), (16, 32), (32, 64)):
            blocks += [nn.Conv2d(cin, cout, 5, padding=2), nn.BatchNorm2d(cout), nn.ReLU(),
                       nn.MaxPool2d(2)]
        self.features = nn.Sequential(*blocks, nn.AdaptiveAvgPool2d(4))
        self.mlp = nn.Sequential(nn.Linear(1024, 256), nn.ReLU(), nn.Linear(256, 128), nn.ReLU(),
                                 nn.Linear(128, 64), nn.ReLU(), nn.Linear(64, 3))
        self.log_var = nn.Parameter(torch.zeros(3))
        _fan_in_init(self)

    def check_config(self, d, r):
        if (d, r) != (self.d, self.r):
            raise KeyError(f"CNN baseline was trained for ({self.d}, {self.r}), not ({d}, {r})")

    def register_config(self, d, r):
        self.check_config(d, r)

    def forward(self, images, d: str, r: str, attrs=None, meta=None):
        self.check_config(d, r)
        if images.shape[1] == 1 and self.in_channels == 3:
            images = images.expand(-1, 3, -1, -1)
        return self.mlp(self.features(images).flatten(1))

    def depth_of(self, name: str) -> int:
        return 0

    def meta_dict(self) -> dict:
        return {"kind": self.kind, "config": [self.d, self.r], "in_channels": self.in_channels}


def build_model(meta: dict) -> nn.Module:
    if meta["kind"] == "config_cnn":
        return ConfigCNN(*meta["config"], in_channels=meta.get("in_channels", 3))
    cfg = EncoderConfig(**meta["encoder"])
    return HyperPredictor(cfg, meta["head"], [tuple(c) for c in meta["configs"]])
