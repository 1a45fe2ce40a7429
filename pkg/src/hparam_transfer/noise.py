"""Noise models: parameter sampling, deterministic application, attribute codes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import SeededRng, as_image

__all__ = [
    "NoiseComponent",
    "NoiseSpec",
    "NOISE_KINDS",
    "sample_noise_spec",
    "apply_noise",
    "apply_component",
    "encode_noise_attributes",
    "noise_metadata",
]

# single-family kinds and the sampling ranges used for each
SIGMA_RANGE = (5 / 255, 50 / 255)
AMOUNT_RANGE = (0.05, 0.30)
PMAX_RANGE = (2.0, 128.0)
SIGMA_READ_RANGE = (0.5 / 255, 16 / 255)
SALT_RATIO = 0.5

_FAMILIES = ("gaussian", "bw_impulse", "rgb_impulse", "poisson", "poisson_gaussian")
_IMPULSE = ("bw_impulse", "rgb_impulse")
_ORDER = {"bw_impulse": 0, "rgb_impulse": 0, "poisson": 1, "poisson_gaussian": 1, "gaussian": 2}

NOISE_KINDS = _FAMILIES + ("bw_impulse+gaussian", "rgb_impulse+gaussian")

_PARAMS = {
    "gaussian": ("sigma",),
    "bw_impulse": ("amount", "salt_ratio"),
    "rgb_impulse": ("amount", "salt_ratio"),
    "poisson": ("p_max",),
    "poisson_gaussian": ("p_max", "sigma_read"),
}


@dataclass(frozen=True)
class NoiseComponent:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _FAMILIES:
            raise ValueError(f"unknown noise component {self.kind!r}")
        expected = set(_PARAMS[self.kind])
        if set(self.params) != expected:
            raise ValueError(f"{self.kind} expects parameters {sorted(expected)}")

    def __getitem__(self, key):
        return self.params[key]


@dataclass(frozen=True)
class NoiseSpec:
    """Ordered noise components plus the per-image seed."""

    components: tuple[NoiseComponent, ...]
    seed: int

    def __post_init__(self):
        kinds = [c.kind for c in self.components]
        if len(set(kinds)) != len(kinds):
            raise ValueError("at most one component of each kind")
        if sum(k in _IMPULSE for k in kinds) > 1:
            raise ValueError("at most one impulse component")

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(c.kind for c in self.components)

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "components": [{"kind": c.kind, **{k: float(v) for k, v in c.params.items()}}
                           for c in self.components],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, obj: dict) -> "NoiseSpec":
        comps = []
        for item in obj["components"]:
            item = dict(item)
            kind = item.pop("kind")
            comps.append(NoiseComponent(kind, {k: float(v) for k, v in item.items()}))
        return cls(tuple(comps), int(obj["seed"]))

    @classmethod
    def from_json(cls, text: str) -> "NoiseSpec":
        return cls.from_dict(json.loads(text))


def _sample_component(kind: str, rng: SeededRng) -> NoiseComponent:
    if kind == "gaussian":
        return NoiseComponent(kind, {"sigma": float(rng.uniform(*SIGMA_RANGE))})
    if kind in _IMPULSE:
        return NoiseComponent(kind, {"amount": float(rng.uniform(*AMOUNT_RANGE)),
                                     "salt_ratio": SALT_RATIO})
    if kind == "poisson":
        return NoiseComponent(kind, {"p_max": float(rng.uniform(*PMAX_RANGE))})
    return NoiseComponent(kind, {"p_max": float(rng.uniform(*PMAX_RANGE)),
                                 "sigma_read": float(rng.uniform(*SIGMA_READ_RANGE))})


def sample_noise_spec(kind: str, rng: SeededRng, seed: int | None = None) -> NoiseSpec:
    """Draw a noise spec of family/mixture ``kind`` from the standard ranges.

    Each family in a mixture is sampled from its own stream, so the draw for
    the impulse part of ``bw_impulse+gaussian`` equals a plain ``bw_impulse``
    draw from the same ``rng``. The realization seed defaults to one derived
    from ``rng``.
    """
    if kind not in NOISE_KINDS:
        raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    parts = sorted(kind.split("+"), key=_ORDER.__getitem__)
    comps = tuple(_sample_component(p, rng.child(f"param:{p}")) for p in parts)
    if seed is None:
        seed = rng.child("realization").integer_seed()
    return NoiseSpec(comps, int(seed))


def apply_component(x: np.ndarray, comp: NoiseComponent, rng: SeededRng) -> np.ndarray:
    """Apply a single component; returns float64, unclipped."""
    x = np.asarray(x, dtype=np.float64)
    if comp.kind == "gaussian":
        sigma = comp["sigma"]
        if sigma == 0.0:
            return x.copy()
        return x + rng.normal(0.0, sigma, x.shape)
    if comp.kind in _IMPULSE:
        amount, salt = comp["amount"], comp["salt_ratio"]
        h, w, c = x.shape
        # bw impulse hits whole pixels (channel-shared), rgb impulse each value
        mshape = (h, w, 1) if comp.kind == "bw_impulse" else (h, w, c)
        hit = rng.random(mshape) < amount
        is_salt = rng.random(mshape) < salt
        return np.where(hit, is_salt.astype(np.float64), x)
    p_max = comp["p_max"]
    lam = np.clip(x, 0.0, None) * p_max
    y = rng.poisson(lam).astype(np.float64) / p_max
    if comp.kind == "poisson_gaussian":
        sr = comp["sigma_read"]
        if sr > 0.0:
            y = y + rng.normal(0.0, sr, x.shape)
    return y


def apply_noise(x, spec: NoiseSpec) -> np.ndarray:
    """Degrade clean image ``x`` with ``spec``; pure in ``(x, spec)``.

    Component ``i`` draws from child stream ``i`` of ``SeededRng(spec.seed)``.
    Output is float32 and unclipped.
    """
    x = as_image(x, dtype=np.float64)
    root = SeededRng(spec.seed)
    y = x
    for i, comp in enumerate(spec.components):
        y = apply_component(y, comp, root.child(i))
    return y.astype(np.float32)


def encode_noise_attributes(spec: NoiseSpec | None) -> np.ndarray:
    """Six-slot multi-hot code.

    Slots: unknown, has-Gaussian, has-Poisson, has-impulse, impulse-is-bw,
    impulse-is-rgb. ``None`` (unknown noise) sets only the first slot.
    """
    code = np.zeros(6, dtype=np.float64)
    if spec is None:
        code[0] = 1.0
        return code
    kinds = spec.kinds
    if "gaussian" in kinds:
        code[1] = 1.0
    if "poisson" in kinds or "poisson_gaussian" in kinds:
        code[2] = 1.0
    if "bw_impulse" in kinds:
        code[3] = code[4] = 1.0
    if "rgb_impulse" in kinds:
        code[3] = code[5] = 1.0
    return code


def noise_metadata(spec: NoiseSpec | None) -> dict | None:
    """Photon-count metadata ``{"p_max", "sigma_read"}`` for Poisson-type noise."""
    if spec is None:
        return None
    for c in spec.components:
        if c.kind == "poisson":
            return {"p_max": c["p_max"], "sigma_read": 0.0}
        if c.kind == "poisson_gaussian":
            return {"p_max": c["p_max"], "sigma_read": c["sigma_read"]}
    return None


def gaussian_sigma(spec: NoiseSpec) -> float | None:
    for c in spec.components:
        if c.kind == "gaussian":
            return c["sigma"]
    return None
