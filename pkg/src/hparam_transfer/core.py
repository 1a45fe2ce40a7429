"""Images, PSNR, seeded randomness, augmentations and PGM/PPM file I/O.

Images are plain ``numpy`` arrays of shape ``(H, W, C)`` with ``C`` in
``{1, 3}``. Clean images live in ``[0, 1]``; degraded images may leave that
range and are never clipped here except on export.
"""

from __future__ import annotations

import hashlib
import math
import os
from pathlib import Path

import numpy as np

__all__ = [
    "ImageFormatError",
    "UnsupportedDepthError",
    "SeededRng",
    "as_image",
    "psnr",
    "augment",
    "AUGMENTATIONS",
    "load_image",
    "save_image",
    "center_crop",
]

AUGMENTATIONS = ("identity", "hflip", "vflip", "rot90", "rot270")


class ImageFormatError(ValueError):
    """Malformed or unreadable image header/payload."""


class UnsupportedDepthError(ImageFormatError):
    """PNM file with a maxval other than 255."""


def as_image(data, dtype=np.float32) -> np.ndarray:
    """Coerce ``data`` to an ``(H, W, C)`` array; 2-D input gains a channel axis."""
    arr = np.asarray(data, dtype=dtype)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, 1|3) image, got shape {arr.shape}")
    return arr


def psnr(reference, candidate) -> float:
    """Peak signal-to-noise ratio in dB for unit peak.

    MSE is taken jointly over every value (all channels). Identical inputs
    return ``math.inf``. Nothing is clipped or cropped.
    """
    ref = np.asarray(reference, dtype=np.float64)
    cand = np.asarray(candidate, dtype=np.float64)
    if ref.shape != cand.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {cand.shape}")
    mse = float(np.mean((ref - cand) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def augment(image, op: str) -> np.ndarray:
    """Apply one of the dihedral augmentations in :data:`AUGMENTATIONS`.

    Works on any array whose first two axes are spatial.
    """
    if op == "identity":
        return np.asarray(image)
    if op == "hflip":
        return np.ascontiguousarray(image[:, ::-1])
    if op == "vflip":
        return np.ascontiguousarray(image[::-1])
    if op == "rot90":
        return np.ascontiguousarray(np.rot90(image, 1, axes=(0, 1)))
    if op == "rot270":
        return np.ascontiguousarray(np.rot90(image, 3, axes=(0, 1)))
    raise ValueError(f"unknown augmentation {op!r}")


def center_crop(image, size: int | tuple[int, int]) -> np.ndarray:
    h, w = image.shape[:2]
    ch, cw = (size, size) if isinstance(size, int) else size
    if ch > h or cw > w:
        raise ValueError(f"crop {ch}x{cw} larger than image {h}x{w}")
    top = (h - ch) // 2
    left = (w - cw) // 2
    return image[top:top + ch, left:left + cw]


class SeededRng:
    """Counter-based deterministic generator with order-independent children.

    Draws come from numpy's Philox4x64 keyed through ``SeedSequence``. A child
    stream is keyed by ``(seed, *path, label)`` only, so deriving children
    never depends on how many values the parent has already produced.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        self.seed = int(seed)
        self.path = tuple(path)
        ss = np.random.SeedSequence([self.seed, *self.path])
        self.generator = np.random.Generator(np.random.Philox(ss))

    @staticmethod
    def _label_word(label) -> int:
        digest = hashlib.sha256(str(label).encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")

    def child(self, label) -> "SeededRng":
        return SeededRng(self.seed, self.path + (self._label_word(label),))

    def integer_seed(self) -> int:
        """A 63-bit integer derived from this stream's key (not its state)."""
        ss = np.random.SeedSequence([self.seed, *self.path])
        return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))

    # thin passthroughs used across the package
    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def random(self, size=None):
        return self.generator.random(size)

    def poisson(self, lam, size=None):
        return self.generator.poisson(lam, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def rademacher(self, shape) -> np.ndarray:
        return np.where(self.generator.random(shape) < 0.5, -1.0, 1.0)


# ---------------------------------------------------------------- file I/O

def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("truncated PNM header")
    return buf[start:pos], pos


def _load_pnm(buf: bytes) -> np.ndarray:
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"not a binary PGM/PPM file (magic {magic!r})")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise ImageFormatError(f"bad header field {tok!r}") from None
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise ImageFormatError("non-positive image dimensions")
    if maxval != 255:
        raise UnsupportedDepthError(f"maxval {maxval} unsupported (only 255)")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise ImageFormatError("missing whitespace after header")
    pos += 1
    channels = 1 if magic == b"P5" else 3
    count = width * height * channels
    payload = buf[pos:pos + count]
    if len(payload) != count:
        raise ImageFormatError("truncated pixel payload")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return arr.astype(np.float32) / np.float32(255.0)


def load_image(path) -> np.ndarray:
    """Read an image as float32 ``(H, W, C)`` in ``[0, 1]``.

    Binary PGM/PPM are parsed directly; other formats go through Pillow.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such image: {path}")
    if path.suffix.lower() in (".pgm", ".ppm", ".pnm"):
        return _load_pnm(path.read_bytes())
    try:
        from PIL import Image as PILImage
    except ImportError as exc:  # pragma: no cover
        raise ImageFormatError(f"cannot read {path.suffix} without Pillow") from exc
    try:
        with PILImage.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im)
    except OSError as exc:
        raise ImageFormatError(str(exc)) from exc
    if arr.dtype != np.uint8:
        raise UnsupportedDepthError(f"unsupported pixel type {arr.dtype}")
    return as_image(arr.astype(np.float32) / np.float32(255.0))


def save_image(image, path) -> None:
    """Write an 8-bit PGM (1 channel) or PPM (3 channels); clamps to [0, 1]."""
    img = as_image(image, dtype=np.float64)
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w, c = q.shape
    magic = b"P5" if c == 1 else b"P6"
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(q.tobytes())
    os.replace(tmp, path)
