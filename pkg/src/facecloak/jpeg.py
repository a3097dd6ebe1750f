"""JPEG compression model: hard round-trip and a differentiable twin.

One pipeline serves both paths — RGB -> BT.601 YCbCr, -128 level shift,
8x8 orthonormal block DCT, quantize, dequantize, inverse — and the two
differ only in the rounding applied to quantized coefficients: true
``round`` for the hard codec, a cubic approximation

    round_approx(v) = round(v) + (v - round(v))**3

for the differentiable one.  The approximation agrees with hard rounding
exactly at integers (fixed points) and carries gradient 3 r^2 in between,
so compressed-domain attacks can backpropagate through it.

Quantization tables follow the classic quality law: base tables scaled by
S = 5000/q (q < 50) or 200 - 2q (q >= 50), entry = clamp(floor((base*S +
50)/100), 1, 255).  Only 4:4:4 sampling is modeled, and entropy coding is
omitted: quantize -> dequantize is pixel-equivalent to encode -> decode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import QualityOutOfRange

BASE_LUMA = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)

BASE_CHROMA = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.int64,
)


@dataclass(frozen=True)
class QuantTables:
    """A luma/chroma pair of 8x8 integer quantization tables."""

    luma: np.ndarray
    chroma: np.ndarray

    def __post_init__(self):
        for name, t in (("luma", self.luma), ("chroma", self.chroma)):
            t = np.asarray(t)
            if t.shape != (8, 8):
                raise ValueError(f"{name} table must be 8x8, got {t.shape}")
            if t.min() < 1 or t.max() > 255:
                raise ValueError(f"{name} table entries must lie in [1, 255]")


def _check_quality(quality):
    if not isinstance(quality, (int, np.integer)) or isinstance(quality, bool):
        raise QualityOutOfRange(f"quality must be an integer, got {quality!r}")
    if not 1 <= int(quality) <= 100:
        raise QualityOutOfRange(f"quality {quality} outside [1, 100]")
    return int(quality)


def quant_tables_for_quality(quality):
    """Quality-scaled quantization tables (integer arithmetic throughout)."""
    q = _check_quality(quality)
    scale = 5000 // q if q < 50 else 200 - 2 * q

    def scaled(base):
        return np.clip((base * scale + 50) // 100, 1, 255)

    return QuantTables(luma=scaled(BASE_LUMA), chroma=scaled(BASE_CHROMA))


@dataclass(frozen=True)
class JpegConfig:
    quality: int = 50
    subsampling: str = "4:4:4"
    differentiable: bool = False
    round_mode: str = "hard"  # "hard" | "cubic-approx"

    def __post_init__(self):
        _check_quality(self.quality)
        if self.subsampling != "4:4:4":
            raise ValueError("only 4:4:4 sampling is modeled")
        if self.differentiable and self.round_mode == "hard":
            object.__setattr__(self, "round_mode", "cubic-approx")
        if self.round_mode not in ("hard", "cubic-approx"):
            raise ValueError(f"unknown round_mode {self.round_mode!r}")


# BT.601 full-range RGB <-> YCbCr.  The inverse is computed numerically so
# the color step is invertible to machine precision.
_RGB_TO_YCC = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.299 / 1.772, -0.587 / 1.772, 0.886 / 1.772],
        [0.701 / 1.402, -0.587 / 1.402, -0.114 / 1.402],
    ]
)
_YCC_TO_RGB = np.linalg.inv(_RGB_TO_YCC)
_YCC_OFFSET = np.array([0.0, 128.0, 128.0])


def _dct_matrix(dtype, device):
    k = torch.arange(8, dtype=dtype, device=device).reshape(8, 1)
    n = torch.arange(8, dtype=dtype, device=device).reshape(1, 8)
    mat = torch.cos((2 * n + 1) * k * torch.pi / 16.0) * torch.sqrt(
        torch.tensor(2.0 / 8.0, dtype=dtype, device=device)
    )
    mat[0, :] = torch.sqrt(torch.tensor(1.0 / 8.0, dtype=dtype, device=device))
    return mat


def _round_hard(v):
    return torch.round(v)


def _round_cubic(v):
    r = torch.round(v)
    return r + (v - r) ** 3


def _blockify(plane):
    # (B, H, W) -> (B, nblocks, 8, 8)
    b, h, w = plane.shape
    x = plane.reshape(b, h // 8, 8, w // 8, 8)
    return x.permute(0, 1, 3, 2, 4).reshape(b, -1, 8, 8)


def _unblockify(blocks, h, w):
    b = blocks.shape[0]
    x = blocks.reshape(b, h // 8, w // 8, 8, 8)
    return x.permute(0, 1, 3, 2, 4).reshape(b, h, w)


def codec_pipeline(x, tables, round_fn):
    """Run the codec on a (B, 3, H, W) tensor in [0, 1]; differentiable
    whenever ``round_fn`` is."""
    b, c, h, w = x.shape
    if c != 3:
        raise ValueError(f"codec expects 3 channels, got {c}")
    dtype, device = x.dtype, x.device
    pad_h = (-h) % 8
    pad_w = (-w) % 8
    if pad_h or pad_w:
        x = torch.nn.functional.pad(x, (0, pad_w, 0, pad_h), mode="replicate")
    hp, wp = x.shape[2], x.shape[3]

    fwd = torch.as_tensor(_RGB_TO_YCC, dtype=dtype, device=device)
    inv = torch.as_tensor(_YCC_TO_RGB, dtype=dtype, device=device)
    offset = torch.as_tensor(_YCC_OFFSET, dtype=dtype, device=device)
    dct = _dct_matrix(dtype, device)

    rgb255 = x.permute(0, 2, 3, 1) * 255.0
    ycc = rgb255 @ fwd.T + offset  # (B, H, W, 3) in 0..255

    quant = [
        torch.as_tensor(tables.luma, dtype=dtype, device=device),
        torch.as_tensor(tables.chroma, dtype=dtype, device=device),
        torch.as_tensor(tables.chroma, dtype=dtype, device=device),
    ]
    planes = []
    for ch in range(3):
        blocks = _blockify(ycc[..., ch] - 128.0)
        coef = dct @ blocks @ dct.T
        coded = round_fn(coef / quant[ch]) * quant[ch]
        rec = dct.T @ coded @ dct
        planes.append(_unblockify(rec, hp, wp) + 128.0)

    ycc_rec = torch.stack(planes, dim=-1)
    rgb_rec = (ycc_rec - offset) @ inv.T / 255.0
    rgb_rec = rgb_rec.permute(0, 3, 1, 2)
    if pad_h or pad_w:
        rgb_rec = rgb_rec[:, :, :h, :w]
    return rgb_rec.clamp(0.0, 1.0)


def _as_bchw(img):
    arr = np.asarray(img, dtype=np.float64)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"expected (H, W, C) or (N, H, W, C), got {arr.shape}")
    t = torch.from_numpy(np.ascontiguousarray(arr)).permute(0, 3, 1, 2)
    return t, single


def _from_bchw(t, single, dtype):
    arr = t.permute(0, 2, 3, 1).numpy().astype(dtype)
    return arr[0] if single else arr


def jpeg_roundtrip(img, cfg):
    """Bit-deterministic compress/decompress of an image array.

    ``img`` is (H, W, C) or (N, H, W, C) in [0, 1]; the result has the
    same shape and dtype float32.  Requires a non-differentiable config.
    """
    if cfg.differentiable or cfg.round_mode != "hard":
        raise ValueError("jpeg_roundtrip is the hard codec; use differentiable_jpeg")
    tables = quant_tables_for_quality(cfg.quality)
    t, single = _as_bchw(img)
    with torch.no_grad():
        out = codec_pipeline(t, tables, _round_hard)
    return _from_bchw(out, single, np.float32)


def differentiable_jpeg(img, cfg):
    """Forward value of the differentiable codec on a numpy image.

    Matches :func:`jpeg_roundtrip` within a small calibrated tolerance.
    For gradient work use :func:`differentiable_jpeg_torch` inside a
    torch graph.
    """
    if not cfg.differentiable:
        raise ValueError("config must have differentiable=True")
    tables = quant_tables_for_quality(cfg.quality)
    t, single = _as_bchw(img)
    with torch.no_grad():
        out = codec_pipeline(t, tables, _round_cubic)
    return _from_bchw(out, single, np.float32)


def differentiable_jpeg_torch(x, cfg, tables=None):
    """Differentiable codec on a (B, 3, H, W) tensor; gradient-capable.

    The same quantization tables as the hard path are used (shared
    through :func:`quant_tables_for_quality` unless explicitly given).
    """
    if not cfg.differentiable:
        raise ValueError("config must have differentiable=True")
    if tables is None:
        tables = quant_tables_for_quality(cfg.quality)
    return codec_pipeline(x, tables, _round_cubic)


def round_approx(v):
    """Cubic rounding surrogate: exact at integers, gradient 3 r^2."""
    return _round_cubic(torch.as_tensor(v))
