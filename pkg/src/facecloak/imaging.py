"""Image IO, pixel conventions, and verification-pair manifests.

Every image in this package is a numpy array of shape (H, W, C) with
float32 values in [0, 1].  Anything expressed in 0-255 pixel units
(perturbation budgets, training radii) is divided by 255 exactly once at
the configuration boundary; all internal math happens in the unit
interval.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

from .errors import (
    EmptyManifest,
    IoFailure,
    MalformedLine,
    UnreadableImage,
    UnsupportedFormat,
)

DEFAULT_SIZE = 112
CHANNELS = 3

POSITIVE = "positive"
NEGATIVE = "negative"


def validate_image(img):
    """Check the (H, W, C) / finite / [0, 1] contract; returns the array."""
    img = np.asarray(img)
    if img.ndim != 3 or min(img.shape) < 1:
        raise ValueError(f"expected an (H, W, C) image, got shape {img.shape}")
    if not np.isfinite(img).all():
        raise ValueError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return img


def resize_bilinear(img, height, width):
    """Bilinear resample (align_corners disabled), channels preserved."""
    t = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32))
    t = t.permute(2, 0, 1).unsqueeze(0)
    out = F.interpolate(t, size=(height, width), mode="bilinear", align_corners=False)
    return out.squeeze(0).permute(1, 2, 0).clamp(0.0, 1.0).numpy()


def load_image(path, size=DEFAULT_SIZE):
    """Decode a PNG/JPEG file to a float32 (size, size, 3) array in [0, 1].

    ``size=None`` keeps the stored resolution; otherwise the image is
    bilinearly resampled to size x size.
    """
    try:
        with Image.open(path) as im:
            fmt = im.format
            if fmt not in ("PNG", "JPEG"):
                raise UnsupportedFormat(f"{path}: unsupported container {fmt!r}")
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except UnsupportedFormat:
        raise
    except (FileNotFoundError, UnidentifiedImageError, OSError) as exc:
        raise UnreadableImage(f"cannot read image {path}: {exc}") from exc
    if size is not None and arr.shape[:2] != (size, size):
        arr = resize_bilinear(arr, size, size)
    return arr


def save_image(img, path, fmt="png", quality=None):
    """Write an image as PNG (lossless 8-bit) or JPEG.

    JPEG writing shares the codec module's quality-scaled quantization
    tables with the encoder (4:4:4 sampling), so files written here match
    the round-trip model up to entropy coding.  Values are quantized to
    8 bits by round(255 * v).
    """
    img = validate_image(img)
    if img.shape[2] != 3:
        raise ValueError("save_image expects 3-channel images")
    data = np.round(img.astype(np.float64) * 255.0).astype(np.uint8)
    pil = Image.fromarray(data, "RGB")
    try:
        if fmt == "png":
            pil.save(path, format="PNG")
        elif fmt == "jpeg":
            from .jpeg import quant_tables_for_quality

            tables = quant_tables_for_quality(100 if quality is None else quality)
            pil.save(
                path,
                format="JPEG",
                qtables=[
                    tables.luma.reshape(-1).tolist(),
                    tables.chroma.reshape(-1).tolist(),
                ],
                subsampling=0,
            )
        else:
            raise ValueError(f"unknown format {fmt!r} (use 'png' or 'jpeg')")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


@dataclass(frozen=True)
class PairEntry:
    """One verification trial: does `probe` match the enrolled image?"""

    probe_path: str
    enrolled_path: str
    subject_id: str
    label: str  # POSITIVE or NEGATIVE


@dataclass
class PairManifest:
    entries: list

    def __len__(self):
        return len(self.entries)

    def counts(self):
        out = {POSITIVE: 0, NEGATIVE: 0}
        for e in self.entries:
            out[e.label] += 1
        return out

    def positives(self):
        return [e for e in self.entries if e.label == POSITIVE]

    def negatives(self):
        return [e for e in self.entries if e.label == NEGATIVE]


def load_pairs(path):
    """Parse a TSV pair manifest: probe<TAB>enrolled<TAB>subject<TAB>label.

    Blank lines are skipped.  Paths are not touched here; they are
    resolved (and validated as decodable images) when the pairs are
    loaded with :func:`load_pair_images`.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
    entries = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise MalformedLine(
                f"{path}:{line_no}: expected 4 tab-separated fields, got {len(fields)}",
                line_no=line_no,
            )
        probe, enrolled, subject, label = fields
        if label not in (POSITIVE, NEGATIVE):
            raise MalformedLine(
                f"{path}:{line_no}: label must be '{POSITIVE}' or '{NEGATIVE}', got {label!r}",
                line_no=line_no,
            )
        entries.append(PairEntry(probe, enrolled, subject, label))
    if not entries:
        raise EmptyManifest(f"{path}: no pair entries")
    return PairManifest(entries)


def write_pairs(entries, path):
    """Write PairEntry rows to a TSV manifest."""
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for e in entries:
                fh.write(f"{e.probe_path}\t{e.enrolled_path}\t{e.subject_id}\t{e.label}\n")
    except OSError as exc:
        raise IoFailure(f"cannot write manifest {path}: {exc}") from exc


def load_pair_images(manifest, size=DEFAULT_SIZE, base_dir=None):
    """Load every pair of a manifest into (probes, enrolled, labels) arrays.

    Relative paths resolve against ``base_dir`` (default: cwd).  Returns
    float32 arrays of shape (N, size, size, 3) plus the label list.
    """
    entries = manifest.entries if isinstance(manifest, PairManifest) else list(manifest)
    probes, enrolled, labels = [], [], []
    for e in entries:
        p, q = e.probe_path, e.enrolled_path
        if base_dir is not None:
            p = os.path.join(base_dir, p) if not os.path.isabs(p) else p
            q = os.path.join(base_dir, q) if not os.path.isabs(q) else q
        probes.append(load_image(p, size=size))
        enrolled.append(load_image(q, size=size))
        labels.append(e.label)
    return np.stack(probes), np.stack(enrolled), labels
