"""Synthetic identity-labeled imagery for demos and desk-scale runs.

Each subject is a random smooth template whose information lives in the
low and mid DCT shells (roughly bands 1-20 strongly, 21-45 weakly), the
same regime where face identity concentrates.  Variants of a subject
are shifted / contrast-jittered / noised renders of its template, so a
verifier must key on the template's spectral content rather than pixel
noise.  Everything is seeded and reproducible.
"""

from __future__ import annotations

import os

import numpy as np
import scipy.fft

from .imaging import NEGATIVE, POSITIVE, PairEntry, save_image


def _shell_grid(size):
    idx = np.arange(size)
    return np.maximum.outer(idx, idx)


# Per-band identity signal, as (band_lo, band_hi, pixel_std) for a 112px
# canvas (edges scale with size).  Coarse structure dominates; the mid
# band carries a clear secondary signature; the high band is a faint
# texture near the variant-noise floor — discriminative for a greedy
# learner, but fragile and the first thing compression removes.
TEMPLATE_BANDS = ((1, 20, 0.170), (21, 45, 0.038), (46, 90, 0.016))


def _band_field(rng, size, lo, hi, falloff=0.8):
    shells = _shell_grid(size)
    env = np.zeros(size)
    band = np.arange(size)
    sel = (band >= lo) & (band <= hi)
    env[sel] = (1.0 + band[sel]) ** -falloff
    coef = rng.standard_normal((size, size)) * env[shells]
    return scipy.fft.idctn(coef, type=2, norm="ortho")


def _smooth_field(rng, size, lo=1, hi=None):
    return _band_field(rng, size, lo, (size // 3 if hi is None else hi))


def subject_template(rng, size=112, bands=TEMPLATE_BANDS):
    """One subject's (size, size, 3) template with correlated channels."""
    base = np.zeros((size, size))
    for lo112, hi112, target in bands:
        lo = max(1, int(round(lo112 * size / 112)))
        hi = min(size - 1, int(round(hi112 * size / 112)))
        if lo > hi:
            continue
        f = _band_field(rng, size, lo, hi)
        base += f / max(f.std(), 1e-9) * target
    channels = []
    for _ in range(3):
        tint = _smooth_field(rng, size)
        channels.append(base + tint / max(tint.std(), 1e-9) * 0.05)
    img = np.stack(channels, axis=-1)
    img = img + 0.5 + rng.uniform(-0.06, 0.06, size=(1, 1, 3))
    return np.clip(img, 0.06, 0.94).astype(np.float32)


def render_variant(rng, template, max_shift=3, noise=0.010):
    """A registered-but-not-identical observation of a subject."""
    dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
    img = np.roll(template, (int(dy), int(dx)), axis=(0, 1)).astype(np.float64)
    contrast = rng.uniform(0.88, 1.12)
    brightness = rng.uniform(-0.05, 0.05)
    img = 0.5 + contrast * (img - 0.5) + brightness
    img = img + rng.normal(0.0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def identity_arrays(num_subjects, per_subject, size=112, seed=0):
    """In-memory corpus: (images, labels, subject names)."""
    root_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    images, labels, names = [], [], []
    for s in range(num_subjects):
        sub_rng = np.random.default_rng(root_rng.integers(0, 2 ** 63 - 1))
        template = subject_template(sub_rng, size=size)
        names.append(f"subj_{s:03d}")
        for _ in range(per_subject):
            images.append(render_variant(sub_rng, template))
            labels.append(s)
    return np.stack(images), np.asarray(labels, dtype=np.int64), names


def write_identity_dataset(root, num_subjects, per_subject, size=112, seed=0):
    """PNG tree <root>/<subject>/<image>.png; returns (root, names)."""
    images, labels, names = identity_arrays(num_subjects, per_subject, size, seed)
    for name in names:
        os.makedirs(os.path.join(root, name), exist_ok=True)
    counters = {s: 0 for s in range(len(names))}
    for img, lab in zip(images, labels):
        k = counters[int(lab)]
        counters[int(lab)] = k + 1
        save_image(img, os.path.join(root, names[int(lab)], f"img_{k:03d}.png"))
    return root, names


def verification_pairs(images, labels, n_positive, n_negative, seed=0):
    """Draw positive/negative verification pairs from labeled images.

    Returns (probes, enrolled, labels) with POSITIVE pairs first.
    Positive pairs use two distinct variants of one subject; negative
    pairs use two different subjects.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 23]))
    labels = np.asarray(labels)
    by_subject = {s: np.flatnonzero(labels == s) for s in np.unique(labels)}
    subjects = [s for s, idx in by_subject.items() if len(idx) >= 2]
    probes, enrolled, out_labels = [], [], []
    for _ in range(n_positive):
        s = subjects[rng.integers(len(subjects))]
        i, j = rng.choice(by_subject[s], size=2, replace=False)
        probes.append(images[i])
        enrolled.append(images[j])
        out_labels.append(POSITIVE)
    all_subjects = list(by_subject)
    for _ in range(n_negative):
        s1, s2 = rng.choice(len(all_subjects), size=2, replace=False)
        i = rng.choice(by_subject[all_subjects[s1]])
        j = rng.choice(by_subject[all_subjects[s2]])
        probes.append(images[i])
        enrolled.append(images[j])
        out_labels.append(NEGATIVE)
    return np.stack(probes), np.stack(enrolled), out_labels


def write_pair_manifest(data_root, names, out_path, n_positive, n_negative, seed=0):
    """Build a TSV manifest over an on-disk identity tree."""
    from .imaging import write_pairs

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 37]))
    files = {
        name: sorted(
            os.path.join(data_root, name, f)
            for f in os.listdir(os.path.join(data_root, name))
        )
        for name in names
    }
    usable = [n for n in names if len(files[n]) >= 2]
    entries = []
    for _ in range(n_positive):
        name = usable[rng.integers(len(usable))]
        i, j = rng.choice(len(files[name]), size=2, replace=False)
        entries.append(PairEntry(files[name][i], files[name][j], name, POSITIVE))
    for _ in range(n_negative):
        a, b = rng.choice(len(names), size=2, replace=False)
        fa = files[names[a]][rng.integers(len(files[names[a]]))]
        fb = files[names[b]][rng.integers(len(files[names[b]]))]
        entries.append(PairEntry(fa, fb, names[a], NEGATIVE))
    write_pairs(entries, out_path)
    return out_path


def photo_corpus(n, size=48, seed=0):
    """Natural-statistics test images: smooth fields plus sharp shapes."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 51]))
    out = []
    for _ in range(n):
        base = _smooth_field(rng, size, 1, max(8, size // 2))
        base = base / max(base.std(), 1e-9) * 0.18 + 0.5
        img = np.stack([base + rng.uniform(-0.08, 0.08) for _ in range(3)], axis=-1)
        for _ in range(rng.integers(1, 4)):
            h0, w0 = rng.integers(0, size - 4, size=2)
            h1 = h0 + rng.integers(3, max(4, size // 3))
            w1 = w0 + rng.integers(3, max(4, size // 3))
            color = rng.uniform(0.1, 0.9, size=3)
            img[h0:h1, w0:w1] = 0.6 * img[h0:h1, w0:w1] + 0.4 * color
        out.append(np.clip(img, 0.0, 1.0).astype(np.float32))
    return np.stack(out)
