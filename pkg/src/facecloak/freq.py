"""Whole-image 2D DCT analysis: component removal, band spectra, sweeps.

Transform: orthonormal type-II DCT over the full H x H channel (type-III
inverse), so Parseval holds and per-band energies sum to the squared
pixel energy of the signal.

Band convention ("shell-max"): for an H x H channel, band b in 1..H
collects the coefficients on the shell max(i, j) == b - 1 of the 0-based
coefficient grid.  Band 1 is the DC coefficient, band H the
highest-frequency shell, and the shells partition the grid.

Component removal for band n zeroes row n-1 and column n-1 of the
coefficient grid (a cross of exactly 2H - 1 coefficients), then inverse
transforms and clips to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .errors import BandOutOfRange, EmptyManifest, NonSquareInput

SHELL_MAX = "shell-max"


def _check_square(channel, ndim=2):
    channel = np.asarray(channel, dtype=np.float64)
    if channel.ndim != ndim or channel.shape[0] != channel.shape[1]:
        raise NonSquareInput(
            f"expected a square array with {ndim} dims, got shape {channel.shape}"
        )
    return channel


def dct2(channel):
    """Orthonormal 2D type-II DCT of one square channel."""
    channel = _check_square(channel)
    return scipy.fft.dctn(channel, type=2, norm="ortho")


def idct2(spec):
    """Inverse of :func:`dct2` (orthonormal type-III DCT)."""
    spec = _check_square(spec)
    return scipy.fft.idctn(spec, type=2, norm="ortho")


def removal_mask(size, n):
    """0/1 mask that deletes band n's cross: row n-1 and column n-1."""
    if not (isinstance(n, (int, np.integer)) and 1 <= n <= size):
        raise BandOutOfRange(f"band {n} outside [1, {size}]")
    mask = np.ones((size, size))
    mask[n - 1, :] = 0.0
    mask[:, n - 1] = 0.0
    return mask


def apply_mask_channel(channel, mask):
    """idct2(dct2(channel) * mask): linear in the channel, no clipping."""
    channel = _check_square(channel)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != channel.shape:
        raise NonSquareInput(
            f"mask shape {mask.shape} does not match channel {channel.shape}"
        )
    return idct2(dct2(channel) * mask)

def remove_component(img, n):
    """Delete frequency band n from every channel of an (H, W, C) image.

    Returns the clipped-to-[0, 1] float32 reconstruction.  For inputs
    whose masked reconstruction stays inside [0, 1] the op is linear and
    idempotent; clipping is the only nonlinearity.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    if img.ndim != 3:
        raise NonSquareInput(f"expected (H, W, C) image, got shape {img.shape}")
    h, w, c = img.shape
    if h != w:
        raise NonSquareInput(f"expected square image, got {h}x{w}")
    mask = removal_mask(h, n)
    out = np.stack([apply_mask_channel(img[..., k], mask) for k in range(c)], axis=-1)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def shell_index(size):
    """(size, size) grid of max(i, j) values — band b occupies value b-1."""
    idx = np.arange(size)
    return np.maximum.outer(idx, idx)


@dataclass
class SpectrumProfile:
    """Per-band energy profile of a signal (summed over channels).

    ``band_energy[b-1]`` is the total squared DCT coefficient mass on
    band b's shell.  With the orthonormal transform, the entries sum to
    the squared pixel energy of the analyzed signal (Parseval).
    """

    band_energy: np.ndarray
    band_scheme: str = SHELL_MAX

    @property
    def num_bands(self):
        return len(self.band_energy)

    def total_energy(self):
        return float(self.band_energy.sum())

    def fraction(self, lo=1, hi=None):
        """Energy fraction carried by bands lo..hi (inclusive, 1-based)."""
        hi = self.num_bands if hi is None else hi
        if not (1 <= lo <= hi <= self.num_bands):
            raise BandOutOfRange(f"band range [{lo}, {hi}] outside [1, {self.num_bands}]")
        total = self.band_energy.sum()
        if total <= 0.0:
            return 0.0
        return float(self.band_energy[lo - 1 : hi].sum() / total)

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("band,energy\n")
            for b, e in enumerate(self.band_energy, start=1):
                fh.write(f"{b},{float(e)!r}\n")


def band_spectrum(delta, scheme=SHELL_MAX):
    """Band-energy profile of a signal (typically a perturbation).

    Accepts (H, W) or (H, W, C); channels are summed.  The signal is not
    clipped or normalized — pass exactly what you want analyzed.
    """
    if scheme != SHELL_MAX:
        raise ValueError(f"unknown band scheme {scheme!r}")
    delta = np.asarray(delta, dtype=np.float64)
    if delta.ndim == 2:
        delta = delta[..., None]
    h, w, c = delta.shape
    if h != w:
        raise NonSquareInput(f"expected square input, got {h}x{w}")
    shells = shell_index(h).ravel()
    energy = np.zeros(h)
    for k in range(c):
        coef = dct2(delta[..., k])
        energy += np.bincount(shells, weights=(coef ** 2).ravel(), minlength=h)
    return SpectrumProfile(band_energy=energy, band_scheme=scheme)


def low_band_fraction(delta, upper_band=20):
    """Fraction of a signal's spectral energy in bands 1..upper_band."""
    return band_spectrum(delta).fraction(1, upper_band)


def _pair_arrays(pairs, size=None):
    """Normalize `pairs` to (probes, enrolled) arrays of positive pairs."""
    from .imaging import POSITIVE, PairManifest, load_pair_images

    if isinstance(pairs, PairManifest):
        kept = pairs.positives()
        if not kept:
            raise EmptyManifest("no positive pairs in manifest")
        kwargs = {} if size is None else {"size": size}
        probes, enrolled, _ = load_pair_images(kept, **kwargs)
        return probes, enrolled
    probes, enrolled = pairs
    probes = np.asarray(probes)
    enrolled = np.asarray(enrolled)
    if len(probes) == 0:
        raise EmptyManifest("no pairs supplied")
    return probes, enrolled


def masked_accuracy_sweep(model, rule, pairs, n_range=None):
    """Verification-accuracy drop when band n is removed from probes.

    ``pairs`` may be a PairManifest (positive pairs are used) or a
    (probes, enrolled) array tuple of positive pairs.  Returns a list of
    (n, accuracy_drop) rows, where drop = clean accuracy minus accuracy
    with band n deleted from every probe.  Deterministic: no RNG.
    """
    from .embedder import embed

    probes, enrolled = _pair_arrays(pairs, size=model.input_size)
    h = probes.shape[1]
    if n_range is None:
        n_range = range(1, h + 1)

    e_enrolled = embed(model, enrolled)

    def accuracy(batch):
        e_probe = embed(model, batch)
        d = np.linalg.norm(
            e_probe.astype(np.float64) - e_enrolled.astype(np.float64), axis=1
        )
        return float(np.mean(d < rule.threshold))

    clean_acc = accuracy(probes)
    rows = []
    for n in n_range:
        masked = np.stack([remove_component(p, n) for p in probes])
        rows.append((int(n), clean_acc - accuracy(masked)))
    return rows


def jpeg_attenuation_profile(originals, adv_images, quality):
    """Mean per-band energy of what JPEG strips from perturbations.

    For each pair (x, x_adv) with delta = x_adv - x, compresses x_adv at
    the given quality and analyzes delta_before - delta_after, i.e. the
    part of the perturbation the codec removed.  Returns the
    SpectrumProfile averaged over the set.
    """
    from .jpeg import JpegConfig, jpeg_roundtrip

    originals = np.asarray(originals)
    adv_images = np.asarray(adv_images)
    if originals.ndim == 3:
        originals = originals[None]
        adv_images = adv_images[None]
    if originals.shape != adv_images.shape:
        raise NonSquareInput(
            f"originals {originals.shape} and adversarial {adv_images.shape} differ"
        )
    cfg = JpegConfig(quality=quality)
    acc = None
    for x, adv in zip(originals, adv_images):
        delta_before = adv.astype(np.float64) - x.astype(np.float64)
        delta_after = jpeg_roundtrip(adv, cfg).astype(np.float64) - x.astype(np.float64)
        profile = band_spectrum(delta_before - delta_after)
        acc = profile.band_energy if acc is None else acc + profile.band_energy
    return SpectrumProfile(band_energy=acc / len(originals))
