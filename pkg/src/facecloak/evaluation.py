"""Black-box transfer evaluation: thresholds, ASR, SSIM, sweeps, reports.

Attack success rate over a set of *positive* pairs:

    ASR = (N_without - N_with) / N_total

where N_without counts pairs verified "same" on clean probes and N_with
counts pairs still verified "same" after the probe is replaced by its
adversarial version (optionally JPEG-compressed first).  Perceptual
quality is reported as SSIM between clean and adversarial probes,
computed before any compression.

Reports are deterministic: rows are sorted canonically and serialized
with stable key order, so two runs with the same inputs produce byte-
identical artifacts.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .attacks import AttackPlan, iterative_attack
from .embedder import VerificationRule, embed
from .errors import (
    NeedsBothLabels,
    NoTargets,
    PairCountMismatch,
    ShapeMismatch,
)
from .imaging import NEGATIVE, POSITIVE
from .jpeg import JpegConfig, jpeg_roundtrip


# --- SSIM -------------------------------------------------------------------


@dataclass(frozen=True)
class SsimConfig:
    """Sliding-window SSIM constants: c_i = (d_i * J)^2 with J = 2^bits - 1."""

    d1: float = 0.01
    d2: float = 0.03
    bits: int = 8
    window: int = 8

    @property
    def dynamic_range(self):
        return float(2 ** self.bits - 1)

    @property
    def c1(self):
        return (self.d1 * self.dynamic_range) ** 2

    @property
    def c2(self):
        return (self.d2 * self.dynamic_range) ** 2


def _window_stats(plane, w):
    view = np.lib.stride_tricks.sliding_window_view(plane, (w, w))
    return view.mean(axis=(-1, -2))


def ssim(x, y, cfg=SsimConfig()):
    """Mean SSIM between two images, over all stride-1 windows and channels.

    Inputs are unit-interval (H, W, C) arrays; internally scaled by the
    dynamic range J so the constants have their usual meaning.  Symmetric
    in (x, y); equal inputs give exactly 1.0.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatch(f"ssim inputs differ: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x = x[..., None]
        y = y[..., None]
    if x.ndim != 3:
        raise ShapeMismatch(f"expected (H, W, C) images, got {x.shape}")
    h, wd, c = x.shape
    w = cfg.window
    if h < w or wd < w:
        raise ShapeMismatch(f"image {h}x{wd} smaller than the {w}x{w} window")
    J = cfg.dynamic_range
    xs = x * J
    ys = y * J
    vals = []
    for k in range(c):
        mx = _window_stats(xs[..., k], w)
        my = _window_stats(ys[..., k], w)
        mxx = _window_stats(xs[..., k] ** 2, w)
        myy = _window_stats(ys[..., k] ** 2, w)
        mxy = _window_stats(xs[..., k] * ys[..., k], w)
        vx = mxx - mx ** 2
        vy = myy - my ** 2
        cov = mxy - mx * my
        s = ((2 * mx * my + cfg.c1) * (2 * cov + cfg.c2)) / (
            (mx ** 2 + my ** 2 + cfg.c1) * (vx + vy + cfg.c2)
        )
        vals.append(s.mean())
    return float(np.mean(vals))


# --- threshold calibration and ASR -------------------------------------------


def _distances(model, probes, enrolled):
    e1 = embed(model, np.asarray(probes)).astype(np.float64)
    e2 = embed(model, np.asarray(enrolled)).astype(np.float64)
    return np.linalg.norm(e1 - e2, axis=1)


def calibrate_threshold(model, probes, enrolled, labels):
    """Accuracy-optimal verification threshold over a labeled pair set.

    Scans the decision boundaries that matter: a value below every
    distance, midpoints between consecutive distinct distances, and one
    above the maximum.  Ties in accuracy resolve to the smallest
    threshold.  Needs at least one positive and one negative pair.
    """
    labels = list(labels)
    is_pos = np.array([l == POSITIVE for l in labels])
    if len(labels) == 0 or is_pos.all() or not is_pos.any():
        raise NeedsBothLabels("calibration needs positive and negative pairs")
    d = _distances(model, probes, enrolled)
    uniq = np.unique(d)
    candidates = [uniq[0] / 2.0]
    candidates += [float((a + b) / 2.0) for a, b in zip(uniq[:-1], uniq[1:])]
    candidates += [float(uniq[-1] + 1.0)]
    best_tau, best_acc = None, -1.0
    n = len(d)
    for tau in candidates:
        same = d < tau
        acc = (np.sum(same & is_pos) + np.sum(~same & ~is_pos)) / n
        if acc > best_acc:
            best_tau, best_acc = tau, acc
    return VerificationRule(threshold=float(best_tau))


def verification_accuracy(model, rule, probes, enrolled, labels):
    d = _distances(model, probes, enrolled)
    is_pos = np.array([l == POSITIVE for l in labels])
    same = d < rule.threshold
    return float((np.sum(same & is_pos) + np.sum(~same & ~is_pos)) / len(d))


def attack_success_rate(model, rule, clean_pairs, adv_pairs):
    """ASR over positive pairs: fraction of initially-verified pairs broken.

    ``clean_pairs`` is (probes, enrolled); ``adv_pairs`` is the same
    pairs with the probe replaced by its adversarial version (and the
    same enrolled images).
    """
    probes, enrolled = clean_pairs
    adv_probes, adv_enrolled = adv_pairs
    if len(adv_probes) != len(probes) or len(adv_enrolled) != len(enrolled):
        raise PairCountMismatch(
            f"clean set has {len(probes)} pairs, adversarial {len(adv_probes)}"
        )
    d_clean = _distances(model, probes, enrolled)
    d_adv = _distances(model, adv_probes, adv_enrolled)
    n_without = int(np.sum(d_clean < rule.threshold))
    n_with = int(np.sum((d_clean < rule.threshold) & (d_adv < rule.threshold)))
    return (n_without - n_with) / len(probes)


# --- adversarial sets and report plumbing ------------------------------------


@dataclass
class AdvSet:
    """Adversarial probes for a pair set, tagged with how they were made."""

    attack_id: str
    source_ids: tuple
    seed: int
    probes: np.ndarray
    enrolled: np.ndarray
    adv_probes: np.ndarray
    plan_digest: str = ""

    def mean_ssim(self, cfg=SsimConfig()):
        return float(
            np.mean([ssim(p, a, cfg) for p, a in zip(self.probes, self.adv_probes)])
        )


def generate_adv_set(plan, probes, enrolled, attack_id=None, chunk_size=None):
    """Run a plan over a positive-pair set and package the result."""
    probes = np.asarray(probes)
    enrolled = np.asarray(enrolled)
    n = len(probes)
    # float64: the attack's budget guarantee is exact in double precision,
    # and narrowing here would cost a rounding ulp of headroom
    adv = np.empty(probes.shape, dtype=np.float64)
    chunk = n if chunk_size is None else int(chunk_size)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        results = iterative_attack(
            plan, probes[lo:hi], enrolled[lo:hi], pair_ids=range(lo, hi)
        )
        if not isinstance(results, list):
            results = [results]
        for i, r in enumerate(results):
            adv[lo + i] = r.adv_image
    normalized = plan.normalized()
    return AdvSet(
        attack_id=attack_id or "custom",
        source_ids=tuple(m.model_id() for m, _ in normalized.sources),
        seed=plan.seed,
        probes=probes,
        enrolled=enrolled,
        adv_probes=adv,
        plan_digest=plan.digest(),
    )


def compress_probes(adv_probes, quality):
    """JPEG round-trip every probe at `quality` (None = no compression)."""
    if quality is None:
        return np.asarray(adv_probes)
    cfg = JpegConfig(quality=int(quality))
    return jpeg_roundtrip(np.asarray(adv_probes), cfg)


@dataclass(frozen=True)
class EvalRow:
    attack_id: str
    source_ids: tuple
    target_id: str
    jpeg_quality: object  # int or None
    seed: int
    n_pairs: int
    asr: float
    ssim_mean: float

    def key(self):
        q = -1 if self.jpeg_quality is None else int(self.jpeg_quality)
        return (self.attack_id, self.target_id, -q, self.seed)


@dataclass
class EvalReport:
    rows: list
    provenance: dict = field(default_factory=dict)
    schema_version: int = 1

    def sorted_rows(self):
        return sorted(self.rows, key=lambda r: r.key())

    def to_json(self):
        payload = {
            "schema_version": self.schema_version,
            "provenance": self.provenance,
            "rows": [
                {**asdict(r), "source_ids": list(r.source_ids)}
                for r in self.sorted_rows()
            ],
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def to_csv(self):
        lines = ["attack_id,source_ids,target_id,jpeg_quality,seed,n_pairs,asr,ssim_mean"]
        for r in self.sorted_rows():
            q = "none" if r.jpeg_quality is None else str(r.jpeg_quality)
            src = "+".join(r.source_ids)
            lines.append(
                f"{r.attack_id},{src},{r.target_id},{q},{r.seed},{r.n_pairs},"
                f"{r.asr!r},{r.ssim_mean!r}"
            )
        return "\n".join(lines) + "\n"

    def save(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
        with open(os.path.join(out_dir, "tables.csv"), "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())

    def lookup(self, **filters):
        out = [
            r
            for r in self.rows
            if all(getattr(r, k) == v for k, v in filters.items())
        ]
        return out


def jpeg_sweep(adv_set, target_id, model, rule, qualities=(None, 75, 50)):
    """ASR of one adversarial set against one target across JPEG settings.

    When a quality is set, the clean probes are compressed with the same
    setting: the compression step sits at the system input and every
    submitted image passes through it, so the "without protection" count
    must be measured on compressed probes as well.  Otherwise incidental
    compression damage to the image itself would be credited to (or held
    against) the perturbation.
    """
    ssim_mean = adv_set.mean_ssim()
    rows = []
    for q in qualities:
        clean = (compress_probes(adv_set.probes, quality=q), adv_set.enrolled)
        adv = (compress_probes(adv_set.adv_probes, quality=q), adv_set.enrolled)
        rows.append(
            EvalRow(
                attack_id=adv_set.attack_id,
                source_ids=adv_set.source_ids,
                target_id=target_id,
                jpeg_quality=q,
                seed=adv_set.seed,
                n_pairs=len(adv_set.probes),
                asr=attack_success_rate(model, rule, clean, adv),
                ssim_mean=ssim_mean,
            )
        )
    return rows


def transfer_matrix(adv_sets, targets, qualities=(None, 75, 50), include_sources=False):
    """Cross (adversarial sets x black-box targets x JPEG qualities).

    ``targets`` is a list of (target_id, model, rule) triples.  Targets
    whose model id appears among an adversarial set's sources are
    skipped (white-box) unless ``include_sources`` is set.
    """
    targets = list(targets)
    if not targets:
        raise NoTargets("transfer evaluation needs at least one target")
    rows = []
    for adv_set in adv_sets:
        for target_id, model, rule in targets:
            if not include_sources and model.model_id() in adv_set.source_ids:
                continue
            rows.extend(jpeg_sweep(adv_set, target_id, model, rule, qualities))
    return EvalReport(rows=rows)


# --- ablations ---------------------------------------------------------------


def lambda_ablation(
    plan,
    strong_source,
    light_source,
    probes,
    enrolled,
    target,
    lambda_grid=(0.0, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0),
    quality=None,
):
    """ASR as a function of the light-source ensemble weight.

    ``target`` is a (target_id, model, rule) triple.  The lambda = 0
    point is exactly the single-robust-source attack (the zero-weight
    member is dropped from the plan).  Returns [(lam, asr), ...].
    """
    target_id, model, rule = target
    curve = []
    for lam in lambda_grid:
        sources = [(strong_source, 1.0), (light_source, float(lam))]
        adv_set = generate_adv_set(
            plan.with_sources(sources), probes, enrolled,
            attack_id=f"ensemble-lam{lam:g}",
        )
        clean = (compress_probes(probes, quality), enrolled)
        adv = (compress_probes(adv_set.adv_probes, quality), enrolled)
        asr = attack_success_rate(model, rule, clean, adv)
        curve.append((float(lam), asr))
    return curve


def frequency_ablation(
    plan,
    standard_source,
    strong_source,
    light_source,
    probes,
    enrolled,
    target,
    lam=0.6,
    qualities=(None, 50),
):
    """Compare noise recipes: standard, light-robust, strong-robust, ensemble.

    Rows correspond to perturbations carrying (broadband) standard noise,
    mid-frequency-leaning light-robust noise, low-frequency strong-robust
    noise, and the weighted low+mid ensemble.
    """
    target_id, model, rule = target
    recipes = [
        ("standard-noise", [(standard_source, 1.0)]),
        ("light-robust-noise", [(light_source, 1.0)]),
        ("strong-robust-noise", [(strong_source, 1.0)]),
        ("ensemble-noise", [(strong_source, 1.0), (light_source, float(lam))]),
    ]
    rows = []
    for attack_id, sources in recipes:
        adv_set = generate_adv_set(
            plan.with_sources(sources), probes, enrolled, attack_id=attack_id
        )
        rows.extend(jpeg_sweep(adv_set, target_id, model, rule, qualities))
    return EvalReport(rows=rows)


@dataclass
class StabilityResult:
    mean: float
    variance: float
    per_run: tuple


def stability_report(plan, probes, enrolled, target, n_runs=5, quality=None):
    """Re-run a stochastic plan with shifted seeds; mean/variance of ASR.

    Variance is the population variance over runs, in ASR percentage
    points squared if you scale by 100 — here kept in raw fractions.
    """
    target_id, model, rule = target
    clean = (compress_probes(probes, quality), enrolled)
    asrs = []
    for k in range(n_runs):
        shifted = replace(plan, seed=plan.seed + k)
        adv_set = generate_adv_set(shifted, probes, enrolled, attack_id="stability")
        adv = (compress_probes(adv_set.adv_probes, quality), enrolled)
        asrs.append(attack_success_rate(model, rule, clean, adv))
    arr = np.asarray(asrs, dtype=np.float64)
    return StabilityResult(
        mean=float(arr.mean()), variance=float(arr.var()), per_run=tuple(asrs)
    )
