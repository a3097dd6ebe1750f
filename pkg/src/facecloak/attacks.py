"""L-inf attacks on face verification: the iterative engine and its pieces.

Every attack ascends the pair's embedding distance (push the probe away
from the enrolled image) under an L-inf budget epsilon, stepping

    x_{t+1} = clip_{[0,1]}( clip_eps( x_t + alpha * sign(g_t) ) )

where g_t comes from a configurable gradient stack.  The canonical
composition order inside one gradient evaluation is:

    admix mixing -> scale copies -> diverse-input warp
        -> source-ensemble forward/backward
        -> translation-invariant kernel smoothing -> momentum accumulation

Transform knobs degrade gracefully: momentum mu=0, diverse-input p=0, a
single scale, admix eta=0 (or an empty mix count) and kernel size <= 1
each remove their transform from the plan entirely (see
``AttackPlan.normalized``), so a reduced plan executes the simpler
attack's exact code path and reproduces it bit-for-bit.  Likewise a
zero-weight ensemble member is dropped, which is what makes the
two-model ensemble with lambda = 0 collapse to the single robust-source
attack.

Randomness (diverse-input warps, admix pool draws) is drawn from a
dedicated stream per (plan.seed, pair_id), so results for a pair do not
depend on batch composition and reruns are bit-identical.

Units: AttackPlan stores epsilon/step_size in [0, 1].  JSON plan configs
may use epsilon_255 / step_size_255 keys instead (divided by 255 once at
parse time).
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft
import torch
import torch.nn.functional as F

from .errors import (
    BandOutOfRange,
    EmptyAdmixPool,
    NonFiniteGradient,
    NotRobustSourceWarning,
)
from .jpeg import JpegConfig, differentiable_jpeg_torch, quant_tables_for_quality

DEFAULT_EPSILON = 16.0 / 255.0
DEFAULT_STEPS = 10
DEFAULT_STEP_SIZE = 1.25 / 255.0
DEFAULT_ENSEMBLE_WEIGHT = 0.6


# --- transforms -------------------------------------------------------------


@dataclass(frozen=True)
class Momentum:
    """Accumulate L1-normalized gradients: g <- mu * g_prev + g/|g|_1."""

    mu: float = 1.0

    def degenerate(self):
        return self.mu == 0.0

    def config(self):
        return {"kind": "momentum", "mu": self.mu}


@dataclass(frozen=True)
class DiverseInput:
    """With probability p, randomly downscale to r in [resize_lo, H] and
    zero-pad back at a random offset before the forward pass."""

    p: float = 0.5
    resize_lo: int | None = None  # default: round(0.9 * H)

    def degenerate(self):
        return self.p <= 0.0

    def config(self):
        return {"kind": "diverse-input", "p": self.p, "resize_lo": self.resize_lo}


@dataclass(frozen=True)
class TranslationInvariant:
    """Smooth the gradient with a normalized Gaussian kernel."""

    kernel_size: int = 7
    sigma: float = 3.0

    def degenerate(self):
        return self.kernel_size <= 1

    def config(self):
        return {
            "kind": "translation-invariant",
            "kernel_size": self.kernel_size,
            "sigma": self.sigma,
        }


@dataclass(frozen=True)
class ScaleInvariant:
    """Average gradients over the scale set {1, 1/2, ..., 1/2^(m-1)}."""

    num_scales: int = 5

    def degenerate(self):
        return self.num_scales <= 1

    def config(self):
        return {"kind": "scale-invariant", "num_scales": self.num_scales}


@dataclass(frozen=True)
class Admix:
    """Mix a small portion of other images in: copies x + eta * x' for
    num_mixes pool draws.  No gradient flows into the pool images."""

    eta: float = 0.2
    num_mixes: int = 3
    pool: np.ndarray | None = field(default=None, compare=False)

    def degenerate(self):
        return self.eta == 0.0 or self.num_mixes <= 0

    def config(self):
        pool_digest = None
        if self.pool is not None:
            pool_digest = hashlib.sha256(
                np.ascontiguousarray(self.pool, dtype=np.float32).tobytes()
            ).hexdigest()[:12]
        return {
            "kind": "admix",
            "eta": self.eta,
            "num_mixes": self.num_mixes,
            "pool": pool_digest,
        }


_TRANSFORM_KINDS = {
    "momentum": Momentum,
    "diverse-input": DiverseInput,
    "translation-invariant": TranslationInvariant,
    "scale-invariant": ScaleInvariant,
    "admix": Admix,
}


def transform_from_config(cfg):
    kind = cfg.get("kind")
    if kind not in _TRANSFORM_KINDS:
        raise ValueError(f"unknown transform kind {kind!r}")
    params = {k: v for k, v in cfg.items() if k != "kind"}
    if kind == "admix":
        params.pop("pool", None)  # pools are attached at runtime, not parsed
    return _TRANSFORM_KINDS[kind](**params)


# --- the plan ---------------------------------------------------------------


@dataclass(frozen=True)
class AttackPlan:
    epsilon: float = DEFAULT_EPSILON
    steps: int = DEFAULT_STEPS
    step_size: float = DEFAULT_STEP_SIZE
    transforms: tuple = ()
    sources: tuple = ()  # ((EmbedderModel, weight), ...)
    dct_low_cutoff: int | None = None  # keep bands < cutoff of the perturbation
    jpeg_wrapper_quality: int | None = None  # differentiable-JPEG gradient wrapper
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.epsilon <= 1.0):
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.dct_low_cutoff is not None and self.dct_low_cutoff < 1:
            raise BandOutOfRange(f"cutoff {self.dct_low_cutoff} must be >= 1")
        if self.jpeg_wrapper_quality is not None:
            JpegConfig(quality=self.jpeg_wrapper_quality, differentiable=True)

    def normalized(self):
        """Drop degenerate transforms and zero-weight sources."""
        transforms = tuple(t for t in self.transforms if not t.degenerate())
        sources = tuple((m, w) for (m, w) in self.sources if w != 0.0)
        return replace(self, transforms=transforms, sources=sources)

    def with_sources(self, sources):
        return replace(self, sources=tuple(sources))

    def with_admix_pool(self, pool):
        """Attach a mixing pool to every admix transform in the plan."""
        new = tuple(
            replace(t, pool=np.asarray(pool, dtype=np.float32))
            if isinstance(t, Admix)
            else t
            for t in self.transforms
        )
        return replace(self, transforms=new)

    def config(self):
        return {
            "epsilon": self.epsilon,
            "steps": self.steps,
            "step_size": self.step_size,
            "transforms": [t.config() for t in self.transforms],
            "sources": [[m.model_id(), w] for (m, w) in self.sources],
            "dct_low_cutoff": self.dct_low_cutoff,
            "jpeg_wrapper_quality": self.jpeg_wrapper_quality,
            "seed": self.seed,
        }

    def digest(self):
        blob = json.dumps(self.config(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def plan_from_config(cfg, sources=()):
    """Build an AttackPlan from a JSON-style dict.

    Budget keys may be given in 0-255 pixel units (epsilon_255,
    step_size_255) or directly in [0, 1] (epsilon, step_size).
    """
    cfg = dict(cfg)
    epsilon = cfg.pop("epsilon_255", None)
    epsilon = float(epsilon) / 255.0 if epsilon is not None else cfg.pop("epsilon", DEFAULT_EPSILON)
    step = cfg.pop("step_size_255", None)
    step = float(step) / 255.0 if step is not None else cfg.pop("step_size", DEFAULT_STEP_SIZE)
    transforms = tuple(transform_from_config(t) for t in cfg.pop("transforms", []))
    cfg.pop("sources", None)  # models cannot be parsed from JSON
    plan = AttackPlan(
        epsilon=float(epsilon),
        steps=int(cfg.pop("steps", DEFAULT_STEPS)),
        step_size=float(step),
        transforms=transforms,
        sources=tuple(sources),
        dct_low_cutoff=cfg.pop("dct_low_cutoff", None),
        jpeg_wrapper_quality=cfg.pop("jpeg_wrapper_quality", None),
        seed=int(cfg.pop("seed", 0)),
    )
    if cfg:
        raise ValueError(f"unknown plan keys: {sorted(cfg)}")
    return plan


# Named transform stacks.  FGSM is the single-step primitive (full-budget
# step); the others follow the usual compositions from the transfer-attack
# literature: ADMIX composes mixing with the scale set and momentum.
_NAMED_STACKS = {
    "FGSM": (),
    "MI": (Momentum(),),
    "TI": (TranslationInvariant(), Momentum()),
    "SI": (ScaleInvariant(), Momentum()),
    "DI-MI": (DiverseInput(), Momentum()),
    "ADMIX": (Admix(), ScaleInvariant(), Momentum()),
    "ADMIX-DI-MI": (Admix(), ScaleInvariant(), DiverseInput(), Momentum()),
}


def attack_plan_from_name(name, sources=(), **overrides):
    """AttackPlan for a named stack (FGSM, MI, TI, SI, DI-MI, ADMIX,
    ADMIX-DI-MI) with the default budgets used throughout the bench."""
    key = name.upper()
    if key not in _NAMED_STACKS:
        raise KeyError(f"unknown attack {name!r}; have {sorted(_NAMED_STACKS)}")
    params = {"transforms": _NAMED_STACKS[key], "sources": tuple(sources)}
    if key == "FGSM":
        params["steps"] = 1
        params["step_size"] = overrides.get("epsilon", DEFAULT_EPSILON)
    params.update(overrides)
    return AttackPlan(**params)


@dataclass
class PerturbationResult:
    """One attacked pair: the perturbation, the image it produces, and a
    digest of the plan that made it."""

    delta: np.ndarray
    adv_image: np.ndarray
    plan_digest: str
    per_step_loss: list
    sources_meta: tuple = ()


# --- internals --------------------------------------------------------------


def _pair_generator(seed, pair_id):
    ss = np.random.SeedSequence([int(seed), int(pair_id)])
    state = int(ss.generate_state(1, np.uint64)[0])
    gen = torch.Generator()
    gen.manual_seed(state & ((1 << 63) - 1))
    return gen


def _normalize_sources(sources):
    sources = tuple((m, float(w)) for (m, w) in sources if w != 0.0)
    if not sources:
        raise ValueError("attack needs at least one source model with nonzero weight")
    size = sources[0][0].input_size
    dtype = sources[0][0].dtype
    for m, _ in sources:
        if m.input_size != size or m.dtype != dtype:
            raise ValueError("ensemble sources must share input size and dtype")
    return sources


def _gaussian_kernel(size, sigma, dtype):
    half = (size - 1) / 2.0
    pos = torch.arange(size, dtype=dtype) - half
    g1 = torch.exp(-(pos ** 2) / (2.0 * sigma ** 2))
    k = torch.outer(g1, g1)
    return k / k.sum()


def _smooth_gradient(g, kernel_size, sigma):
    k = _gaussian_kernel(kernel_size, sigma, g.dtype)
    c = g.shape[1]
    weight = k.expand(c, 1, kernel_size, kernel_size)
    return F.conv2d(g, weight, padding=kernel_size // 2, groups=c)


def _diverse_copy(x_chw, p, resize_lo, gen):
    if torch.rand((), generator=gen).item() >= p:
        return x_chw
    h = x_chw.shape[-1]
    lo = int(round(0.9 * h)) if resize_lo is None else int(resize_lo)
    lo = max(1, min(lo, h))
    r = int(torch.randint(lo, h + 1, (1,), generator=gen).item())
    if r == h:
        return x_chw
    top = int(torch.randint(0, h - r + 1, (1,), generator=gen).item())
    left = int(torch.randint(0, h - r + 1, (1,), generator=gen).item())
    xr = F.interpolate(
        x_chw.unsqueeze(0), size=(r, r), mode="bilinear", align_corners=False
    ).squeeze(0)
    return F.pad(xr, (left, h - r - left, top, h - r - top))


def _shell_zero_mask(h, cutoff):
    idx = np.arange(h)
    return (np.maximum.outer(idx, idx) < cutoff - 1).astype(np.float64)


def _dct_low_bchw(delta, cutoff):
    """Zero shells >= cutoff of a (B, C, H, W) float64 array."""
    h = delta.shape[-1]
    if cutoff > h:
        return delta
    keep = _shell_zero_mask(h, cutoff)
    coef = scipy.fft.dctn(delta, type=2, norm="ortho", axes=(-2, -1))
    return scipy.fft.idctn(coef * keep, type=2, norm="ortho", axes=(-2, -1))


def dct_low_constrain(delta, cutoff, epsilon=None):
    """Keep only frequency bands below `cutoff` of a perturbation.

    ``delta`` is (H, W) or (H, W, C); bands >= cutoff (shell-max
    convention, 1-based) are zeroed per channel, the result is inverse
    transformed, and — when ``epsilon`` is given — re-projected onto the
    L-inf ball, since band-limiting can slightly exceed the budget.
    cutoff > H leaves the perturbation unchanged (pre-projection).
    """
    delta = np.asarray(delta, dtype=np.float64)
    squeeze2d = delta.ndim == 2
    if squeeze2d:
        delta = delta[..., None]
    if delta.ndim != 3 or delta.shape[0] != delta.shape[1]:
        raise BandOutOfRange
    h = delta.shape[0]
    if not (isinstance(cutoff, (int, np.integer)) and cutoff >= 1):
        raise BandOutOfRange(f"cutoff must be a positive integer, got {cutoff!r}")
    out = _dct_low_bchw(np.moveaxis(delta, -1, 0)[None], int(cutoff))[0]
    out = np.moveaxis(out, 0, -1)
    if epsilon is not None:
        out = np.clip(out, -epsilon, epsilon)
    if squeeze2d:
        out = out[..., 0]
    return out


def _ensemble_loss(sources, targets, inp):
    """Per-sample weighted distance loss: sum_k w_k * ||f_k(inp) - e_k||."""
    loss = None
    for (model, weight), target in zip(sources, targets):
        emb = model.module(inp)
        d = torch.linalg.vector_norm(emb - target, dim=1)
        loss = weight * d if loss is None else loss + weight * d
    return loss


def _build_copies(xs, transforms, gens):
    """Apply admix / scale / diverse-input in canonical order.

    Returns the list of transformed views of ``xs`` that the ensemble
    loss is averaged over.  Consumes per-sample RNG in a fixed order so
    results are independent of batch composition.
    """
    admix = next((t for t in transforms if isinstance(t, Admix)), None)
    scale = next((t for t in transforms if isinstance(t, ScaleInvariant)), None)
    diverse = next((t for t in transforms if isinstance(t, DiverseInput)), None)

    bases = [xs]
    if admix is not None:
        if admix.pool is None or len(admix.pool) == 0:
            raise EmptyAdmixPool("admix transform has no mixing pool attached")
        pool = torch.from_numpy(
            np.ascontiguousarray(admix.pool, dtype=np.float32)
        ).permute(0, 3, 1, 2).to(xs.dtype)
        per_sample_idx = [
            torch.randint(0, len(pool), (admix.num_mixes,), generator=g) for g in gens
        ]
        bases = []
        for j in range(admix.num_mixes):
            mixin = torch.stack([pool[idx[j]] for idx in per_sample_idx])
            bases.append(xs + admix.eta * mixin.detach())

    scales = [0.5 ** i for i in range(scale.num_scales)] if scale else [1.0]
    copies = []
    for base in bases:
        for s in scales:
            copy = base if s == 1.0 else base * s
            if diverse is not None:
                copy = torch.stack(
                    [
                        _diverse_copy(copy[i], diverse.p, diverse.resize_lo, gens[i])
                        for i in range(copy.shape[0])
                    ]
                )
            copies.append(copy)
    return copies


def iterative_attack(plan, probe, enrolled, pair_ids=None):
    """Run the full iterative attack described by ``plan``.

    ``probe``/``enrolled`` are (H, W, C) arrays or (N, H, W, C) batches.
    Returns one PerturbationResult per pair (a bare result for a single
    pair).  Guarantees: |delta|_inf <= epsilon, adv in [0, 1], and
    bit-identical output for identical (plan, inputs, pair_ids).
    """
    plan = plan.normalized()
    sources = _normalize_sources(plan.sources)
    model0 = sources[0][0]
    xb, single = model0.to_bchw(probe)
    xe, _ = model0.to_bchw(enrolled)
    n = xb.shape[0]
    if pair_ids is None:
        pair_ids = range(n)
    pair_ids = [int(p) for p in pair_ids]
    if len(pair_ids) != n:
        raise ValueError(f"{n} probes but {len(pair_ids)} pair ids")
    gens = [_pair_generator(plan.seed, pid) for pid in pair_ids]

    with torch.no_grad():
        targets = [m.embed_torch(xe).detach() for m, _ in sources]

    momentum = next((t for t in plan.transforms if isinstance(t, Momentum)), None)
    ti = next((t for t in plan.transforms if isinstance(t, TranslationInvariant)), None)
    wrapper_cfg = None
    wrapper_tables = None
    if plan.jpeg_wrapper_quality is not None:
        wrapper_cfg = JpegConfig(quality=plan.jpeg_wrapper_quality, differentiable=True)
        wrapper_tables = quant_tables_for_quality(plan.jpeg_wrapper_quality)

    eps = plan.epsilon
    alpha = plan.step_size
    x_t = xb.clone()
    g_accum = torch.zeros_like(xb)
    step_losses = []

    for _ in range(plan.steps):
        xs = x_t.detach().requires_grad_(True)
        copies = _build_copies(xs, plan.transforms, gens)
        loss_vec = None
        for copy in copies:
            inp = (
                differentiable_jpeg_torch(copy, wrapper_cfg, wrapper_tables)
                if wrapper_cfg is not None
                else copy
            )
            contrib = _ensemble_loss(sources, targets, inp)
            loss_vec = contrib if loss_vec is None else loss_vec + contrib
        loss_vec = loss_vec / len(copies)
        (g,) = torch.autograd.grad(loss_vec.sum(), xs)
        if not torch.isfinite(g).all():
            raise NonFiniteGradient("attack gradient contains NaN/Inf")
        if ti is not None:
            g = _smooth_gradient(g, ti.kernel_size, ti.sigma)
        if momentum is not None:
            norm = g.abs().mean(dim=(1, 2, 3), keepdim=True).clamp_min(1e-12)
            g_accum = momentum.mu * g_accum + g / norm
            g = g_accum
        step_losses.append(loss_vec.detach())

        x_t = xs.detach() + alpha * torch.sign(g)
        delta = x_t - xb
        if plan.dct_low_cutoff is not None:
            filtered = _dct_low_bchw(delta.numpy().astype(np.float64), plan.dct_low_cutoff)
            delta = torch.from_numpy(filtered).to(delta.dtype)
        delta = delta.clamp(-eps, eps)
        x_t = (xb + delta).clamp(0.0, 1.0)

    # Final projection in float64: the iteration runs in model precision,
    # but the returned images must satisfy the budget exactly under exact
    # arithmetic, not merely up to a single-precision rounding ulp.
    xb64 = xb.double()
    delta64 = (x_t.double() - xb64).clamp(-eps, eps)
    adv64 = (xb64 + delta64).clamp(0.0, 1.0)
    delta64 = adv64 - xb64
    delta_np = delta64.permute(0, 2, 3, 1).numpy()
    adv_np = adv64.permute(0, 2, 3, 1).numpy()
    losses = torch.stack(step_losses, dim=1).numpy()  # (N, T)
    digest = plan.digest()
    meta = tuple(
        {"model_id": m.model_id(), "provenance": m.provenance.kind, "weight": w}
        for m, w in sources
    )
    results = [
        PerturbationResult(
            delta=delta_np[i],
            adv_image=adv_np[i],
            plan_digest=digest,
            per_step_loss=[float(v) for v in losses[i]],
            sources_meta=meta,
        )
        for i in range(n)
    ]
    return results[0] if single else results


def fgsm(plan, probe, enrolled, pair_ids=None):
    """Single-step sign attack: delta = epsilon * sign(gradient).

    ``plan`` must have steps == 1 and exactly one source; transform
    stacks do not apply to the single-step primitive (the gradient
    wrapper and frequency constraint do).
    """
    plan = plan.normalized()
    if plan.steps != 1:
        raise ValueError("fgsm needs a single-step plan")
    if len(plan.sources) != 1:
        raise ValueError("fgsm takes exactly one source model")
    stripped = replace(plan, transforms=(), step_size=plan.epsilon)
    return iterative_attack(stripped, probe, enrolled, pair_ids=pair_ids)


def ensemble_gradient(sources, probe, enrolled):
    """Gradient of the weighted multi-source loss sum_k w_k * d_k at probe.

    Computed in a single reverse pass over the summed loss — identical
    (by linearity) to the weighted sum of per-source gradients, and
    exactly what the iterative engine uses internally.
    """
    sources = _normalize_sources(sources)
    model0 = sources[0][0]
    x, single = model0.to_bchw(probe)
    xe, _ = model0.to_bchw(enrolled)
    with torch.no_grad():
        targets = [m.embed_torch(xe).detach() for m, _ in sources]
    x = x.requires_grad_(True)
    loss = _ensemble_loss(sources, targets, x).sum()
    (g,) = torch.autograd.grad(loss, x)
    if not torch.isfinite(g).all():
        raise NonFiniteGradient("ensemble gradient contains NaN/Inf")
    out = g.permute(0, 2, 3, 1).numpy()
    return out[0] if single else out


def lfap(plan, robust_source, probe, enrolled, pair_ids=None):
    """Iterative attack sourced from a single robust embedder.

    Emits NotRobustSourceWarning (and proceeds) if the source was not
    adversarially trained — the attack is then just a standard-source
    iterative attack and loses its transfer advantage.
    """
    if not robust_source.provenance.is_robust:
        warnings.warn(
            "robust-source attack given a standard-trained model",
            NotRobustSourceWarning,
        )
    return iterative_attack(
        plan.with_sources([(robust_source, 1.0)]), probe, enrolled, pair_ids=pair_ids
    )


def lmfap(plan, strong_source, light_source, probe, enrolled,
          lam=DEFAULT_ENSEMBLE_WEIGHT, pair_ids=None):
    """Two-source ensemble attack: loss(strong) + lam * loss(light).

    The strong source is heavily robust (low-frequency bias), the light
    one mildly robust (keeps mid-frequency sensitivity); lam balances
    them.  lam = 0 reduces bitwise to the single-source robust attack.
    """
    if not strong_source.provenance.is_robust:
        warnings.warn(
            "ensemble attack given a standard-trained strong source",
            NotRobustSourceWarning,
        )
    sources = [(strong_source, 1.0), (light_source, float(lam))]
    return iterative_attack(plan.with_sources(sources), probe, enrolled, pair_ids=pair_ids)


def diffjpeg_wrapped_gradient(model, quality, probe, enrolled):
    """Gradient of the pair loss through the differentiable JPEG codec.

    The probe is compressed (differentiably, at ``quality``) before the
    embedder; the enrolled embedding is computed on the clean image.
    """
    cfg = JpegConfig(quality=quality, differentiable=True)
    x, single = model.to_bchw(probe)
    xe, _ = model.to_bchw(enrolled)
    with torch.no_grad():
        target = model.embed_torch(xe).detach()
    x = x.requires_grad_(True)
    compressed = differentiable_jpeg_torch(x, cfg)
    emb = model.embed_torch(compressed)
    loss = torch.linalg.vector_norm(emb - target, dim=1).sum()
    (g,) = torch.autograd.grad(loss, x)
    if not torch.isfinite(g).all():
        raise NonFiniteGradient("wrapped gradient contains NaN/Inf")
    out = g.permute(0, 2, 3, 1).numpy()
    return out[0] if single else out
