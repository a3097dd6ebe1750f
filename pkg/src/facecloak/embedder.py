"""Face embedders, verification ops, and supervisory training heads.

An embedder maps a (H, W, C) image in [0, 1] to an l-dimensional float
vector.  Verification compares the raw (not length-normalized) Euclidean
distance between two embeddings against a calibrated threshold: "same"
iff d < tau, strictly.

The attack loss ascended by every attack in this package is exactly that
distance for a positive pair — pushing the probe's embedding away from
the enrolled one.  Its input gradient is exact reverse-mode autodiff; at
d = 0 the subgradient is defined as 0 (torch's vector_norm convention).

Supervisory heads exist only to train embedders; they are discarded
afterwards and never participate in verification.
"""

from __future__ import annotations

import copy
import hashlib
import io
import json
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import LabelOutOfRange, NonFiniteGradient, ShapeMismatch
from .imaging import DEFAULT_SIZE

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Provenance:
    """How the model was trained. ``radius`` is in 0-255 pixel units."""

    kind: str = "standard"  # "standard" | "robust"
    radius: float = 0.0
    epochs: int = 0

    def __post_init__(self):
        if self.kind not in ("standard", "robust"):
            raise ValueError(f"unknown provenance kind {self.kind!r}")
        if self.kind == "robust" and self.radius <= 0:
            raise ValueError("robust provenance needs a positive radius")

    @property
    def is_robust(self):
        return self.kind == "robust"


@dataclass(frozen=True)
class VerificationRule:
    """Decision rule: verify "same" iff distance < threshold (strict)."""

    threshold: float

    def __post_init__(self):
        if not np.isfinite(self.threshold) or self.threshold < 0:
            raise ValueError(f"threshold must be finite and >= 0, got {self.threshold}")


class _Conv4(nn.Module):
    """4x (3x3 conv stride 2 -> BN -> ReLU) -> GAP -> linear embedding."""

    def __init__(self, channels, embed_dim, widths=(16, 32, 64, 128)):
        super().__init__()
        layers = []
        c_in = channels
        for w in widths:
            layers += [
                nn.Conv2d(c_in, w, kernel_size=3, stride=2, padding=1, bias=False),
                nn.BatchNorm2d(w),
                nn.ReLU(inplace=True),
            ]
            c_in = w
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(c_in, embed_dim)

    def forward(self, x):
        x = self.pool(self.features(x)).flatten(1)
        return self.fc(x)


class _ConvPool(nn.Module):
    """Stride-1 conv blocks with average pooling — a different inductive
    bias from the strided stack, for cross-architecture transfer targets."""

    def __init__(self, channels, embed_dim, widths=(12, 24, 48, 96)):
        super().__init__()
        layers = []
        c_in = channels
        for w in widths:
            layers += [
                nn.Conv2d(c_in, w, kernel_size=3, stride=1, padding=1, bias=False),
                nn.BatchNorm2d(w),
                nn.ReLU(inplace=True),
                nn.AvgPool2d(2),
            ]
            c_in = w
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(c_in, embed_dim)

    def forward(self, x):
        x = self.pool(self.features(x)).flatten(1)
        return self.fc(x)


class _Tiny(nn.Module):
    """2-layer MLP embedder for oracle tests and fast fuzzing."""

    def __init__(self, in_features, hidden, embed_dim):
        super().__init__()
        self.fc1 = nn.Linear(in_features, hidden)
        self.fc2 = nn.Linear(hidden, embed_dim)

    def forward(self, x):
        return self.fc2(F.relu(self.fc1(x.flatten(1))))


ARCHITECTURES = {
    "conv4": lambda size, ch, dim: _Conv4(ch, dim),
    "conv4_slim": lambda size, ch, dim: _Conv4(ch, dim, widths=(12, 24, 48, 96)),
    "conv4_pool": lambda size, ch, dim: _ConvPool(ch, dim),
    "tiny": lambda size, ch, dim: _Tiny(size * size * ch, 2 * dim, dim),
}


class EmbedderModel:
    """A trained (or freshly initialized) embedder plus its metadata."""

    def __init__(
        self,
        module,
        architecture_id,
        input_size,
        channels,
        embed_dim,
        provenance=Provenance(),
        train_digest=None,
    ):
        self.module = module
        self.architecture_id = architecture_id
        self.input_size = input_size
        self.channels = channels
        self.embed_dim = embed_dim
        self.provenance = provenance
        self.train_digest = train_digest

    @classmethod
    def create(
        cls,
        architecture_id="conv4",
        input_size=DEFAULT_SIZE,
        channels=3,
        embed_dim=128,
        provenance=Provenance(),
        seed=None,
        dtype=torch.float32,
    ):
        if architecture_id not in ARCHITECTURES:
            raise KeyError(
                f"unknown architecture {architecture_id!r}; have {sorted(ARCHITECTURES)}"
            )
        if seed is not None:
            torch.manual_seed(seed)
        module = ARCHITECTURES[architecture_id](input_size, channels, embed_dim)
        module.to(dtype)
        module.eval()
        return cls(module, architecture_id, input_size, channels, embed_dim, provenance)

    @property
    def dtype(self):
        return next(self.module.parameters()).dtype

    def astype(self, dtype):
        clone = copy.deepcopy(self.module).to(dtype)
        return EmbedderModel(
            clone,
            self.architecture_id,
            self.input_size,
            self.channels,
            self.embed_dim,
            self.provenance,
            self.train_digest,
        )

    def param_digest(self):
        h = hashlib.sha256()
        for k, v in sorted(self.module.state_dict().items()):
            h.update(k.encode())
            h.update(v.detach().cpu().numpy().tobytes())
        return h.hexdigest()[:8]

    def model_id(self):
        p = self.provenance
        tag = "std" if p.kind == "standard" else f"rob{p.radius:g}"
        return f"{self.architecture_id}-{tag}-{self.param_digest()}"

    def meta(self):
        return {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "architecture_id": self.architecture_id,
            "input_size": self.input_size,
            "channels": self.channels,
            "embed_dim": self.embed_dim,
            "provenance": asdict(self.provenance),
            "train_digest": self.train_digest,
        }

    def save(self, path):
        arrays = {}
        for k, v in self.module.state_dict().items():
            arrays[k] = v.detach().cpu().numpy().astype("<f4")
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=json.dumps(self.meta(), sort_keys=True), **arrays)

    @classmethod
    def load(cls, path):
        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["__meta__"][()]))
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(
                f"checkpoint format {meta.get('format_version')} not supported"
            )
        prov = Provenance(**meta["provenance"])
        model = cls.create(
            architecture_id=meta["architecture_id"],
            input_size=meta["input_size"],
            channels=meta["channels"],
            embed_dim=meta["embed_dim"],
            provenance=prov,
            dtype=torch.float32,
        )
        model.train_digest = meta.get("train_digest")
        state = {}
        reference = model.module.state_dict()
        for k in data.files:
            if k == "__meta__":
                continue
            ref = reference[k]
            state[k] = torch.from_numpy(np.ascontiguousarray(data[k])).to(ref.dtype)
        model.module.load_state_dict(state)
        model.module.eval()
        return model

    # --- forward helpers ------------------------------------------------

    def to_bchw(self, img):
        """Validate an image (or batch) and convert to a model-dtype tensor."""
        arr = np.asarray(img)
        single = arr.ndim == 3
        if single:
            arr = arr[None]
        if arr.ndim != 4:
            raise ShapeMismatch(f"expected (H, W, C) or (N, H, W, C), got {arr.shape}")
        n, h, w, c = arr.shape
        if (h, w, c) != (self.input_size, self.input_size, self.channels):
            raise ShapeMismatch(
                f"model expects {self.input_size}x{self.input_size}x{self.channels}, "
                f"got {h}x{w}x{c}"
            )
        np_dtype = np.float64 if self.dtype == torch.float64 else np.float32
        t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np_dtype))
        return t.permute(0, 3, 1, 2), single

    def embed_torch(self, x):
        """Inference-mode forward on an already-prepared (B, C, H, W) tensor."""
        was_training = self.module.training
        self.module.eval()
        try:
            return self.module(x)
        finally:
            if was_training:
                self.module.train()


def embed(model, img):
    """Embed one image or a batch; deterministic, inference statistics."""
    t, single = model.to_bchw(img)
    with torch.no_grad():
        e = model.embed_torch(t)
    out = e.numpy()
    return out[0] if single else out


def pair_distance(model, probe, enrolled):
    """Raw Euclidean distance between the two embeddings (never negative)."""
    e1 = embed(model, probe).astype(np.float64)
    e2 = embed(model, enrolled).astype(np.float64)
    return float(np.linalg.norm(e1 - e2))


def verify(model, rule, probe, enrolled):
    """Decide "same" iff pair_distance < rule.threshold (strict)."""
    return "same" if pair_distance(model, probe, enrolled) < rule.threshold else "different"


def attack_loss(model, probe, enrolled):
    """The quantity attacks ascend: embedding distance of the pair."""
    return pair_distance(model, probe, enrolled)


def input_gradient(model, probe, enrolled):
    """d attack_loss / d probe, exact reverse-mode; same shape as probe.

    The enrolled embedding is treated as a constant.  At zero distance
    the subgradient is 0.  Raises NonFiniteGradient on NaN/Inf.
    """
    x, single = model.to_bchw(probe)
    x = x.requires_grad_(True)
    xe, _ = model.to_bchw(enrolled)
    with torch.no_grad():
        target = model.embed_torch(xe)
    emb = model.embed_torch(x)
    d = torch.linalg.vector_norm(emb - target, dim=1).sum()
    (g,) = torch.autograd.grad(d, x)
    if not torch.isfinite(g).all():
        raise NonFiniteGradient("input gradient contains NaN/Inf")
    out = g.permute(0, 2, 3, 1).numpy()
    return out[0] if single else out


class SupervisoryHead(nn.Module):
    """Classification head used only during embedder training.

    Variants:
      * "plain-softmax": ordinary linear logits.
      * "additive-angular-margin": normalizes embeddings and class
        weights internally (the embedder itself stays unnormalized),
        adds angular margin m to the target class angle, scales by s:
        logit_y = s * cos(theta_y + m), others s * cos(theta_j).
    """

    VARIANTS = ("plain-softmax", "additive-angular-margin")

    def __init__(
        self,
        embed_dim,
        num_classes,
        variant="additive-angular-margin",
        margin=0.5,
        scale=64.0,
    ):
        super().__init__()
        if variant not in self.VARIANTS:
            raise ValueError(f"unknown head variant {variant!r}")
        if num_classes < 2:
            raise ValueError("need at least 2 classes")
        self.variant = variant
        self.num_classes = num_classes
        self.margin = margin
        self.scale = scale
        if variant == "plain-softmax":
            self.fc = nn.Linear(embed_dim, num_classes)
        else:
            self.weight = nn.Parameter(torch.empty(num_classes, embed_dim))
            nn.init.xavier_uniform_(self.weight)

    def forward(self, embeddings, labels=None):
        if self.variant == "plain-softmax":
            return self.fc(embeddings)
        cosine = F.linear(F.normalize(embeddings), F.normalize(self.weight))
        if labels is None or self.margin == 0.0:
            logits = cosine
        else:
            eps = 1e-7
            theta = torch.arccos(cosine.clamp(-1.0 + eps, 1.0 - eps))
            onehot = F.one_hot(labels, num_classes=self.num_classes).to(cosine.dtype)
            logits = torch.where(onehot.bool(), torch.cos(theta + self.margin), cosine)
        return logits * self.scale


def head_forward(head, embedding, label):
    """Logits of one embedding under the head's margin rule for `label`."""
    if not (0 <= int(label) < head.num_classes):
        raise LabelOutOfRange(f"label {label} outside [0, {head.num_classes})")
    e = np.asarray(embedding)
    if e.ndim != 1:
        raise ShapeMismatch(f"expected a flat embedding, got shape {e.shape}")
    dtype = next(head.parameters()).dtype
    t = torch.from_numpy(np.ascontiguousarray(e)).to(dtype).unsqueeze(0)
    y = torch.tensor([int(label)])
    with torch.no_grad():
        logits = head(t, y)
    return logits.squeeze(0).numpy()
