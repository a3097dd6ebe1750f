"""Embedder training: standard classification and min-max robust training.

Robust training solves min_theta E max_{|delta|_inf <= r} J(x + delta, y)
with a PGD inner maximization: uniform random start inside the ball,
sign-gradient ascent steps of r/3 (5 steps by default), projection back
to the ball and to [0, 1] after every step.  Batch-norm statistics are
frozen while the inner maximization runs and update only on the outer
step.  Radius 0 reduces to standard training on the exact same code
path, so the two trajectories are identical for the same seed.

All radii and step sizes at this boundary are in 0-255 pixel units.

Full-scale recipes are exposed as config constructors: the strongly
robust embedder (radius 4, 50 epochs, lr drops at 30/45) and the lightly
robust one (radius 1, 20 epochs, drop at 10).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, replace

import numpy as np
import torch
import torch.nn.functional as F

from .embedder import EmbedderModel, Provenance, SupervisoryHead
from .errors import DatasetTooSmall, NonFiniteGradient, NonFiniteLoss
from .imaging import DEFAULT_SIZE, load_image


@dataclass(frozen=True)
class TrainConfig:
    radius: float = 4.0  # 0-255 units; 0 = standard training
    epochs: int = 50
    inner_steps: int = 5
    inner_step_size: float | None = None  # 0-255 units; default radius / 3
    lr: float = 0.1
    lr_drop_epochs: tuple = (30, 45)  # 1-based epochs at which lr /= 10
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64
    hflip: bool = True
    noise_aug: float = 0.0  # 0-255 units; Gaussian pixel noise added per batch
    head_variant: str = "additive-angular-margin"
    head_margin: float = 0.5
    head_scale: float = 64.0
    architecture_id: str = "conv4"
    embed_dim: int = 128
    input_size: int = DEFAULT_SIZE
    channels: int = 3
    dataset_id: str = ""
    seed: int = 0

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if any(d < 1 or d > self.epochs for d in self.lr_drop_epochs):
            raise ValueError("lr drop epochs must lie within [1, epochs]")

    def resolved_inner_step(self):
        if self.inner_step_size is not None:
            return self.inner_step_size
        return self.radius / 3.0

    def digest(self):
        payload = asdict(self)
        payload["lr_drop_epochs"] = list(self.lr_drop_epochs)
        blob = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def prime_config(**overrides):
    """Strongly robust recipe: radius 4, 50 epochs, lr drops at 30 and 45."""
    return replace(TrainConfig(), **overrides)


def subprime_config(**overrides):
    """Lightly robust recipe: radius 1, 20 epochs, lr drop at 10."""
    base = TrainConfig(radius=1.0, epochs=20, lr_drop_epochs=(10,))
    return replace(base, **overrides)


@dataclass
class IdentityDataset:
    """Images with integer subject labels, ready for classification."""

    images: np.ndarray  # (N, H, W, C) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    class_names: list

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")

    def __len__(self):
        return len(self.images)

    @property
    def num_classes(self):
        return len(self.class_names)

    @classmethod
    def from_folder(cls, root, size=DEFAULT_SIZE):
        """Load <root>/<subject>/<image> trees; one class per subdirectory."""
        subjects = sorted(
            d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))
        )
        images, labels = [], []
        for idx, subject in enumerate(subjects):
            folder = os.path.join(root, subject)
            for name in sorted(os.listdir(folder)):
                if not name.lower().endswith((".png", ".jpg", ".jpeg")):
                    continue
                images.append(load_image(os.path.join(folder, name), size=size))
                labels.append(idx)
        if not images:
            raise DatasetTooSmall(f"no images under {root}")
        return cls(np.stack(images), np.array(labels), subjects)


def _inner_maximize(module, head, xb, yb, radius, steps, step_size, generator):
    """PGD ascent on the classification loss inside the L-inf ball.

    Expects unit-interval tensors and unit-interval radius/step.  The
    module/head are switched to eval() for the duration (BN statistics
    frozen; gradients still flow) and restored afterwards.
    """
    mod_training = module.training
    head_training = head.training
    module.eval()
    head.eval()
    try:
        start = torch.empty_like(xb).uniform_(-1.0, 1.0, generator=generator) * radius
        x_adv = (xb + start).clamp(0.0, 1.0)
        for _ in range(steps):
            x_adv = x_adv.detach().requires_grad_(True)
            logits = head(module(x_adv), yb)
            loss = F.cross_entropy(logits, yb)
            (g,) = torch.autograd.grad(loss, x_adv)
            if not torch.isfinite(g).all():
                raise NonFiniteGradient("inner maximization gradient is non-finite")
            x_adv = x_adv.detach() + step_size * torch.sign(g)
            x_adv = xb + (x_adv - xb).clamp(-radius, radius)
            x_adv = x_adv.clamp(0.0, 1.0)
        return x_adv.detach()
    finally:
        module.train(mod_training)
        head.train(head_training)


def pgd_inner_max(model, head, x, y, radius, steps=5, step_size=None, seed=0):
    """Public inner-maximization op on numpy images.

    ``radius`` and ``step_size`` are in 0-255 pixel units (step defaults
    to radius / 3).  radius = 0 returns the input unchanged.  The output
    stays within the ball around x and inside [0, 1].
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    xb, single = model.to_bchw(x)
    if radius == 0:
        out = xb.permute(0, 2, 3, 1).numpy()
        return out[0] if single else out
    yb = torch.as_tensor(np.atleast_1d(np.asarray(y, dtype=np.int64)))
    step = (radius / 3.0 if step_size is None else step_size) / 255.0
    gen = torch.Generator()
    gen.manual_seed(int(seed))
    adv = _inner_maximize(
        model.module, head, xb, yb, radius / 255.0, steps, step, gen
    )
    out = adv.permute(0, 2, 3, 1).numpy()
    return out[0] if single else out


def _lr_at_epoch(cfg, epoch_1based):
    drops = sum(1 for d in cfg.lr_drop_epochs if epoch_1based >= d)
    return cfg.lr / (10.0 ** drops)


def adversarial_train(cfg, dataset, out_path=None, log_every=0):
    """Train an embedder under the min-max objective; returns the model.

    The supervisory head is trained jointly and discarded — only the
    embedder is returned (and checkpointed when ``out_path`` is given).
    Fixed seed => bitwise-identical parameters on rerun.
    """
    if len(dataset) < 2 * dataset.num_classes:
        raise DatasetTooSmall(
            f"{len(dataset)} images for {dataset.num_classes} classes; "
            "need at least 2 per class"
        )
    torch.manual_seed(cfg.seed)
    model = EmbedderModel.create(
        architecture_id=cfg.architecture_id,
        input_size=cfg.input_size,
        channels=cfg.channels,
        embed_dim=cfg.embed_dim,
    )
    head = SupervisoryHead(
        cfg.embed_dim,
        dataset.num_classes,
        variant=cfg.head_variant,
        margin=cfg.head_margin,
        scale=cfg.head_scale,
    )
    gen = torch.Generator()
    gen.manual_seed(cfg.seed)

    images = torch.from_numpy(dataset.images).permute(0, 3, 1, 2).contiguous()
    labels = torch.from_numpy(dataset.labels)
    n = len(dataset)
    radius = cfg.radius / 255.0
    inner_step = cfg.resolved_inner_step() / 255.0

    opt = torch.optim.SGD(
        list(model.module.parameters()) + list(head.parameters()),
        lr=cfg.lr,
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
    )
    module = model.module
    module.train()
    head.train()
    for epoch in range(1, cfg.epochs + 1):
        lr = _lr_at_epoch(cfg, epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        perm = torch.randperm(n, generator=gen)
        epoch_loss = 0.0
        batches = 0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            xb = images[idx].clone()
            yb = labels[idx]
            if cfg.hflip:
                flip = torch.rand(len(idx), generator=gen) < 0.5
                if flip.any():
                    xb[flip] = torch.flip(xb[flip], dims=[-1])
            if cfg.noise_aug > 0:
                noise = torch.randn(xb.shape, generator=gen) * (cfg.noise_aug / 255.0)
                xb = (xb + noise).clamp(0.0, 1.0)
            if cfg.radius > 0:
                xb = _inner_maximize(
                    module, head, xb, yb, radius, cfg.inner_steps, inner_step, gen
                )
            logits = head(module(xb), yb)
            loss = F.cross_entropy(logits, yb)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"loss became non-finite at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach())
            batches += 1
        if log_every and epoch % log_every == 0:
            print(f"epoch {epoch:3d}  lr {lr:.4f}  loss {epoch_loss / batches:.4f}")
    module.eval()

    if cfg.radius > 0:
        model.provenance = Provenance("robust", radius=cfg.radius, epochs=cfg.epochs)
    else:
        model.provenance = Provenance("standard", radius=0.0, epochs=cfg.epochs)
    model.train_digest = cfg.digest()
    if out_path is not None:
        model.save(out_path)
    return model


def standard_train(cfg, dataset, out_path=None, log_every=0):
    """Plain classification training: the radius-0 path of the same loop."""
    return adversarial_train(replace(cfg, radius=0.0), dataset, out_path, log_every)
