"""Shared plumbing for the demo scripts: a tiny cached model zoo.

Every demo trains at most a handful of small embedders on synthetic
identities.  Checkpoints land in demos/out/checkpoints and are reused
across scripts (cache key = training-config digest), so the first demo
you run pays the training cost and the rest start instantly.
"""

import os
import time
from dataclasses import replace

import numpy as np
import torch

from facecloak import embedder, evaluation, synthetic, training

OUT_ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "out")
CKPT_DIR = os.path.join(OUT_ROOT, "checkpoints")

SIZE = 64
EMBED_DIM = 32

BASE = training.TrainConfig(
    architecture_id="conv4",
    input_size=SIZE,
    embed_dim=EMBED_DIM,
    dataset_id="demo-src",
    batch_size=32,
    epochs=24,
    lr_drop_epochs=(18,),
)


def out_dir(name):
    path = os.path.join(OUT_ROOT, name)
    os.makedirs(path, exist_ok=True)
    return path


def source_data():
    imgs, labels, names = synthetic.identity_arrays(20, 12, size=SIZE, seed=100)
    return training.IdentityDataset(imgs, labels, names)


def target_data():
    imgs, labels, names = synthetic.identity_arrays(20, 12, size=SIZE, seed=300)
    return training.IdentityDataset(imgs, labels, names)


def eval_pairs(n_pos=60, n_neg=60):
    imgs, labels, _ = synthetic.identity_arrays(8, 8, size=SIZE, seed=200)
    return synthetic.verification_pairs(imgs, labels, n_pos, n_neg, seed=5)


def train_cached(name, cfg, data):
    os.makedirs(CKPT_DIR, exist_ok=True)
    path = os.path.join(CKPT_DIR, f"{name}-{cfg.digest()}.npz")
    if os.path.exists(path):
        return embedder.EmbedderModel.load(path)
    torch.set_num_threads(os.cpu_count() or 1)
    t0 = time.time()
    model = training.adversarial_train(cfg, data)
    model.save(path)
    print(f"  [trained {name} in {time.time() - t0:.0f}s -> {path}]")
    return model


def model_zoo():
    """Standard source, strongly/lightly robust sources, two targets."""
    src = source_data()
    tgt = target_data()
    std = train_cached("std", replace(BASE, radius=0.0, seed=1), src)
    f1 = train_cached(
        "f1", replace(BASE, radius=4.0, epochs=28, lr_drop_epochs=(20,), seed=2), src
    )
    f2 = train_cached("f2", replace(BASE, radius=1.0, seed=3), src)
    tgt_cfg = replace(BASE, radius=0.0, noise_aug=4.0, dataset_id="demo-tgt")
    t1 = train_cached("target-slim", replace(tgt_cfg, architecture_id="conv4_slim", seed=11), tgt)
    t2 = train_cached("target-pool", replace(tgt_cfg, architecture_id="conv4_pool", seed=12), tgt)
    return std, f1, f2, t1, t2


def calibrated(model, probes, enrolled, labels):
    rule = evaluation.calibrate_threshold(model, probes, enrolled, labels)
    acc = evaluation.verification_accuracy(model, rule, probes, enrolled, labels)
    return rule, acc


def positives(probes, enrolled, labels):
    pos = np.array([l == "positive" for l in labels])
    return probes[pos], enrolled[pos]
