"""Shared fixtures: the desk-scale model suite used by the acceptance tests.

Training is deterministic, so models are cached on disk under
``tests/_cache`` keyed by their config digest — edits to any recipe
invalidate exactly the affected checkpoints.  Wall-clock training times
are recorded in a sidecar when training actually runs, so the training-
budget criterion checks the real cost of the recipe rather than a cache
hit.
"""

import json
import os
import time
from dataclasses import dataclass, replace

import numpy as np
import pytest
import torch

from facecloak import embedder, evaluation, synthetic, training

CACHE_DIR = os.path.join(os.path.dirname(__file__), "_cache")
TIMES_PATH = os.path.join(CACHE_DIR, "train_times.json")

# Source suite: one standard and two adversarially trained embedders that
# share architecture and data, differing in robustness radius.
_SRC_BASE = training.TrainConfig(
    architecture_id="conv4",
    input_size=112,
    embed_dim=128,
    dataset_id="src100",
    batch_size=64,
)
STD_CFG = replace(_SRC_BASE, radius=0.0, epochs=16, lr_drop_epochs=(12,), seed=1)
F1_CFG = replace(_SRC_BASE, radius=4.0, epochs=22, lr_drop_epochs=(15, 19), seed=2)
F2_CFG = replace(_SRC_BASE, radius=1.0, epochs=12, lr_drop_epochs=(8,), seed=3)

# Black-box targets: disjoint subjects, noise-augmented, one sharing the
# source architecture family at reduced width and one at full width.
_TGT_BASE = replace(
    _SRC_BASE,
    radius=0.0,
    epochs=20,
    lr_drop_epochs=(14,),
    dataset_id="tgt300b",
    noise_aug=4.0,
)
TGT_HELD_OUT_CFG = replace(_TGT_BASE, architecture_id="conv4_slim", seed=11)
TGT_SECOND_CFG = replace(_TGT_BASE, seed=14)

N_EVAL_POSITIVE = 300
N_EVAL_NEGATIVE = 300


def _load_times():
    if os.path.exists(TIMES_PATH):
        with open(TIMES_PATH, encoding="utf-8") as fh:
            return json.load(fh)
    return {}


def _save_times(times):
    os.makedirs(CACHE_DIR, exist_ok=True)
    with open(TIMES_PATH, "w", encoding="utf-8") as fh:
        json.dump(times, fh, indent=2, sort_keys=True)


def _train_cached(name, cfg, data):
    os.makedirs(CACHE_DIR, exist_ok=True)
    path = os.path.join(CACHE_DIR, f"{name}-{cfg.digest()}.npz")
    if os.path.exists(path):
        return embedder.EmbedderModel.load(path)
    t0 = time.time()
    model = training.adversarial_train(cfg, data)
    elapsed = time.time() - t0
    model.save(path)
    times = _load_times()
    times[f"{name}-{cfg.digest()}"] = elapsed
    _save_times(times)
    return model


def recorded_training_time(name, cfg):
    """Wall-clock seconds the cached checkpoint took to train, or None."""
    return _load_times().get(f"{name}-{cfg.digest()}")


@dataclass
class DeskSuite:
    """Everything the trend criteria evaluate against."""

    std: object
    f1: object
    f2: object
    targets: list  # [(target_id, model, rule), ...]; first one is held out
    probes: np.ndarray
    enrolled: np.ndarray
    labels: list
    pos_probes: np.ndarray
    pos_enrolled: np.ndarray

    @property
    def held_out(self):
        return self.targets[0]


def build_desk_suite():
    torch.set_num_threads(os.cpu_count() or 1)
    src_imgs, src_labels, src_names = synthetic.identity_arrays(
        48, 16, size=112, seed=100
    )
    src_data = training.IdentityDataset(src_imgs, src_labels, src_names)
    tgt_imgs, tgt_labels, tgt_names = synthetic.identity_arrays(
        48, 24, size=112, seed=300
    )
    tgt_data = training.IdentityDataset(tgt_imgs, tgt_labels, tgt_names)

    std = _train_cached("std", STD_CFG, src_data)
    f1 = _train_cached("f1", F1_CFG, src_data)
    f2 = _train_cached("f2", F2_CFG, src_data)
    tgt_a = _train_cached("tgt-held-out", TGT_HELD_OUT_CFG, tgt_data)
    tgt_b = _train_cached("tgt-second", TGT_SECOND_CFG, tgt_data)

    eval_imgs, eval_labels, _ = synthetic.identity_arrays(20, 12, size=112, seed=200)
    probes, enrolled, labels = synthetic.verification_pairs(
        eval_imgs, eval_labels, N_EVAL_POSITIVE, N_EVAL_NEGATIVE, seed=5
    )
    pos = np.array([l == "positive" for l in labels])

    targets = []
    for target_id, model in (("held-out-slim", tgt_a), ("second-conv4", tgt_b)):
        rule = evaluation.calibrate_threshold(model, probes, enrolled, labels)
        targets.append((target_id, model, rule))

    return DeskSuite(
        std=std,
        f1=f1,
        f2=f2,
        targets=targets,
        probes=probes,
        enrolled=enrolled,
        labels=labels,
        pos_probes=probes[pos],
        pos_enrolled=enrolled[pos],
    )


@pytest.fixture(scope="session")
def desk_suite():
    return build_desk_suite()
