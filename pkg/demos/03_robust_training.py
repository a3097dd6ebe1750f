"""Adversarial training, from the inner loop outward.

The attack toolkit leans on adversarially trained *source* models: their
gradients live in the low frequency bands, which is what survives JPEG.
This script looks at the training side of that story:

  1. the PGD inner maximization — craft the worst-case batch the outer
     step then trains against;
  2. the robustness/accuracy trade of the resulting embedders;
  3. checkpoint provenance, so downstream code can tell a hardened
     model from a plain one.
"""

import numpy as np
import torch

from facecloak import attacks, embedder, evaluation, training
from _common import calibrated, eval_pairs, model_zoo, out_dir, positives, source_data

out = out_dir("03_robust_training")
std, f1, f2, _, _ = model_zoo()
probes, enrolled, labels = eval_pairs()
p_pos, e_pos = positives(probes, enrolled, labels)

# ----------------------------------------------------- inner maximization
data = source_data()
x, y = data.images[:32], data.labels[:32]
head = embedder.SupervisoryHead(std.embed_dim, data.num_classes, variant="plain-softmax")
with torch.no_grad():
    head.fc.weight.normal_(0.0, 0.01, generator=torch.Generator().manual_seed(9))

def batch_loss(model, imgs):
    t = torch.as_tensor(np.transpose(imgs, (0, 3, 1, 2)), dtype=torch.float32)
    with torch.no_grad():
        logits = head(model.embed_torch(t), torch.as_tensor(y))
        return float(torch.nn.functional.cross_entropy(logits, torch.as_tensor(y)))

print("PGD inner maximization (radius 4/255, 5 steps) on one batch:")
before = batch_loss(std, x)
adv_batch = training.pgd_inner_max(std, head, x, y, radius=4.0, seed=0)
after = batch_loss(std, adv_batch)
shift = np.abs(adv_batch - x).max() * 255
print(f"  loss {before:.3f} -> {after:.3f}, max |shift| {shift:.2f}/255")
print("the outer loop descends on exactly these worst-case batches.")

# ------------------------------------------------ robustness vs accuracy
print("\nwhite-box FGSM stress test on each embedder:")
print("(distance push is relative to each model's own threshold tau)")
models = (("standard", std), ("strong-robust f1", f1), ("light-robust f2", f2))
rows = []
for name, model in models:
    rule, acc = calibrated(model, probes, enrolled, labels)
    cells = [f"  {name:16s} acc {acc:.3f} |"]
    for eps255 in (1.0, 2.0, 4.0):
        plan = attacks.attack_plan_from_name(
            "FGSM", sources=[(model, 1.0)], epsilon=eps255 / 255
        )
        adv = evaluation.generate_adv_set(plan, p_pos, e_pos, attack_id=f"wb-{name}")
        d_clean = np.array([embedder.pair_distance(model, p, e) for p, e in zip(p_pos, e_pos)])
        d_adv = np.array(
            [embedder.pair_distance(model, p, e) for p, e in zip(adv.adv_probes, e_pos)]
        )
        pushed = float(np.mean((d_adv - d_clean) / rule.threshold))
        broken = float(np.mean((d_clean < rule.threshold) & (d_adv >= rule.threshold)))
        rows.append((name, eps255, acc, pushed, broken))
        cells.append(f" eps {eps255:.0f}/255: +{pushed:.2f} tau, {broken:4.0%} broken |")
    print("".join(cells))
print("strong hardening resists at every budget; light hardening at this data")
print("scale behaves like augmentation — best clean accuracy, no stability.")
print("the attack-side payoff is elsewhere: the robust models' gradients live")
print("in the low bands (see 01_frequency_lab), which is what survives JPEG.")

# --------------------------------------------------------- provenance
print("\ncheckpoint provenance travels with the weights:")
for name, model in (("standard", std), ("f1", f1), ("f2", f2)):
    p = model.provenance
    extra = f", radius {p.radius:g}/255" if p.kind == "robust" else ""
    print(f"  {name:8s}: kind={p.kind!r}{extra}, epochs={p.epochs}")

with open(f"{out}/stress_test.csv", "w", encoding="utf-8") as fh:
    fh.write("model,epsilon_255,clean_accuracy,distance_push_vs_tau,match_break_rate\n")
    for name, eps255, acc, pushed, broken in rows:
        fh.write(f"{name},{eps255!r},{acc!r},{pushed!r},{broken!r}\n")
print(f"outputs -> {out}")
