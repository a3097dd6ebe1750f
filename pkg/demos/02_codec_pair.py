"""A JPEG codec and its differentiable twin.

The toolkit ships two implementations of the same compressor:

  * ``jpeg_roundtrip`` — the hard codec.  Integer quantization tables,
    true rounding, bit-deterministic output.  This is the eval-time
    ground truth, but its gradient is zero almost everywhere.
  * ``differentiable_jpeg`` — the same pipeline with rounding replaced
    by a cubic surrogate that agrees with round() at integers but has
    useful gradients in between.  Attacks backpropagate through this.

This script shows the quality knob, verifies the two stay close, and
pushes a gradient through the twin.
"""

import numpy as np
import torch

from facecloak import jpeg, synthetic
from _common import out_dir

out = out_dir("02_codec_pair")

# ----------------------------------------------------- the quality knob
print("quality-scaled luma quantization tables (larger step = coarser):")
for q in (50, 75, 90):
    t = jpeg.quant_tables_for_quality(q).luma
    print(f"  q={q}: DC step {t[0, 0]:3d}, max step {t.max():3d}, mean {t.mean():5.1f}")
print("lower quality scales every entry up, so more DCT mass is rounded away.")

# ------------------------------------------------- round-trip behavior
corpus = synthetic.photo_corpus(12, size=64, seed=7)
print("\nround-trip error on a 12-image corpus (mean |x - jpeg(x)|):")
errors = {}
for q in (30, 50, 75, 90, 95):
    cfg = jpeg.JpegConfig(quality=q)
    rt = jpeg.jpeg_roundtrip(corpus, cfg)
    errors[q] = float(np.mean(np.abs(rt.astype(np.float64) - corpus)))
    print(f"  q={q:2d}: {errors[q]:.5f}")
qs = sorted(errors)
assert all(errors[a] >= errors[b] for a, b in zip(qs, qs[1:])), "error must shrink with q"
print("monotone in quality, as it should be.")

cfg = jpeg.JpegConfig(quality=75)
a = jpeg.jpeg_roundtrip(corpus, cfg)
b = jpeg.jpeg_roundtrip(corpus, cfg)
print(f"\nhard codec is bit-deterministic: reruns identical -> {np.array_equal(a, b)}")

# ------------------------------------------------ hard vs diff twin
diff_cfg = jpeg.JpegConfig(quality=75, differentiable=True)
soft = jpeg.differentiable_jpeg(corpus, diff_cfg)
gap = np.abs(soft.astype(np.float64) - a.astype(np.float64))
print(f"hard vs differentiable at q=75: mean |gap| {gap.mean():.4f}, max {gap.max():.3f}")
print("the twin tracks the real codec closely enough to be an honest proxy.")

# --------------------------------------------------- gradients that flow
x = torch.tensor(corpus[:1].transpose(0, 3, 1, 2), dtype=torch.float32, requires_grad=True)
y = jpeg.differentiable_jpeg_torch(x, diff_cfg)
loss = (y ** 2).sum()
loss.backward()
g = x.grad.detach().numpy()
print(f"\ngradient through the twin: {np.count_nonzero(g)}/{g.size} nonzero entries")

# spot-check one coordinate against a central finite difference
idx = (0, 1, 20, 20)
h = 1e-3
xp = corpus[:1].copy()
xm = corpus[:1].copy()
xp[0, idx[2], idx[3], idx[1]] += h
xm[0, idx[2], idx[3], idx[1]] -= h
fp = float((jpeg.differentiable_jpeg(xp, diff_cfg).astype(np.float64) ** 2).sum())
fm = float((jpeg.differentiable_jpeg(xm, diff_cfg).astype(np.float64) ** 2).sum())
fd = (fp - fm) / (2 * h)
print(f"autograd {g[idx]:+.4f} vs finite difference {fd:+.4f} at green pixel {idx[2:]}")

# the cubic surrogate up close: exact at integers, smooth in between
v = torch.linspace(-1.5, 1.5, 13, dtype=torch.float64)
r = jpeg.round_approx(v)
rows = ", ".join(f"{float(a):+.2f}->{float(b):+.2f}" for a, b in zip(v[::3], r[::3]))
print(f"\ncubic rounding surrogate samples: {rows}")
with open(f"{out}/roundtrip_error.csv", "w", encoding="utf-8") as fh:
    fh.write("quality,mean_abs_error\n")
    for q in qs:
        fh.write(f"{q},{errors[q]!r}\n")
print(f"outputs -> {out}")
