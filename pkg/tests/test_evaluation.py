"""Evaluation-bench tests: SSIM oracle, threshold calibration, ASR
arithmetic, report determinism, and the compressed-clean protocol."""

import numpy as np
import pytest

from facecloak import attacks, embedder, evaluation, synthetic
from facecloak.embedder import VerificationRule
from facecloak.errors import (
    NeedsBothLabels,
    NoTargets,
    PairCountMismatch,
    ShapeMismatch,
)
from facecloak.evaluation import EvalReport, EvalRow, SsimConfig, ssim


def make_model(seed=0, size=16, dim=8, arch="tiny"):
    return embedder.EmbedderModel.create(arch, input_size=size, embed_dim=dim, seed=seed)


# --- SSIM ---------------------------------------------------------------------


def test_ssim_identity_symmetry_range():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(16, 16, 3))
    y = np.clip(x + rng.normal(0, 0.05, size=x.shape), 0, 1)
    assert ssim(x, x) == 1.0
    assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-12)
    assert -1.0 <= ssim(x, y) < 1.0
    # a tiny perturbation barely moves it; a large one collapses it
    near = np.clip(x + 1e-4, 0, 1)
    far = rng.uniform(size=x.shape)
    assert ssim(x, near) > 0.999
    assert ssim(x, far) < ssim(x, near)


def test_ssim_hand_computed_constant_offset():
    # Constant images: all windows identical, variances zero, covariance
    # zero, so SSIM reduces to the luminance * contrast closed form:
    #   [(2 m1 m2 + c1) / (m1^2 + m2^2 + c1)] * [c2 / c2] with v=0
    cfg = SsimConfig()
    J = cfg.dynamic_range
    a, b = 0.4, 0.6
    x = np.full((12, 12, 1), a)
    y = np.full((12, 12, 1), b)
    m1, m2 = a * J, b * J
    expected = (2 * m1 * m2 + cfg.c1) / (m1 ** 2 + m2 ** 2 + cfg.c1)
    assert ssim(x, y, cfg) == pytest.approx(expected, abs=1e-12)


def test_ssim_single_window_matches_direct_formula():
    # With image size == window size there is exactly one window; compute
    # the statistics directly and compare.
    cfg = SsimConfig(window=8)
    rng = np.random.default_rng(1)
    x = rng.uniform(size=(8, 8))
    y = rng.uniform(size=(8, 8))
    J = cfg.dynamic_range
    xs, ys = x * J, y * J
    mx, my = xs.mean(), ys.mean()
    vx = (xs ** 2).mean() - mx ** 2
    vy = (ys ** 2).mean() - my ** 2
    cov = (xs * ys).mean() - mx * my
    expected = ((2 * mx * my + cfg.c1) * (2 * cov + cfg.c2)) / (
        (mx ** 2 + my ** 2 + cfg.c1) * (vx + vy + cfg.c2)
    )
    assert ssim(x, y, cfg) == pytest.approx(expected, abs=1e-12)


def test_ssim_validation():
    with pytest.raises(ShapeMismatch):
        ssim(np.zeros((8, 8, 3)), np.zeros((8, 9, 3)))
    with pytest.raises(ShapeMismatch):
        ssim(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)))  # smaller than window
    with pytest.raises(ShapeMismatch):
        ssim(np.zeros((2, 8, 8, 3)), np.zeros((2, 8, 8, 3)))


# --- threshold calibration ------------------------------------------------------


def test_calibrate_threshold_is_accuracy_optimal():
    # Synthetic separable distances via a stub model is hard; instead scan
    # against a brute-force oracle on the real distances.
    m = make_model(seed=2)
    imgs, labels, _ = synthetic.identity_arrays(4, 4, size=16, seed=3)
    probes, enrolled, pair_labels = synthetic.verification_pairs(imgs, labels, 20, 20, seed=4)
    rule = evaluation.calibrate_threshold(m, probes, enrolled, pair_labels)
    acc = evaluation.verification_accuracy(m, rule, probes, enrolled, pair_labels)
    d = np.linalg.norm(
        embedder.embed(m, probes).astype(np.float64)
        - embedder.embed(m, enrolled).astype(np.float64),
        axis=1,
    )
    is_pos = np.array([l == "positive" for l in pair_labels])
    best = max(
        (np.sum((d < t) & is_pos) + np.sum((d >= t) & ~is_pos)) / len(d)
        for t in np.concatenate([d - 1e-9, d + 1e-9, [0.0, d.max() + 1.0]])
    )
    assert acc == pytest.approx(best, abs=1e-12)


def test_calibrate_threshold_needs_both_labels():
    m = make_model()
    x = np.zeros((2, 16, 16, 3), dtype=np.float32)
    with pytest.raises(NeedsBothLabels):
        evaluation.calibrate_threshold(m, x, x, ["positive", "positive"])
    with pytest.raises(NeedsBothLabels):
        evaluation.calibrate_threshold(m, x, x, ["negative", "negative"])
    with pytest.raises(NeedsBothLabels):
        evaluation.calibrate_threshold(m, x[:0], x[:0], [])


# --- ASR arithmetic -------------------------------------------------------------


def test_attack_success_rate_arithmetic():
    # Use a real (random) model; construct clean/adv sets where we control
    # verification outcomes by reusing/replacing probes.
    m = make_model(seed=5)
    rng = np.random.default_rng(6)
    enrolled = rng.uniform(size=(4, 16, 16, 3)).astype(np.float32)
    clean = enrolled.copy()  # distance 0: always verified
    adv = enrolled.copy()
    far = rng.uniform(size=(16, 16, 3)).astype(np.float32)
    adv[0] = far  # pair 0 broken (assuming far image crosses tau)
    d_far = embedder.pair_distance(m, far, enrolled[0])
    rule = VerificationRule(threshold=d_far / 2.0)
    asr = evaluation.attack_success_rate(m, rule, (clean, enrolled), (adv, enrolled))
    assert asr == pytest.approx(1 / 4)
    # all broken
    adv_all = np.stack([far] * 4)
    d_all = [embedder.pair_distance(m, far, e) for e in enrolled]
    rule2 = VerificationRule(threshold=min(d_all) / 2.0)
    asr2 = evaluation.attack_success_rate(m, rule2, (clean, enrolled), (adv_all, enrolled))
    assert asr2 == pytest.approx(1.0)
    # none broken: adv == clean
    asr3 = evaluation.attack_success_rate(m, rule, (clean, enrolled), (clean, enrolled))
    assert asr3 == 0.0


def test_attack_success_rate_ignores_never_verified_pairs():
    # A pair not verified on the clean probe cannot be "broken": the rate
    # denominator is all pairs, numerator only counts flips.
    m = make_model(seed=7)
    rng = np.random.default_rng(8)
    enrolled = rng.uniform(size=(2, 16, 16, 3)).astype(np.float32)
    clean = enrolled.copy()
    other = rng.uniform(size=(16, 16, 3)).astype(np.float32)
    clean[1] = other  # pair 1 starts above threshold -> never verified
    d = embedder.pair_distance(m, other, enrolled[1])
    rule = VerificationRule(threshold=d / 2.0)
    adv = clean.copy()  # nothing changes
    asr = evaluation.attack_success_rate(m, rule, (clean, enrolled), (adv, enrolled))
    assert asr == 0.0
    # breaking the only verified pair gives 1/2, not 1/1
    adv2 = clean.copy()
    adv2[0] = other
    d0 = embedder.pair_distance(m, other, enrolled[0])
    assert d0 > rule.threshold  # sanity: the swap actually breaks it
    asr2 = evaluation.attack_success_rate(m, rule, (clean, enrolled), (adv2, enrolled))
    assert asr2 == pytest.approx(1 / 2)


def test_attack_success_rate_count_mismatch():
    m = make_model()
    x = np.zeros((3, 16, 16, 3), dtype=np.float32)
    with pytest.raises(PairCountMismatch):
        evaluation.attack_success_rate(m, VerificationRule(1.0), (x, x), (x[:2], x[:2]))


# --- adv sets and sweeps ---------------------------------------------------------


def small_adv_setup(seed=9):
    m_src = make_model(seed=10, arch="conv4")
    m_tgt = make_model(seed=11, arch="conv4")
    rng = np.random.default_rng(seed)
    probes = rng.uniform(0.2, 0.8, size=(6, 16, 16, 3)).astype(np.float32)
    enrolled = np.clip(probes + rng.normal(0, 0.02, probes.shape), 0, 1).astype(
        np.float32
    )
    plan = attacks.attack_plan_from_name("MI", sources=[(m_src, 1.0)], steps=3, seed=1)
    adv_set = evaluation.generate_adv_set(plan, probes, enrolled, attack_id="mi")
    return m_src, m_tgt, probes, enrolled, plan, adv_set


def test_generate_adv_set_contents():
    m_src, _, probes, enrolled, plan, adv_set = small_adv_setup()
    assert adv_set.attack_id == "mi"
    assert adv_set.source_ids == (m_src.model_id(),)
    assert adv_set.plan_digest == plan.digest()
    assert adv_set.adv_probes.shape == probes.shape
    assert np.max(np.abs(adv_set.adv_probes - probes)) <= plan.epsilon + 1e-9
    assert 0.0 < adv_set.mean_ssim() <= 1.0
    # chunked generation is identical to one-shot (per-pair RNG streams)
    chunked = evaluation.generate_adv_set(plan, probes, enrolled, chunk_size=2)
    assert np.array_equal(chunked.adv_probes, adv_set.adv_probes)


def test_compress_probes_none_passthrough_and_shape():
    rng = np.random.default_rng(12)
    x = rng.uniform(size=(2, 16, 16, 3)).astype(np.float32)
    assert evaluation.compress_probes(x, None) is not None
    assert np.array_equal(evaluation.compress_probes(x, None), x)
    out = evaluation.compress_probes(x, 75)
    assert out.shape == x.shape
    assert not np.array_equal(out, x)


def test_jpeg_sweep_uses_compressed_clean_baseline():
    """The defended pipeline compresses every submitted probe, so the
    "without attack" count at quality q must come from compressed clean
    probes; otherwise compression damage to the image itself would be
    misattributed to the perturbation."""
    m_src, m_tgt, probes, enrolled, plan, adv_set = small_adv_setup()
    rule = VerificationRule(threshold=50.0)
    rows = evaluation.jpeg_sweep(adv_set, "tgt", m_tgt, rule, qualities=(50,))
    clean_c = evaluation.compress_probes(probes, 50)
    adv_c = evaluation.compress_probes(adv_set.adv_probes, 50)
    expected = evaluation.attack_success_rate(
        m_tgt, rule, (clean_c, enrolled), (adv_c, enrolled)
    )
    assert rows[0].asr == pytest.approx(expected, abs=1e-12)
    # and the uncompressed row uses raw probes
    raw_rows = evaluation.jpeg_sweep(adv_set, "tgt", m_tgt, rule, qualities=(None,))
    expected_raw = evaluation.attack_success_rate(
        m_tgt, rule, (probes, enrolled), (adv_set.adv_probes, enrolled)
    )
    assert raw_rows[0].asr == pytest.approx(expected_raw, abs=1e-12)


def test_transfer_matrix_skips_white_box_targets():
    m_src, m_tgt, probes, enrolled, plan, adv_set = small_adv_setup()
    rule = VerificationRule(threshold=50.0)
    report = evaluation.transfer_matrix(
        [adv_set],
        [("source-itself", m_src, rule), ("real-target", m_tgt, rule)],
        qualities=(None,),
    )
    assert {r.target_id for r in report.rows} == {"real-target"}
    full = evaluation.transfer_matrix(
        [adv_set],
        [("source-itself", m_src, rule)],
        qualities=(None,),
        include_sources=True,
    )
    assert {r.target_id for r in full.rows} == {"source-itself"}
    with pytest.raises(NoTargets):
        evaluation.transfer_matrix([adv_set], [])


def test_report_serialization_is_deterministic_and_sorted():
    rows = [
        EvalRow("mi", ("s1",), "tgtB", None, 0, 6, 0.5, 0.9),
        EvalRow("mi", ("s1",), "tgtA", 50, 1, 6, 0.25, 0.9),
        EvalRow("fgsm", ("s1",), "tgtA", 75, 0, 6, 0.125, 0.95),
    ]
    rep1 = EvalReport(rows=list(rows), provenance={"suite": "unit"})
    rep2 = EvalReport(rows=list(reversed(rows)), provenance={"suite": "unit"})
    assert rep1.to_json() == rep2.to_json()
    assert rep1.to_csv() == rep2.to_csv()
    # float round-trip through repr is exact
    line = [l for l in rep1.to_csv().splitlines() if l.startswith("mi,s1,tgtA")][0]
    assert float(line.split(",")[6]) == 0.25
    assert "0.125" in rep1.to_csv()
    got = [r.key() for r in rep1.sorted_rows()]
    assert got == sorted(got)


def test_report_save_and_lookup(tmp_path):
    rows = [
        EvalRow("mi", ("s1",), "tgt", 50, 0, 6, 0.5, 0.9),
        EvalRow("mi", ("s1",), "tgt", None, 0, 6, 0.75, 0.9),
    ]
    rep = EvalReport(rows=rows)
    rep.save(tmp_path)
    assert (tmp_path / "report.json").exists()
    assert (tmp_path / "tables.csv").exists()
    import json

    payload = json.loads((tmp_path / "report.json").read_text())
    assert payload["schema_version"] == 1
    assert len(payload["rows"]) == 2
    hit = rep.lookup(jpeg_quality=50)
    assert len(hit) == 1 and hit[0].asr == 0.5


def test_lambda_ablation_curve_and_zero_point():
    m_src, m_tgt, probes, enrolled, plan, _ = small_adv_setup()
    light = make_model(seed=13, arch="conv4")
    rule = VerificationRule(threshold=30.0)
    curve = evaluation.lambda_ablation(
        plan, m_src, light, probes, enrolled, ("tgt", m_tgt, rule),
        lambda_grid=(0.0, 0.5), quality=None,
    )
    assert [lam for lam, _ in curve] == [0.0, 0.5]
    # lambda = 0 equals the single-source attack exactly
    single = evaluation.generate_adv_set(
        plan.with_sources([(m_src, 1.0)]), probes, enrolled
    )
    asr_single = evaluation.attack_success_rate(
        m_tgt, rule, (probes, enrolled), (single.adv_probes, enrolled)
    )
    assert curve[0][1] == pytest.approx(asr_single, abs=1e-12)


def test_stability_report_seeds_and_moments():
    m_src, m_tgt, probes, enrolled, _, _ = small_adv_setup()
    plan = attacks.attack_plan_from_name(
        "DI-MI", sources=[(m_src, 1.0)], steps=2, seed=3
    )
    rule = VerificationRule(threshold=30.0)
    rep = evaluation.stability_report(
        plan, probes, enrolled, ("tgt", m_tgt, rule), n_runs=3
    )
    assert len(rep.per_run) == 3
    arr = np.asarray(rep.per_run)
    assert rep.mean == pytest.approx(arr.mean())
    assert rep.variance == pytest.approx(arr.var())
    # rerun gives identical numbers (seed arithmetic is deterministic)
    rep2 = evaluation.stability_report(
        plan, probes, enrolled, ("tgt", m_tgt, rule), n_runs=3
    )
    assert rep2.per_run == rep.per_run


def test_frequency_ablation_rows():
    m_src, m_tgt, probes, enrolled, plan, _ = small_adv_setup()
    strong = make_model(seed=14, arch="conv4")
    light = make_model(seed=15, arch="conv4")
    rule = VerificationRule(threshold=30.0)
    report = evaluation.frequency_ablation(
        plan, m_src, strong, light, probes, enrolled,
        ("tgt", m_tgt, rule), qualities=(None,),
    )
    ids = {r.attack_id for r in report.rows}
    assert ids == {
        "standard-noise",
        "light-robust-noise",
        "strong-robust-noise",
        "ensemble-noise",
    }
