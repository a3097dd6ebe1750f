"""End-to-end CLI tests: train -> attack -> eval -> analyze-freq ->
sweep-lambda on tiny models, exercising the file formats between stages."""

import json
import os

import numpy as np
import pytest

from facecloak import cli, imaging, synthetic
from facecloak.embedder import EmbedderModel
from facecloak.imaging import NEGATIVE, POSITIVE, PairEntry


SIZE = 16


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A data tree, a pair manifest, and two trained tiny checkpoints."""
    root = tmp_path_factory.mktemp("cliws")
    data_dir = root / "identities"
    synthetic.write_identity_dataset(data_dir, num_subjects=4, per_subject=4,
                                     size=SIZE, seed=21)

    # pair manifest over separate eval imagery
    imgs, labels, _ = synthetic.identity_arrays(4, 4, size=SIZE, seed=22)
    probes, enrolled, pair_labels = synthetic.verification_pairs(
        imgs, labels, 6, 6, seed=23
    )
    pair_dir = root / "pairs"
    os.makedirs(pair_dir)
    entries = []
    for i, (p, e, lab) in enumerate(zip(probes, enrolled, pair_labels)):
        pp = pair_dir / f"probe_{i}.png"
        ee = pair_dir / f"enrolled_{i}.png"
        imaging.save_image(p, pp)
        imaging.save_image(e, ee)
        entries.append(PairEntry(str(pp), str(ee), f"subj{i}", lab))
    manifest = root / "pairs.tsv"
    imaging.write_pairs(entries, manifest)

    src_ckpt = root / "source.npz"
    tgt_ckpt = root / "target.npz"
    rc = cli.main([
        "train", "--data", str(data_dir), "--out", str(src_ckpt),
        "--arch", "tiny", "--embed-dim", "8", "--size", str(SIZE),
        "--radius", "2", "--epochs", "2", "--lr-drops", "2",
        "--batch-size", "8", "--seed", "1",
    ])
    assert rc == 0
    rc = cli.main([
        "train", "--data", str(data_dir), "--out", str(tgt_ckpt),
        "--arch", "tiny", "--embed-dim", "8", "--size", str(SIZE),
        "--radius", "0", "--epochs", "2", "--lr-drops", "2",
        "--batch-size", "8", "--seed", "9",
    ])
    assert rc == 0
    return {
        "root": root,
        "manifest": manifest,
        "src": src_ckpt,
        "tgt": tgt_ckpt,
    }


def test_train_checkpoint_properties(workspace):
    model = EmbedderModel.load(workspace["src"])
    assert model.provenance.kind == "robust"
    assert model.provenance.radius == 2.0
    assert model.input_size == SIZE
    target = EmbedderModel.load(workspace["tgt"])
    assert target.provenance.kind == "standard"


def test_attack_and_eval_roundtrip(workspace, tmp_path):
    adv_dir = tmp_path / "advout"
    rc = cli.main([
        "attack", "--pairs", str(workspace["manifest"]),
        "--source", str(workspace["src"]),
        "--attack", "MI", "--steps", "3", "--epsilon-255", "16",
        "--seed", "4", "--out", str(adv_dir),
    ])
    assert rc == 0
    recs = [json.loads(l) for l in (adv_dir / "results.jsonl").read_text().splitlines()]
    assert len(recs) == 6  # positives only
    for rec in recs:
        # PNG quantization adds at most half a pixel step on top of epsilon
        assert rec["linf_255"] <= 16 + 0.5 + 1e-6
        assert 0.0 < rec["ssim"] <= 1.0
        assert (adv_dir / rec["adv_path"]).exists()
    meta = json.loads((adv_dir / "meta.json").read_text())
    assert meta["n_pairs"] == 6
    assert meta["plan"]["steps"] == 3
    assert meta["plan"]["epsilon"] == pytest.approx(16 / 255)

    out_dir = tmp_path / "evalout"
    rc = cli.main([
        "eval", "--adv", str(adv_dir), "--target", str(workspace["tgt"]),
        "--jpeg-quality", "none,75", "--out", str(out_dir),
    ])
    assert rc == 0
    report = json.loads((out_dir / "report.json").read_text())
    assert len(report["rows"]) == 2  # two qualities x one target
    qualities = {r["jpeg_quality"] for r in report["rows"]}
    assert qualities == {None, 75}
    for r in report["rows"]:
        assert 0.0 <= r["asr"] <= 1.0
    assert (out_dir / "tables.csv").exists()
    assert (out_dir / "plots" / "asr.png").exists()


def test_attack_with_ensemble_and_plan_file(workspace, tmp_path):
    plan_file = tmp_path / "plan.json"
    plan_file.write_text(json.dumps({
        "epsilon_255": 8,
        "step_size_255": 2,
        "steps": 2,
        "transforms": [{"kind": "momentum", "mu": 1.0}],
        "seed": 3,
    }))
    adv_dir = tmp_path / "advout"
    rc = cli.main([
        "attack", "--pairs", str(workspace["manifest"]),
        "--source", str(workspace["src"]),
        "--source2", str(workspace["tgt"]),
        "--ensemble-weight", "0.6",
        "--plan", str(plan_file),
        "--save-jpeg-quality", "75",
        "--out", str(adv_dir),
    ])
    assert rc == 0
    meta = json.loads((adv_dir / "meta.json").read_text())
    assert meta["plan"]["epsilon"] == pytest.approx(8 / 255)
    assert len(meta["plan"]["sources"]) == 2
    assert meta["plan"]["sources"][1][1] == 0.6
    assert (adv_dir / "adv" / "pair_0000_q75.jpg").exists()


def test_analyze_freq_outputs(workspace, tmp_path):
    out = tmp_path / "freqlab"
    rc = cli.main([
        "analyze-freq", "--model", str(workspace["src"]),
        "--pairs", str(workspace["manifest"]),
        "--attack", "FGSM", "--jpeg-quality", "50", "--out", str(out),
    ])
    assert rc == 0
    assert (out / "masked_accuracy.csv").exists()
    assert (out / "perturbation_spectrum.csv").exists()
    assert (out / "attenuation_q50.csv").exists()
    assert (out / "spectra.png").exists()
    header, *rows = (out / "masked_accuracy.csv").read_text().splitlines()
    assert header == "band,accuracy_drop"
    assert len(rows) > 0


def test_sweep_lambda_outputs(workspace, tmp_path):
    out = tmp_path / "lamsweep"
    rc = cli.main([
        "sweep-lambda", "--f1", str(workspace["src"]),
        "--f2", str(workspace["tgt"]), "--target", str(workspace["tgt"]),
        "--pairs", str(workspace["manifest"]),
        "--attack", "FGSM", "--grid", "0,0.5,1.0",
        "--jpeg-quality", "none", "--out", str(out),
    ])
    assert rc == 0
    lines = (out / "lambda_curve.csv").read_text().splitlines()
    assert lines[0] == "lambda,asr"
    assert len(lines) == 4
    lams = [float(l.split(",")[0]) for l in lines[1:]]
    assert lams == [0.0, 0.5, 1.0]
    assert (out / "lambda_curve.png").exists()


def test_cli_reports_package_errors_as_exit_code(workspace, tmp_path, capsys):
    bad_manifest = tmp_path / "bad.tsv"
    bad_manifest.write_text("only\ttwo\n")
    rc = cli.main([
        "attack", "--pairs", str(bad_manifest),
        "--source", str(workspace["src"]), "--out", str(tmp_path / "x"),
    ])
    assert rc == 1
    assert "error:" in capsys.readouterr().err
