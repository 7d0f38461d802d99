"""End-to-end tests for the command-line interface."""

import json
import subprocess
import sys

import numpy as np
import pytest

from segcalib.binning import BinningConfig, Kernel
from segcalib.cli import main
from segcalib.losses import ace_loss
from segcalib.temperature import softmax
from segcalib.volume_io import load_manifest, read_volume, write_manifest, write_volume


@pytest.fixture()
def pred_manifest(tmp_path):
    """Three 8x8 two-class cases with predictions, logits and labels."""
    rng = np.random.default_rng(11)
    root = tmp_path / "data"
    root.mkdir()
    entries = []
    for i in range(3):
        logits = rng.normal(scale=2.0, size=(2, 8, 8))
        probs = softmax(logits.reshape(2, -1), axis=0).reshape(2, 8, 8)
        labels = rng.integers(0, 2, size=(8, 8))
        stem = f"case_{i}"
        write_volume(root / f"{stem}_logits.calv", logits)
        write_volume(root / f"{stem}_pred.calv", probs)
        write_volume(root / f"{stem}_label.calv", labels)
        entries.append({
            "case_id": stem,
            "label": f"{stem}_label.calv",
            "prediction": f"{stem}_pred.calv",
            "logits": f"{stem}_logits.calv",
        })
    path = root / "manifest.json"
    write_manifest(path, cases=entries, classes=["background", "fg"])
    return path


def test_metrics_outputs(pred_manifest, tmp_path):
    out = tmp_path / "rep"
    assert main(["metrics", "--manifest", str(pred_manifest), "--out", str(out)]) == 0
    payload = json.loads((out / "metrics.json").read_text())
    assert payload["num_cases"] == 3
    assert payload["classes"] == ["background", "fg"]
    assert payload["protocol"] == {
        "bins": 20, "kernel": "hard",
        "include_background": False, "missing_policy": "skip",
    }
    assert len(payload["per_image"]) == 3
    assert 0.0 <= payload["macro"]["mean"]["ace"] <= 1.0
    text = (out / "metrics.txt").read_text(encoding="utf-8")
    assert "macro" in text and "micro" in text and "±" in text


def test_metrics_jobs_and_rerun_are_byte_identical(pred_manifest, tmp_path):
    outs = [tmp_path / name for name in ("a", "b", "c")]
    for out, jobs in zip(outs, ("1", "3", "1")):
        assert main([
            "metrics", "--manifest", str(pred_manifest),
            "--out", str(out), "--jobs", jobs,
        ]) == 0
    blobs = [(o / "metrics.json").read_bytes() for o in outs]
    assert blobs[0] == blobs[1] == blobs[2]
    texts = [(o / "metrics.txt").read_bytes() for o in outs]
    assert texts[0] == texts[1] == texts[2]


def test_out_env_var_default(pred_manifest, tmp_path, monkeypatch):
    target = tmp_path / "envout"
    monkeypatch.setenv("SEGCALIB_OUT", str(target))
    assert main(["metrics", "--manifest", str(pred_manifest)]) == 0
    assert (target / "metrics.json").exists()


def test_usage_error_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["metrics", "--manifest", "m.json", "--bogus"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_missing_manifest_exits_1(tmp_path, capsys):
    code = main(["metrics", "--manifest", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path)])
    assert code == 1
    assert "nope.json" in capsys.readouterr().err


def test_case_without_predictions_exits_1(tmp_path, capsys):
    root = tmp_path / "imgonly"
    root.mkdir()
    write_volume(root / "img.calv", np.zeros((4, 4), dtype=np.float32))
    write_volume(root / "lab.calv", np.zeros((4, 4), dtype=np.uint8))
    path = root / "manifest.json"
    write_manifest(
        path,
        cases=[{"case_id": "raw_case", "image": "img.calv", "label": "lab.calv"}],
        classes=["background", "fg"],
    )
    assert main(["metrics", "--manifest", str(path), "--out", str(root)]) == 1
    assert "raw_case" in capsys.readouterr().err


def test_diagram_outputs(pred_manifest, tmp_path):
    out = tmp_path / "dia"
    assert main([
        "diagram", "--manifest", str(pred_manifest),
        "--case", "case_1", "--out", str(out),
    ]) == 0
    assert (out / "case_1_curve.csv").exists()
    assert (out / "case_1_class1_diagram.svg").exists()
    assert (out / "case_1_class1_diagram.png").exists()
    # Byte-stable SVG on rerun.
    first = (out / "case_1_class1_diagram.svg").read_bytes()
    assert main([
        "diagram", "--manifest", str(pred_manifest),
        "--case", "case_1", "--out", str(out),
    ]) == 0
    assert (out / "case_1_class1_diagram.svg").read_bytes() == first


def test_diagram_unknown_case_exits_1(pred_manifest, tmp_path, capsys):
    code = main([
        "diagram", "--manifest", str(pred_manifest),
        "--case", "case_99", "--out", str(tmp_path),
    ])
    assert code == 1
    assert "case_99" in capsys.readouterr().err


def test_histogram_outputs(pred_manifest, tmp_path):
    out = tmp_path / "hist"
    assert main([
        "histogram", "--manifest", str(pred_manifest),
        "--rows", "6", "--out", str(out),
    ]) == 0
    assert (out / "histogram.csv").exists()
    assert (out / "histogram_fg.svg").exists()
    assert (out / "histogram_fg.png").exists()


def test_temp_scale_before_matches_metrics(pred_manifest, tmp_path):
    # A logits-only manifest makes both subcommands derive probabilities
    # from the same stored volume, so the T=1 numbers must agree exactly.
    # (With stored predictions, metrics would use the float32-rounded
    # probabilities instead and tiny bin-edge flips become possible.)
    src = load_manifest(pred_manifest)
    logits_manifest = pred_manifest.parent / "logits_only.json"
    write_manifest(
        logits_manifest,
        cases=[
            {
                "case_id": entry.case_id,
                "label": entry.label.name,
                "logits": entry.logits.name,
            }
            for entry in src.cases
        ],
        classes=src.classes,
    )
    rep = tmp_path / "rep"
    ts = tmp_path / "ts"
    assert main(["metrics", "--manifest", str(logits_manifest), "--out", str(rep)]) == 0
    assert main([
        "temp-scale", "--manifest", str(logits_manifest),
        "--epochs", "5", "--out", str(ts),
    ]) == 0
    metrics = json.loads((rep / "metrics.json").read_text())
    temp = json.loads((ts / "temperature.json").read_text())
    # The T=1 re-evaluation must agree exactly with the metrics subcommand.
    assert temp["macro_before"]["mean"]["ace"] == pytest.approx(
        metrics["macro"]["mean"]["ace"], abs=1e-12
    )
    assert temp["fit"]["temperature"] > 0
    assert temp["fit"]["ce_final"] <= temp["fit"]["ce_initial"] + 1e-12


def test_grad_check_passes_and_fails_by_tolerance(tmp_path, capsys):
    out = tmp_path / "gc"
    assert main([
        "grad-check", "--instances", "3", "--bins", "10", "--out", str(out),
    ]) == 0
    payload = json.loads((out / "grad_check.json").read_text())
    assert payload["passed"] is True
    assert set(payload["max_rel_error"]) == {"hard", "soft"}
    capsys.readouterr()
    code = main([
        "grad-check", "--instances", "3", "--bins", "10",
        "--tolerance", "1e-14", "--out", str(out),
    ])
    assert code == 1
    assert "gradient check failed" in capsys.readouterr().err


def test_ace_loss_parity_with_library(tmp_path):
    rng = np.random.default_rng(5)
    probs = rng.dirichlet(np.ones(3), size=36).T.reshape(3, 6, 6)
    labels = rng.integers(0, 3, size=(6, 6))
    write_volume(tmp_path / "p.calv", probs)
    write_volume(tmp_path / "l.calv", labels)
    grad_path = tmp_path / "g.calv"
    assert main([
        "ace-loss", "--probs", str(tmp_path / "p.calv"),
        "--labels", str(tmp_path / "l.calv"),
        "--bins", "5", "--kernel", "soft", "--lam", "2.0",
        "--grad-out", str(grad_path),
    ]) == 0
    stored = read_volume(tmp_path / "p.calv").astype(np.float64)
    value, grad = ace_loss(stored, labels, BinningConfig(5, Kernel.SOFT))
    back = read_volume(grad_path)
    assert back.dtype == np.float64
    np.testing.assert_array_equal(back, 2.0 * grad)


def test_ace_loss_zero_lam(tmp_path, capsys):
    probs = np.full((2, 2, 2), 0.5)
    labels = np.zeros((2, 2), dtype=np.uint8)
    write_volume(tmp_path / "p.calv", probs)
    write_volume(tmp_path / "l.calv", labels)
    grad_path = tmp_path / "g.calv"
    assert main([
        "ace-loss", "--probs", str(tmp_path / "p.calv"),
        "--labels", str(tmp_path / "l.calv"),
        "--lam", "0", "--grad-out", str(grad_path),
    ]) == 0
    payload = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert payload["value"] == 0.0
    assert np.abs(read_volume(grad_path)).max() == 0.0


def test_train_toy_pipeline(tmp_path):
    out = tmp_path / "toy"
    assert main([
        "train-toy", "--variant", "hl1", "--epochs", "3",
        "--size", "32", "--out", str(out),
    ]) == 0
    payload = json.loads((out / "train_hl1.json").read_text())
    assert payload["variant"] == "hl1"
    assert len(payload["macro"]["per_class"]["ace"]) == 3
    manifest = load_manifest(payload["eval_manifest"])
    assert len(manifest.cases) == 16
    # The emitted manifest feeds straight back into metrics.
    rep = tmp_path / "rep"
    assert main([
        "metrics", "--manifest", payload["eval_manifest"], "--out", str(rep),
    ]) == 0
    metrics = json.loads((rep / "metrics.json").read_text())
    assert metrics["macro"]["mean"]["ace"] == pytest.approx(
        payload["macro"]["mean"]["ace"], abs=1e-6
    )


def test_sweep_cli(tmp_path):
    out = tmp_path / "sw"
    assert main([
        "sweep", "--dimension", "bins", "--values", "2,3",
        "--variants", "hl1", "--seeds", "0", "--epochs", "2",
        "--size", "32", "--out", str(out),
    ]) == 0
    lines = (out / "sweep.csv").read_text().strip().splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("variant,dimension,value,seed")
    assert (out / "sweep_hl1.png").exists()


def test_sweep_bad_variant_exits_1(tmp_path, capsys):
    code = main([
        "sweep", "--dimension", "bins", "--values", "2",
        "--variants", "mystery", "--out", str(tmp_path),
    ])
    assert code == 1
    assert "mystery" in capsys.readouterr().err


def test_synth_writes_loadable_dataset(tmp_path):
    out = tmp_path / "ds"
    assert main(["synth", "--preset", "separable", "--seed", "3",
                 "--out", str(out)]) == 0
    manifest = load_manifest(out / "train.json")
    assert len(manifest.cases) == 16
    first = read_volume(manifest.cases[0].image)
    assert first.shape == (64, 64)


def test_console_script_entry_point(pred_manifest, tmp_path):
    out = tmp_path / "sub"
    proc = subprocess.run(
        [sys.executable, "-m", "segcalib.cli", "metrics",
         "--manifest", str(pred_manifest), "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (out / "metrics.json").exists()
