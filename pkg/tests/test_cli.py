import json
import os
import subprocess
import sys

import numpy as np
import pytest

from freqadapt import analysis, spectral, tensorio

SMALL = {
    "adapter": {"variant": "MS", "dim": 8, "width": 4},
    "train": {"epochs": 2, "batch_size": 8, "base_lr": 0.01, "warmup_epochs": 1},
    "synth": {"tokens": 3, "dim": 8, "clips_per_class": 4, "amplitude": 8.0},
}


def run(*args, env=None, check_json=True):
    full_env = {**os.environ, **(env or {})}
    proc = subprocess.run([sys.executable, "-m", "freqadapt", "-q", *map(str, args)],
                          capture_output=True, text=True, env=full_env)
    payload = json.loads(proc.stdout) if check_json else None
    return proc.returncode, payload, proc.stderr


def write_config(path, data):
    path.write_text(json.dumps(data))
    return path


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "small.json", SMALL)
    code, manifest, _ = run("synth", "--config", cfg, "--out", root / "data")
    assert code == 0
    code, summary, _ = run("train", "--config", cfg, "--data", root / "data", "--out", root / "m.f2fc",
                           "--report", root / "r.json")
    assert code == 0
    return root, cfg, manifest, summary


def test_synth_default_manifest(tmp_path):
    code, manifest, _ = run("synth", "--out", tmp_path / "d")
    assert code == 0
    assert manifest["bins"] == [2, 3, 4, 5] and manifest["T"] == 16
    assert manifest["splits"]["train"] == [400, 16, 9, 64]


def test_synth_rerun_byte_identical(tmp_path, small_run):
    root, cfg, _, _ = small_run
    run("synth", "--config", cfg, "--out", tmp_path / "again")
    for name in ("train.f2ft", "val.f2ft", "test.f2ft", "labels_train.csv"):
        assert (root / "data" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_synth_duplicate_bins_exit_1(tmp_path):
    cfg = write_config(tmp_path / "c.json", {"synth": {"class_bins": [2, 2, 4, 5]}})
    code, payload, err = run("synth", "--config", cfg, "--out", tmp_path / "d")
    assert code == 1
    assert "class_bins" in err and "class_bins" in payload["error"]["message"]


def test_synth_unwritable_exit_2(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    code, payload, _ = run("synth", "--out", blocker / "sub")
    assert code == 2 and payload["error"]["type"] == "FormatError"


def test_config_errors(tmp_path):
    code, _, _ = run("synth", "--config", write_config(tmp_path / "a.json", {"synth": {"bogus": 1}}),
                     "--out", tmp_path / "d")
    assert code == 1
    code, _, _ = run("synth", "--config", write_config(tmp_path / "b.json", {"model": {}}), "--out", tmp_path / "d")
    assert code == 1
    (tmp_path / "bad.json").write_text("{not json")
    code, _, _ = run("synth", "--config", tmp_path / "bad.json", "--out", tmp_path / "d")
    assert code == 2
    code, _, _ = run("synth", "--config", tmp_path / "missing.json", "--out", tmp_path / "d")
    assert code == 2


def test_usage_error_exit_1():
    code, payload, _ = run("verify", "--suite", "nope")
    assert code == 1 and payload["error"]["type"] == "ConfigError"


def test_train_outputs(small_run):
    root, _, _, summary = small_run
    report = json.loads((root / "r.json").read_text())
    assert len(report["train_loss"]) == 2
    assert summary["final_test_accuracy"] == report["final_test_accuracy"]
    assert (root / "m.f2fc").read_bytes()[:4] == b"F2FC"


def test_train_zero_epochs_chance(small_run, tmp_path):
    root, cfg, _, _ = small_run
    code, summary, _ = run("train", "--config", cfg, "--data", root / "data", "--out", tmp_path / "z.f2fc",
                           "--epochs", 0)
    assert code == 0 and summary["final_test_accuracy"] == 0.25


def test_train_corrupt_magic_exit_2(small_run, tmp_path):
    root, cfg, _, _ = small_run
    bad = tmp_path / "data"
    bad.mkdir()
    for f in (root / "data").iterdir():
        (bad / f.name).write_bytes(f.read_bytes())
    blob = bytearray((bad / "val.f2ft").read_bytes())
    blob[:4] = b"JUNK"
    (bad / "val.f2ft").write_bytes(bytes(blob))
    code, payload, err = run("train", "--config", cfg, "--data", bad, "--out", tmp_path / "m.f2fc")
    assert code == 2
    assert "val.f2ft" in err and payload["error"]["path"].endswith("val.f2ft")


def test_train_dim_mismatch_exit_1(small_run, tmp_path):
    root, _, _, _ = small_run
    cfg = write_config(tmp_path / "c.json", {**SMALL, "adapter": {"dim": 16, "width": 4}})
    code, payload, _ = run("train", "--config", cfg, "--data", root / "data", "--out", tmp_path / "m.f2fc")
    assert code == 1 and "adapter.dim" in payload["error"]["message"]


def test_train_divergence_exit_3(small_run, tmp_path):
    root, cfg, _, _ = small_run
    bad = tmp_path / "data"
    bad.mkdir()
    for f in (root / "data").iterdir():
        (bad / f.name).write_bytes(f.read_bytes())
    x = tensorio.load_tensor(bad / "train.f2ft")
    x[0, 0, 0, 0] = np.inf
    tensorio.save_tensor(bad / "train.f2ft", x)
    code, payload, _ = run("train", "--config", cfg, "--data", bad, "--out", tmp_path / "m.f2fc")
    assert code == 3 and payload["error"]["type"] == "DivergenceError"


def test_evaluate(small_run):
    root, _, _, summary = small_run
    code, result, _ = run("evaluate", "--checkpoint", root / "m.f2fc", "--data", root / "data")
    assert code == 0
    assert result["accuracy"] == summary["final_test_accuracy"]
    assert len(result["per_class_accuracy"]) == 4


def test_embed_and_discriminability(small_run, tmp_path):
    root, cfg, _, _ = small_run
    code, info, _ = run("embed", "--checkpoint", root / "m.f2fc", "--data", root / "data", "--tap", "post_adapter",
                        "--out", tmp_path / "e.f2ft", "--labels-out", tmp_path / "l.csv")
    assert code == 0 and info["shape"] == [16, 16, 3, 8] and info["trained"]
    code, info, _ = run("embed", "--config", cfg, "--data", root / "data", "--out", tmp_path / "u.f2ft")
    assert code == 0 and not info["trained"]
    code, summary, _ = run("discriminability", "--embeddings", tmp_path / "e.f2ft", "--labels", tmp_path / "l.csv",
                           "--fps", 30, "--out", tmp_path / "c.csv")
    assert code == 0 and summary["bins"] == 9 and summary["band"] == [1, 5]
    rows = analysis.read_curve_csv(tmp_path / "c.csv")
    assert [float(r["freq_hz"]) for r in rows] == [1.875 * k for k in range(9)]


def _dump(tmp_path, clips, labels):
    tensorio.save_tensor(tmp_path / "e.f2ft", clips)
    analysis.write_labels_csv(tmp_path / "l.csv", labels)
    return tmp_path / "e.f2ft", tmp_path / "l.csv"


def test_discriminability_planted_bin(tmp_path):
    rng = np.random.default_rng(0)
    labels = np.arange(20) % 2
    t = np.arange(16)
    amp = np.where(labels == 1, 2.0, 1.0)
    clips = amp[:, None, None] * np.sin(2 * np.pi * 3 * t[None, :, None] / 16 + rng.uniform(0, 6, (20, 1, 4)))
    emb, lab = _dump(tmp_path, clips, labels)
    code, summary, _ = run("discriminability", "--embeddings", emb, "--labels", lab)
    assert code == 0
    assert summary["argmax_bin"] == 3
    assert summary["band_mass"] == pytest.approx(1.0, abs=1e-9)


def test_discriminability_degenerate_and_single_class(tmp_path):
    emb, lab = _dump(tmp_path, np.ones((6, 16, 2, 3)), [0, 1, 2, 0, 1, 2])
    code, summary, _ = run("discriminability", "--embeddings", emb, "--labels", lab)
    assert code == 0 and summary["degenerate_uniform"] is True
    emb, lab = _dump(tmp_path, np.ones((3, 16, 3)), [1, 1, 1])
    code, _, _ = run("discriminability", "--embeddings", emb, "--labels", lab)
    assert code == 1


def test_video_spectrum(tmp_path):
    tensorio.save_tensor(tmp_path / "c.f2ft", np.full((8, 8, 4), 2.0))
    code, meta, _ = run("video-spectrum", "--volume", tmp_path / "c.f2ft", "--remove-dc", "--out", tmp_path / "c.pgm")
    assert code == 0 and meta["dc_removed"] is True and meta["whitened"] is False and meta["format"] == "pgm"
    assert not spectral.read_pgm(tmp_path / "c.pgm").any()
    rows = np.arange(32)[:, None, None]
    tensorio.save_tensor(tmp_path / "s.f2ft", np.cos(2 * np.pi * 4 * rows / 32) * np.ones((32, 32, 16)))
    code, meta, _ = run("video-spectrum", "--volume", tmp_path / "s.f2ft", "--whiten", "--remove-dc",
                        "--out", tmp_path / "s.f2ft.out")
    assert code == 0 and meta["whitened"] is True and meta["format"] == "f2ft"
    assert tuple(meta["peak"]) in {(16 + 4, 16), (16 - 4, 16)}
    tensorio.save_tensor(tmp_path / "bad.f2ft", np.zeros((4, 4)))
    code, _, _ = run("video-spectrum", "--volume", tmp_path / "bad.f2ft", "--out", tmp_path / "x.pgm")
    assert code == 1


def test_verify_fft_suite():
    code, result, _ = run("verify", "--suite", "fft")
    assert code == 0 and result["passed"] and result["checks"][0]["criterion"] == 1


def test_thread_cap(small_run, tmp_path):
    root, cfg, _, _ = small_run
    code, _, _ = run("train", "--config", cfg, "--data", root / "data", "--out", tmp_path / "t.f2fc",
                     "--report", tmp_path / "t.json", env={"F2F_THREADS": "1"})
    assert code == 0
    assert (tmp_path / "t.f2fc").read_bytes() == (root / "m.f2fc").read_bytes()
    assert (tmp_path / "t.json").read_bytes() == (root / "r.json").read_bytes()
    code, _, _ = run("synth", "--out", tmp_path / "d", env={"F2F_THREADS": "zero"})
    assert code == 1
