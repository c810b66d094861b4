import json
import subprocess
import sys

import numpy as np
import pytest

from mpose import cli, modelfile


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["datagen", "--out", str(root / "data"), "--n-train", "6", "--n-test", "3", "--seed", "1"]) == 0
    return root


def args(root, *rest):
    return list(rest) + ["--data-dir", str(root / "data")]


def test_datagen_manifest(workspace):
    lines = (workspace / "data" / "manifest.csv").read_text().splitlines()
    assert len(lines) == 10


def test_train_compress_prune_evaluate_inspect(workspace, capsys):
    w = workspace
    assert cli.main(args(w, "train", "--epochs", "1", "--batch-size", "256", "--out", str(w / "dense.bin"),
                         "--metrics", str(w / "hist.csv"))) == 0
    assert (w / "hist.csv").read_text().startswith("epoch,split,mse,lr")
    assert cli.main(args(w, "train", "--method", "mpo", "--rate", "5", "--epochs", "1", "--batch-size", "256",
                         "--out", str(w / "mpo.bin"))) == 0
    assert cli.main(["compress", str(w / "dense.bin"), "--rate", "0", "--out", str(w / "full.bin")]) == 0
    assert cli.main(args(w, "prune", str(w / "dense.bin"), "--rate", "5", "--increments", "2",
                         "--epochs-per-increment", "1", "--batch-size", "256", "--out", str(w / "pruned.bin"))) == 0
    capsys.readouterr()
    paths = [str(w / n) for n in ("dense.bin", "mpo.bin", "full.bin", "pruned.bin")]
    assert cli.main(["evaluate", *paths, "--data-dir", str(w / "data"), "--metrics", str(w / "eval.csv")]) == 0
    table = capsys.readouterr().out
    assert "Noisy Speech" in table and "mpo@5" in table and "pruning@5" in table
    assert cli.main(["inspect", str(w / "mpo.bin")]) == 0
    out = capsys.readouterr().out
    assert "compression rate" in out and "plan:" in out

    dense, full = modelfile.load(w / "dense.bin"), modelfile.load(w / "full.bin")
    wav = w / "data" / "noisy" / "test_0000.wav"
    assert cli.main(["enhance", str(w / "dense.bin"), str(wav), "--out", str(w / "a.wav")]) == 0
    assert cli.main(["enhance", str(w / "full.bin"), str(wav), "--out", str(w / "b.wav")]) == 0
    from mpose import speech
    assert np.max(np.abs(speech.read_wav(w / "a.wav") - speech.read_wav(w / "b.wav"))) <= 1 / 32767
    assert dense.normalizer.mean.tobytes() == full.normalizer.mean.tobytes()


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epochs": 3, "seed": 7}))
    ns = cli.build_parser().parse_args(["train", "--config", str(cfg), "--seed", "9"])
    rc = cli.resolve(ns)
    assert (rc.epochs, rc.seed) == (3, 9)


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epochz": 3}))
    assert cli.main(["train", "--config", str(cfg)]) == 2
    assert "error[config]" in capsys.readouterr().err


def test_missing_files_report_io(tmp_path, capsys):
    assert cli.main(["inspect", str(tmp_path / "nope.bin")]) == 3
    assert "error[io]" in capsys.readouterr().err
    (tmp_path / "junk.bin").write_bytes(b"junk")
    assert cli.main(["inspect", str(tmp_path / "junk.bin")]) == 2
    assert "error[format]" in capsys.readouterr().err


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "mpose", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("datagen", "train", "compress", "prune", "enhance", "evaluate", "inspect"):
        assert cmd in r.stdout


def test_datagen_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert cli.main(["datagen", "--out", str(tmp_path / d), "--n-train", "3", "--n-test", "3"]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.wav"))
    assert len(files) == 18
    assert all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    assert (tmp_path / "a/manifest.csv").read_bytes() == (tmp_path / "b/manifest.csv").read_bytes()


def test_enhance_silence_and_repeat(workspace, tmp_path):
    from mpose import speech
    speech.write_wav(tmp_path / "silent.wav", np.zeros(16000))
    model = workspace / "dense.bin"
    if not model.exists():
        pytest.skip("needs the pipeline test's model")
    for name in ("o1", "o2"):
        assert cli.main(["enhance", str(model), str(tmp_path / "silent.wav"), "--out", str(tmp_path / f"{name}.wav")]) == 0
    out = speech.read_wav(tmp_path / "o1.wav")
    assert np.all(np.isfinite(out)) and np.max(np.abs(out)) < 1e-3
    assert (tmp_path / "o1.wav").read_bytes() == (tmp_path / "o2.wav").read_bytes()
