import numpy as np
import pytest

from mpose import data, speech
from mpose.errors import ConfigError, FormatError
from mpose.metrics import global_snr

SMALL = dict(n_train=12, n_test=6, noise_seconds=20)


def examples(**kw):
    return list(data.generate_examples(data.DatagenConfig(**{**SMALL, **kw})))


def test_counts_and_snrs():
    ex = examples()
    assert sum(e.split == "train" for e in ex) == 12
    assert sum(e.split == "test" for e in ex) == 6
    assert {e.snr_db for e in ex} == {-5.0, 0.0, 5.0}
    for e in ex:
        assert e.clean.size == 80_000
        assert global_snr(e.clean, e.noisy) == pytest.approx(e.snr_db, abs=1e-9)


def test_default_counts():
    cfg = data.DatagenConfig()
    assert (cfg.n_train, cfg.n_test) == (200, 40)


def test_generation_deterministic():
    a, b = examples(seed=3), examples(seed=3)
    assert all(np.array_equal(x.noisy, y.noisy) for x, y in zip(a, b))
    assert not np.array_equal(a[0].noisy, examples(seed=4)[0].noisy)


def test_task_noise_sets():
    matched = examples(task="matched")
    assert {e.noise_type for e in matched} <= set(data.TEST_NOISES)
    mis = examples(task="mismatched")
    train = {e.noise_type for e in mis if e.split == "train"}
    test = {e.noise_type for e in mis if e.split == "test"}
    assert not train & test
    with pytest.raises(ConfigError):
        examples(task="other")


def test_dataset_round_trip(tmp_path):
    cfg = data.DatagenConfig(out_dir=str(tmp_path), **SMALL)
    manifest = data.write_dataset(cfg)
    rows = data.read_manifest(manifest)
    assert len(rows) == 18 and tuple(rows[0]) == data.MANIFEST_FIELDS
    loaded = data.load_examples(manifest, "test", limit=2)
    assert [e.split for e in loaded] == ["test", "test"]
    for e in loaded:
        assert global_snr(e.clean, e.noisy) == pytest.approx(e.snr_db, abs=1e-9)
    (tmp_path / rows[0]["clean"]).unlink()
    with pytest.raises(FileNotFoundError, match=rows[0]["clean"].split("/")[-1]):
        data.load_examples(manifest)


def test_manifest_missing_columns(tmp_path):
    (tmp_path / "m.csv").write_text("id,split\na,train\n")
    with pytest.raises(FormatError):
        data.read_manifest(tmp_path / "m.csv")
    with pytest.raises(FileNotFoundError):
        data.read_manifest(tmp_path / "none.csv")


def test_training_data_shapes():
    ex = examples()[:3]
    seqs, norm = data.training_data(ex)
    assert len(seqs.features) == 3
    n = speech.n_frames_for(80_000)
    assert seqs.features[0].shape == (n, 256) and seqs.targets[0].shape == (n, 256)
    z = np.concatenate(seqs.features)
    np.testing.assert_allclose(z.mean(0), 0, atol=1e-6)
