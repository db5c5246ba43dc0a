import numpy as np
import pytest

from ivnli.frontend import load_wav
from ivnli.gmm import DiagonalGmm
from ivnli.pipeline import Manifest
from ivnli.synth import SynthSpec, generate_corpus, ivector_posterior_oracle
from ivnli.tvm import BaumWelchStats, TotalVariabilityModel


def test_counts_and_manifest(tmp_path):
    spec = SynthSpec(n_classes=11, n_train=10, n_dev=0, duration_s=0.2)
    manifest = generate_corpus(spec, tmp_path)
    assert len(manifest.split("train")) == 110
    assert len(list(tmp_path.rglob("*.wav"))) == 110
    reread = Manifest.read(tmp_path / "manifest.csv")
    assert [e.label for e in reread.entries] == [e.label for e in manifest.entries]
    assert all(e.path.is_file() for e in reread.entries)
    assert reread.labels()[:3] == ["ARA", "CHI", "FRE"]


def test_byte_identical_with_same_seed(tmp_path):
    spec = SynthSpec(n_classes=2, n_train=2, n_dev=1, duration_s=0.3, seed=11)
    generate_corpus(spec, tmp_path / "a")
    generate_corpus(spec, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_different_seed_differs(tmp_path):
    generate_corpus(SynthSpec(n_classes=2, n_train=1, n_dev=0, duration_s=0.3, seed=1), tmp_path / "a")
    generate_corpus(SynthSpec(n_classes=2, n_train=1, n_dev=0, duration_s=0.3, seed=2), tmp_path / "b")
    rel = "ARA/train_000.wav"
    assert (tmp_path / "a" / rel).read_bytes() != (tmp_path / "b" / rel).read_bytes()


def test_audio_properties(tmp_path):
    generate_corpus(SynthSpec(n_classes=2, n_train=1, n_dev=0, duration_s=0.5), tmp_path)
    audio = load_wav(tmp_path / "ARA" / "train_000.wav")
    assert audio.sample_rate == 16000
    assert audio.samples.size == 8000
    assert 0 < np.abs(audio.samples).max() <= 1.0


def test_split_proportions():
    spec = SynthSpec.from_total(100)
    assert spec.counts() == {"train": 64, "dev": 19, "test": 17}


def test_signatures_in_range():
    for sig in SynthSpec(seed=3).class_signatures():
        assert all(300.0 <= f <= 3000.0 for f in sig.resonances)
        assert -6.0 <= sig.tilt_db_per_octave <= 6.0


def test_invalid_spec():
    with pytest.raises(ValueError):
        SynthSpec(n_classes=1)


class TestOracle:
    def test_zero_t(self):
        ubm = DiagonalGmm([0.5, 0.5], np.zeros((2, 2)), np.ones((2, 2)))
        tv = TotalVariabilityModel(np.zeros((4, 2)), ubm)
        w = ivector_posterior_oracle(tv, BaumWelchStats(np.array([3.0, 1.0]), np.ones((2, 2))))
        np.testing.assert_allclose(w, 0.0, atol=1e-9)

    def test_scalar(self):
        ubm = DiagonalGmm([1.0], [[0.0]], [[1.0]])
        tv = TotalVariabilityModel(np.array([[1.0]]), ubm)
        w = ivector_posterior_oracle(tv, BaumWelchStats(np.array([4.0]), np.array([[2.0]])))
        assert w[0] == pytest.approx(0.4, abs=1e-6)

    def test_size_limit(self):
        ubm = DiagonalGmm(np.ones(9) / 9, np.zeros((9, 4)), np.ones((9, 4)))
        tv = TotalVariabilityModel(np.zeros((36, 2)), ubm)
        with pytest.raises(ValueError, match="limited"):
            ivector_posterior_oracle(tv, BaumWelchStats(np.ones(9), np.zeros((9, 4))))
