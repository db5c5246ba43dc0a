import dataclasses
from pathlib import Path

import numpy as np
import pytest

from ivnli import cli
from ivnli.bundle import BundleError, BundleVersionError, ChecksumError, load_bundle, load_gmm, persist_bundle
from ivnli.frontend import extract_features, load_wav
from ivnli.gmm import EmConfig, map_adapt
from ivnli.kvconfig import ConfigError, format_kv, parse_kv
from ivnli.pipeline import (
    BackendConfig,
    Manifest,
    ManifestEntry,
    ManifestError,
    PipelineConfig,
    PipelineError,
    evaluate_pipeline,
    grid_search,
    predict_one,
    train_pipeline,
    validate_grid,
)

SMALL = PipelineConfig(ubm=EmConfig(n_components=8), tv_rank=10)


@pytest.fixture(scope="module")
def trained(small_corpus):
    manifest, _ = small_corpus
    return train_pipeline(manifest, SMALL)


class TestManifest:
    def test_round_trip(self, tmp_path):
        m = Manifest([ManifestEntry(tmp_path / "a.wav", "X", "train"), ManifestEntry(tmp_path / "b.wav", "Y", "dev")])
        m.write(tmp_path / "m.csv")
        assert (tmp_path / "m.csv").read_text().splitlines() == ["path,label,split", "a.wav,X,train", "b.wav,Y,dev"]
        back = Manifest.read(tmp_path / "m.csv")
        assert [(e.path, e.label, e.split) for e in back.entries] == [(e.path, e.label, e.split) for e in m.entries]

    @pytest.mark.parametrize(
        "body, match",
        [
            ("a,b\n", "header"),
            ("path,label,split\nx,y,z,w,train\n", "3 comma-separated"),
            ('path,label,split\n"a,b",X,train\n', "quoted"),
            ("path,label,split\na.wav,X,holdout\n", "unknown split"),
            ("path,label,split\na.wav,,train\n", "empty label"),
            ("path,label,split\na.wav,X,train\na.wav,Y,dev\n", "duplicate"),
        ],
    )
    def test_rejections(self, tmp_path, body, match):
        (tmp_path / "m.csv").write_text(body)
        with pytest.raises(ManifestError, match=match):
            Manifest.read(tmp_path / "m.csv")


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = PipelineConfig(
            ubm=EmConfig(n_components=16, init="binary_split"),
            tv_rank=20,
            backend=BackendConfig(chain=("pca", "lda"), lda_dim=3, scoring="cosine", length_norm=True),
            seed=5,
        )
        path = tmp_path / "p.cfg"
        path.write_text(format_kv(cfg.to_items()))
        assert PipelineConfig.from_file(path) == cfg

    def test_partial_file(self, tmp_path):
        path = tmp_path / "p.cfg"
        path.write_text("# grid cell\nubm.n_components=128\ntv.rank=100\nfrontend.filterbank_family=gammatone\n")
        cfg = PipelineConfig.from_file(path)
        assert cfg.ubm.n_components == 128 and cfg.tv_rank == 100
        assert cfg.frontend.filterbank_family == "gammatone"
        assert cfg.frontend.n_bands == 26

    def test_readme_defaults_block(self):
        readme = (Path(__file__).parents[1] / "README.md").read_text()
        block = readme.split("the defaults:\n\n```\n")[1].split("```")[0]
        assert PipelineConfig.from_dict(parse_kv(block)) == PipelineConfig()

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict({"tv.size": "3"})

    def test_rank_bound(self):
        with pytest.raises(ConfigError, match="K\\*D"):
            PipelineConfig(ubm=EmConfig(n_components=1), tv_rank=61)

    def test_paper_grids_valid(self):
        mfcc = validate_grid(PipelineConfig(), [128, 256, 512], [100, 200, 300])
        gfcc_base = PipelineConfig(frontend=dataclasses.replace(PipelineConfig().frontend, filterbank_family="gammatone"))
        gfcc = validate_grid(gfcc_base, [128, 256, 512], [200, 300, 400])
        assert len(mfcc) == len(gfcc) == 9

    def test_empty_grid(self):
        with pytest.raises(ConfigError):
            validate_grid(PipelineConfig(), [], [100])


class TestTrainEvaluate:
    def test_bundle_shape(self, trained):
        assert trained.labels == ("ARA", "CHI", "FRE")
        assert trained.class_models.model_vectors.shape == (3, 2)
        assert [t.kind for t in trained.transforms] == ["lda", "pca", "wccn"]
        assert trained.tv.t_matrix.shape == (8 * 60, 10)

    def test_train_split_accuracy(self, trained, small_corpus):
        manifest, _ = small_corpus
        report = evaluate_pipeline(trained, manifest, "train")
        assert report.accuracy == 1.0
        np.testing.assert_array_equal(report.confusion.sum(axis=1), [6, 6, 6])

    def test_report_identities(self, trained, small_corpus):
        manifest, _ = small_corpus
        report = evaluate_pipeline(trained, manifest, "dev")
        assert report.accuracy == np.trace(report.confusion) / report.confusion.sum()
        np.testing.assert_array_equal(report.confusion.sum(axis=1), [2, 2, 2])
        assert "accuracy" in report.to_text()
        assert report.to_csv().splitlines()[0] == "true_label,recall,ARA,CHI,FRE"

    def test_missing_train_label(self, small_corpus):
        manifest, _ = small_corpus
        entries = [e for e in manifest.entries if not (e.label == "CHI" and e.split == "train")]
        with pytest.raises(PipelineError, match="CHI"):
            train_pipeline(Manifest(entries), SMALL)

    def test_empty_split(self, trained, small_corpus):
        manifest, _ = small_corpus
        with pytest.raises(PipelineError, match="no instances"):
            evaluate_pipeline(trained, manifest, "test")

    def test_unknown_label(self, trained, small_corpus):
        manifest, _ = small_corpus
        e = manifest.split("dev")[0]
        m = Manifest([ManifestEntry(e.path, "ZZZ", "dev")])
        with pytest.raises(PipelineError, match="ZZZ"):
            evaluate_pipeline(trained, m, "dev")

    def test_stage_error_names_path(self, tmp_path, small_corpus):
        manifest, _ = small_corpus
        bad = tmp_path / "bad.wav"
        bad.write_bytes(b"not a wav")
        m = Manifest(manifest.entries + [ManifestEntry(bad, "ARA", "train")])
        with pytest.raises(PipelineError) as info:
            train_pipeline(m, SMALL)
        assert info.value.stage == "features" and info.value.path == str(bad)

    def test_predict_one(self, trained, small_corpus):
        manifest, _ = small_corpus
        entry = manifest.split("train")[0]
        label, scores = predict_one(trained, entry.path)
        assert label == entry.label == "ARA"
        assert scores.shape == (3,)
        label2, scores2 = predict_one(trained, entry.path)
        assert label2 == label and scores2.tobytes() == scores.tobytes()

    def test_threaded_features_identical(self, small_corpus, trained):
        manifest, _ = small_corpus
        again = train_pipeline(manifest, SMALL, n_jobs=3)
        assert again == trained

    def test_cosine_and_length_norm(self, small_corpus):
        manifest, _ = small_corpus
        cfg = dataclasses.replace(SMALL, backend=BackendConfig(scoring="cosine", length_norm=True))
        bundle = train_pipeline(manifest, cfg)
        report = evaluate_pipeline(bundle, manifest, "train")
        assert 0.0 <= report.accuracy <= 1.0


class TestBundle:
    def test_round_trip(self, trained, tmp_path):
        persist_bundle(trained, tmp_path / "b")
        assert load_bundle(tmp_path / "b") == trained

    def test_checksum(self, trained, tmp_path):
        persist_bundle(trained, tmp_path / "b")
        path = tmp_path / "b" / "t_matrix.f64"
        raw = bytearray(path.read_bytes())
        raw[17] ^= 0x01
        path.write_bytes(bytes(raw))
        with pytest.raises(ChecksumError):
            load_bundle(tmp_path / "b")

    def test_truncated(self, trained, tmp_path):
        persist_bundle(trained, tmp_path / "b")
        path = tmp_path / "b" / "plda_mu.f64"
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(BundleError, match="truncated"):
            load_bundle(tmp_path / "b")

    def test_version(self, trained, tmp_path):
        persist_bundle(trained, tmp_path / "b")
        meta = tmp_path / "b" / "meta"
        meta.write_text(meta.read_text().replace("format_version=1", "format_version=99"))
        with pytest.raises(BundleVersionError, match="99"):
            load_bundle(tmp_path / "b")

    def test_layout(self, trained, tmp_path):
        persist_bundle(trained, tmp_path / "b")
        meta = (tmp_path / "b" / "meta").read_text()
        assert "tensor.t_matrix.shape=480,10" in meta
        assert "labels=ARA,CHI,FRE" in meta
        raw = np.fromfile(tmp_path / "b" / "t_matrix.f64", dtype="<f8").reshape(480, 10)
        np.testing.assert_array_equal(raw, trained.tv.t_matrix)


class TestGrid:
    def test_cells_and_failures(self, small_corpus):
        manifest, _ = small_corpus
        # R = 700 exceeds K*D = 8*60 and must fail alone
        result = grid_search(manifest, SMALL, [8, 4], [700, 5])
        assert result.k_values == [4, 8] and result.r_values == [5, 700]
        assert set(result.accuracy) == {(4, 5), (8, 5)}
        assert set(result.failures) == {(4, 700), (8, 700)}
        assert result.matrix().shape == (2, 2)
        assert "failed" in result.to_text()


class TestCli:
    def test_synth_train_eval_predict_grid(self, tmp_path, capsys):
        corpus = tmp_path / "corpus"
        assert cli.main(["synth", "--out", str(corpus), "--classes", "3", "--train", "4", "--dev", "2",
                         "--duration", "1.0", "--noise", "0"]) == 0
        cfg = tmp_path / "p.cfg"
        cfg.write_text("ubm.n_components=4\nubm.n_iterations=3\ntv.rank=6\ntv.iterations=2\n")
        manifest = corpus / "manifest.csv"
        bundle = tmp_path / "bundle"
        assert cli.main(["train", "--manifest", str(manifest), "--config", str(cfg), "--out", str(bundle)]) == 0
        assert cli.main(["eval", "--manifest", str(manifest), "--bundle", str(bundle), "--split", "dev",
                         "--out", str(tmp_path / "rep")]) == 0
        assert (tmp_path / "rep" / "report.csv").is_file()
        capsys.readouterr()
        assert cli.main(["predict", "--bundle", str(bundle), str(corpus / "ARA" / "train_000.wav")]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] in ("ARA", "CHI", "FRE") and len(out) == 4
        assert cli.main(["grid", "--manifest", str(manifest), "--config", str(cfg),
                         "--k-values", "2,4", "--r-values", "3", "--out", str(tmp_path / "grid")]) == 0
        assert (tmp_path / "grid" / "grid.csv").read_text().startswith("n_components,tv_rank,accuracy")

    def test_adapt(self, trained, small_corpus, tmp_path):
        manifest, _ = small_corpus
        persist_bundle(trained, tmp_path / "b")
        wavs = [str(e.path) for e in manifest.split("dev")[:2]]
        assert cli.main(["adapt", "--bundle", str(tmp_path / "b"), "--out", str(tmp_path / "g"), *wavs]) == 0
        adapted = load_gmm(tmp_path / "g")
        frames = np.vstack([extract_features(load_wav(w), trained.config.frontend).frames for w in wavs])
        assert adapted == map_adapt(trained.ubm, frames)
        assert cli.main(["adapt", "--bundle", str(tmp_path / "b"), "--relevance", "0", "--out", str(tmp_path / "g"), wavs[0]]) == 1
        with pytest.raises(BundleError, match="not a GMM"):
            load_gmm(tmp_path / "b")

    def test_usage_error_exit_code(self, capsys):
        with pytest.raises(SystemExit) as info:
            cli.main(["train"])
        assert info.value.code == 1

    def test_bad_config_is_usage_error(self, tmp_path):
        cfg = tmp_path / "p.cfg"
        cfg.write_text("nonsense.key=1\n")
        (tmp_path / "m.csv").write_text("path,label,split\n")
        assert cli.main(["train", "--manifest", str(tmp_path / "m.csv"), "--config", str(cfg), "--out", str(tmp_path / "b")]) == 1

    def test_data_error_exit_code(self, tmp_path):
        (tmp_path / "m.csv").write_text("path,label,split\n")
        assert cli.main(["train", "--manifest", str(tmp_path / "m.csv"), "--out", str(tmp_path / "b")]) == 2
        assert cli.main(["predict", "--bundle", str(tmp_path / "missing"), "x.wav"]) == 2
