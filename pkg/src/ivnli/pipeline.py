"""End-to-end training, evaluation, prediction and grid search over manifests."""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import backend as be
from .frontend import FeatureMatrix, FrontendConfig, extract_features, load_wav
from .gmm import DiagonalGmm, EmConfig, train_ubm
from .kvconfig import ConfigError, read_kv, to_bool
from .tvm import (
    TotalVariabilityModel,
    accumulate_bw_stats,
    extract_ivectors,
    train_total_variability,
)

log = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")
FORMAT_VERSION = 1


class PipelineError(RuntimeError):
    """A pipeline stage failed; carries the stage name and, if known, the utterance path."""

    def __init__(self, stage: str, message: str, path: str | Path | None = None):
        self.stage = stage
        self.path = None if path is None else str(path)
        where = f" [{self.path}]" if self.path else ""
        super().__init__(f"{stage}{where}: {message}")


class ManifestError(ValueError):
    pass


# --- manifest ----------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    label: str
    split: str


@dataclass
class Manifest:
    entries: list[ManifestEntry]

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if not e.label:
                raise ManifestError(f"{e.path}: empty label")
            if e.split not in SPLITS:
                raise ManifestError(f"{e.path}: unknown split {e.split!r}")
            key = str(e.path)
            if key in seen:
                raise ManifestError(f"duplicate path {key}")
            seen.add(key)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def labels(self) -> list[str]:
        return list(dict.fromkeys(e.label for e in self.entries))

    @classmethod
    def read(cls, path: str | Path) -> "Manifest":
        """Parse ``path,label,split`` CSV; relative paths resolve against the CSV's directory."""
        path = Path(path)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
        if not lines or [c.strip() for c in lines[0].split(",")] != ["path", "label", "split"]:
            raise ManifestError(f"{path}: header must be 'path,label,split'")
        entries = []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            if '"' in line:
                raise ManifestError(f"{path}:{lineno}: quoted fields are not supported")
            cols = line.split(",")
            if len(cols) != 3:
                raise ManifestError(
                    f"{path}:{lineno}: expected 3 comma-separated fields, got {len(cols)} "
                    "(paths may not contain commas)"
                )
            p, label, split = (c.strip() for c in cols)
            audio = Path(p)
            if not audio.is_absolute():
                audio = path.parent / audio
            entries.append(ManifestEntry(audio, label, split))
        return cls(entries)

    def write(self, path: str | Path) -> None:
        path = Path(path)
        base = path.parent.resolve()
        rows = ["path,label,split"]
        for e in self.entries:
            p = Path(e.path)
            try:
                p = p.resolve().relative_to(base)
            except ValueError:
                pass
            text = p.as_posix()
            if "," in text or "," in e.label:
                raise ManifestError(f"commas are not allowed in manifest fields: {text!r}")
            rows.append(f"{text},{e.label},{e.split}")
        path.write_text("\n".join(rows) + "\n", encoding="utf-8")


# --- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class BackendConfig:
    """``lda_dim``/``pca_dim`` of None mean C-1 and all remaining dimensions."""

    chain: tuple[str, ...] = ("lda", "pca", "wccn")
    lda_dim: int | None = None
    pca_dim: int | None = None
    scoring: str = "plda"
    length_norm: bool = False

    def __post_init__(self):
        bad = [c for c in self.chain if c not in be.KINDS]
        if bad:
            raise ConfigError(f"unknown chain stages {bad}")
        if len(set(self.chain)) != len(self.chain):
            raise ConfigError("chain stages must be distinct")
        if self.scoring not in ("plda", "cosine"):
            raise ConfigError(f"scoring must be 'plda' or 'cosine', got {self.scoring!r}")


@dataclass(frozen=True)
class PipelineConfig:
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    ubm: EmConfig = field(default_factory=EmConfig)
    tv_rank: int = 50
    tv_iterations: int = 5
    backend: BackendConfig = field(default_factory=BackendConfig)
    seed: int = 0

    def __post_init__(self):
        if self.tv_rank < 1:
            raise ConfigError("tv_rank must be >= 1")
        if self.tv_iterations < 1:
            raise ConfigError("tv_iterations must be >= 1")
        kd = self.ubm.n_components * self.frontend.n_features
        if self.tv_rank > kd:
            raise ConfigError(f"tv_rank {self.tv_rank} exceeds supervector size K*D={kd}")

    def with_grid_point(self, n_components: int, rank: int) -> "PipelineConfig":
        return dataclasses.replace(
            self, ubm=dataclasses.replace(self.ubm, n_components=n_components), tv_rank=rank
        )

    def to_items(self) -> list[tuple[str, object]]:
        items: list[tuple[str, object]] = []
        for k, v in dataclasses.asdict(self.frontend).items():
            items.append((f"frontend.{k}", "auto" if v is None else v))
        for k, v in dataclasses.asdict(self.ubm).items():
            items.append((f"ubm.{k}", v))
        items.append(("tv.rank", self.tv_rank))
        items.append(("tv.iterations", self.tv_iterations))
        b = self.backend
        items.append(("backend.chain", ",".join(b.chain) if b.chain else "none"))
        items.append(("backend.lda_dim", "auto" if b.lda_dim is None else b.lda_dim))
        items.append(("backend.pca_dim", "auto" if b.pca_dim is None else b.pca_dim))
        items.append(("backend.scoring", b.scoring))
        items.append(("backend.length_norm", b.length_norm))
        items.append(("seed", self.seed))
        return items

    @classmethod
    def from_dict(cls, values: dict[str, str]) -> "PipelineConfig":
        front: dict[str, str] = {}
        ubm: dict[str, object] = {}
        top: dict[str, object] = {}
        back: dict[str, object] = {}
        ubm_types = {"n_components": int, "n_iterations": int, "seed": int, "variance_floor": float, "init": str}
        try:
            for key, raw in values.items():
                section, _, name = key.partition(".")
                if section == "frontend" and name:
                    front[name] = raw
                elif section == "ubm" and name in ubm_types:
                    ubm[name] = ubm_types[name](raw)
                elif key == "tv.rank":
                    top["tv_rank"] = int(raw)
                elif key == "tv.iterations":
                    top["tv_iterations"] = int(raw)
                elif key == "seed":
                    top["seed"] = int(raw)
                elif key == "backend.chain":
                    back["chain"] = () if raw.strip().lower() in ("", "none") else tuple(
                        s.strip() for s in raw.split(",")
                    )
                elif key in ("backend.lda_dim", "backend.pca_dim"):
                    back[name] = None if raw.strip().lower() in ("auto", "none", "") else int(raw)
                elif key == "backend.scoring":
                    back["scoring"] = raw.strip()
                elif key == "backend.length_norm":
                    back["length_norm"] = to_bool(raw)
                else:
                    raise ConfigError(f"unknown config key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad config value: {exc}") from exc
        return cls(
            frontend=FrontendConfig.from_dict(front),
            ubm=EmConfig(**ubm),
            backend=BackendConfig(**back),
            **top,
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_dict(read_kv(path))


# --- bundle ------------------------------------------------------------------


@dataclass
class ModelBundle:
    ubm: DiagonalGmm
    tv: TotalVariabilityModel
    transforms: list[be.LinearTransform]
    class_models: be.ClassModels
    plda: be.PldaModel
    config: PipelineConfig
    version: int = FORMAT_VERSION

    @property
    def labels(self) -> tuple[str, ...]:
        return self.class_models.labels

    def __eq__(self, other):
        if not isinstance(other, ModelBundle):
            return NotImplemented
        return (
            self.version == other.version
            and self.ubm == other.ubm
            and self.tv == other.tv
            and len(self.transforms) == len(other.transforms)
            and all(a == b for a, b in zip(self.transforms, other.transforms))
            and self.class_models == other.class_models
            and self.plda == other.plda
            and self.config == other.config
        )

    def embed(self, ivectors: np.ndarray) -> np.ndarray:
        out = be.apply_chain(self.transforms, ivectors)
        if self.config.backend.length_norm:
            out = be.length_normalize(out)
        return out

    def score_vector(self, embedded: np.ndarray) -> np.ndarray:
        return be.score_all(self.plda, self.class_models, embedded, self.config.backend.scoring)


# --- stages ------------------------------------------------------------------


def _features_for(entries: Sequence[ManifestEntry], cfg: FrontendConfig, n_jobs: int = 1) -> list[FeatureMatrix]:
    def one(entry: ManifestEntry) -> FeatureMatrix:
        try:
            return extract_features(load_wav(entry.path), cfg)
        except Exception as exc:
            raise PipelineError("features", str(exc), entry.path) from exc

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(one, entries))
    return [one(e) for e in entries]


def _ivectors_for(bundle_ubm, tv, feats, entries):
    stats = []
    for f, e in zip(feats, entries):
        try:
            stats.append(accumulate_bw_stats(bundle_ubm, f))
        except Exception as exc:
            raise PipelineError("stats", str(exc), e.path) from exc
    try:
        return extract_ivectors(tv, stats)
    except Exception as exc:
        raise PipelineError("ivector", str(exc)) from exc


def _check_train_split(manifest: Manifest) -> list[ManifestEntry]:
    train = manifest.split("train")
    if not train:
        raise PipelineError("manifest", "no train entries")
    have = {e.label for e in train}
    missing = [lab for lab in manifest.labels() if lab not in have]
    if missing:
        raise PipelineError("manifest", f"no train data for label(s) {', '.join(missing)}")
    return train


def _train_from_features(train: Sequence[ManifestEntry], feats: Sequence[FeatureMatrix], config: PipelineConfig) -> ModelBundle:
    pooled = np.vstack([f.frames for f in feats])
    try:
        ubm = train_ubm(pooled, config.ubm)
    except Exception as exc:
        raise PipelineError("ubm", str(exc)) from exc

    stats = []
    for f, e in zip(feats, train):
        try:
            stats.append(accumulate_bw_stats(ubm, f))
        except Exception as exc:
            raise PipelineError("stats", str(exc), e.path) from exc
    try:
        tv = train_total_variability(stats, ubm, config.tv_rank, config.tv_iterations, config.seed)
    except Exception as exc:
        raise PipelineError("total_variability", str(exc)) from exc
    try:
        ivecs = extract_ivectors(tv, stats)
    except Exception as exc:
        raise PipelineError("ivector", str(exc)) from exc

    labels = [e.label for e in train]
    transforms: list[be.LinearTransform] = []
    current = ivecs
    for stage in config.backend.chain:
        try:
            if stage == "lda":
                t = be.fit_lda(current, labels, config.backend.lda_dim)
            elif stage == "pca":
                dim = config.backend.pca_dim or min(current.shape[0] - 1, current.shape[1])
                t = be.fit_pca(current, dim)
            else:
                t = be.fit_wccn(current, labels)
        except Exception as exc:
            raise PipelineError(stage, str(exc)) from exc
        transforms.append(t)
        current = t.apply(current)
    if config.backend.length_norm:
        current = be.length_normalize(current)
    try:
        models = be.compute_class_models(current, labels)
        plda = be.fit_plda(current, labels)
    except Exception as exc:
        raise PipelineError("plda", str(exc)) from exc
    return ModelBundle(ubm, tv, transforms, models, plda, config)


def train_pipeline(manifest: Manifest, config: PipelineConfig, n_jobs: int = 1) -> ModelBundle:
    """Features -> UBM -> statistics -> T -> i-vectors -> back-end chain -> class models + PLDA."""
    train = _check_train_split(manifest)
    feats = _features_for(train, config.frontend, n_jobs)
    return _train_from_features(train, feats, config)


# --- evaluation --------------------------------------------------------------


@dataclass
class EvaluationReport:
    labels: tuple[str, ...]
    confusion: np.ndarray  # rows = true class, columns = predicted class
    config: dict[str, object]
    split: str = "dev"

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.confusion.sum())

    @property
    def per_class_recall(self) -> np.ndarray:
        rows = self.confusion.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, np.diag(self.confusion) / rows, np.nan)

    def to_text(self) -> str:
        width = max(5, *(len(l) for l in self.labels))
        lines = [
            f"split: {self.split}",
            f"instances: {self.total}",
            f"accuracy: {100.0 * self.accuracy:.2f}%",
            "",
            "confusion (rows = true, columns = predicted):",
            " " * width + " " + " ".join(f"{l:>{width}}" for l in self.labels),
        ]
        for lab, row in zip(self.labels, self.confusion):
            lines.append(f"{lab:>{width}} " + " ".join(f"{int(v):>{width}}" for v in row))
        lines.append("")
        lines.append("per-class recall:")
        for lab, r in zip(self.labels, self.per_class_recall):
            lines.append(f"  {lab}: {'n/a' if np.isnan(r) else f'{100.0 * r:.2f}%'}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["true_label,recall," + ",".join(self.labels)]
        for lab, recall, row in zip(self.labels, self.per_class_recall, self.confusion):
            rows.append(f"{lab},{'' if np.isnan(recall) else repr(float(recall))}," + ",".join(str(int(v)) for v in row))
        rows.append(f"accuracy,{self.accuracy!r}," + ",".join("" for _ in self.labels))
        return "\n".join(rows) + "\n"


def _classify_features(bundle: ModelBundle, feats, entries) -> list[tuple[str, np.ndarray]]:
    ivecs = _ivectors_for(bundle.ubm, bundle.tv, feats, entries)
    out = []
    embedded = bundle.embed(ivecs)
    for vec, e in zip(embedded, entries):
        try:
            scores = bundle.score_vector(vec)
            out.append((be.classify(scores, bundle.labels), scores))
        except Exception as exc:
            raise PipelineError("score", str(exc), e.path) from exc
    return out


def _report(bundle: ModelBundle, entries, predictions, split: str) -> EvaluationReport:
    index = {lab: i for i, lab in enumerate(bundle.labels)}
    confusion = np.zeros((len(index), len(index)), dtype=np.int64)
    for e, (pred, _) in zip(entries, predictions):
        confusion[index[e.label], index[pred]] += 1
    return EvaluationReport(bundle.labels, confusion, dict(bundle.config.to_items()), split)


def _entries_to_evaluate(bundle: ModelBundle, manifest: Manifest, split: str) -> list[ManifestEntry]:
    if split not in SPLITS:
        raise PipelineError("evaluate", f"unknown split {split!r}")
    entries = manifest.split(split)
    if not entries:
        raise PipelineError("evaluate", f"no instances in split {split!r}")
    unknown = sorted({e.label for e in entries} - set(bundle.labels))
    if unknown:
        raise PipelineError("evaluate", f"labels not in model: {', '.join(unknown)}")
    return entries


def evaluate_pipeline(bundle: ModelBundle, manifest: Manifest, split: str = "dev", n_jobs: int = 1) -> EvaluationReport:
    entries = _entries_to_evaluate(bundle, manifest, split)
    feats = _features_for(entries, bundle.config.frontend, n_jobs)
    return _report(bundle, entries, _classify_features(bundle, feats, entries), split)


def predict_one(bundle: ModelBundle, wav_path: str | Path) -> tuple[str, np.ndarray]:
    entry = ManifestEntry(Path(wav_path), "", "test")
    feats = _features_for([entry], bundle.config.frontend)
    return _classify_features(bundle, feats, [entry])[0]


# --- grid search -------------------------------------------------------------


@dataclass
class GridResult:
    """Accuracy per (Gaussian count, T rank) cell, with failures kept separately."""

    k_values: list[int]
    r_values: list[int]
    accuracy: dict[tuple[int, int], float]
    failures: dict[tuple[int, int], str]

    def rows(self) -> list[tuple[int, int, float | None]]:
        return [(k, r, self.accuracy.get((k, r))) for k in self.k_values for r in self.r_values]

    def to_text(self, title: str = "Dev accuracy by UBM size and T rank") -> str:
        lines = [title, "", f"{'UBM components':<24}{'T rank':<16}accuracy %"]
        for k in self.k_values:
            for j, r in enumerate(self.r_values):
                acc = self.accuracy.get((k, r))
                cell = f"{100.0 * acc:.2f}" if acc is not None else f"failed: {self.failures[(k, r)]}"
                lines.append(f"{(str(k) if j == 0 else ''):<24}{r:<16}{cell}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["n_components,tv_rank,accuracy,error"]
        for k, r, acc in self.rows():
            err = self.failures.get((k, r), "").replace(",", ";").replace("\n", " ")
            rows.append(f"{k},{r},{'' if acc is None else repr(acc)},{err}")
        return "\n".join(rows) + "\n"

    def matrix(self) -> np.ndarray:
        """K rows by R columns; NaN for failed cells."""
        return np.array([[self.accuracy.get((k, r), np.nan) for r in self.r_values] for k in self.k_values])


def _grid_axes(k_values: Iterable[int], r_values: Iterable[int]) -> tuple[list[int], list[int]]:
    ks = sorted(set(int(k) for k in k_values))
    rs = sorted(set(int(r) for r in r_values))
    if not ks:
        raise ConfigError("empty Gaussian-count grid")
    if not rs:
        raise ConfigError("empty T-rank grid")
    return ks, rs


def validate_grid(base_config: PipelineConfig, k_values: Iterable[int], r_values: Iterable[int]) -> list[PipelineConfig]:
    """Build the config of every grid cell, raising ConfigError on the first invalid one."""
    ks, rs = _grid_axes(k_values, r_values)
    return [base_config.with_grid_point(k, r) for k in ks for r in rs]


def grid_search(
    manifest: Manifest,
    base_config: PipelineConfig,
    k_values: Iterable[int],
    r_values: Iterable[int],
    split: str = "dev",
    n_jobs: int = 1,
    progress: Callable[[int, int, float | None], None] | None = None,
) -> GridResult:
    """Train and evaluate once per (K, R) cell; a failing cell is recorded and skipped."""
    ks, rs = _grid_axes(k_values, r_values)
    train = _check_train_split(manifest)
    train_feats = _features_for(train, base_config.frontend, n_jobs)
    eval_entries = manifest.split(split)
    if not eval_entries:
        raise PipelineError("evaluate", f"no instances in split {split!r}")
    eval_feats = _features_for(eval_entries, base_config.frontend, n_jobs)

    accuracy: dict[tuple[int, int], float] = {}
    failures: dict[tuple[int, int], str] = {}
    for k in ks:
        for r in rs:
            try:
                bundle = _train_from_features(train, train_feats, base_config.with_grid_point(k, r))
                entries = _entries_to_evaluate(bundle, manifest, split)
                report = _report(bundle, entries, _classify_features(bundle, eval_feats, entries), split)
                accuracy[(k, r)] = report.accuracy
            except (PipelineError, ConfigError, ArithmeticError, ValueError) as exc:
                log.warning("grid cell K=%d R=%d failed: %s", k, r, exc)
                failures[(k, r)] = str(exc)
            if progress is not None:
                progress(k, r, accuracy.get((k, r)))
    return GridResult(ks, rs, accuracy, failures)
