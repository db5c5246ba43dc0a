"""On-disk model bundle.

A bundle is a directory holding a plain-text ``meta`` file (``key=value``)
and one raw little-endian float64 file per array. ``meta`` records the
format version, class label order, transform kinds, the training config,
and for every tensor its shape and SHA-256 digest::

    format_version=1
    labels=ARA,CHI,FRE
    transforms=lda,pca,wccn
    tensor.t_matrix.shape=1920,50
    tensor.t_matrix.sha256=1f0c...
    config.frontend.n_bands=26
    ...
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .backend import ClassModels, LinearTransform, PldaModel
from .gmm import DiagonalGmm
from .kvconfig import format_kv, parse_kv
from .pipeline import FORMAT_VERSION, ModelBundle, PipelineConfig
from .tvm import TotalVariabilityModel


class BundleError(ValueError):
    pass


class BundleVersionError(BundleError):
    pass


class ChecksumError(BundleError):
    pass


def _tensors(bundle: ModelBundle) -> list[tuple[str, np.ndarray]]:
    out = [
        ("ubm_weights", bundle.ubm.weights),
        ("ubm_means", bundle.ubm.means),
        ("ubm_variances", bundle.ubm.variances),
        ("t_matrix", bundle.tv.t_matrix),
    ]
    for i, t in enumerate(bundle.transforms):
        out.append((f"transform{i}_matrix", t.matrix))
        out.append((f"transform{i}_offset", t.mean_offset))
    out += [
        ("class_models", bundle.class_models.model_vectors),
        ("plda_mu", bundle.plda.mu),
        ("plda_sigma_between", bundle.plda.sigma_between),
        ("plda_sigma_within", bundle.plda.sigma_within),
    ]
    return out


def persist_bundle(bundle: ModelBundle, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    bad = [lab for lab in bundle.labels if "," in lab or "\n" in lab]
    if bad:
        raise BundleError(f"labels may not contain commas or newlines: {bad}")
    meta: list[tuple[str, object]] = [
        ("format_version", bundle.version),
        ("labels", ",".join(bundle.labels)),
        ("transforms", ",".join(t.kind for t in bundle.transforms) or "none"),
    ]
    meta += _write_tensors(directory, _tensors(bundle))
    meta += [(f"config.{k}", v) for k, v in bundle.config.to_items()]
    (directory / "meta").write_text(format_kv(meta), encoding="utf-8")
    return directory


def _write_tensors(directory: Path, tensors) -> list[tuple[str, str]]:
    meta = []
    for name, arr in tensors:
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        (directory / f"{name}.f64").write_bytes(data)
        meta.append((f"tensor.{name}.shape", ",".join(str(s) for s in arr.shape)))
        meta.append((f"tensor.{name}.sha256", hashlib.sha256(data).hexdigest()))
    return meta


def _read_tensor(directory: Path, meta: dict[str, str], name: str) -> np.ndarray:
    try:
        shape_text = meta[f"tensor.{name}.shape"]
        digest = meta[f"tensor.{name}.sha256"]
    except KeyError as exc:
        raise BundleError(f"meta has no entry for tensor {name!r}") from exc
    shape = tuple(int(s) for s in shape_text.split(",")) if shape_text else ()
    path = directory / f"{name}.f64"
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise BundleError(f"cannot read tensor file {path}: {exc}") from exc
    expected = 8 * int(np.prod(shape, dtype=np.int64))
    if len(data) != expected:
        raise BundleError(f"{path}: truncated or oversized tensor ({len(data)} bytes, expected {expected})")
    if hashlib.sha256(data).hexdigest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch")
    return np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)


def _read_meta(directory: Path) -> tuple[dict[str, str], int]:
    try:
        meta = parse_kv((directory / "meta").read_text(encoding="utf-8"), source=str(directory / "meta"))
    except OSError as exc:
        raise BundleError(f"cannot read bundle metadata in {directory}: {exc}") from exc
    try:
        version = int(meta["format_version"])
    except (KeyError, ValueError) as exc:
        raise BundleVersionError(f"{directory}: missing or malformed format_version") from exc
    if version != FORMAT_VERSION:
        raise BundleVersionError(f"{directory}: unsupported bundle format version {version} (expected {FORMAT_VERSION})")
    return meta, version


def persist_gmm(gmm: DiagonalGmm, directory: str | Path, **extra) -> Path:
    """Write a standalone GMM (e.g. a MAP-adapted one) in the bundle tensor format."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta: list[tuple[str, object]] = [("format_version", FORMAT_VERSION), ("kind", "gmm")]
    meta += sorted(extra.items())
    meta += _write_tensors(directory, [("weights", gmm.weights), ("means", gmm.means), ("variances", gmm.variances)])
    (directory / "meta").write_text(format_kv(meta), encoding="utf-8")
    return directory


def load_gmm(directory: str | Path) -> DiagonalGmm:
    directory = Path(directory)
    meta, _ = _read_meta(directory)
    if meta.get("kind") != "gmm":
        raise BundleError(f"{directory}: not a GMM directory")
    return DiagonalGmm(*(_read_tensor(directory, meta, n) for n in ("weights", "means", "variances")))


def load_bundle(directory: str | Path) -> ModelBundle:
    directory = Path(directory)
    meta, version = _read_meta(directory)

    def tensor(name):
        return _read_tensor(directory, meta, name)

    config = PipelineConfig.from_dict({k[len("config."):]: v for k, v in meta.items() if k.startswith("config.")})
    ubm = DiagonalGmm(tensor("ubm_weights"), tensor("ubm_means"), tensor("ubm_variances"))
    tv = TotalVariabilityModel(tensor("t_matrix"), ubm)
    kinds = [] if meta.get("transforms", "none") == "none" else meta["transforms"].split(",")
    transforms = [
        LinearTransform(tensor(f"transform{i}_matrix"), kind, tensor(f"transform{i}_offset"))
        for i, kind in enumerate(kinds)
    ]
    labels = tuple(meta["labels"].split(","))
    models = ClassModels(labels, tensor("class_models"))
    plda = PldaModel(tensor("plda_mu"), tensor("plda_sigma_between"), tensor("plda_sigma_within"))
    if models.model_vectors.shape[0] != len(labels):
        raise BundleError("class model count does not match label count")
    return ModelBundle(ubm, tv, transforms, models, plda, config, version)
