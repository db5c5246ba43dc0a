"""i-vector post-processing and scoring.

Training i-vectors pass through a chain of linear maps (LDA, PCA, WCCN by
default), are averaged per class into model vectors, and test vectors are
scored against every model with a two-covariance PLDA log-likelihood ratio.
The predicted class is the arg-max score.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

RIDGE = 1e-6
KINDS = ("lda", "pca", "wccn")


class BackendError(ValueError):
    pass


@dataclass(frozen=True)
class LinearTransform:
    """``y = matrix @ (x - mean_offset)``."""

    matrix: np.ndarray
    kind: str
    mean_offset: np.ndarray

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        off = np.asarray(self.mean_offset, dtype=np.float64).reshape(-1)
        if self.kind not in KINDS:
            raise BackendError(f"unknown transform kind {self.kind!r}")
        if off.size != m.shape[1] or m.shape[0] > m.shape[1]:
            raise BackendError(f"bad transform shapes: matrix {m.shape}, offset {off.shape}")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "mean_offset", off)

    @property
    def in_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def out_dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean_offset) @ self.matrix.T

    def __eq__(self, other):
        if not isinstance(other, LinearTransform):
            return NotImplemented
        return (
            self.kind == other.kind
            and np.array_equal(self.matrix, other.matrix)
            and np.array_equal(self.mean_offset, other.mean_offset)
        )


@dataclass(frozen=True)
class ClassModels:
    labels: tuple[str, ...]
    model_vectors: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, ClassModels):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.model_vectors, other.model_vectors)


@dataclass(frozen=True)
class PldaModel:
    mu: np.ndarray
    sigma_between: np.ndarray
    sigma_within: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, PldaModel):
            return NotImplemented
        return (
            np.array_equal(self.mu, other.mu)
            and np.array_equal(self.sigma_between, other.sigma_between)
            and np.array_equal(self.sigma_within, other.sigma_within)
        )

    @property
    def dim(self) -> int:
        return self.mu.size


def _ordered_labels(labels: Sequence) -> list:
    seen: dict = {}
    for lab in labels:
        seen.setdefault(lab, len(seen))
    return list(seen)


def _groups(vectors, labels):
    x = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    labels = list(labels)
    if len(labels) != x.shape[0]:
        raise BackendError(f"{x.shape[0]} vectors but {len(labels)} labels")
    arr = np.array(labels, dtype=object)
    return x, [(lab, x[arr == lab]) for lab in _ordered_labels(labels)]


def _ridge(scale_matrix: np.ndarray, eps: float = RIDGE) -> float:
    d = scale_matrix.shape[0]
    return eps * float(np.trace(scale_matrix)) / d


def _sign_normalize(rows: np.ndarray) -> np.ndarray:
    idx = np.abs(rows).argmax(axis=1)
    signs = np.sign(rows[np.arange(rows.shape[0]), idx])
    signs[signs == 0] = 1.0
    return rows * signs[:, None]


def scatter_matrices(vectors, labels) -> tuple[np.ndarray, np.ndarray]:
    """Between- and within-class scatter, each normalized by the sample count."""
    x, groups = _groups(vectors, labels)
    mean = x.mean(axis=0)
    d = x.shape[1]
    s_b = np.zeros((d, d))
    s_w = np.zeros((d, d))
    for _, g in groups:
        mc = g.mean(axis=0)
        s_b += g.shape[0] * np.outer(mc - mean, mc - mean)
        centred = g - mc
        s_w += centred.T @ centred
    return s_b / x.shape[0], s_w / x.shape[0]


def fit_lda(vectors, labels, out_dim: int | None = None) -> LinearTransform:
    """Rows are the leading generalized eigenvectors of ``(S_b, S_w + ridge)``,
    scaled so that ``v' S_w v = 1``."""
    x, groups = _groups(vectors, labels)
    n_classes = len(groups)
    if n_classes < 2:
        raise BackendError("LDA needs at least 2 classes")
    small = [lab for lab, g in groups if g.shape[0] < 2]
    if small:
        raise BackendError(f"LDA needs >= 2 samples per class; too few for {small}")
    if out_dim is None:
        out_dim = min(n_classes - 1, x.shape[1])
    if not 1 <= out_dim <= n_classes - 1 or out_dim > x.shape[1]:
        raise BackendError(f"LDA out_dim {out_dim} must be in [1, C-1={n_classes - 1}] and <= {x.shape[1]}")
    s_b, s_w = scatter_matrices(x, labels)
    s_w = s_w + _ridge(s_w + s_b) * np.eye(x.shape[1])
    evals, evecs = linalg.eigh(s_b, s_w)
    order = np.argsort(evals)[::-1][:out_dim]
    rows = _sign_normalize(evecs[:, order].T)
    return LinearTransform(rows, "lda", x.mean(axis=0))


def fit_pca(vectors, out_dim: int | None = None) -> LinearTransform:
    x = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    n, d = x.shape
    bound = min(n - 1, d)
    if out_dim is None:
        out_dim = bound
    if not 1 <= out_dim <= bound:
        raise BackendError(f"PCA out_dim {out_dim} must be in [1, min(n-1, d)={bound}]")
    mean = x.mean(axis=0)
    cov = np.cov(x, rowvar=False).reshape(d, d)
    evals, evecs = linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:out_dim]
    return LinearTransform(_sign_normalize(evecs[:, order].T), "pca", mean)


def average_within_class_covariance(vectors, labels) -> np.ndarray:
    """Mean over classes of the unbiased per-class covariance."""
    x, groups = _groups(vectors, labels)
    small = [lab for lab, g in groups if g.shape[0] < 2]
    if small:
        raise BackendError(f"need >= 2 samples per class; too few for {small}")
    d = x.shape[1]
    covs = [np.cov(g, rowvar=False).reshape(d, d) for _, g in groups]
    return np.mean(covs, axis=0)


def fit_wccn(vectors, labels) -> LinearTransform:
    """``B'`` with ``B B' = W^-1`` (B lower Cholesky factor), W the average
    within-class covariance.  The ridge is only added if W is not positive
    definite as estimated."""
    w = average_within_class_covariance(vectors, labels)
    d = w.shape[0]
    try:
        chol_w = linalg.cho_factor(w, lower=True)
    except linalg.LinAlgError:
        ridge = _ridge(w)
        if ridge <= 0:
            raise BackendError("within-class covariance is zero; cannot normalize")
        try:
            chol_w = linalg.cho_factor(w + ridge * np.eye(d), lower=True)
        except linalg.LinAlgError as exc:
            raise BackendError("within-class covariance singular after regularization") from exc
    w_inv = linalg.cho_solve(chol_w, np.eye(d))
    b = linalg.cholesky((w_inv + w_inv.T) / 2.0, lower=True)
    return LinearTransform(b.T, "wccn", np.zeros(d))


def apply_chain(transforms: Sequence[LinearTransform], vectors) -> np.ndarray:
    out = np.asarray(vectors, dtype=np.float64)
    for i, t in enumerate(transforms):
        if out.shape[-1] != t.in_dim:
            raise BackendError(f"stage {i} ({t.kind}) expects dimension {t.in_dim}, got {out.shape[-1]}")
        out = t.apply(out)
    return out


def length_normalize(vectors) -> np.ndarray:
    x = np.asarray(vectors, dtype=np.float64)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(norm > 0, norm, 1.0)


def compute_class_models(vectors, labels) -> ClassModels:
    x, groups = _groups(vectors, labels)
    if not groups:
        raise BackendError("no classes")
    return ClassModels(tuple(lab for lab, _ in groups), np.stack([g.mean(axis=0) for _, g in groups]))


def fit_plda(vectors, labels) -> PldaModel:
    """Two-covariance PLDA by moments.

    ``sigma_within`` is the pooled within-class covariance (divided by N - C),
    ``sigma_between`` the covariance of the class means about the global mean
    (divided by C). Both get a ridge of ``1e-6 * trace(total covariance) / d``.
    """
    x, groups = _groups(vectors, labels)
    n, d = x.shape
    n_classes = len(groups)
    if n_classes < 2:
        raise BackendError("PLDA needs at least 2 classes")
    small = [lab for lab, g in groups if g.shape[0] < 2]
    if small:
        raise BackendError(f"PLDA needs >= 2 samples per class; too few for {small}")
    mu = x.mean(axis=0)
    class_means = np.stack([g.mean(axis=0) for _, g in groups])
    s_w = sum((g - g.mean(axis=0)).T @ (g - g.mean(axis=0)) for _, g in groups) / (n - n_classes)
    s_b = (class_means - mu).T @ (class_means - mu) / n_classes
    total = (x - mu).T @ (x - mu) / n
    ridge = _ridge(total)
    if ridge <= 0:
        raise BackendError("degenerate scatter: all training vectors identical")
    s_w = (s_w + s_w.T) / 2.0 + ridge * np.eye(d)
    s_b = (s_b + s_b.T) / 2.0 + ridge * np.eye(d)
    return PldaModel(mu, s_b, s_w)


def _gauss_logpdf(x: np.ndarray, cov: np.ndarray) -> np.ndarray:
    try:
        c = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise BackendError("covariance not positive definite") from exc
    z = linalg.solve_triangular(c, np.atleast_2d(x).T, lower=True)
    logdet = 2.0 * np.log(np.diag(c)).sum()
    return -0.5 * (cov.shape[0] * np.log(2.0 * np.pi) + logdet + (z * z).sum(axis=0))


def plda_llr(plda: PldaModel, x, y) -> np.ndarray:
    """Same-class vs. different-class log-likelihood ratio, broadcasting over rows."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64)) - plda.mu
    y = np.atleast_2d(np.asarray(y, dtype=np.float64)) - plda.mu
    x, y = np.broadcast_arrays(x, y)
    tot = plda.sigma_between + plda.sigma_within
    joint = np.block([[tot, plda.sigma_between], [plda.sigma_between, tot]])
    return (
        _gauss_logpdf(np.hstack([x, y]), joint)
        - _gauss_logpdf(x, tot)
        - _gauss_logpdf(y, tot)
    )


def cosine_score(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    denom = np.linalg.norm(x) * np.linalg.norm(y)
    return float(x @ y / denom) if denom > 0 else 0.0


def score(plda: PldaModel | None, model_vec, test_vec, mode: str = "plda") -> float:
    model_vec = np.asarray(model_vec, dtype=np.float64)
    test_vec = np.asarray(test_vec, dtype=np.float64)
    if model_vec.shape != test_vec.shape:
        raise BackendError(f"dimension mismatch: {model_vec.shape} vs {test_vec.shape}")
    if mode == "cosine":
        return cosine_score(model_vec, test_vec)
    if mode != "plda":
        raise BackendError(f"unknown scoring mode {mode!r}")
    if plda is None or plda.dim != model_vec.size:
        raise BackendError("PLDA model missing or of the wrong dimension")
    return float(plda_llr(plda, model_vec, test_vec)[0])


def score_all(plda: PldaModel | None, models: ClassModels, test_vec, mode: str = "plda") -> np.ndarray:
    if mode == "plda":
        if plda is None:
            raise BackendError("PLDA model missing")
        return plda_llr(plda, models.model_vectors, np.asarray(test_vec, dtype=np.float64)[None, :])
    return np.array([score(plda, m, test_vec, mode) for m in models.model_vectors])


def classify(scores, labels: Sequence | None = None):
    """Arg-max of ``scores``; ties go to the lowest index. Returns the label
    at that index, or the index itself when ``labels`` is None."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise BackendError("need a non-empty score vector")
    if np.any(np.isnan(scores)):
        raise BackendError("NaN score")
    if labels is not None and len(labels) != scores.size:
        raise BackendError(f"{scores.size} scores for {len(labels)} labels")
    best = int(np.argmax(scores))
    return best if labels is None else labels[best]
