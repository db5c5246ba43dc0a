"""Diagonal-covariance Gaussian mixtures: initialization, EM training, posteriors
and mean-only MAP adaptation.

The trained mixture serves as the universal background model (UBM); its
flattened means form the supervector ``m`` and its variances the diagonal
covariance used by the total-variability model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .kvconfig import ConfigError

LOG_2PI = np.log(2.0 * np.pi)
_MIN_VARIANCE = 1e-10


class GmmError(ArithmeticError):
    """EM produced non-finite parameters or was given unusable input."""


@dataclass(frozen=True)
class DiagonalGmm:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        var = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        if w.ndim != 1 or mu.shape != var.shape or mu.shape[0] != w.size:
            raise ValueError(
                f"inconsistent GMM shapes: weights {w.shape}, means {mu.shape}, variances {var.shape}"
            )
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("weights must be a probability vector")
        if np.any(var <= 0):
            raise ValueError("variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def supervector(self) -> np.ndarray:
        return self.means.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, DiagonalGmm):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.variances, other.variances)
        )

    def component_log_densities(self, features: np.ndarray) -> np.ndarray:
        """``log w_k + log N(x_t; mu_k, var_k)`` as a (T, K) array."""
        x = _as_frames(features, self.dim)
        inv_var = 1.0 / self.variances
        const = -0.5 * (self.dim * LOG_2PI + np.log(self.variances).sum(axis=1))
        quad = (
            (x * x) @ inv_var.T
            - 2.0 * x @ (self.means * inv_var).T
            + (self.means**2 * inv_var).sum(axis=1)
        )
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        return log_w + const - 0.5 * quad

    def posteriors(self, features: np.ndarray) -> np.ndarray:
        lp = self.component_log_densities(features)
        return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))


@dataclass(frozen=True)
class EmConfig:
    """``variance_floor`` is relative: the floor is this factor times the
    per-dimension variance of the training data."""

    n_components: int = 32
    n_iterations: int = 10
    seed: int = 0
    variance_floor: float = 1e-4
    init: str = "kmeans"

    def __post_init__(self):
        if self.n_components < 1:
            raise ConfigError("n_components must be >= 1")
        if self.n_iterations < 1:
            raise ConfigError("n_iterations must be >= 1")
        if not self.variance_floor > 0:
            raise ConfigError("variance_floor must be positive")
        if self.init not in ("kmeans", "binary_split"):
            raise ConfigError(f"unknown init {self.init!r}")


def _as_frames(features, dim: int | None = None) -> np.ndarray:
    x = np.asarray(getattr(features, "frames", features), dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError(f"features must be a (T, D) matrix, got shape {x.shape}")
    if dim is not None and x.shape[1] != dim:
        raise ValueError(f"feature dimension {x.shape[1]} does not match model dimension {dim}")
    return x


def variance_floor(features, factor: float) -> np.ndarray:
    x = _as_frames(features)
    return np.maximum(factor * x.var(axis=0), _MIN_VARIANCE)


def frame_posteriors(gmm: DiagonalGmm, frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if not np.all(np.isfinite(frame)):
        raise ValueError("frame contains non-finite values")
    return gmm.posteriors(frame[None, :])[0]


def log_likelihood(gmm: DiagonalGmm, features) -> float:
    return float(logsumexp(gmm.component_log_densities(features), axis=1).sum())


def _kmeans(x: np.ndarray, k: int, rng: np.random.Generator, n_iter: int = 25):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers[j] = x[idx]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))

    labels = None
    for _ in range(n_iter):
        dist = (x * x).sum(1)[:, None] - 2.0 * x @ centers.T + (centers * centers).sum(1)[None, :]
        new_labels = dist.argmin(axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = x[members].mean(axis=0)
            else:
                # re-seed an empty cluster at the worst-served point
                far = dist[np.arange(n), labels].argmax()
                centers[j] = x[far]
                labels[far] = j
    return centers, labels


def initialize_gmm(features, cfg: EmConfig) -> DiagonalGmm:
    """Deterministic starting point for EM.

    ``kmeans``: k-means++ seeding followed by Lloyd iterations; weights are
    cluster fractions and variances per-cluster variances.
    ``binary_split``: grow from a single Gaussian by splitting the heaviest
    component into ``mu +/- 0.2 sigma``, with one EM pass after each split.
    """
    x = _as_frames(features)
    k = cfg.n_components
    if x.shape[0] < k:
        raise GmmError(f"need at least {k} frames to initialize {k} components, got {x.shape[0]}")
    floor = variance_floor(x, cfg.variance_floor)
    if k == 1:
        return DiagonalGmm(np.ones(1), x.mean(0, keepdims=True), np.maximum(x.var(0), floor)[None])

    rng = np.random.default_rng(cfg.seed)
    if cfg.init == "kmeans":
        centers, labels = _kmeans(x, k, rng)
        counts = np.bincount(labels, minlength=k).astype(np.float64)
        means = centers.copy()
        variances = np.tile(x.var(0), (k, 1))
        for j in np.flatnonzero(counts):
            means[j] = x[labels == j].mean(0)
            variances[j] = x[labels == j].var(0)
        # clusters left empty by duplicated data keep a small share
        counts = np.maximum(counts, 1e-3)
        return DiagonalGmm(counts / counts.sum(), means, np.maximum(variances, floor))

    gmm = DiagonalGmm(np.ones(1), x.mean(0, keepdims=True), np.maximum(x.var(0), floor)[None])
    while gmm.n_components < k:
        j = int(np.argmax(gmm.weights))
        offset = 0.2 * np.sqrt(gmm.variances[j])
        means = np.vstack([gmm.means, gmm.means[j] + offset])
        means[j] = gmm.means[j] - offset
        variances = np.vstack([gmm.variances, gmm.variances[j]])
        weights = np.append(gmm.weights, gmm.weights[j] / 2.0)
        weights[j] /= 2.0
        gmm = _em_step(DiagonalGmm(weights, means, variances), x, floor)[0]
    return gmm


def _em_step(gmm: DiagonalGmm, x: np.ndarray, floor: np.ndarray) -> tuple[DiagonalGmm, float]:
    lp = gmm.component_log_densities(x)
    norm = logsumexp(lp, axis=1, keepdims=True)
    total = float(norm.sum())
    gamma = np.exp(lp - norm)
    counts = gamma.sum(axis=0)
    alive = counts > 1e-10
    safe = np.where(alive, counts, 1.0)[:, None]
    first = gamma.T @ x
    second = gamma.T @ (x * x)
    means = np.where(alive[:, None], first / safe, gmm.means)
    variances = np.where(alive[:, None], second / safe - means**2, gmm.variances)
    variances = np.maximum(variances, floor)
    weights = counts / counts.sum()
    return DiagonalGmm(weights, means, variances), total


def em_train(init: DiagonalGmm, features, cfg: EmConfig, return_history: bool = False):
    """Maximum-likelihood EM from ``init``.

    With ``return_history=True`` also returns the total log-likelihood of the
    data under the initial model and after every iteration
    (``n_iterations + 1`` values).
    """
    if cfg.n_iterations < 1:
        raise GmmError("n_iterations must be >= 1")
    x = _as_frames(features, init.dim)
    if x.shape[0] == 0:
        raise GmmError("no training frames")
    with np.errstate(invalid="ignore"):
        floor = variance_floor(x, cfg.variance_floor)
    gmm = init
    history = []
    for it in range(cfg.n_iterations):
        try:
            with np.errstate(invalid="ignore", over="ignore"):
                gmm, ll = _em_step(gmm, x, floor)
        except ValueError as exc:
            raise GmmError(f"EM iteration {it}: {exc}") from exc
        if not (np.isfinite(ll) and np.all(np.isfinite(gmm.means)) and np.all(np.isfinite(gmm.variances))):
            raise GmmError(f"EM iteration {it}: non-finite parameters or likelihood")
        history.append(ll)
    if return_history:
        history.append(log_likelihood(gmm, x))
        return gmm, np.array(history)
    return gmm


def train_ubm(features, cfg: EmConfig, return_history: bool = False):
    return em_train(initialize_gmm(features, cfg), features, cfg, return_history=return_history)


def map_adapt(ubm: DiagonalGmm, features, relevance: float = 16.0) -> DiagonalGmm:
    """Mean-only MAP adaptation with relevance factor ``relevance``."""
    if not relevance > 0:
        raise ValueError("relevance factor must be positive")
    x = _as_frames(features, ubm.dim)
    if x.shape[0] == 0:
        return DiagonalGmm(ubm.weights.copy(), ubm.means.copy(), ubm.variances.copy())
    gamma = ubm.posteriors(x)
    n = gamma.sum(axis=0)
    alpha = (n / (n + relevance))[:, None]
    data_mean = (gamma.T @ x) / np.where(n > 0, n, 1.0)[:, None]
    means = alpha * data_mean + (1.0 - alpha) * ubm.means
    return DiagonalGmm(ubm.weights.copy(), means, ubm.variances.copy())
