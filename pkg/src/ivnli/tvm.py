"""Baum-Welch statistics, total-variability training and i-vector extraction.

An utterance supervector is modelled as ``M = m + T w`` with ``m`` the UBM
mean supervector, ``T`` a (K*D, R) basis and ``w ~ N(0, I)``. Given the
zeroth-order counts ``n_k`` and centred first-order sums ``f_k`` of an
utterance, the posterior of ``w`` is Gaussian with precision
``L = I + T' S^-1 N T`` and mean ``L^-1 T' S^-1 f``; the i-vector is that mean.

Supervectors are laid out component-major: entry ``k * D + d``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from .gmm import DiagonalGmm, _as_frames

log = logging.getLogger(__name__)


class TotalVariabilityError(ArithmeticError):
    pass


@dataclass(frozen=True)
class BaumWelchStats:
    n: np.ndarray  # (K,)
    f: np.ndarray  # (K, D), centred on the UBM means

    @property
    def n_frames(self) -> float:
        return float(self.n.sum())


@dataclass(frozen=True)
class TotalVariabilityModel:
    t_matrix: np.ndarray
    ubm: DiagonalGmm

    def __post_init__(self):
        t = np.asarray(self.t_matrix, dtype=np.float64)
        kd = self.ubm.n_components * self.ubm.dim
        if t.ndim != 2 or t.shape[0] != kd or not 1 <= t.shape[1] <= kd:
            raise TotalVariabilityError(f"T must be ({kd}, R) with 1 <= R <= {kd}, got {t.shape}")
        if not np.all(np.isfinite(t)):
            raise TotalVariabilityError("T contains non-finite entries")
        object.__setattr__(self, "t_matrix", t)

    @property
    def rank(self) -> int:
        return self.t_matrix.shape[1]

    def __eq__(self, other):
        if not isinstance(other, TotalVariabilityModel):
            return NotImplemented
        return np.array_equal(self.t_matrix, other.t_matrix) and self.ubm == other.ubm

    def _blocks(self) -> np.ndarray:
        """T reshaped to (K, D, R)."""
        return self.t_matrix.reshape(self.ubm.n_components, self.ubm.dim, self.rank)

    def _precision_terms(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-component ``T_k' S_k^-1 T_k`` (K, R, R) and ``T' S^-1`` (R, K*D)."""
        blocks = self._blocks()
        scaled = blocks / self.ubm.variances[:, :, None]
        per_comp = np.einsum("kdr,kds->krs", blocks, scaled)
        return per_comp, scaled.reshape(-1, self.rank).T


def accumulate_bw_stats(ubm: DiagonalGmm, features) -> BaumWelchStats:
    x = _as_frames(features)
    if x.shape[0] == 0:
        raise ValueError("no frames to accumulate")
    if x.shape[1] != ubm.dim:
        raise ValueError(f"feature dimension {x.shape[1]} does not match UBM dimension {ubm.dim}")
    gamma = ubm.posteriors(x)
    n = gamma.sum(axis=0)
    f = gamma.T @ x - n[:, None] * ubm.means
    return BaumWelchStats(n=n, f=f)


def _posterior(per_comp, tts, stats: BaumWelchStats, rank: int, where: str):
    precision = np.eye(rank) + np.einsum("k,krs->rs", stats.n, per_comp)
    try:
        factor = linalg.cho_factor(precision, lower=True)
    except linalg.LinAlgError as exc:
        raise TotalVariabilityError(f"{where}: posterior precision is not positive definite") from exc
    mean = linalg.cho_solve(factor, tts @ stats.f.reshape(-1))
    return mean, factor


def extract_ivector(tv: TotalVariabilityModel, stats: BaumWelchStats) -> np.ndarray:
    """Posterior mean of ``w`` (the i-vector) for one utterance."""
    _check_stats(tv.ubm, stats)
    per_comp, tts = tv._precision_terms()
    w, factor = _posterior(per_comp, tts, stats, tv.rank, "extract_ivector")
    if not np.all(np.isfinite(w)):
        precision = np.eye(tv.rank) + np.einsum("k,krs->rs", stats.n, per_comp)
        raise TotalVariabilityError(
            f"non-finite i-vector; posterior precision condition number {np.linalg.cond(precision):.3g}"
        )
    return w


def extract_ivectors(tv: TotalVariabilityModel, stats_list: Sequence[BaumWelchStats]) -> np.ndarray:
    per_comp, tts = tv._precision_terms()
    out = np.empty((len(stats_list), tv.rank))
    for u, stats in enumerate(stats_list):
        _check_stats(tv.ubm, stats)
        out[u] = _posterior(per_comp, tts, stats, tv.rank, f"utterance {u}")[0]
    if not np.all(np.isfinite(out)):
        raise TotalVariabilityError("non-finite i-vectors")
    return out


def _check_stats(ubm: DiagonalGmm, stats: BaumWelchStats) -> None:
    if stats.n.shape != (ubm.n_components,) or stats.f.shape != ubm.means.shape:
        raise ValueError(
            f"statistics shapes n{stats.n.shape}, f{stats.f.shape} do not match UBM "
            f"({ubm.n_components} x {ubm.dim})"
        )


def init_t_matrix(ubm: DiagonalGmm, rank: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return 0.1 * rng.standard_normal((ubm.n_components * ubm.dim, rank))


def train_total_variability(
    stats_list: Sequence[BaumWelchStats],
    ubm: DiagonalGmm,
    rank: int,
    n_iterations: int = 5,
    seed: int = 0,
    t_init: np.ndarray | None = None,
    return_history: bool = False,
):
    """EM estimate of T.

    E-step: posterior mean and covariance of ``w`` for every utterance.
    M-step: for every component ``k``, ``T_k = C_k A_k^-1`` with
    ``A_k = sum_u n_uk E[w w']`` and ``C_k = sum_u f_uk E[w]'``.

    With ``return_history=True`` also returns the mean squared norm of the
    posterior means computed in each E-step.
    """
    k, d = ubm.n_components, ubm.dim
    if len(stats_list) < 2:
        raise TotalVariabilityError("need at least 2 utterances to train T")
    if not 1 <= rank <= k * d:
        raise TotalVariabilityError(f"rank {rank} outside [1, K*D={k * d}]")
    if n_iterations < 1:
        raise TotalVariabilityError("n_iterations must be >= 1")
    for stats in stats_list:
        _check_stats(ubm, stats)

    n_all = np.stack([s.n for s in stats_list])  # (U, K)
    f_all = np.stack([s.f.reshape(-1) for s in stats_list])  # (U, K*D)
    t = init_t_matrix(ubm, rank, seed) if t_init is None else np.array(t_init, dtype=np.float64)
    history = []
    eye = np.eye(rank)
    for it in range(n_iterations):
        tv = TotalVariabilityModel(t, ubm)
        per_comp, tts = tv._precision_terms()
        means = np.empty((len(stats_list), rank))
        second = np.empty((len(stats_list), rank, rank))
        for u, stats in enumerate(stats_list):
            w, factor = _posterior(per_comp, tts, stats, rank, f"T iteration {it}, utterance {u}")
            means[u] = w
            second[u] = linalg.cho_solve(factor, eye) + np.outer(w, w)
        history.append(float(np.mean(np.sum(means**2, axis=1))))
        log.debug("T iteration %d: mean |E[w]|^2 = %.6g", it, history[-1])

        acc_a = np.einsum("uk,urs->krs", n_all, second)
        acc_c = (f_all.T @ means).reshape(k, d, rank)
        new_t = t.reshape(k, d, rank).copy()
        for j in range(k):
            if n_all[:, j].sum() <= 1e-10:
                continue
            new_t[j] = linalg.solve(acc_a[j], acc_c[j].T, assume_a="pos").T
        t = new_t.reshape(k * d, rank)
        if not np.all(np.isfinite(t)):
            raise TotalVariabilityError(f"T iteration {it}: non-finite update")

    tv = TotalVariabilityModel(t, ubm)
    if return_history:
        return tv, np.array(history)
    return tv
