"""
UBM, Baum-Welch statistics and i-vectors
========================================

Trains a small universal background model on pooled frames, learns a
total variability matrix and checks one closed-form i-vector against
the numerical posterior mode.
"""

import numpy as np

from ivnli import (
    BaumWelchStats,
    DiagonalGmm,
    EmConfig,
    FrontendConfig,
    SynthSpec,
    accumulate_bw_stats,
    em_train,
    extract_features,
    initialize_gmm,
    train_total_variability,
)
from ivnli.synth import ivector_posterior_oracle, synthesize_utterance
from ivnli.tvm import TotalVariabilityModel, extract_ivectors

spec = SynthSpec(n_classes=4, duration_s=1.5)
cfg = FrontendConfig()
rng = np.random.default_rng(3)
sigs = spec.class_signatures()
utts = [(c, extract_features(synthesize_utterance(spec, sigs[c], rng), cfg).frames) for c in range(4) for _ in range(5)]

# %%
# EM on the pooled frames; the log-likelihood never goes down.
pooled = np.vstack([f for _, f in utts])
em = EmConfig(n_components=16, n_iterations=8)
ubm, history = em_train(initialize_gmm(pooled, em), pooled, em, return_history=True)
print("per-frame log-likelihood:", np.round(history / len(pooled), 3))

# %%
# Zeroth-order counts add up to the frame count of each utterance.
stats = [accumulate_bw_stats(ubm, f) for _, f in utts]
print("frames vs soft count:", len(utts[0][1]), round(stats[0].n.sum(), 6))

# T starts at 0.1 * N(0, 1), so posterior means start near zero and grow
# gradually; plain EM has no step that rescales T.
tv, norms = train_total_variability(stats, ubm, rank=8, n_iterations=10, return_history=True)
print("mean squared i-vector norm per pass:", np.round(norms, 4))
w = extract_ivectors(tv, stats)
print("i-vectors:", w.shape)

# %%
# The oracle maximises the log posterior by line searches. It only
# handles tiny models, so compare on a 2-component, 2-dim toy.
g = np.random.default_rng(0)
toy_ubm = DiagonalGmm([0.4, 0.6], g.standard_normal((2, 2)), g.uniform(0.5, 2, (2, 2)))
toy = TotalVariabilityModel(g.standard_normal((4, 2)), toy_ubm)
toy_stats = BaumWelchStats(np.array([6.0, 3.0]), g.standard_normal((2, 2)))
print("closed form:", extract_ivectors(toy, [toy_stats])[0])
print("oracle:     ", ivector_posterior_oracle(toy, toy_stats))
