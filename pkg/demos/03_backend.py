"""
LDA, WCCN and PLDA scoring on toy embeddings
============================================

Uses plain Gaussian clusters in place of i-vectors to show what each
back-end stage does to the geometry.
"""

import numpy as np

from ivnli import (
    apply_chain,
    classify,
    compute_class_models,
    fit_lda,
    fit_pca,
    fit_plda,
    fit_wccn,
)
from ivnli.backend import average_within_class_covariance, score_all

g = np.random.default_rng(1)
centres = 2.0 * g.standard_normal((4, 10))
mix = np.eye(10) + 0.5 * g.standard_normal((10, 10))
x = np.vstack([c + g.standard_normal((50, 10)) @ mix for c in centres])
labels = np.repeat(["a", "b", "c", "d"], 50)

# LDA keeps C-1 = 3 directions, PCA is a rotation here, WCCN whitens.
lda = fit_lda(x, labels)
y = lda.apply(x)
pca = fit_pca(y)
wccn = fit_wccn(pca.apply(y), labels)
chain = [lda, pca, wccn]
z = apply_chain(chain, x)
print("dims:", [t.in_dim for t in chain], "->", z.shape[1])
print("within-class covariance after chain:\n", np.round(average_within_class_covariance(z, labels), 6))

# Class means as models, PLDA log-likelihood ratio as the score.
models = compute_class_models(z, labels)
plda = fit_plda(z, labels)
test = apply_chain(chain, centres[2] + g.standard_normal(10) @ mix)
scores = score_all(plda, models, test)
print("scores:", np.round(scores, 2), "->", classify(scores, models.labels))
