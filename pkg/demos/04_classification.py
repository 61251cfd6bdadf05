# %% [markdown]
# # Two-class classification from class-conditional densities
#
# One density per class, combined with class priors through Bayes' rule.
# Draw mode propagates posterior uncertainty into the probabilities and the
# Brier score.

# %%
import numpy as np

import nndm
from nndm.classifier import sensitivity_specificity

rng = np.random.default_rng(11)
n = 400
X0 = rng.multivariate_normal([0, 0, 0], np.eye(3), n)
X1 = rng.multivariate_normal([1.2, 0.8, 0], [[1, 0.5, 0], [0.5, 1, 0], [0, 0, 2]], n)
X = np.vstack([X0, X1])
y = np.repeat([0, 1], n)
order = rng.permutation(2 * n)
train, test = order[:600], order[600:]

# %%
clf = nndm.fit_classifier(X[train], y[train], standardize=True)
prob = nndm.predict_proba(clf, X[test])
sens, spec = sensitivity_specificity(prob, y[test])
print("priors", clf.priors, "| sensitivity %.3f specificity %.3f" % (sens, spec))
print("AUC %.3f" % nndm.roc_auc(prob, y[test]).auc)

# %% Posterior draws of the class probabilities
draws = nndm.predict_proba(clf, X[test], mode="draws", M=50, seed=3)
per_draw, mean_brier = nndm.brier_score(draws, y[test])
print("Brier score over 50 draws: mean %.4f, spread %.4f" % (mean_brier, per_draw.std()))
