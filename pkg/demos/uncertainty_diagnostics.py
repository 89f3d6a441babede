"""
Does the uncertainty mean anything?
===================================

Three checks on a trained attribution model: whether confident predictions
are right more often (coverage-risk), whether confidence matches accuracy
(ECE) and whether the epistemic variance grows away from the training data
(rank correlation with nearest-neighbour distance).
"""

import numpy as np

from icpexplain import diagnostics, experiments
from icpexplain.cli import eval_records
from icpexplain.features import as_matrix
from icpexplain.gpc import PredictConfig

# %%
# A small attribution split: 120 training pairs and 45 test pairs.
split = experiments.attribution_split(seed=1, n_train=120, n_test=45, points=800)
model = experiments.train_attribution_model(split, seed=1, num_inducing=24)
X_train, X_test = as_matrix(split.train_embeddings), as_matrix(split.test_embeddings)

# %%
# Out-of-distribution copies: each test embedding moved 5 standardized units
# in a random direction.
rng = np.random.default_rng(0)
Z = model.prepare(X_test)
step = rng.normal(size=Z.shape)
step /= np.linalg.norm(step, axis=1, keepdims=True)
X_ood = model.standardizer.inverse_transform(Z + 5.0 * step)

# %%
# Evaluate in-distribution and shifted inputs together.
records = eval_records(model, np.vstack([X_test, X_ood]), list(split.test_labels) * 2, X_train,
                       PredictConfig(seed=0))
summary = diagnostics.summarize(records)
print(f"rank correlation of variance with distance: {summary['rho']:.3f}")
print(f"coverage-risk AUC: {summary['auc']:.3f}   ECE: {summary['ece']:.3f}")

# %%
# The curve itself: error rate among the most confident fraction kept.
coverage, risk = diagnostics.coverage_risk_curve(records[:len(X_test)])
for c, r in zip(coverage[::5], risk[::5]):
    print(f"keep {c:5.2f} -> risk {r:.3f}")
