"""
Teaching the classifier a concept it has never seen
===================================================

A model trained only on noise and pose meets a pool where partial overlap
also occurs. BALD with k-means diversification picks which pool items to
label; uniform random picking is the baseline. Both loops stop once
validation accuracy reaches 70%.
"""

import copy

from icpexplain import active, experiments
from icpexplain.active import AcquisitionConfig, SimulationOracle

# %%
# A reduced scenario so the demo runs in about a minute: 600 points per base,
# 20 initial pairs per known concept, a pool of 90 and a validation set of 45.
scenario = experiments.third_concept_scenario(
    seed=0, initial_per_concept=20, pool_per_concept=30, validation_per_concept=15, points=600)
print("model knows:", scenario.model.vocabulary.names)

# %%
# Run both strategies from identical copies of the scenario.
for strategy in ("bald", "random"):
    s = copy.deepcopy(scenario)
    cfg = AcquisitionConfig(seed=0, strategy=strategy, target_accuracy=0.7, rounds_max=60)
    model, history = active.run_al_loop(s.model, s.labeled, s.pool, s.validation,
                                        SimulationOracle(s.pool), cfg, universe=["noise", "pose", "overlap"])
    acquired = s.labeled.labels[len(scenario.labeled):]
    print(f"\n{strategy}: labels to 70% = {history.labels_to_target(0.7)}, acquired {acquired}")
    print(history.to_csv(), end="")
