"""
How likely is a single slot to improve?
=======================================

Monte Carlo estimate of P(f(theta + delta) > f(theta)) at states below the
alpha threshold. Far from the optimum roughly half of all perturbations
help; near it the estimate drops, but it stays positive.
"""

# %%
import numpy as np

from beamsearch import (
    PerturbationModel,
    PhaseState,
    SearchConfig,
    SnrObjective,
    UpdateSchedule,
    improvement_probability_estimate,
    sample_channels,
)

n = 30
objective = SnrObjective(sample_channels(n, 8))
rng = np.random.default_rng(9)
model = PerturbationModel.symmetric(np.radians(5.0))

# %%
for label, schedule in [("sync", UpdateSchedule.synchronous()), ("rho=50", UpdateSchedule.asynchronous(0.5))]:
    config = SearchConfig(objective, model, schedule)
    for scale in (3.0, 1.0, 0.3):
        theta = PhaseState(scale * rng.uniform(-np.pi, np.pi, n))
        ratio = objective.evaluate(theta) / objective.global_max_value
        p = improvement_probability_estimate(theta, config, 5000, rng)
        print(f"{label:7s} f/f* = {ratio:.2f}  P(improve) ~ {p:.3f}")
