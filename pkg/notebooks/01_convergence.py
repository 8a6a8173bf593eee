"""
Convergence of one-bit feedback beamforming
===========================================

N transmitters with Rayleigh channels start from random phases. Every slot
each one perturbs its phase by a draw from U[-5 deg, 5 deg]; the receiver
answers with one bit (better or not) and the perturbation is kept only on a
strict improvement.
"""

# %%
import numpy as np

from beamsearch import (
    PerturbationModel,
    SearchConfig,
    SnrObjective,
    StopCriterion,
    monte_carlo_convergence,
    sample_channels,
)

n = 100
objective = SnrObjective(sample_channels(n, 1))
print("optimum SNR", objective.global_max_value)

# %%
config = SearchConfig(
    objective,
    PerturbationModel.symmetric(np.radians(5.0)),
    stop_rule=StopCriterion.alpha_threshold(0.9),
    halt_on_hit=False,
)
result = monte_carlo_convergence(config, runs=20, master_seed=7)

# %%
# average normalized SNR along the run, sampled every N slots
curve = result.mean_value_curve() / objective.global_max_value
for k in range(0, config.budget + 1, 10 * n):
    print(f"iter {k:6d}  f/f* = {curve[k]:.3f}  converged {result.convergence_fraction_by_iter[k]:.2f}")

# %%
print("mean hitting time", result.mean_hit_time, "which is about", round(result.mean_hit_time / n, 1), "N")
