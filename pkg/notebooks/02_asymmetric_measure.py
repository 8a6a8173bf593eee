"""
Shifted perturbation boxes
==========================

A box U[-d+c, d+c] still contains the origin when |c| < d, so every
direction keeps positive probability. How the shift is drawn matters: one
shift shared by all transmitters rotates the whole array (which SNR
ignores), while an independent shift per transmitter keeps pushing the
phases apart.
"""

# %%
import numpy as np

from beamsearch import (
    PerturbationModel,
    SearchConfig,
    SnrObjective,
    check_origin_interior,
    monte_carlo_convergence,
    sample_channels,
)

delta0 = np.radians(5.0)
for n in (5, 10, 20, 50):
    objective = SnrObjective(sample_channels(n, 3))
    row = []
    for common in (True, False):
        model = PerturbationModel.random_shift(delta0, n, 4, common=common)
        assert check_origin_interior(model, n=n) is True
        res = monte_carlo_convergence(SearchConfig(objective, model), 10, 5, keep_traces=False)
        best = max(res.final_values) / objective.global_max_value
        row.append(f"{'common' if common else 'independent'}: {res.final_convergence_fraction:.1f} (best {best:.2f})")
    print(f"N={n:3d}  " + "   ".join(row))
