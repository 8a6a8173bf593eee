"""
Asynchronous updates and linear scaling
=======================================

With rho percent of the transmitters updating per slot, fewer coordinates
move at once and convergence slows down. Mean hitting time grows roughly
linearly in N.
"""

# %%
import numpy as np

from beamsearch import (
    PerturbationModel,
    SearchConfig,
    SnrObjective,
    async_sweep,
    sample_channels,
    scaling_study,
)
from beamsearch.experiments import snr_factory

base = SearchConfig(SnrObjective(sample_channels(50, 0)), PerturbationModel.symmetric(np.radians(5.0)))

# %%
sweep = async_sweep(base, [100, 75, 50, 25], runs_per_rho=20, master_seed=1, objective_factory=snr_factory)
for rho in sweep.rho_values:
    print(f"rho={rho:5.1f}%  mean hit {sweep.means[rho]:7.1f}")
diff, se = sweep.paired_difference(100.0, 25.0)
print(f"paired difference 100 vs 25: {diff:.0f} +- {se:.0f}")

# %%
scaling = scaling_study(base, [10, 20, 40, 80], runs_per_n=10, channels_per_n=3, master_seed=2)
for n, m in zip(scaling.n_values, scaling.mean_hit_times):
    print(f"N={n:3d}  mean hit {m:7.1f}")
fit = scaling.fit
print(f"slope {fit.slope:.2f}  intercept {fit.intercept:.1f}  r2 {fit.r_squared:.4f}")
