"""
Period estimation with a misspecified harmonic model
====================================================

A sawtooth light curve is poorly described by one sinusoid, and with sparse
nightly sampling the scan often locks onto a one-day alias. Weighting the
scan by ``1/sigma^2`` lets the few very precise points pick the frequency,
which makes this worse on average.
"""

# %%
import numpy as np

from hetwls import PeriodogramConfig, periodogram, recovery_table, synthetic_light_curve
from hetwls.periodfit import discrete_sigma_sampler

rng = np.random.default_rng(3)
lc = synthetic_light_curve(0.57, 60, rng, amplitude=5.0, cadence="nightly", time_span=100.0,
                           sigma=discrete_sigma_sampler([0.01, 0.1, 1.0], [0.05, 0.9, 0.05]))
print("true period       0.57000")
for weighting in ("identity", "inverse_variance", "delta_refit"):
    res = periodogram(lc, PeriodogramConfig(K=1, weighting=weighting, period_min=0.2, period_max=2.0))
    print(f"{weighting:17s} period {res.period:.5f}  delta {res.delta}")

# %%
# Fraction recovered within 1% over a small synthetic catalog.
periods = rng.uniform(0.4, 0.8, 60)
sampler = discrete_sigma_sampler([0.01, 0.1, 1.0], [0.05, 0.9, 0.05])
curves = [synthetic_light_curve(P, 60, rng, amplitude=5.0, cadence="nightly", sigma=sampler) for P in periods]
table = recovery_table(curves, periods, n_values=(20, 40), K_values=(1,), seed=1,
                       grid_options={"period_min": 0.2, "period_max": 2.0, "oversample": 1.0})
for (n, K, w), score in sorted(table.items()):
    print(f"n={n:2d} K={K} {w:17s} {score.fraction:.3f}")
