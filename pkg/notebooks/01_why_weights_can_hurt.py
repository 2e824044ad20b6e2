"""
When inverse-variance weights hurt
==================================

Fit a straight line to ``y = x^2 + noise`` with heteroskedastic noise. The
line is the wrong model, so the residual carries a systematic part ``g(x)``
that no weighting removes. Weighting by ``1/sigma^2`` then lets a handful
of very precise points dominate the fit, and the estimator becomes noisier
than plain OLS.
"""

# %%
import numpy as np

from hetwls import DgpConfig, oracle_quantities, theoretical_nu, theoretical_nus

cfg = DgpConfig()
oracle = oracle_quantities(cfg)
print("best linear approximation beta =", oracle.beta_true)
print("B =\n", oracle.B_true)
print("A =\n", oracle.A_true)
print("Delta = tr A / tr B =", oracle.delta_true)

# %%
# Asymptotic variance of sqrt(n) (beta_hat - beta) for each weighting.
for name, nu in theoretical_nus(cfg, oracle).items():
    print(f"{name:18s} tr nu = {np.trace(nu):.4f}")

# %%
# The optimal weights 1/(sigma^2 + Delta) interpolate between WLS (Delta=0)
# and OLS (Delta -> infinity). Sweep Delta to see the minimum.
law = cfg.sigma_law
for d in [0.0, 1e-4, 1e-3, oracle.delta_true, 0.05, 0.5, 50.0]:
    m = law.moments(lambda s, d=d: 1.0 / (s**2 + d))
    print(f"Delta = {d:9.5f}  tr nu = {np.trace(theoretical_nu(oracle.A_true, oracle.B_true, m)):.4f}")
