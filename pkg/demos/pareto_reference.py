# Rate vectors of the bundled two-channel configuration: Pareto front,
# weighted-sum choices, and the exponent comparison between the closed loop
# and each channel's optimal control.
import numpy as np

from exitrate.action import corollary_check, extrapolate_rate_exponent
from exitrate.config import parse_config, reference_config_text
from exitrate.elliptic_eig import build_grid, discretize, principal_eigenpair
from exitrate.hjb import rate_vector
from exitrate.model import closed_loop
from exitrate.pareto import pareto_front, scalarize, sweep

cfg = parse_config(reference_config_text())
grid = build_grid(cfg.domain, 61)
eps = min(cfg.epsilons)

records = sweep(cfg.system, cfg.candidates, cfg.controls, cfg.diffusion, eps, grid,
                cfg.domain, labels=[f"c{k}" for k in range(len(cfg.candidates))])
flagged, front = pareto_front(records)
for r in flagged:
    print(f"{r.label}: {np.array2string(r.rates, precision=5)}"
          f"{'  dominated' if r.dominated else ''}")
for w in cfg.run["weights"]:
    k, util = scalarize(flagged, w)
    print(f"weights {w}: pick {flagged[k].label} (utility {util:.5f})")

# exponents for the first candidate
fb = cfg.candidates[0]
M = closed_loop(cfg.system, fb)
lam0, lam_i = [], []
for e in cfg.epsilons:
    lam0.append(principal_eigenpair(discretize(M, cfg.diffusion, e, grid)).lam)
    lam_i.append(rate_vector(cfg.system, fb, cfg.controls, cfg.diffusion, e, grid)[0])
lam_i = np.array(lam_i)
r_star = extrapolate_rate_exponent(zip(cfg.epsilons, lam0)).intercept
r_ch = [extrapolate_rate_exponent(zip(cfg.epsilons, lam_i[:, i])).intercept
        for i in range(cfg.system.n_channels)]
ok, margin = corollary_check(r_star, r_ch)
print(f"closed-loop exponent {r_star:.3f}, channel exponents {np.round(r_ch, 3)}, "
      f"margin {margin:+.3f}")
