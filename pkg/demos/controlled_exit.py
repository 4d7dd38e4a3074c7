# One unstable channel with a bounded control. Policy iteration finds the
# control field that keeps the state in (-1, 1) longest.
import numpy as np

from exitrate.elliptic_eig import build_grid, principal_eigenpair
from exitrate.hjb import (ChannelProblem, PolicyField, assemble_channel_operator,
                          policy_iteration)
from exitrate.model import (Box, ControlBox, ControlSpec, DiffusionSpec, FeedbackTuple,
                            MultiChannelSystem)

plant = MultiChannelSystem([[0.5]], ([[1.0]],))
grid = build_grid(Box([-1.0], [1.0]), 203)
prob = ChannelProblem(plant, FeedbackTuple.zeros(plant), 0,
                      ControlSpec((ControlBox([-1.0], [1.0]),)),
                      DiffusionSpec([[1.0]]), 0.5, grid)

sol = policy_iteration(prob)
print("sweeps:", sol.sweeps, " trace:", np.round(sol.trace, 6))

x = grid.points[:, 0]
u = sol.policy.values[:, 0]
print("control switches sign at x =", x[np.flatnonzero(np.diff(u))])

for c in (-1.0, 0.0, 1.0):
    lam_c = principal_eigenpair(assemble_channel_operator(
        prob, PolicyField.constant(0, grid, [c]))).lam
    print(f"  constant u={c:+.0f}: lambda = {lam_c:.5f}")
print(f"  optimal field  : lambda = {sol.lam:.5f}")
