# %% [markdown]
# # Phase from an eikonal solve, then trajectories
#
# A phase S with |grad S| = 1 around a point is the distance function.  The
# fast-sweeping solver reproduces it to first order in h; smoothing the
# source over a small disc removes the point singularity from the error.

# %%
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from manybohm import EikonalProblem, GridSpec, PhysicalConstants, ScalarField, Source, solve_eikonal
from manybohm.eikonal import integrate_trajectory, velocity_field

OUT = Path(__file__).with_name("_out")
OUT.mkdir(exist_ok=True)

for radius in (0.0, 0.5):
    errs = []
    for n in (61, 121, 241):
        grid = GridSpec.uniform(0, 6, n, d=2)
        problem = EikonalProblem(ScalarField(grid, np.ones(grid.shape)), (Source((0.0, 0.0), radius=radius),))
        S = solve_eikonal(problem)
        X, Y = grid.meshgrid()
        errs.append(np.max(np.abs(S.values - np.hypot(X, Y))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    print(f"source radius {radius}: errors {np.round(errs, 4)}, orders {np.round(orders, 2)}")

# %% [markdown]
# Trajectories follow v = grad S / m.  In a radial phase they run straight
# away from the source until they leave the box.

# %%
grid = GridSpec.uniform(-3, 3, 121, d=2)
S = solve_eikonal(EikonalProblem(ScalarField(grid, np.ones(grid.shape)), (Source((0.0, 0.0), radius=0.3),)))
v = velocity_field(S, PhysicalConstants(mass=2.0))

fig, ax = plt.subplots(figsize=(5, 5))
ax.contour(grid.coords(0), grid.coords(1), S.values.T, levels=15, colors="0.7")
for angle in np.linspace(0, 2 * np.pi, 9)[:-1]:
    start = 0.4 * np.array([np.cos(angle), np.sin(angle)])
    traj = integrate_trajectory(v, start, dt=0.05, steps=200)
    ax.plot(traj.points[:, 0], traj.points[:, 1])
    print(f"start angle {angle:4.2f}: {len(traj)} points, truncated={traj.truncated}")
ax.set(aspect="equal", title="trajectories in a radial phase")
fig.savefig(OUT / "trajectories.png", dpi=120)
