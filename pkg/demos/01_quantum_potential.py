# %% [markdown]
# # The quantum potential of a two-electron Slater state
#
# Two electrons sit in Gaussian orbitals centred at -1 and +1 on a line.  We
# build the antisymmetrized amplitude on a 2D configuration grid, check its
# normalization chain, and compute the Bohm potential that seeds the
# self-consistent loop.

# %%
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from manybohm import (
    DensityModel,
    GridSpec,
    Orbital,
    PhysicalConstants,
    ScalarField,
    bohm_potential,
    conditional_function,
    marginal_function,
)
from manybohm.grid_field import marginalize, total_integral

OUT = Path(__file__).with_name("_out")
OUT.mkdir(exist_ok=True)

box = ((-6.0, 6.0),)
orbitals = tuple(Orbital("gaussian", center=(c,), width=1.0, box=box) for c in (-1.0, 1.0))
model = DensityModel(orbitals, N=2, box=box, mode="slater")
grid = GridSpec.uniform(-6, 6, 201, d=1, M=2)

# %% [markdown]
# The amplitude changes sign under particle exchange, so it vanishes on the
# diagonal x1 = x2.  Every normalization should come out at 1.

# %%
amp = model.amplitude_field(grid)
marg = marginal_function(model, grid)
beta = conditional_function(model, grid)
cond = marginalize(ScalarField(grid, beta.values**2), [1]).values

print("int |phi|^2 over both particles:", total_integral(ScalarField(grid, amp.values**2)))
print("int |phi(r)|^2 for the marginal:", total_integral(ScalarField(marg.grid, marg.values**2)))
print("worst conditional norm deviation:", np.max(np.abs(cond[~beta.flags[:, 0]] - 1)))

# %% [markdown]
# The initial potential.  The exchange node on the diagonal makes Q blow up
# there; those nodes are clipped by the division floor and flagged, so the
# warning below is expected.

# %%
Q0 = bohm_potential(amp, PhysicalConstants())
print(f"{Q0.flagged_fraction:.1%} of nodes flagged")

x = grid.coords(0)
fig, axes = plt.subplots(1, 2, figsize=(10, 4))
axes[0].pcolormesh(x, x, amp.values.T, cmap="RdBu_r", shading="auto")
axes[0].set(title="amplitude", xlabel="x1", ylabel="x2")
shown = np.where(Q0.flags, np.nan, np.clip(Q0.values, -5, 5))
im = axes[1].pcolormesh(x, x, shown.T, cmap="viridis", shading="auto")
axes[1].set(title="Q0 (clipped to [-5, 5])", xlabel="x1")
fig.colorbar(im, ax=axes[1])
fig.tight_layout()
fig.savefig(OUT / "slater_q0.png", dpi=120)

# %% [markdown]
# For a product of identical Gaussians the potential is additive,
# Q(x1, x2) = q(x1) + q(x2), with q the one-particle parabola
# 1/2 - x^2/2, up to the second-order stencil error.

# %%
product = DensityModel((orbitals[0], orbitals[0]), N=2, box=box, mode="product")
Qp = bohm_potential(product.amplitude_field(grid), PhysicalConstants())
X1, X2 = grid.meshgrid()
expected = (0.5 - (X1 + 1) ** 2 / 2) + (0.5 - (X2 + 1) ** 2 / 2)
window = (np.abs(X1 + 1) < 2) & (np.abs(X2 + 1) < 2)
print("max deviation from q(x1) + q(x2):", np.max(np.abs(Qp.values - expected)[window]))
