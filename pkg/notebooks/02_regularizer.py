# %% [markdown]
# # The multi-region cosine regularizer
#
# Within each region the penalty `lam * (1 - |cos(pi * theta * (u - anchor))|)`
# is zero on the centroids and peaks halfway between them.  Its gradient pulls
# each weight toward the nearest centroid.

# %%
import numpy as np

from s8bq.codebook import fit_codebook
from s8bq.regularizer import finite_difference_check, kink_distance, mracos, mracos_elementwise, mracos_grad

rng = np.random.default_rng(1)
w = rng.laplace(0, 0.1, 5000)
cb = fit_codebook(w, 4, lam=1e-3)
for r in cb.regions:
    print(f"[{r.lo:+.4f}, {r.hi:+.4f})  theta={r.theta:g}  anchor={r.anchor:+.4f}")

# %%
grid = np.linspace(-cb.scale, cb.scale, 9)
print(np.round(mracos_elementwise(grid, cb), 6))
print(np.round(mracos_grad(grid, cb), 4))

# %%
res = mracos(w, cb)
print("loss", res.loss, " clipped", res.clipped_count)

# the penalty vanishes on the centroids themselves
print("on centroids:", mracos_elementwise(cb.centroids, cb).max())

# %% [markdown]
# ## Gradient check
#
# The absolute value makes the penalty non-differentiable where the cosine
# crosses zero, so points near those kinks are skipped.

# %%
probe = rng.uniform(-cb.scale, cb.scale, 1000)
print("closest kink:", kink_distance(probe, cb).min())
print(finite_difference_check(probe, cb, h=1e-6, exclude=1e-4))
