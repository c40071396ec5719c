# %% [markdown]
# # Fitting INT8-grid codebooks
#
# A sub-8-bit codebook holds at most 2^b - 1 centroids, each of the form
# `S * k / 128` with an integer `k` in [-128, 127].  Lloyd-Max picks where the
# centroids go, then they are snapped onto that INT8 grid.

# %%
import numpy as np

from s8bq.codebook import fit_codebook, fit_lloyd_max, optimal_1d_kmeans, uniform_codebook
from s8bq.compressor import hard_compress

rng = np.random.default_rng(0)
w = rng.standard_t(3, 20_000) * 0.05

# %%
cb = fit_codebook(w, 5)
print("K =", cb.k, " scale =", cb.scale)
print("numerators:", cb.numerators)

# every centroid is an exact INT8 code times S / 128
assert np.array_equal(cb.centroids, cb.scale * np.array(cb.numerators) / 128)

# %% [markdown]
# Centroids crowd near zero, where most of the weights are.  A uniform grid
# with the same K spends its levels evenly instead.

# %%
for b in (3, 4, 5):
    fitted = fit_codebook(w, b)
    uniform = uniform_codebook(b, fitted.scale, fitted.k)
    mse_fit = np.mean((w - hard_compress(w, fitted).weights) ** 2)
    mse_uni = np.mean((w - hard_compress(w, uniform).weights) ** 2)
    print(f"b={b}  K={fitted.k:2d}  fitted {mse_fit:.3e}  uniform {mse_uni:.3e}")

# %% [markdown]
# ## Lloyd against the exact optimum
#
# In one dimension the optimal k-means partition can be found exactly with a
# dynamic program over the sorted weights.  Lloyd-Max should land close to it.

# %%
small = rng.normal(size=150)
for k in (2, 4, 8):
    lloyd = fit_lloyd_max(small, k)
    exact = optimal_1d_kmeans(small, k)
    print(f"k={k}  lloyd {lloyd.mse:.5f}  optimal {exact.mse:.5f}  iters {lloyd.n_iter}")

# %%
print(cb.to_text())
