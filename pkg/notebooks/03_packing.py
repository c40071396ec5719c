# %% [markdown]
# # Packed sub-8-bit tensors
#
# Each weight is stored as a b-bit codebook position, packed LSB-first.  The
# header carries the scale and the INT8 numerators, so decoding back to INT8
# codes needs nothing else.

# %%
import numpy as np

from s8bq.codebook import fit_codebook
from s8bq.compressor import hard_compress
from s8bq.packing import decompress_to_int8, header_size, pack, payload_size, unpack

rng = np.random.default_rng(2)
w = rng.normal(0, 0.2, size=(64, 96))
cb = fit_codebook(w, 5)
q = hard_compress(w, cb)
blob = pack(q.indices, cb)
print(len(blob), "bytes =", header_size(2, cb.k), "header +", payload_size(w.size, 5), "payload")

# %%
pt = unpack(blob)
assert pt.shape == w.shape
assert np.array_equal(pt.indices.reshape(pt.shape), q.indices)
codes = decompress_to_int8(blob)
assert np.array_equal(codes.dequantize().reshape(w.shape), q.weights)
print(codes.codes.reshape(w.shape)[:2, :8])

# %% [markdown]
# At 5 bits a 1024 x 4096 layer takes 2.5 MiB instead of 4 MiB at INT8.

# %%
n = 1024 * 4096
for b in range(1, 9):
    print(b, payload_size(n, b) / 2**20, "MiB")
