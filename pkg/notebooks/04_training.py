# %% [markdown]
# # Quantization-aware training on a toy MLP
#
# A float baseline phase is followed by a regularized phase with periodic hard
# compression.  The convergence rate gamma is the fraction of weights sitting
# within epsilon of their centroid.

# %%
import dataclasses

from s8bq.harness import QatConfig, run_pipeline

config = QatConfig(seed=0)
qat = run_pipeline(config)
ptq = run_pipeline(dataclasses.replace(config, baseline_steps=config.total_steps))

print("QAT degradation", qat.degradation, " final gamma", qat.final_gamma)
print("PTQ degradation", ptq.degradation)

# %%
# gamma resets to 1 at each compression and drifts down between them
recs = qat.log.records
for r in [r for r in recs if r.compressed][:4]:
    before = recs[r.step - 2]
    print(f"step {before.step}: {before.gamma:.3f}  ->  step {r.step}: {r.gamma:.3f}")

# %%
for name, data in qat.packed.items():
    print(name, len(data), "bytes")
