"""Sub-8-bit quantization-aware training with INT8-grid Lloyd-Max codebooks.

The pieces, in pipeline order:

* :mod:`s8bq.codebook` fits Lloyd-Max centroids, snaps them to ``S*k/128``
  and derives the cosine regions.
* :mod:`s8bq.regularizer` is the MRACos soft compressor (loss and gradient).
* :mod:`s8bq.compressor` is the hard compressor and the convergence rate.
* :mod:`s8bq.packing` is the sub-8-bit storage format and INT8 expansion.
* :mod:`s8bq.harness` runs the whole pipeline on a toy model.
"""

__version__ = "0.1.0"

from .codebook import (
    ClusterFit,
    Codebook,
    Region,
    WeightTensor,
    centroid_values,
    derive_regions,
    fit_codebook,
    fit_lloyd_max,
    optimal_1d_kmeans,
    snap_to_int8_grid,
    uniform_codebook,
)
from .compressor import (
    CompressionSchedule,
    ConvergenceReport,
    convergence_rate,
    default_epsilon,
    hard_compress,
    should_compress,
)
from .errors import (
    CorruptionError,
    DivergenceError,
    FormatError,
    InvalidCodebookError,
    InvalidInputError,
    S8BQError,
)
from .harness import QatConfig, TrainingLog, evaluate_quantized, generate_task, run_pipeline, train_step
from .packing import PackedTensor, compression_ratio, decompress_to_int8, pack, unpack
from .regularizer import finite_difference_check, mracos, mracos_grad, mracos_loss

__all__ = [
    "ClusterFit",
    "Codebook",
    "CompressionSchedule",
    "ConvergenceReport",
    "CorruptionError",
    "DivergenceError",
    "FormatError",
    "InvalidCodebookError",
    "InvalidInputError",
    "PackedTensor",
    "QatConfig",
    "Region",
    "S8BQError",
    "TrainingLog",
    "WeightTensor",
    "centroid_values",
    "compression_ratio",
    "convergence_rate",
    "decompress_to_int8",
    "default_epsilon",
    "derive_regions",
    "evaluate_quantized",
    "finite_difference_check",
    "fit_codebook",
    "fit_lloyd_max",
    "generate_task",
    "hard_compress",
    "mracos",
    "mracos_grad",
    "mracos_loss",
    "optimal_1d_kmeans",
    "pack",
    "run_pipeline",
    "should_compress",
    "snap_to_int8_grid",
    "train_step",
    "uniform_codebook",
    "unpack",
]
