"""Hard compression to codebook centroids and the convergence rate gamma."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .codebook import Codebook, WeightTensor, WeightsLike, as_values
from .errors import InvalidInputError


def nearest_indices(values: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the nearest centroid for each value; ties go to the lower index.

    ``centroids`` must be sorted ascending.  Values beyond the outermost
    centroids map to them, which is how out-of-range weights get clipped.
    """
    k = centroids.size
    upper = np.clip(np.searchsorted(centroids, values, side="left"), 0, k - 1)
    lower = np.clip(upper - 1, 0, k - 1)
    take_lower = np.abs(values - centroids[lower]) <= np.abs(values - centroids[upper])
    return np.where(take_lower, lower, upper)


class HardCompressed(NamedTuple):
    weights: object  # WeightTensor or ndarray, matching the input
    indices: np.ndarray


def hard_compress(weights: WeightsLike, codebook: Codebook) -> HardCompressed:
    """Replace every weight by its nearest centroid ``S * k / 128``.

    Returns the quantized weights (same container type and shape as the
    input) and the ``uint8`` codebook positions used by the packer.
    """
    values = as_values(weights)
    centroids = codebook.centroids
    idx = nearest_indices(values, centroids).astype(np.uint8)
    quantized = centroids[idx]
    if isinstance(weights, WeightTensor):
        out = WeightTensor(quantized, weights.shape, weights.name)
    else:
        out = quantized.reshape(np.shape(weights))
        idx = idx.reshape(np.shape(weights))
    return HardCompressed(out, idx)


def default_epsilon(codebook: Codebook) -> float:
    """1% of the squared smallest centroid spacing, in weight units."""
    return (codebook.scale * codebook.min_gap / 128) ** 2 / 100


class PartitionGamma(NamedTuple):
    numerator: int
    count: int
    gamma: float


@dataclass(frozen=True)
class ConvergenceReport:
    epsilon: float
    per_partition: tuple[PartitionGamma, ...]
    overall_gamma: float

    @property
    def count(self) -> int:
        return sum(p.count for p in self.per_partition)

    def csv_row(self, tick: int) -> list:
        return [tick, self.overall_gamma] + [p.gamma for p in self.per_partition]

    def csv_header(self) -> list[str]:
        return ["tick", "overall_gamma"] + [f"gamma_{p.numerator}" for p in self.per_partition]


def convergence_rate(weights: WeightsLike, codebook: Codebook, epsilon=None) -> ConvergenceReport:
    """Fraction of weights whose squared distance to their centroid is below epsilon.

    ``epsilon`` bounds the *squared* distance.  Weights are partitioned by
    nearest centroid; an empty partition reports gamma 1.0 (vacuously
    converged) and carries no weight in the overall value, which is the
    count-weighted mean of the partition values.
    """
    eps = default_epsilon(codebook) if epsilon is None else float(epsilon)
    if not eps > 0:
        raise InvalidInputError(f"epsilon must be positive, got {epsilon}")
    values = as_values(weights)
    centroids = codebook.centroids
    idx = nearest_indices(values, centroids)
    close = (values - centroids[idx]) ** 2 < eps
    counts = np.bincount(idx, minlength=codebook.k)
    hits = np.bincount(idx, weights=close.astype(np.float64), minlength=codebook.k)
    parts = tuple(
        PartitionGamma(num, int(c), float(h) / c if c else 1.0)
        for num, c, h in zip(codebook.numerators, counts, hits)
    )
    overall = float(np.count_nonzero(close)) / values.size if values.size else 1.0
    return ConvergenceReport(eps, parts, overall)


def pooled_gamma(reports: Sequence[ConvergenceReport]) -> float:
    """Overall gamma across several tensors (count-weighted)."""
    total = sum(r.count for r in reports)
    if not total:
        return 1.0
    return sum(r.overall_gamma * r.count for r in reports) / total


def write_reports_csv(path, rows: Sequence[tuple[int, ConvergenceReport]]) -> None:
    """Write ``(tick, report)`` pairs, one CSV row each, under one header."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if rows:
            writer.writerow(rows[0][1].csv_header())
        for tick, report in rows:
            writer.writerow(report.csv_row(tick))


UNITS = ("step", "epoch")


@dataclass(frozen=True)
class CompressionSchedule:
    period_tau: int
    start_after: int = 0
    unit: str = "step"

    def __post_init__(self):
        if self.period_tau < 1:
            raise InvalidInputError(f"period must be >= 1, got {self.period_tau}")
        if self.start_after < 0:
            raise InvalidInputError("start_after must be non-negative")
        if self.unit not in UNITS:
            raise InvalidInputError(f"unit must be one of {UNITS}, got {self.unit!r}")


def should_compress(schedule: CompressionSchedule, tick: int) -> bool:
    return tick >= schedule.start_after and (tick - schedule.start_after) % schedule.period_tau == 0
