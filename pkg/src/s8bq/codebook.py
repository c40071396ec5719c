"""Lloyd-Max codebooks snapped to the INT8 grid, and the cosine regions on them.

All region quantities (bounds, frequency, anchor) live in *normalized* weight
units ``u = w / scale``.  A centroid with numerator ``k`` sits at ``u = k/128``
and at ``w = scale * k / 128``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import numpy as np

from .errors import InvalidCodebookError, InvalidInputError

INT8_MIN = -128
INT8_MAX = 127
GRID = 128

SCALE_MODES = ("max-abs", "fixed")


@dataclass(frozen=True, eq=False)
class WeightTensor:
    """Flat float64 weights plus the shape they came from."""

    values: np.ndarray
    shape: tuple[int, ...]
    name: str = "weights"

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)
        shape = tuple(int(d) for d in self.shape)
        if any(d < 0 for d in shape):
            raise InvalidInputError(f"negative dimension in shape {shape}")
        if math.prod(shape) != values.size:
            raise InvalidInputError(
                f"shape {shape} holds {math.prod(shape)} values, got {values.size}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidInputError(f"{self.name}: weights must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "shape", shape)

    @classmethod
    def from_array(cls, array, name: str = "weights") -> "WeightTensor":
        array = np.asarray(array, dtype=np.float64)
        return cls(array.reshape(-1), array.shape, name)

    def to_array(self) -> np.ndarray:
        return self.values.reshape(self.shape)

    def __len__(self) -> int:
        return self.values.size


WeightsLike = Union[WeightTensor, np.ndarray, Sequence[float]]


def as_values(weights: WeightsLike) -> np.ndarray:
    """Return the weights as a flat float64 array (no copy when possible)."""
    if isinstance(weights, WeightTensor):
        return weights.values
    return np.asarray(weights, dtype=np.float64).reshape(-1)


@dataclass(frozen=True)
class Region:
    """Half-open interval ``[lo, hi)`` of normalized weight space.

    The regularizer inside the region is ``lam * (1 - |cos(pi*theta*(u - anchor))|)``.
    ``anchor`` is a centroid of the region; when every centroid of the region
    is a multiple of the period ``1/theta`` the anchor has no effect and the
    penalty reduces to the phase-free form ``1 - |cos(pi*theta*u)|``.
    """

    lo: float
    hi: float
    theta: float
    lam: float = 0.0
    anchor: float = 0.0

    def __post_init__(self):
        if not (self.hi > self.lo):
            raise InvalidCodebookError(f"region needs hi > lo, got [{self.lo}, {self.hi})")
        if not (self.theta > 0 and math.isfinite(self.theta)):
            raise InvalidCodebookError(f"region frequency must be positive, got {self.theta}")
        if not (self.lam >= 0):
            raise InvalidCodebookError(f"region lambda must be non-negative, got {self.lam}")

    @property
    def period(self) -> float:
        """Distance between neighbouring maxima, in normalized units."""
        return 1.0 / self.theta

    def contains(self, u: float) -> bool:
        return self.lo <= u < self.hi


@dataclass(frozen=True)
class Codebook:
    """INT8-grid codebook: centroid ``j`` is ``scale * numerators[j] / 128``."""

    bit_width: int
    scale: float
    numerators: tuple[int, ...]
    regions: tuple[Region, ...] = ()

    def __post_init__(self):
        nums = tuple(int(k) for k in self.numerators)
        object.__setattr__(self, "numerators", nums)
        object.__setattr__(self, "regions", tuple(self.regions))
        if not 1 <= self.bit_width <= 8:
            raise InvalidCodebookError(f"bit width must be in [1, 8], got {self.bit_width}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise InvalidCodebookError(f"scale must be positive and finite, got {self.scale}")
        if not nums:
            raise InvalidCodebookError("codebook needs at least one centroid")
        if len(nums) > 2**self.bit_width:
            raise InvalidCodebookError(
                f"{len(nums)} centroids do not fit in {self.bit_width} bits"
            )
        if any(k < INT8_MIN or k > INT8_MAX for k in nums):
            raise InvalidCodebookError("numerators must lie in [-128, 127]")
        if any(b <= a for a, b in zip(nums, nums[1:])):
            raise InvalidCodebookError("numerators must be strictly increasing")
        for a, b in zip(self.regions, self.regions[1:]):
            if b.lo < a.hi:
                raise InvalidCodebookError("regions must be ordered and disjoint")

    @property
    def k(self) -> int:
        return len(self.numerators)

    @property
    def centroids(self) -> np.ndarray:
        """Centroid values in weight units, ascending."""
        return centroid_values(self.numerators, self.scale)

    @property
    def normalized_centroids(self) -> np.ndarray:
        return np.asarray(self.numerators, dtype=np.float64) / GRID

    @property
    def min_gap(self) -> int:
        """Smallest numerator gap (1 for a single-centroid codebook)."""
        if self.k < 2:
            return 1
        return int(np.diff(self.numerators).min())

    def with_lambda(self, lam) -> "Codebook":
        """Copy with region weights replaced (scalar or one value per region)."""
        lams = _broadcast_lambda(lam, len(self.regions))
        regions = tuple(
            Region(r.lo, r.hi, r.theta, l, r.anchor) for r, l in zip(self.regions, lams)
        )
        return Codebook(self.bit_width, self.scale, self.numerators, regions)

    def to_text(self) -> str:
        lines = [
            f"{self.bit_width} {self.scale!r} {self.k}",
            " ".join(str(k) for k in self.numerators),
            str(len(self.regions)),
        ]
        for r in self.regions:
            lines.append(f"{r.lo!r} {r.hi!r} {r.theta!r} {r.lam!r} {r.anchor!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Codebook":
        rows = []
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                rows.append(line.split())
        try:
            bit_width, scale, k = int(rows[0][0]), float(rows[0][1]), int(rows[0][2])
            numerators = tuple(int(v) for v in rows[1])
            n_regions = int(rows[2][0]) if len(rows) > 2 else 0
            regions = []
            for row in rows[3 : 3 + n_regions]:
                vals = [float(v) for v in row]
                if len(vals) not in (4, 5):
                    raise ValueError("region rows need 4 or 5 columns")
                regions.append(Region(*vals))
        except (IndexError, ValueError) as exc:
            raise InvalidCodebookError(f"malformed codebook text: {exc}") from exc
        if len(numerators) != k or len(regions) != n_regions:
            raise InvalidCodebookError("codebook text counts do not match its header")
        return cls(bit_width, scale, numerators, tuple(regions))


def centroid_values(numerators, scale: float) -> np.ndarray:
    """``scale * k / 128`` for each numerator.

    Every module that turns numerators into weights goes through here so the
    float results are bit-identical along all paths.
    """
    return scale * np.asarray(numerators, dtype=np.float64) / GRID


class ClusterFit(NamedTuple):
    centroids: np.ndarray
    mse: float
    history: tuple[float, ...] = ()
    n_iter: int = 0


def _check_k(xs: np.ndarray, k: int) -> None:
    if xs.size == 0:
        raise InvalidInputError("cannot cluster an empty weight tensor")
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    distinct = np.unique(xs).size
    if k > distinct:
        raise InvalidInputError(f"k={k} exceeds the {distinct} distinct weight values")


def _segment_means(xs: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Mean of each consecutive run of ``counts`` values; NaN for empty runs."""
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    full = counts > 0
    out = np.full(counts.size, np.nan)
    out[full] = np.add.reduceat(xs, starts[full]) / counts[full]
    return out


class _Sorted:
    """Sorted weights plus prefix sums, giving O(1) cost for any segment.

    Clusterings are handled as partitions of the sorted weights, stored as
    ``k + 1`` edges.  Sums run over weights centred on their mean, which keeps
    ``sum(x^2) - sum(x)^2 / m`` well conditioned.
    """

    def __init__(self, xs: np.ndarray):
        self.xs = xs
        self.mu = xs.mean()
        c = xs - self.mu
        self.s1 = np.concatenate(([0.0], np.cumsum(c)))
        self.s2 = np.concatenate(([0.0], np.cumsum(c * c)))

    def edges(self, centroids: np.ndarray) -> np.ndarray:
        """Partition under nearest-centroid assignment; a midpoint goes to the lower centroid.

        Works row-wise on a 2-D stack of sorted centroid vectors.
        """
        mids = (centroids[..., :-1] + centroids[..., 1:]) / 2
        out = np.empty(mids.shape[:-1] + (mids.shape[-1] + 2,), dtype=np.int64)
        out[..., 0] = 0
        out[..., 1:-1] = self.xs.searchsorted(mids, side="right")
        out[..., -1] = self.xs.size
        return out

    def cost(self, a, b):
        """SSE of ``xs[a:b]`` around its mean, zero when empty."""
        s = self.s1[b] - self.s1[a]
        return np.maximum(self.s2[b] - self.s2[a] - s * s / np.maximum(b - a, 1), 0.0)

    def summary(self, e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """MSE of partition ``e`` and its segment means (NaN when empty), row-wise."""
        counts = e[..., 1:] - e[..., :-1]
        full = counts.all()
        safe = counts if full else np.maximum(counts, 1)
        t1, t2 = self.s1[e], self.s2[e]
        sums = t1[..., 1:] - t1[..., :-1]
        sse = np.maximum(t2[..., 1:] - t2[..., :-1] - sums * sums / safe, 0.0)
        means = self.mu + sums / safe
        if not full:
            means[counts == 0] = np.nan
        return sse.sum(axis=-1) / self.xs.size, means

    def mse(self, e: np.ndarray) -> float:
        return float(self.summary(e)[0])

    def means(self, e: np.ndarray) -> np.ndarray:
        return self.summary(e)[1]

    def best_splits(self, a: np.ndarray, b: np.ndarray):
        """Cheapest two-way split point of each ``xs[a:b]`` (all with ``b - a >= 2``).

        Ties go to the leftmost position.
        """
        lens = b - a - 1
        first = lens.cumsum() - lens
        seg = np.arange(lens.size).repeat(lens)
        e = np.arange(seg.size) + (a + 1 - first)[seg]
        # the halves' SSE is fixed minus this, so maximize it
        se = self.s1[e]
        left = se - self.s1[a][seg]
        right = self.s1[b][seg] - se
        score = left * left / (e - a[seg]) + right * right / (b[seg] - e)
        high = (score >= np.maximum.reduceat(score, first)[seg]).nonzero()[0]
        return e[high[high.searchsorted(first)]]


def _repair(data: _Sorted, e: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Reseed each empty cluster at the worst-represented weight not already a centroid."""
    counts = np.diff(e)
    new = means.copy()
    empty = np.flatnonzero(counts == 0)
    full = counts > 0
    err = np.abs(data.xs - np.repeat(new[full], counts[full]))
    taken = set(new[full].tolist())
    picks = []
    for idx in np.argsort(-err, kind="stable"):
        v = float(data.xs[idx])
        if v not in taken:
            taken.add(v)
            picks.append(v)
            if len(picks) == empty.size:
                break
    new[empty[: len(picks)]] = picks
    return np.sort(new)


def _update(data: _Sorted, e: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Centroid-as-mean step for each row, repairing empty clusters."""
    new = means.copy()
    new.sort(axis=-1)
    gaps = np.isnan(means)
    if gaps.any():
        for row in gaps.any(axis=-1).nonzero()[0]:
            new[row] = _repair(data, e[row], means[row])
    return new


def _quantile_init(xs: np.ndarray, k: int) -> np.ndarray:
    return np.sort(np.quantile(xs, (np.arange(k) + 0.5) / k))


def _uniform_init(xs: np.ndarray, k: int) -> np.ndarray:
    return xs[0] + (np.arange(k) + 0.5) / k * (xs[-1] - xs[0])


_INITS = {"quantile": _quantile_init, "uniform": _uniform_init}


def _lloyd(data: _Sorted, centroids: np.ndarray, max_iters: int, tol: float, target=None):
    """Plain Lloyd iteration, run independently from each row of ``centroids``.

    Returns the final partitions, final MSEs and a trace of ``(rows, mse)``
    pairs, one per iteration, for :func:`_row_history`.  With a ``target``,
    rows after the first one already below it are abandoned, since only the
    first row to end below the target matters.
    """
    e = data.edges(centroids)
    mse, means = data.summary(e)
    live = np.arange(mse.size)
    trace = [(live, mse.copy())]
    for _ in range(max_iters):
        if not live.size:
            break
        new_e = data.edges(_update(data, e[live], means[live]))
        new_mse, new_means = data.summary(new_e)
        old = mse[live]
        # an unchanged partition is a fixed point; a rise is float rounding at one
        moved = (new_e != e[live]).any(axis=-1) & (new_mse <= old)
        rows = live[moved]
        e[rows], mse[rows], means[rows] = new_e[moved], new_mse[moved], new_means[moved]
        trace.append((rows, new_mse[moved]))
        live = rows[old[moved] - new_mse[moved] >= tol]
        if target is not None:
            below = (mse < target).nonzero()[0]
            if below.size:
                live = live[live <= below[0]]
    return e, mse, trace


def _row_history(trace, row: int) -> list[float]:
    out = []
    for rows, values in trace:
        hit = (rows == row).nonzero()[0]
        if hit.size:
            out.append(float(values[hit[0]]))
    return out


def _boundary_candidate(data: _Sorted, e: np.ndarray, limit=None, max_sweeps: int = 200):
    """Re-place every cluster boundary optimally between its neighbours, to convergence.

    A boundary only affects the two clusters beside it, so all odd
    boundaries can move at once, then all even ones.  Returns a single
    candidate row, or none when nothing moves.
    """
    none = np.empty((0, e.size - 1))
    if (e[1:] == e[:-1]).any():
        return none
    start, e = e, e.copy()
    halves = [np.arange(1, e.size - 1, 2), np.arange(2, e.size - 1, 2)]
    still = 0
    for step in range(2 * max_sweeps):
        j = halves[step % 2]
        if j.size:
            moved = data.best_splits(e[j - 1], e[j + 1])
            changed = (moved != e[j]).any()
            e[j] = moved
        else:
            changed = False
        still = 0 if changed else still + 1
        if still == 2:
            break
    return none if (e == start).all() else data.means(e)[None]


def _split_merge_candidates(data: _Sorted, e: np.ndarray, limit: int):
    """Merge two neighbouring clusters and split a third, best predicted first.

    Returns up to ``limit`` candidate centroid rows.
    """
    k = e.size - 1
    sizes = np.diff(e)
    if k < 3 or np.any(sizes == 0):
        return np.empty((0, k))
    costs = data.cost(e[:-1], e[1:])
    merge = data.cost(e[:-2], e[2:]) - costs[:-1] - costs[1:]
    gain = np.full(k, np.nan)
    split_at = np.zeros(k, dtype=np.int64)
    can = np.flatnonzero(sizes >= 2)
    if can.size:
        split_at[can] = at = data.best_splits(e[can], e[can + 1])
        gain[can] = costs[can] - data.cost(e[can], at) - data.cost(at, e[can + 1])
    # predicted SSE change of (merge j and j+1, split i), ordered by (value, j, i)
    delta = merge[:, None] - gain[None, :]
    # a merged cluster cannot also be the split one
    r = np.arange(k - 1)
    delta[r, r] = np.nan
    delta[r, r + 1] = np.nan
    flat = np.flatnonzero(~np.isnan(delta.reshape(-1)))
    order = flat[np.argsort(delta.reshape(-1)[flat], kind="stable")[:limit]]
    j, i = np.unravel_index(order, delta.shape)
    keep = np.ones((order.size, k + 1), dtype=bool)
    keep[np.arange(order.size), j + 1] = False
    moved = np.column_stack((np.broadcast_to(e, keep.shape)[keep].reshape(-1, k), split_at[i]))
    return data.means(np.sort(moved, axis=1))


def _escape(data: _Sorted, e, history, max_iters, tol, limit):
    """Leave Lloyd fixed points through moves that strictly lower the MSE.

    The boundary sweep is tried first.  Otherwise Lloyd runs from all
    split/merge candidates at once and the first one, in candidate order,
    that ends lower is kept.
    """
    for _ in range(4 * (e.size - 1)):
        target = history[-1] * (1 - 1e-12)
        moved = False
        for cands in (_boundary_candidate, _split_merge_candidates):
            cands = cands(data, e, limit)
            if cands.size == 0:
                continue
            ends, final, trace = _lloyd(data, cands, max_iters, tol, target)
            ok = (final < target).nonzero()[0]
            if ok.size:
                e = ends[ok[0]]
                history = history + [h for h in _row_history(trace, ok[0]) if h < history[-1]]
                moved = True
                break
        if not moved:
            break
    return e, history


def fit_lloyd_max(
    weights: WeightsLike,
    k: int,
    max_iters: int = 100,
    tol: float = 1e-14,
    init="quantile",
    escape: bool = True,
    escape_tries: int = 16,
    search_limit: int = 65536,
) -> ClusterFit:
    """Iterative Lloyd-Max quantizer for a 1-D weight sample.

    Alternates nearest-centroid assignment and centroid-as-mean updates.
    Plain Lloyd often stalls in a poor fixed point, so by default each fixed
    point is followed by escape moves (re-placing cluster boundaries
    optimally, or merging two clusters while splitting another).  An escape
    is kept only if Lloyd iteration from it ends strictly lower, so the MSE
    history stays non-increasing.

    MSE values are computed from prefix sums over the partition of the
    sorted weights, the same way as in :func:`optimal_1d_kmeans`, so the
    two are directly comparable.

    Parameters
    ----------
    weights : WeightTensor or array_like
        Weights to quantize.
    k : int
        Number of centroids.
    max_iters : int
        Upper bound on assign/update rounds per Lloyd run.
    tol : float
        A Lloyd run stops once a round improves the MSE by less than ``tol``.
    init : {"quantile", "uniform", "auto"} or array_like
        ``"quantile"`` seeds centroid ``j`` at the ``(j + 0.5)/k`` quantile,
        ``"uniform"`` at the same fractions of the value range, ``"auto"``
        runs both and keeps the lower MSE.  An explicit array of ``k``
        centroids is used as given.
    escape : bool
        Apply escape moves after each Lloyd run.
    escape_tries : int
        Split/merge candidates tried per escape round.
    search_limit : int
        Above this many weights the starts and escapes run on an evenly
        strided subsample of the sorted weights; a final Lloyd run on all
        weights polishes the winner.

    Returns
    -------
    ClusterFit
        Sorted centroids, the final per-weight MSE, the MSE history of the
        kept run (first entry is the initial distortion) and its length - 1.
    """
    xs = np.sort(as_values(weights))
    _check_k(xs, k)
    if isinstance(init, str):
        names = ("quantile", "uniform") if init == "auto" else (init,)
        if any(n not in _INITS for n in names):
            raise InvalidInputError(f"unknown init strategy {init!r}")
        starts = [_INITS[n](xs, k) for n in names]
    else:
        start = np.sort(np.asarray(init, dtype=np.float64).reshape(-1))
        if start.size != k:
            raise InvalidInputError(f"init has {start.size} centroids, expected {k}")
        starts = [start]

    data = search = _Sorted(xs)
    stride = -(-xs.size // search_limit)
    if xs.size > search_limit and np.unique(xs[::stride]).size >= k:
        search = _Sorted(xs[::stride])

    best = None
    for start in starts:
        ends, _, trace = _lloyd(search, start[None], max_iters, tol)
        e, history = ends[0], _row_history(trace, 0)
        if escape:
            e, history = _escape(search, e, history, max_iters, tol, escape_tries)
        if best is None or history[-1] < best[1][-1]:
            best = (e, history)
    e, history = best
    if search is not data:
        ends, _, trace = _lloyd(data, search.means(e)[None], max_iters, tol)
        e, history = ends[0], _row_history(trace, 0)
    counts = np.diff(e)
    centroids = _segment_means(xs, counts) if counts.all() else _repair(data, e, data.means(e))
    return ClusterFit(centroids, history[-1], tuple(history), len(history) - 1)


def optimal_1d_kmeans(weights: WeightsLike, k: int) -> ClusterFit:
    """Globally MSE-optimal 1-D k-means by dynamic programming.

    Optimal 1-D clusters are contiguous in sorted order, so the problem is a
    shortest path over split points with O(1) segment costs from prefix sums.
    Runs in O(k n^2); intended as an exact oracle for modest ``n``.
    """
    xs = np.sort(as_values(weights))
    _check_k(xs, k)
    n = xs.size
    data = _Sorted(xs)
    s1, s2 = data.s1, data.s2

    cost = np.full((k + 1, n + 1), np.inf)
    back = np.zeros((k + 1, n + 1), dtype=np.int64)
    cost[0, 0] = 0.0
    for j in range(1, k + 1):
        for i in range(j, n - (k - j) + 1):
            starts = np.arange(j - 1, i)
            m = i - starts
            seg = s2[i] - s2[starts] - (s1[i] - s1[starts]) ** 2 / m
            total = cost[j - 1, starts] + np.maximum(seg, 0.0)
            best = int(np.argmin(total))
            cost[j, i] = total[best]
            back[j, i] = starts[best]

    bounds = [n]
    for j in range(k, 0, -1):
        bounds.append(int(back[j, bounds[-1]]))
    e = np.array(bounds[::-1])
    return ClusterFit(_segment_means(xs, np.diff(e)), data.mse(e))


def round_half_away(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def snap_to_int8_grid(centroids, scale: float) -> np.ndarray:
    """Map centroids to INT8 numerators ``round(128*c/scale)``, merging collisions."""
    if not scale > 0:
        raise InvalidInputError(f"scale must be positive, got {scale}")
    c = np.asarray(centroids, dtype=np.float64).reshape(-1)
    k = np.clip(round_half_away(GRID * c / scale), INT8_MIN, INT8_MAX).astype(np.int64)
    return np.unique(k)


def _broadcast_lambda(lam, n: int) -> list[float]:
    if np.ndim(lam) == 0:
        return [float(lam)] * n
    lams = [float(v) for v in lam]
    if len(lams) != n:
        raise InvalidInputError(f"lambda schedule has {len(lams)} entries for {n} regions")
    return lams


def _equal_gap_runs(nums: list[int]) -> list[list[int]]:
    """Greedy left-to-right runs of equal consecutive gaps, as [start, end] pairs."""
    runs = []
    i, k = 0, len(nums)
    while i < k:
        j = i
        if i + 1 < k:
            gap = nums[i + 1] - nums[i]
            j = i + 1
            while j + 1 < k and nums[j + 1] - nums[j] == gap:
                j += 1
        runs.append([i, j])
        i = j + 1
    return runs


def _repair_runs(nums: list[int], runs: list[list[int]]) -> list[list[int]]:
    """Split runs whose cosine would peak again before the region boundary.

    With boundaries at the midpoint of the gap ``G`` between two runs, a run
    of spacing ``g`` has an extra maximum inside its region unless ``G < 2g``.
    The offending end centroid moves to the neighbouring run when the gap
    matches that run's spacing, otherwise it becomes its own region.
    """

    def gap(run):
        return nums[run[0] + 1] - nums[run[0]] if run[1] > run[0] else None

    for _ in range(4 * len(nums) + 4):
        changed = False
        for t in range(len(runs) - 1):
            a, b = runs[t], runs[t + 1]
            between = nums[b[0]] - nums[a[1]]
            ga, gb = gap(a), gap(b)
            if ga is not None and between >= 2 * ga:
                if gb is not None and between == gb:
                    a[1] -= 1
                    b[0] -= 1
                else:
                    runs.insert(t + 1, [a[1], a[1]])
                    a[1] -= 1
                changed = True
                break
            if gb is not None and between >= 2 * gb:
                if ga is not None and between == ga:
                    a[1] += 1
                    b[0] += 1
                else:
                    runs.insert(t + 1, [b[0], b[0]])
                    b[0] += 1
                changed = True
                break
        if not changed:
            return runs
    raise AssertionError("region repair did not settle")  # pragma: no cover


def derive_regions(numerators, lam=0.0) -> list[Region]:
    """Group centroids into regions of equally spaced maxima.

    Each maximal run of equal numerator gap ``g`` becomes a region with
    frequency ``128/g`` anchored on one of its centroids, so the maxima of
    ``|cos|`` inside the region are exactly the run's centroids.  Bounds sit
    halfway between neighbouring runs; the outer bounds sit half a spacing
    beyond the outermost centroids.  A lone centroid uses the larger of the
    gaps to its neighbours (gap 1 if it has none).

    Parameters
    ----------
    numerators : sequence of int
        Strictly increasing INT8 numerators.
    lam : float or sequence of float
        One regularization weight for every region, or one per region.
    """
    nums = [int(v) for v in numerators]
    if not nums:
        raise InvalidInputError("need at least one numerator")
    if any(b <= a for a, b in zip(nums, nums[1:])):
        raise InvalidInputError("numerators must be strictly increasing")

    runs = _repair_runs(nums, _equal_gap_runs(nums))
    spacings = []
    for t, (s, e) in enumerate(runs):
        if e > s:
            spacings.append(nums[s + 1] - nums[s])
            continue
        neighbours = []
        if t > 0:
            neighbours.append(nums[s] - nums[runs[t - 1][1]])
        if t + 1 < len(runs):
            neighbours.append(nums[runs[t + 1][0]] - nums[s])
        spacings.append(max(neighbours) if neighbours else 1)

    lams = _broadcast_lambda(lam, len(runs))
    regions = []
    for t, ((s, e), g) in enumerate(zip(runs, spacings)):
        lo2 = nums[s] + nums[runs[t - 1][1]] if t > 0 else 2 * nums[s] - g
        hi2 = nums[e] + nums[runs[t + 1][0]] if t + 1 < len(runs) else 2 * nums[e] + g
        regions.append(
            Region(
                lo=lo2 / (2 * GRID),
                hi=hi2 / (2 * GRID),
                theta=GRID / g,
                lam=lams[t],
                anchor=nums[s] / GRID,
            )
        )
    return regions


def select_scale(values: np.ndarray, scale_mode: str = "max-abs", scale=None) -> float:
    if scale_mode == "max-abs":
        peak = float(np.max(np.abs(values))) if values.size else 0.0
        return peak if peak > 0 else 1.0
    if scale_mode == "fixed":
        return 1.0 if scale is None else float(scale)
    raise InvalidInputError(f"scale mode must be one of {SCALE_MODES}, got {scale_mode!r}")


def levels_for(bit_width: int, levels: str = "odd") -> int:
    """Centroid budget for a bit width: ``2^b - 1`` (odd, zero-centred) or ``2^b``."""
    if not 1 <= bit_width <= 8:
        raise InvalidInputError(f"bit width must be in [1, 8], got {bit_width}")
    if levels == "odd":
        return 2**bit_width - 1
    if levels == "full":
        return 2**bit_width
    raise InvalidInputError(f"levels must be 'odd' or 'full', got {levels!r}")


def fit_codebook(
    weights: WeightsLike,
    bit_width: int,
    lam=0.0,
    scale_mode: str = "max-abs",
    *,
    scale=None,
    levels: str = "odd",
    max_iters: int = 100,
    tol: float = 1e-14,
) -> Codebook:
    """Fit a Lloyd-Max codebook on the INT8 grid for one weight tensor.

    Scale selection, Lloyd-Max fitting, grid snapping and region derivation
    in sequence.  The centroid budget is capped at the number of distinct
    weight values; snapping may merge centroids further.
    """
    values = as_values(weights)
    k = levels_for(bit_width, levels)
    if values.size == 0:
        raise InvalidInputError("cannot fit a codebook to an empty weight tensor")
    s = select_scale(values, scale_mode, scale)
    k = min(k, np.unique(values).size)
    fit = fit_lloyd_max(values, k, max_iters=max_iters, tol=tol)
    numerators = snap_to_int8_grid(fit.centroids, s)
    regions = derive_regions(numerators, lam)
    return Codebook(bit_width, s, tuple(numerators.tolist()), tuple(regions))


def uniform_codebook(bit_width: int, scale: float, k=None, lam=0.0) -> Codebook:
    """Linear grid of ``k`` evenly spaced centroids over ``[-scale, scale]``.

    The linear-quantization reference the Lloyd-Max codebook is compared to.
    """
    k = levels_for(bit_width) if k is None else int(k)
    numerators = snap_to_int8_grid(np.linspace(-scale, scale, k), scale)
    return Codebook(bit_width, scale, tuple(numerators.tolist()), tuple(derive_regions(numerators, lam)))
