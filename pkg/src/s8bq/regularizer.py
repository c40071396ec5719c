"""Multi-regional absolute cosine (MRACos) soft compressor.

For a weight ``w`` with normalized value ``u = w / S`` inside region ``r``::

    loss(w) = lam_r * (1 - |cos(pi * theta_r * (u - anchor_r))|)
    dloss/dw = lam_r * pi * theta_r * sign(cos(.)) * sin(.) / S

At the zeros of the cosine the subgradient 0 is used.

Weights outside every region contribute neither loss nor gradient; they are
counted in ``clipped_count`` and clipped later by the hard compressor.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .codebook import Codebook, WeightsLike, as_values


class RegularizerResult(NamedTuple):
    loss: float
    grad: np.ndarray
    clipped_count: int


def _region_params(u: np.ndarray, codebook: Codebook):
    """Per-weight (inside mask, theta, lambda, anchor) from region lookup."""
    regions = codebook.regions
    if not regions:
        zeros = np.zeros_like(u)
        return np.zeros(u.shape, dtype=bool), zeros, zeros, zeros
    los = np.array([r.lo for r in regions])
    his = np.array([r.hi for r in regions])
    idx = np.searchsorted(los, u, side="right") - 1
    safe = np.clip(idx, 0, None)
    inside = (idx >= 0) & (u < his[safe])
    theta = np.array([r.theta for r in regions])[safe]
    lam = np.array([r.lam for r in regions])[safe]
    anchor = np.array([r.anchor for r in regions])[safe]
    return inside, theta, lam, anchor


def _terms(values: np.ndarray, codebook: Codebook):
    u = values / codebook.scale
    inside, theta, lam, anchor = _region_params(u, codebook)
    cycles = theta * (u - anchor)
    lam = np.where(inside, lam, 0.0)
    return inside, theta, lam, cycles


def _reduce(cycles: np.ndarray) -> np.ndarray:
    """``x - round(x)`` in ``[-1/2, 1/2)``.

    With ``r`` the reduced value, ``|cos(pi*x)| = cos(pi*r)`` and
    ``sign(cos(pi*x)) * sin(pi*x) = sin(pi*r)``; the reduction makes both
    exact at the maxima (``r = 0``) and pins the kinks to ``r = -1/2``.
    """
    return cycles - np.floor(cycles + 0.5)


def mracos_elementwise(weights: WeightsLike, codebook: Codebook) -> np.ndarray:
    """Per-weight penalty; the total loss is its sum."""
    _, _, lam, cycles = _terms(as_values(weights), codebook)
    return lam * (1.0 - np.cos(np.pi * _reduce(cycles)))


def mracos(weights: WeightsLike, codebook: Codebook, normalize: bool = False) -> RegularizerResult:
    """Loss, gradient and clipped count in one pass.

    With ``normalize`` the loss and gradient are divided by the weight count
    (mean instead of sum).
    """
    values = as_values(weights)
    inside, theta, lam, cycles = _terms(values, codebook)
    r = _reduce(cycles)
    loss = float(np.sum(lam * (1.0 - np.cos(np.pi * r))))
    # zero subgradient at the kinks, where sin(pi*r) would be -1
    slope = np.where(r == -0.5, 0.0, np.sin(np.pi * r))
    grad = lam * np.pi * theta * slope / codebook.scale
    if normalize and values.size:
        loss /= values.size
        grad = grad / values.size
    return RegularizerResult(loss, grad, int(values.size - np.count_nonzero(inside)))


def mracos_loss(weights: WeightsLike, codebook: Codebook, normalize: bool = False) -> float:
    return mracos(weights, codebook, normalize).loss


def mracos_grad(weights: WeightsLike, codebook: Codebook, normalize: bool = False) -> np.ndarray:
    return mracos(weights, codebook, normalize).grad


def gradient_decay_profile(codebook: Codebook) -> np.ndarray:
    """Largest gradient magnitude reachable in each region, ``lam*pi*theta/S``.

    Sparse regions (small ``theta``) pull their weights proportionally more
    weakly, which is what the periodic hard compressor compensates for.
    """
    return np.array([r.lam * np.pi * r.theta / codebook.scale for r in codebook.regions])


def kink_distance(weights: WeightsLike, codebook: Codebook) -> np.ndarray:
    """Distance (weight units) to the nearest gradient discontinuity.

    Discontinuities are the zeros of the cosine and the region bounds;
    weights outside every region measure to the nearest bound.
    """
    values = as_values(weights)
    u = values / codebook.scale
    inside, theta, _, x = _terms(values, codebook)
    to_zero = np.abs(x - np.floor(x) - 0.5) / np.where(inside, theta, 1.0)
    bounds = np.array([b for r in codebook.regions for b in (r.lo, r.hi)])
    if bounds.size:
        to_bound = np.min(np.abs(u[:, None] - bounds[None, :]), axis=1)
    else:
        to_bound = np.full(u.shape, np.inf)
    dist = np.where(inside, np.minimum(to_zero, to_bound), to_bound)
    return dist * codebook.scale


class GradCheck(NamedTuple):
    max_rel_error: float
    n_checked: int
    n_excluded: int


def finite_difference_check(
    weights: WeightsLike,
    codebook: Codebook,
    h: float = 1e-6,
    exclude: float = 1e-4,
    grad=None,
    atol: float = 1e-12,
) -> GradCheck:
    """Compare the analytic gradient with central differences of the loss.

    The loss is separable, so the difference quotient of each weight's own
    penalty equals the partial derivative of the total.  Points within
    ``exclude`` of a kink or region bound are skipped.  ``grad`` overrides the
    analytic gradient (used for fault-injection checks).  The relative error
    is ``|g - fd| / max(|g|, |fd|, atol)``.
    """
    values = as_values(weights)
    if grad is None:
        grad = mracos_grad(values, codebook)
    fd = (mracos_elementwise(values + h, codebook) - mracos_elementwise(values - h, codebook)) / (2 * h)
    keep = kink_distance(values, codebook) > exclude
    denom = np.maximum(np.maximum(np.abs(grad), np.abs(fd)), atol)
    rel = np.abs(grad - fd) / denom
    worst = float(rel[keep].max()) if np.any(keep) else 0.0
    return GradCheck(worst, int(np.count_nonzero(keep)), int(values.size - np.count_nonzero(keep)))
