"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Expected values come from independent oracles written here (brute-force
nearest centroid, a bit-by-bit packer, a literal per-weight penalty) or
from plain arithmetic, never from the code under test.
"""

import dataclasses
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from s8bq.cli import main
from s8bq.codebook import Codebook, derive_regions, fit_codebook, fit_lloyd_max, optimal_1d_kmeans, uniform_codebook
from s8bq.compressor import convergence_rate, hard_compress
from s8bq.errors import FormatError
from s8bq.harness import QatConfig, run_pipeline
from s8bq.packing import header_size, pack, payload_size, unpack
from s8bq.regularizer import mracos_grad


def fastest(fn, budget: float, repeats: int = 3):
    """Run ``fn`` until one run fits ``budget`` seconds or ``repeats`` runs are used.

    Returns the first run's result and the fastest wall time.  Runs are
    deterministic, so retries only filter out scheduler noise.
    """
    best, result = math.inf, None
    for i in range(repeats):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
        if i == 0:
            result = out
        if best < budget:
            break
    return result, best


def sample(kind: int, rng: np.random.Generator, n: int) -> np.ndarray:
    if kind == 0:
        return rng.normal(0.0, rng.uniform(0.05, 1.0), n)
    if kind == 1:
        return rng.laplace(0.0, rng.uniform(0.02, 0.3), n)
    if kind == 2:
        return rng.standard_t(3, n) * rng.uniform(0.05, 0.5)
    if kind == 3:
        return rng.uniform(-1.0, 1.0, n) * rng.uniform(0.1, 3.0)
    if kind == 4:
        half = n // 2
        return np.concatenate([rng.normal(-0.3, 0.05, half), rng.normal(0.2, 0.1, n - half)])
    return rng.lognormal(-2.0, 0.7, n) - 0.1


# -- 1 ------------------------------------------------------------------------


def test_c1_grid_conformance(acceptance):
    data = [sample(seed % 6, np.random.default_rng(seed), 1000) for seed in range(50)]

    def fit_all():
        return [fit_codebook(w, b) for w in data for b in (4, 5)]

    codebooks, elapsed = fastest(fit_all, 1.0)
    on_grid = in_range = budget = True
    for cb in codebooks:
        k = np.asarray(cb.numerators)
        in_range &= bool(np.all((k >= -128) & (k <= 127))) and all(isinstance(v, int) for v in cb.numerators)
        # every centroid value must be reproduced exactly by S * k / 128
        recovered = np.rint(cb.centroids * 128 / cb.scale)
        on_grid &= bool(np.array_equal(cb.centroids, cb.scale * recovered / 128))
        on_grid &= bool(np.array_equal(recovered, k))
        budget &= cb.k <= 2**cb.bit_width - 1
    acceptance(
        {
            "numerators are integers in [-128, 127]": in_range,
            "centroids equal S*k/128 exactly": on_grid,
            "K <= 2^b - 1": budget,
            "under 1 s": elapsed < 1.0,
        },
        f"{len(codebooks)} codebooks from 50 distributions x b in {{4, 5}}, {elapsed:.2f} s",
    )


# -- 2 ------------------------------------------------------------------------


def test_c2_lloyd_vs_dp_oracle(acceptance):
    start = time.perf_counter()
    worst, below, over, rising = 0.0, 0, 0, 0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        n = int(rng.integers(20, 201))
        k = int(rng.integers(2, 9))
        xs = sample(seed % 6, rng, n)
        fit = fit_lloyd_max(xs, k)
        dp = optimal_1d_kmeans(xs, k)
        below += fit.mse < dp.mse
        gap = fit.mse / dp.mse - 1
        worst = max(worst, gap)
        over += gap > 0.05
        rising += any(b > a for a, b in zip(fit.history, fit.history[1:]))
    elapsed = time.perf_counter() - start
    acceptance(
        {
            "Lloyd MSE >= DP MSE": below == 0,
            "within 5 % of DP": over == 0,
            "MSE history non-increasing": rising == 0,
            "under 10 s": elapsed < 10.0,
        },
        f"100 instances, worst gap {worst:.2%}, {elapsed:.2f} s",
    )


# -- 3 ------------------------------------------------------------------------


def literal_penalty(w: np.ndarray, cb: Codebook) -> np.ndarray:
    """Per-weight penalty lam * (1 - |cos(pi * theta * (u - anchor))|), zero outside regions."""
    u = w / cb.scale
    out = np.zeros_like(w)
    for r in cb.regions:
        m = (u >= r.lo) & (u < r.hi)
        out[m] = r.lam * (1 - np.abs(np.cos(np.pi * r.theta * (u[m] - r.anchor))))
    return out


def near_discontinuity(w: np.ndarray, cb: Codebook, margin: float) -> np.ndarray:
    """Weights within ``margin`` (weight units) of a cosine zero or a region bound."""
    u = w / cb.scale
    near = np.zeros(w.shape, dtype=bool)
    for r in cb.regions:
        near |= np.minimum(np.abs(u - r.lo), np.abs(u - r.hi)) * cb.scale <= margin
        m = (u >= r.lo) & (u < r.hi)
        x = r.theta * (u[m] - r.anchor)
        zero_gap = np.abs(x - np.floor(x) - 0.5) / r.theta * cb.scale
        near[np.flatnonzero(m)[zero_gap <= margin]] = True
    return near


def test_c3_gradient_check(acceptance):
    def run():
        worst, checked = 0.0, 0
        for seed in range(6):
            rng = np.random.default_rng(seed)
            cb = fit_codebook(sample(seed % 3, rng, 4000), 3 + seed % 3, 5e-4)
            w = rng.uniform(-1.05 * cb.scale, 1.05 * cb.scale, 1000)
            h = 1e-6
            fd = (literal_penalty(w + h, cb) - literal_penalty(w - h, cb)) / (2 * h)
            g = mracos_grad(w, cb)
            keep = ~near_discontinuity(w, cb, 1e-4)
            rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-12)
            worst = max(worst, float(rel[keep].max()))
            checked += int(keep.sum())
        return worst, checked

    (worst, checked), elapsed = fastest(run, 1.0)
    acceptance(
        {"max relative error < 1e-5": worst < 1e-5, "most points checked": checked > 5000, "under 1 s": elapsed < 1.0},
        f"6 codebooks x 1000 points, {checked} away from kinks, max rel err {worst:.2e}, {elapsed:.2f} s",
    )


# -- 4 ------------------------------------------------------------------------


def test_c4_compression_arithmetic(acceptance):
    rows, cols = 1024, 4096
    nums = list(range(-120, 121, 8))[:31]
    cb = Codebook(5, 1.0, tuple(nums), tuple(derive_regions(nums)))
    idx = np.random.default_rng(0).integers(0, cb.k, size=(rows, cols))
    data = pack(idx, cb)
    payload = len(data) - header_size(2, cb.k)
    int8_bytes = rows * cols
    acceptance(
        {
            "payload is 2,621,440 bytes": payload == 2_621_440 == payload_size(rows * cols, 5),
            "that is 2.5 MiB against 4 MiB for INT8": payload / 2**20 == 2.5 and int8_bytes / 2**20 == 4.0,
            "a 37.5 % reduction": 1 - payload / int8_bytes == 0.375,
        },
        f"packed {len(data):,} bytes = {payload:,} payload + {len(data) - payload} header",
    )


# -- 5 ------------------------------------------------------------------------


def reference_bits(indices: np.ndarray, b: int) -> bytes:
    """Bit-by-bit LSB-first packer: bit j of index i lands at stream bit b*i + j."""
    bits = ((indices.astype(np.uint16)[:, None] >> np.arange(b)) & 1).astype(np.uint8)
    return np.packbits(bits.reshape(-1), bitorder="little").tobytes()


def corruptions(data: bytes, b: int, k: int, n: int):
    """Yield damaged copies of a valid stream, each of which must be rejected."""

    def patched(offset, value):
        out = bytearray(data)
        out[offset] = value
        return bytes(out)

    yield patched(0, data[0] ^ 0xFF)
    yield patched(4, 2)
    yield patched(5, 0)
    yield patched(5, 9)
    if b < 8:
        yield patched(6, 2**b)  # K - 1 = 2^b means K = 2^b + 1
    yield data[: len(data) - 1]
    yield data + b"\x00"
    used = n * b % 8
    if used:
        yield patched(len(data) - 1, data[-1] | (0xFF << used) & 0xFF)


def test_c5_pack_unpack_bijection(acceptance):
    rng = np.random.default_rng(5)
    start = time.perf_counter()
    trips = exact = rejected = attempts = 0
    for trial in range(10_000):
        b = int(rng.integers(1, 9))
        n = 0 if trial == 0 else 100_000 if trial == 1 else int(10 ** rng.uniform(0, 5))
        k = int(rng.integers(1, 2**b + 1))
        nums = tuple(sorted(rng.choice(256, size=k, replace=False) - 128))
        cb = Codebook(b, float(10 ** rng.uniform(-3, 3)), nums, tuple(derive_regions(nums)))
        idx = rng.integers(0, k, size=n)
        data = pack(idx, cb)
        pt = unpack(data)
        trips += 1
        exact += (
            data[header_size(1, k) :] == reference_bits(idx, b)
            and np.array_equal(pt.indices, idx)
            and pt.numerators == nums
            and pt.scale == cb.scale
            and pack(pt.indices, pt.codebook(), pt.shape) == data
        )
        if trial % 20 == 0:
            for bad in corruptions(data, b, k, n):
                attempts += 1
                try:
                    unpack(bad)
                except FormatError:
                    rejected += 1
    elapsed = time.perf_counter() - start
    acceptance(
        {
            "all round trips bit-exact": exact == trips,
            "all corruptions rejected": rejected == attempts,
            "under 30 s": elapsed < 30.0,
        },
        f"{trips} round trips, {rejected}/{attempts} corrupted streams rejected, {elapsed:.1f} s",
    )


# -- 6 ------------------------------------------------------------------------


def test_c6_hard_compressor(acceptance):
    rng = np.random.default_rng(6)
    w = rng.standard_t(4, 10_000) * 0.2
    cbs = [fit_codebook(w, b) for b in (2, 5, 8)]
    epsilons = (5e-324, 1e-300, 1e-12, 1e-3, 1.0, 1e6)

    def run():
        matches = idempotent = gamma_one = True
        for cb in cbs:
            q = hard_compress(w, cb)
            # brute force: first minimum, so ties go to the smaller numerator
            brute = np.argmin(np.abs(w[:, None] - cb.centroids[None, :]), axis=1)
            matches &= bool(np.array_equal(q.indices, brute) and np.array_equal(q.weights, cb.centroids[brute]))
            again = hard_compress(q.weights, cb)
            idempotent &= bool(np.array_equal(again.weights, q.weights) and np.array_equal(again.indices, q.indices))
            gamma_one &= all(convergence_rate(q.weights, cb, eps).overall_gamma == 1.0 for eps in epsilons)
        return matches, idempotent, gamma_one

    (matches, idempotent, gamma_one), elapsed = fastest(run, 1.0)
    acceptance(
        {
            "equals brute-force nearest centroid": matches,
            "idempotent": idempotent,
            "gamma = 1 after compression for every epsilon": gamma_one,
            "under 1 s": elapsed < 1.0,
        },
        f"10^4 weights x 3 codebooks, epsilon from 5e-324 to 1e6, {elapsed:.2f} s",
    )


# -- 7 ------------------------------------------------------------------------


def logged_gamma(result) -> float:
    return result.log.records[-1].gamma


def test_c7_pipeline_dynamics(acceptance):
    checks = {}
    parts = []
    start = time.perf_counter()
    for seed in range(3):
        base = QatConfig(seed=seed)
        s8bq = run_pipeline(base)
        ptq = run_pipeline(dataclasses.replace(base, baseline_steps=base.total_steps))
        no_mid = run_pipeline(dataclasses.replace(base, tau=base.regularized_steps + 1))
        s8bq4 = run_pipeline(dataclasses.replace(base, bit_width=4))
        ptq4 = run_pipeline(dataclasses.replace(base, baseline_steps=base.total_steps, bit_width=4))
        # the compared quantities are the logged ones
        checks[f"seed {seed}: gamma and val loss match the log"] = (
            logged_gamma(s8bq) == s8bq.final_gamma
            and logged_gamma(no_mid) == no_mid.final_gamma
            and s8bq.log.records[-1].val_loss == s8bq.float_val_loss
            and ptq.log.records[-1].val_loss == ptq.float_val_loss
        )
        checks[f"seed {seed}: (a) QAT gap < PTQ gap"] = s8bq.degradation < ptq.degradation
        checks[f"seed {seed}: (b) final gamma >= 0.9"] = s8bq.final_gamma >= 0.9
        checks[f"seed {seed}: (c) no-mid-compression gamma < default gamma"] = no_mid.final_gamma < s8bq.final_gamma
        checks[f"seed {seed}: (d) 4-bit degradation > 5-bit"] = (
            s8bq4.degradation > s8bq.degradation and ptq4.degradation > ptq.degradation
        )
        parts.append(
            f"seed {seed}: gap {s8bq.degradation:.1e}<{ptq.degradation:.1e}, "
            f"gamma {s8bq.final_gamma:.3f} vs {no_mid.final_gamma:.3f}, "
            f"4-bit {s8bq4.degradation:.1e}/{ptq4.degradation:.1e}"
        )
    elapsed = time.perf_counter() - start
    checks["under 5 min"] = elapsed < 300
    acceptance(checks, "; ".join(parts) + f"; {elapsed:.0f} s")


# -- 8 ------------------------------------------------------------------------


def test_c8_lloyd_max_beats_uniform(acceptance):
    data = [np.random.default_rng(seed).standard_t(2, 10_000) for seed in range(3)]

    def run():
        rows = []
        for xs in data:
            for b in (4, 5):
                cb = fit_codebook(xs, b)
                uni = uniform_codebook(b, cb.scale, cb.k)
                fitted_mse = np.mean((xs - hard_compress(xs, cb).weights) ** 2)
                uniform_mse = np.mean((xs - hard_compress(xs, uni).weights) ** 2)
                rows.append((cb.k, uni.k, fitted_mse, uniform_mse))
        return rows

    rows, elapsed = fastest(run, 1.0)
    acceptance(
        {
            "equal K": all(a == b for a, b, _, _ in rows),
            "fitted MSE < uniform MSE": all(f < u for _, _, f, u in rows),
            "under 1 s": elapsed < 1.0,
        },
        f"Student-t(2), 3 seeds x b in {{4, 5}}, worst MSE ratio {max(f / u for _, _, f, u in rows):.3f}, {elapsed:.2f} s",
    )


# -- 9 ------------------------------------------------------------------------


def test_c9_train_demo_determinism(acceptance, tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    assert main(["train-demo", "--out-dir", str(first)]) == 0
    # the second run is a fresh interpreter, so no in-process state is shared
    res = subprocess.run(
        [sys.executable, "-m", "s8bq", "train-demo", "--out-dir", str(second)], capture_output=True, text=True
    )
    names = sorted(p.name for p in first.iterdir())
    same = res.returncode == 0 and names == sorted(p.name for p in second.iterdir())
    identical = same and all((first / n).read_bytes() == (second / n).read_bytes() for n in names)
    acceptance(
        {
            "same files written": same,
            "byte-identical CSV and packed files": identical,
            "outputs include log and packed layers": "log.csv" in names and any(n.endswith(".s8bq") for n in names),
        },
        f"{len(names)} files compared: {', '.join(names)}",
    )
