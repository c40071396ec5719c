"""Toy quantization-aware training run that exercises the whole pipeline.

A small tanh MLP learns a synthetic regression task.  The run has four phases:
float training, codebook fitting on the trained weights, training with the
MRACos penalty plus periodic hard compression, and final compression/packing.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .codebook import Codebook, fit_codebook
from .compressor import (
    CompressionSchedule,
    convergence_rate,
    hard_compress,
    pooled_gamma,
    should_compress,
)
from .errors import DivergenceError, InvalidInputError
from .packing import pack
from .regularizer import mracos


class Dataset(NamedTuple):
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray


def generate_task(seed: int, n_train: int, n_val: int, n_inputs: int = 8, noise: float = 0.05) -> Dataset:
    """Regression data from a seeded random tanh teacher plus Gaussian noise."""
    if n_train < 1 or n_val < 0:
        raise InvalidInputError("need n_train >= 1 and n_val >= 0")
    rng = np.random.default_rng([seed, 0x7EAC])
    w1 = rng.normal(size=(16, n_inputs)) / math.sqrt(n_inputs)
    b1 = rng.normal(scale=0.1, size=16)
    w2 = rng.normal(size=(1, 16)) / 2.0
    x = rng.uniform(-1.0, 1.0, size=(n_train + n_val, n_inputs))
    y = np.tanh(x @ w1.T + b1) @ w2.T + np.sin(2.0 * x[:, :1])
    y = y + noise * rng.normal(size=y.shape)
    return Dataset(x[:n_train], y[:n_train], x[n_train:], y[n_train:])


class ToyModel:
    """Dense layers with tanh hidden activations and a linear output."""

    def __init__(self, weights, biases, names=None):
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        self.names = list(names) if names else [f"dense{i}" for i in range(len(self.weights))]

    @classmethod
    def init(cls, sizes, seed: int) -> "ToyModel":
        rng = np.random.default_rng([seed, 0x1417])
        weights = [rng.normal(size=(o, i)) / math.sqrt(i) for i, o in zip(sizes, sizes[1:])]
        biases = [np.zeros(o) for o in sizes[1:]]
        return cls(weights, biases)

    def copy(self) -> "ToyModel":
        return ToyModel(self.weights, self.biases, self.names)

    def forward(self, x):
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            h = z if i == last else np.tanh(z)
            acts.append(h)
        return h, acts

    def loss(self, x, y) -> float:
        pred, _ = self.forward(x)
        r = pred - y
        return float(np.mean(r * r))

    def loss_and_grads(self, x, y):
        """Mean squared error and its gradients by backpropagation."""
        pred, acts = self.forward(x)
        r = pred - y
        loss = float(np.mean(r * r))
        delta = 2.0 * r / r.size
        gw, gb = [], []
        for i in range(len(self.weights) - 1, -1, -1):
            gw.append(delta.T @ acts[i])
            gb.append(delta.sum(axis=0))
            if i:
                delta = (delta @ self.weights[i]) * (1.0 - acts[i] ** 2)
        return loss, gw[::-1], gb[::-1]

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.weights + self.biases)


class StepLosses(NamedTuple):
    task_loss: float
    reg_loss: float


def objective_and_grads(model: ToyModel, batch, codebooks=None, normalize: bool = False):
    """Task loss, penalty and the combined weight/bias gradients.

    ``codebooks`` maps layer index to Codebook; layers without one are not
    regularized.
    """
    x, y = batch
    task, gw, gb = model.loss_and_grads(x, y)
    reg = 0.0
    for i, cb in (codebooks or {}).items():
        res = mracos(model.weights[i], cb, normalize)
        reg += res.loss
        gw[i] = gw[i] + res.grad.reshape(gw[i].shape)
    return StepLosses(task, reg), gw, gb


class SGD:
    """Plain (optionally heavy-ball) gradient descent."""

    def __init__(self, momentum: float = 0.0):
        self.momentum = momentum
        self.velocity = None

    def reset(self) -> None:
        self.velocity = None

    def apply(self, model: ToyModel, gw, gb, lr: float) -> None:
        grads = gw + gb
        params = model.weights + model.biases
        if self.momentum:
            if self.velocity is None:
                self.velocity = [np.zeros_like(p) for p in params]
            for v, g in zip(self.velocity, grads):
                v *= self.momentum
                v += g
            grads = self.velocity
        for p, g in zip(params, grads):
            p -= lr * g


def train_step(model: ToyModel, batch, codebooks=None, lr: float = 0.05, optimizer=None, normalize=False) -> StepLosses:
    """One descent step on task loss plus (optionally) the MRACos penalty."""
    # overflow is reported as DivergenceError below rather than as warnings
    with np.errstate(over="ignore", invalid="ignore"):
        losses, gw, gb = objective_and_grads(model, batch, codebooks, normalize)
        if not (math.isfinite(losses.task_loss) and math.isfinite(losses.reg_loss)):
            raise DivergenceError(f"non-finite loss {losses}")
        (optimizer or SGD()).apply(model, gw, gb, lr)
    if not model.all_finite():
        raise DivergenceError("non-finite parameters after update")
    return losses


@dataclass
class QatConfig:
    lam: float = 1e-5
    tau: int = 0  # 0: one tenth of the regularized phase
    tau_unit: str = "step"
    epsilon: Optional[float] = None  # None: per-layer default
    bit_width: int = 5
    baseline_steps: int = 2000
    total_steps: int = 4000
    learning_rate: float = 0.1
    lr_decay_start: float = 0.8  # fraction of total_steps
    lr_final_factor: float = 0.2
    batch_size: int = 128
    momentum: float = 0.0
    reset_optimizer_on_compress: bool = False
    normalize_reg: bool = False
    hidden: tuple = (32, 32)
    n_inputs: int = 8
    n_train: int = 2048
    n_val: int = 512
    noise: float = 0.05
    float_layers: tuple = ()  # layer names kept at full precision
    seed: int = 0

    def __post_init__(self):
        self.hidden = _as_tuple(self.hidden, int)
        self.float_layers = _as_tuple(self.float_layers, str)
        if self.total_steps < 1:
            raise InvalidInputError("total_steps must be positive")
        if not 0 <= self.baseline_steps <= self.total_steps:
            raise InvalidInputError("need 0 <= baseline_steps <= total_steps")
        if not 1 <= self.bit_width <= 8:
            raise InvalidInputError(f"bit width must be in [1, 8], got {self.bit_width}")
        if self.tau < 0 or self.lam < 0:
            raise InvalidInputError("tau and lam must be non-negative")
        if self.epsilon is not None and not self.epsilon > 0:
            raise InvalidInputError("epsilon must be positive")

    @property
    def regularized_steps(self) -> int:
        return self.total_steps - self.baseline_steps

    @property
    def period(self) -> int:
        return self.tau if self.tau else max(1, self.regularized_steps // 10)

    def learning_rate_at(self, step: int) -> float:
        """Constant, then linear decay to ``lr_final_factor`` of the base rate."""
        start = self.lr_decay_start * self.total_steps
        if step <= start:
            return self.learning_rate
        frac = (step - start) / max(self.total_steps - start, 1)
        return self.learning_rate * (1.0 - (1.0 - self.lr_final_factor) * frac)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(e) for e in v)
            elif v is None:
                v = "none"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "QatConfig":
        """Parse flat ``key = value`` lines; ``#`` starts a comment."""
        kinds = {f.name: f.default for f in dataclasses.fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if not sep or key not in kinds:
                raise InvalidInputError(f"line {lineno}: unknown or malformed entry {line!r}")
            values[key] = _parse_value(key, raw, kinds[key])
        return cls(**values)


def _as_tuple(v, kind):
    if isinstance(v, str):
        v = [e for e in v.split(",") if e.strip()]
    return tuple(kind(e.strip() if isinstance(e, str) else e) for e in v)


def _parse_value(key, raw, default):
    try:
        if key == "epsilon":
            return None if raw.lower() == "none" else float(raw)
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, tuple):
            return raw
        return type(default)(raw)
    except ValueError as exc:
        raise InvalidInputError(f"bad value for {key}: {raw!r}") from exc


class StepRecord(NamedTuple):
    step: int
    task_loss: float
    reg_loss: float
    val_loss: Optional[float]
    gamma: Optional[float]
    compressed: bool


COLUMNS = ("step", "task_loss", "reg_loss", "val_loss", "gamma", "compressed")


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)

    def append(self, record: StepRecord) -> None:
        if self.records and record.step <= self.records[-1].step:
            raise ValueError("log steps must increase")
        self.records.append(record)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(COLUMNS)
            for r in self.records:
                writer.writerow(
                    [
                        r.step,
                        repr(r.task_loss),
                        repr(r.reg_loss),
                        "" if r.val_loss is None else repr(r.val_loss),
                        "" if r.gamma is None else repr(r.gamma),
                        int(r.compressed),
                    ]
                )


def evaluate_quantized(model: ToyModel, codebooks, dataset: Dataset):
    """Validation loss with float weights and with hard-compressed weights.

    Returns ``(float_loss, quantized_loss)``; both are None without a
    validation split.
    """
    if not len(dataset.x_val):
        return None, None
    float_loss = model.loss(dataset.x_val, dataset.y_val)
    q = model.copy()
    for i, cb in codebooks.items():
        q.weights[i] = hard_compress(q.weights[i], cb).weights
    return float_loss, q.loss(dataset.x_val, dataset.y_val)


@dataclass
class PipelineResult:
    config: QatConfig
    log: TrainingLog
    codebooks: dict  # layer index -> Codebook
    packed: dict  # layer name -> bytes
    model: ToyModel  # after terminal compression
    float_val_loss: Optional[float]  # before terminal compression
    quantized_val_loss: Optional[float]
    final_gamma: float  # before terminal compression

    @property
    def degradation(self) -> Optional[float]:
        """Validation loss added by the terminal compression."""
        if self.float_val_loss is None:
            return None
        return self.quantized_val_loss - self.float_val_loss


def _gamma(model, codebooks, epsilon) -> float:
    return pooled_gamma([convergence_rate(model.weights[i], cb, epsilon) for i, cb in codebooks.items()])


def run_pipeline(config: QatConfig, out_dir=None) -> PipelineResult:
    """Float training, codebook fitting, regularized training, compression.

    Hard compression fires every ``config.period`` steps of the regularized
    phase, but not on its last step: the logged gamma there is the
    pre-terminal convergence rate, and phase four compresses anyway.  With
    ``out_dir`` the log, codebooks and packed layers are written there; on
    divergence the partial log is written before the error propagates.
    """
    data = generate_task(config.seed, config.n_train, config.n_val, config.n_inputs, config.noise)
    sizes = (config.n_inputs, *config.hidden, 1)
    model = ToyModel.init(sizes, config.seed)
    unknown = set(config.float_layers) - set(model.names)
    if unknown:
        raise InvalidInputError(f"unknown layers in float_layers: {sorted(unknown)}")
    quantized = [i for i, n in enumerate(model.names) if n not in config.float_layers]
    batch_rng = np.random.default_rng([config.seed, 0xBA7C])
    optimizer = SGD(config.momentum)
    log = TrainingLog()
    has_val = len(data.x_val) > 0
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def batch():
        n = len(data.x_train)
        idx = batch_rng.choice(n, size=min(config.batch_size, n), replace=False)
        return data.x_train[idx], data.y_train[idx]

    def val():
        if not has_val:
            return None
        with np.errstate(over="ignore", invalid="ignore"):
            loss = model.loss(data.x_val, data.y_val)
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite validation loss {loss}")
        return loss

    codebooks: dict = {}
    try:
        for step in range(1, config.baseline_steps + 1):
            losses = train_step(model, batch(), None, config.learning_rate_at(step), optimizer)
            log.append(StepRecord(step, losses.task_loss, 0.0, val(), None, False))

        codebooks = {
            i: fit_codebook(model.weights[i], config.bit_width, config.lam) for i in quantized
        }

        schedule = CompressionSchedule(config.period, config.period, config.tau_unit)
        steps = config.regularized_steps
        for t in range(1, steps + 1):
            step = config.baseline_steps + t
            losses = train_step(
                model, batch(), codebooks, config.learning_rate_at(step), optimizer, config.normalize_reg
            )
            compressed = t < steps and should_compress(schedule, t)
            if compressed:
                for i, cb in codebooks.items():
                    model.weights[i] = hard_compress(model.weights[i], cb).weights
                if config.reset_optimizer_on_compress:
                    optimizer.reset()
            gamma = _gamma(model, codebooks, config.epsilon)
            log.append(StepRecord(step, losses.task_loss, losses.reg_loss, val(), gamma, compressed))
    except DivergenceError:
        if out is not None:
            log.to_csv(out / "log.csv")
        raise

    final_gamma = _gamma(model, codebooks, config.epsilon)
    float_loss, quant_loss = evaluate_quantized(model, codebooks, data)
    packed = {}
    for i, cb in codebooks.items():
        q = hard_compress(model.weights[i], cb)
        model.weights[i] = q.weights
        packed[model.names[i]] = pack(q.indices, cb, q.weights.shape)

    if out is not None:
        log.to_csv(out / "log.csv")
        for i, cb in codebooks.items():
            name = model.names[i]
            (out / f"{name}.s8bq").write_bytes(packed[name])
            (out / f"{name}.codebook").write_text(cb.to_text())
    return PipelineResult(config, log, codebooks, packed, model, float_loss, quant_loss, final_gamma)


def default_out_dir() -> Path:
    return Path(os.environ.get("S8BQ_OUT_DIR", "."))
