"""
Desk-scale quantized training of a fully-connected network through the MX GeMM path.

Task: synthetic dynamics regression y = A x + 0.1 tanh(B x) + noise, with a
stable linear part (spectral norm 0.9). The network has the workload's layer
shape; hidden layers use the configured activation, the output layer is linear.

Per iteration, every GeMM operand is quantized to the configured format:
- Forward:    H_l      x W_l
- Backward:   E_l      x W_l^T   (square: transpose_quantized, vector: requantize W_l^T)
- WeightGrad: H_l^T    x E_l     (square: transpose_quantized, vector: requantize)
Master weights and biases stay FP32 and are updated with plain SGD on MSE.
"""

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from app.core.gemm_core import CoreConfig, functional_gemm, simulate_training_iteration
from app.core.mx_formats import ALL_FORMATS, ElementFormat, get_format
from app.core.mx_quant import (
    BlockGeometry,
    Orientation,
    QuantizedMatrix,
    dequantize_matrix,
    get_geometry,
    quantize_matrix,
    transpose_quantized,
)
from app.core.workload import WorkloadSpec, pusher_workload
from app.errors import InvalidInputError, NonFiniteValueError, ScaleRangeError, TrainingDivergedError
from app.utils.serialization import block_nbytes

logger = logging.getLogger(__name__)

FP32_LABEL = "FP32"
TASK_NONLINEAR_GAIN = 0.1
TASK_SPECTRAL_NORM = 0.9


class Activation(str, Enum):
    RELU = "ReLU"
    TANH = "Tanh"


_ACTIVATIONS: Dict[Activation, Callable[[np.ndarray], np.ndarray]] = {
    Activation.RELU: lambda z: np.maximum(z, 0.0),
    Activation.TANH: np.tanh,
}


def _activation_grad(activation: Activation, z: np.ndarray) -> np.ndarray:
    if activation is Activation.RELU:
        return (z > 0).astype(np.float32)
    t = np.tanh(z)
    return (1.0 - t * t).astype(np.float32)


class TrainConfig(BaseModel):
    """format None trains the FP32 baseline without any quantization."""

    format: Optional[str] = None
    geometry: str = "square"
    lr: float = 0.005
    epochs: int = 30
    iterations_per_epoch: int = 16
    val_samples: int = 256
    noise_std: float = 0.2
    seed: int = 0
    activation: Activation = Activation.TANH
    engine: str = "vectorized"
    fail_on_divergence: bool = False
    record_wall_time: bool = False

    @property
    def element_format(self) -> Optional[ElementFormat]:
        return get_format(self.format) if self.format is not None else None

    @property
    def block_geometry(self) -> BlockGeometry:
        return get_geometry(self.geometry)

    @property
    def label(self) -> str:
        return self.element_format.name.value if self.format is not None else FP32_LABEL


@dataclass
class MlpModel:
    """FP32 master weights (in x out per layer) and biases."""

    workload: WorkloadSpec
    activation: Activation
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @classmethod
    def initialize(cls, workload: WorkloadSpec, activation: Activation = Activation.TANH, seed: int = 0) -> "MlpModel":
        rng = np.random.default_rng([seed, 1])
        gain = 2.0 if activation is Activation.RELU else 1.0
        weights = [
            (rng.standard_normal((fan_in, fan_out)) * np.sqrt(gain / fan_in)).astype(np.float32)
            for fan_in, fan_out in workload.layer_dims
        ]
        biases = [np.zeros(fan_out, dtype=np.float32) for _, fan_out in workload.layer_dims]
        return cls(workload=workload, activation=activation, weights=weights, biases=biases)


@dataclass
class DynamicsTask:
    """Random stable linear system plus a small nonlinearity."""

    linear: np.ndarray
    nonlinear: np.ndarray
    noise_std: float
    rng: np.random.Generator

    @classmethod
    def create(cls, in_dim: int, out_dim: int, noise_std: float, seed: int) -> "DynamicsTask":
        rng = np.random.default_rng([seed, 0])
        linear = rng.standard_normal((in_dim, out_dim))
        linear *= TASK_SPECTRAL_NORM / np.linalg.norm(linear, ord=2)
        nonlinear = rng.standard_normal((in_dim, out_dim)) / np.sqrt(in_dim)
        return cls(linear=linear, nonlinear=nonlinear, noise_std=noise_std, rng=rng)

    def sample(self, n: int):
        x = self.rng.standard_normal((n, self.linear.shape[0]))
        y = x @ self.linear + TASK_NONLINEAR_GAIN * np.tanh(x @ self.nonlinear)
        y = y + self.noise_std * self.rng.standard_normal(y.shape)
        return x.astype(np.float32), y.astype(np.float32)


@dataclass
class RunCounters:
    weight_requantizations: int = 0
    activation_requantizations: int = 0
    error_requantizations: int = 0
    transpose_checks: int = 0
    transpose_mismatches: int = 0


class CurvePoint(BaseModel):
    epoch: int
    loss: float
    wall_time: Optional[float] = None
    simulated_time_us: Optional[float] = None


class TrainResult(BaseModel):
    format: str
    geometry: str
    engine: str
    seed: int
    iterations: int
    curve: List[CurvePoint]
    final_loss: float
    diverged: bool = False
    weight_requantizations: int = 0
    activation_requantizations: int = 0
    error_requantizations: int = 0
    transpose_checks: int = 0
    transpose_mismatches: int = 0
    bytes_stored_weights: int = 0
    weight_copies: int = 1


@dataclass
class _GemmPath:
    """Operand quantization and GeMM dispatch for one training run."""

    config: TrainConfig
    counters: RunCounters = field(default_factory=RunCounters)
    core: Optional[CoreConfig] = None
    transposed_weights: Dict[int, QuantizedMatrix] = field(default_factory=dict)

    def __post_init__(self):
        fmt = self.config.element_format
        if fmt is not None:
            self.core = CoreConfig.for_format(fmt)

    @property
    def quantized(self) -> bool:
        return self.core is not None

    @property
    def square(self) -> bool:
        return self.config.block_geometry.is_square

    def quantize(self, m: np.ndarray, orientation: Orientation) -> QuantizedMatrix:
        geometry = self.config.block_geometry
        if geometry.is_square:
            orientation = Orientation.SQUARE
        return quantize_matrix(m, self.core.mode.element_format, geometry, orientation)

    def gemm(self, a: QuantizedMatrix, b: QuantizedMatrix) -> np.ndarray:
        return functional_gemm(self.core, a, b, engine=self.config.engine)

    def sync_transposed_weights(self, model: "MlpModel", count: bool = True) -> None:
        """Requantize the stored backward copy (W transposed) of every layer; vector layouts only."""
        for l, w in enumerate(model.weights):
            self.transposed_weights[l] = self.quantize(w.T, Orientation.COL_BLOCKS)
        if count:
            self.counters.weight_requantizations += len(model.weights)

    def check_transpose(self, qm: QuantizedMatrix, qt: QuantizedMatrix) -> None:
        self.counters.transpose_checks += 1
        if not np.array_equal(dequantize_matrix(qt), dequantize_matrix(qm).T):
            self.counters.transpose_mismatches += 1
            logger.error("Transposed square-block operand disagrees with its source")


def _forward_fp32(model: MlpModel, x: np.ndarray):
    act = _ACTIVATIONS[model.activation]
    inputs, pre = [], []
    h = x
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(h)
        z = (h @ w + b).astype(np.float32)
        pre.append(z)
        h = act(z).astype(np.float32) if l < last else z
    return h, inputs, pre


def _forward_quantized(model: MlpModel, x: np.ndarray, path: _GemmPath):
    act = _ACTIVATIONS[model.activation]
    inputs, pre, qinputs, qweights = [], [], [], []
    h = x
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        hq = path.quantize(h, Orientation.ROW_BLOCKS)
        wq = path.quantize(w, Orientation.COL_BLOCKS)
        z = (path.gemm(hq, wq) + b).astype(np.float32)
        inputs.append(h)
        pre.append(z)
        qinputs.append(hq)
        qweights.append(wq)
        h = act(z).astype(np.float32) if l < last else z
    return h, inputs, pre, qinputs, qweights


def _mse(out: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean((out.astype(np.float64) - y) ** 2))


def _train_step(model: MlpModel, x: np.ndarray, y: np.ndarray, path: _GemmPath, lr: float) -> float:
    batch = x.shape[0]
    if path.quantized:
        out, inputs, pre, qinputs, qweights = _forward_quantized(model, x, path)
    else:
        out, inputs, pre = _forward_fp32(model, x)
    loss = _mse(out, y)
    if not np.isfinite(loss):
        return loss
    # gradient of the per-sample squared error summed over outputs, averaged over the batch
    err = (2.0 * (out - y) / batch).astype(np.float32)
    grads_w: List[np.ndarray] = [None] * len(model.weights)
    grads_b: List[np.ndarray] = [None] * len(model.weights)
    for l in range(len(model.weights) - 1, -1, -1):
        grads_b[l] = err.sum(axis=0)
        if path.quantized:
            if path.square:
                eq = path.quantize(err, Orientation.SQUARE)
                ht = transpose_quantized(qinputs[l])
                path.check_transpose(qinputs[l], ht)
                grads_w[l] = path.gemm(ht, eq)
                if l > 0:
                    wt = transpose_quantized(qweights[l])
                    path.check_transpose(qweights[l], wt)
                    dh = path.gemm(eq, wt)
            else:
                ht = path.quantize(inputs[l].T, Orientation.ROW_BLOCKS)
                e_col = path.quantize(err, Orientation.COL_BLOCKS)
                path.counters.activation_requantizations += 1
                path.counters.error_requantizations += 1
                grads_w[l] = path.gemm(ht, e_col)
                if l > 0:
                    e_row = path.quantize(err, Orientation.ROW_BLOCKS)
                    path.counters.error_requantizations += 1
                    dh = path.gemm(e_row, path.transposed_weights[l])
        else:
            grads_w[l] = (inputs[l].T @ err).astype(np.float32)
            if l > 0:
                dh = (err @ model.weights[l].T).astype(np.float32)
        if l > 0:
            err = (dh * _activation_grad(model.activation, pre[l - 1])).astype(np.float32)
    for l in range(len(model.weights)):
        model.weights[l] = (model.weights[l] - lr * grads_w[l]).astype(np.float32)
        model.biases[l] = (model.biases[l] - lr * grads_b[l]).astype(np.float32)
    if path.quantized and not path.square:
        # the stored copy follows every update, layer 0 included, though only layers 1.. feed an error GeMM
        path.sync_transposed_weights(model)
    return loss


def evaluate(model: MlpModel, x: np.ndarray, y: np.ndarray, path: _GemmPath) -> float:
    """Validation MSE through the same (quantized or FP32) forward path."""
    if path.quantized:
        out = _forward_quantized(model, x, path)[0]
    else:
        out = _forward_fp32(model, x)[0]
    return _mse(out, y)


def weight_storage_bytes(model: MlpModel, config: TrainConfig) -> Tuple[int, int]:
    """(bytes, copies) needed to keep the weights for forward and backward."""
    fmt = config.element_format
    if fmt is None:
        return sum(int(w.size) * 4 for w in model.weights), 1
    geometry = config.block_geometry
    total = 0
    copies = 1 if geometry.is_square else 2
    for w in model.weights:
        if geometry.is_square:
            qm = quantize_matrix(w, fmt, geometry)
            total += qm.block_count * block_nbytes(qm)
        else:
            for m in (w, w.T):
                qm = quantize_matrix(m, fmt, geometry, Orientation.COL_BLOCKS)
                total += qm.block_count * block_nbytes(qm)
    return total, copies


def _iteration_latency_us(config: TrainConfig, workload: WorkloadSpec) -> Optional[float]:
    if config.element_format is None:
        return None
    return simulate_training_iteration(CoreConfig.for_format(config.element_format), workload).latency_us


def train(model: MlpModel, config: TrainConfig) -> TrainResult:
    """
    Train the model on the synthetic dynamics task.

    Args:
        model: network to train in place (master weights stay FP32)
        config: format, geometry, optimizer and run settings

    Returns:
        TrainResult with the validation curve (epoch 0 is before training) and
        the requantization counters of the run
    """
    if config.engine not in ("vectorized", "datapath"):
        raise InvalidInputError(f"unknown training engine '{config.engine}'")
    workload = model.workload
    in_dim, out_dim = workload.layer_dims[0][0], workload.layer_dims[-1][1]
    task = DynamicsTask.create(in_dim, out_dim, config.noise_std, config.seed)
    x_val, y_val = task.sample(config.val_samples)
    path = _GemmPath(config)
    if path.quantized and not path.square:
        path.sync_transposed_weights(model, count=False)
    per_iteration_us = _iteration_latency_us(config, workload)
    started = time.perf_counter()

    def point(epoch: int, loss: float) -> CurvePoint:
        return CurvePoint(
            epoch=epoch,
            loss=loss,
            wall_time=time.perf_counter() - started if config.record_wall_time else None,
            simulated_time_us=(
                per_iteration_us * epoch * config.iterations_per_epoch if per_iteration_us is not None else None
            ),
        )

    logger.info(
        f"Training {config.label} ({config.geometry if path.quantized else 'unquantized'}) for "
        f"{config.epochs} epochs, seed {config.seed}, engine {config.engine}"
    )
    curve = [point(0, evaluate(model, x_val, y_val, path))]
    diverged = False
    iterations = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, config.epochs + 1):
            try:
                for _ in range(config.iterations_per_epoch):
                    x, y = task.sample(workload.batch)
                    loss = _train_step(model, x, y, path, config.lr)
                    iterations += 1
                    if not np.isfinite(loss):
                        raise NonFiniteValueError(f"training loss became {loss}")
                val_loss = evaluate(model, x_val, y_val, path)
                if not np.isfinite(val_loss):
                    raise NonFiniteValueError(f"validation loss became {val_loss}")
            except (NonFiniteValueError, ScaleRangeError) as e:
                diverged = True
                logger.error(f"{config.label} training diverged in epoch {epoch}: {e}")
                if config.fail_on_divergence:
                    raise TrainingDivergedError(f"{config.label} training diverged in epoch {epoch}") from e
                curve.append(point(epoch, float("nan")))
                break
            curve.append(point(epoch, val_loss))
            logger.info(f"Epoch {epoch}/{config.epochs} {config.label}: validation loss {val_loss:.6f}")

    stored, copies = weight_storage_bytes(model, config) if not diverged else (0, 0)
    counters = path.counters
    return TrainResult(
        format=config.label,
        geometry=str(config.block_geometry) if path.quantized else "none",
        engine=config.engine,
        seed=config.seed,
        iterations=iterations,
        curve=curve,
        final_loss=curve[-1].loss,
        diverged=diverged,
        weight_requantizations=counters.weight_requantizations,
        activation_requantizations=counters.activation_requantizations,
        error_requantizations=counters.error_requantizations,
        transpose_checks=counters.transpose_checks,
        transpose_mismatches=counters.transpose_mismatches,
        bytes_stored_weights=stored,
        weight_copies=copies,
    )


def quantization_counters(run: TrainResult) -> Dict[str, int]:
    return {
        "requantize_ops": run.weight_requantizations + run.activation_requantizations + run.error_requantizations,
        "weight_requantizations": run.weight_requantizations,
        "activation_requantizations": run.activation_requantizations,
        "error_requantizations": run.error_requantizations,
        "bytes_stored_weights": run.bytes_stored_weights,
        "weight_copies": run.weight_copies,
    }


def run_training(config: TrainConfig, workload: Optional[WorkloadSpec] = None) -> TrainResult:
    """Fresh model from the config seed, then train."""
    workload = workload or pusher_workload()
    model = MlpModel.initialize(workload, config.activation, config.seed)
    return train(model, config)


def sweep_formats(config: TrainConfig, workload: Optional[WorkloadSpec] = None,
                  formats: Optional[Sequence[Optional[str]]] = None) -> Dict[str, TrainResult]:
    """One run per format (None is the FP32 baseline), identical seeds and settings."""
    formats = formats if formats is not None else [None] + [f.name.value for f in ALL_FORMATS]
    results = {}
    for fmt in formats:
        run_config = config.model_copy(update={"format": fmt})
        result = run_training(run_config, workload)
        results[result.format] = result
    return results


def curve_rows(result: TrainResult) -> List[Dict[str, object]]:
    return [p.model_dump() for p in result.curve]
