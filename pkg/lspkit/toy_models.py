"""Small feed-forward networks with hand-written backprop, plus the synthetic tasks."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional, Sequence, Union

import numpy as np
import numpy.typing as npt
import pandas as pd

from .consts import STREAM_DATA, STREAM_WEIGHTS
from .errors import ContractViolation, InvalidConfig, NumericAbort
from .numerics import Matrix
from .seeding import derive_rng

Activation = Literal["tanh", "relu", "none"]
LossKind = Literal["mse", "softmax_ce"]
TaskKind = Literal["teacher_student_regression", "gaussian_classification"]
Labels = npt.NDArray[np.int64]
Targets = Union[Matrix, Labels]


@dataclass(eq=False)
class Layer:
    W: Matrix
    activation: Activation = "tanh"

    def __post_init__(self) -> None:
        if self.activation not in ("tanh", "relu", "none"):
            raise ContractViolation(f"unknown activation {self.activation!r}")
        self.W = np.array(self.W, dtype=np.float64)


@dataclass(eq=False)
class DenseNet:
    """Stack of ``h = act(x W)`` layers with no biases.

    ``W`` of layer ``l`` is ``fan_in × fan_out``. ``version`` increases on every weight write
    so a stale forward cache can be detected.
    """

    layers: list[Layer]
    loss_kind: LossKind = "mse"
    version: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        if not self.layers:
            raise ContractViolation("a network needs at least one layer")
        if self.loss_kind not in ("mse", "softmax_ce"):
            raise ContractViolation(f"unknown loss {self.loss_kind!r}")
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.W.shape[1] != b.W.shape[0]:
                raise ContractViolation(
                    f"layer {i} outputs {a.W.shape[1]} but layer {i + 1} takes {b.W.shape[0]}"
                )

    def __repr__(self) -> str:
        return f"<DenseNet shapes={self.shapes} loss={self.loss_kind} version={self.version}>"

    @property
    def weights(self) -> list[Matrix]:
        return [layer.W for layer in self.layers]

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [layer.W.shape for layer in self.layers]  # type:ignore

    @property
    def n_in(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def n_out(self) -> int:
        return self.layers[-1].W.shape[1]

    def apply_update(self, index: int, update: Matrix) -> None:
        """``W_index ← W_index + update``."""
        W = self.layers[index].W
        if update.shape != W.shape:
            raise ContractViolation(f"update {update.shape} doesn't match layer {W.shape}")
        self.layers[index].W = W + update
        self.version += 1

    def set_weight(self, index: int, W: Matrix) -> None:
        if W.shape != self.layers[index].W.shape:
            raise ContractViolation(f"weight {W.shape} doesn't match layer shape")
        self.layers[index].W = np.array(W, dtype=np.float64)
        self.version += 1

    def copy(self) -> DenseNet:
        layers = [Layer(layer.W.copy(), layer.activation) for layer in self.layers]
        return DenseNet(layers, self.loss_kind)


@dataclass(eq=False)
class Batch:
    inputs: Matrix
    targets: Targets

    def __post_init__(self) -> None:
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ContractViolation("inputs must be a non-empty 2-D matrix")
        if self.targets.shape[0] != self.inputs.shape[0]:
            raise ContractViolation("inputs and targets differ in batch size")

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


Dataset = Batch  # a dataset is one big batch


@dataclass(eq=False)
class ForwardCache:
    net_id: int
    version: int
    hs: list[Matrix]  # layer inputs, then the output
    zs: list[Matrix]  # pre-activations
    targets: Targets
    loss: float

    @property
    def batch_size(self) -> int:
        return self.hs[0].shape[0]


@dataclass(frozen=True)
class SyntheticTask:
    """Generator settings for a desk-scale dataset.

    ``dims`` lists the layer widths including input and output, so ``(64, 64, 64, 64)`` is
    three 64×64 weights. ``noise_std`` is the target noise of the regression task;
    classification draws inputs around per-class centers with spread ``cluster_std`` and uses
    ``dims[-1]`` classes.
    """

    kind: TaskKind = "teacher_student_regression"
    dims: tuple[int, ...] = (64, 64, 64, 64)
    noise_std: float = 0.05
    seed: int = 0
    n_train: int = 2048
    n_eval: int = 512
    activation: Activation = "tanh"
    cluster_std: float = 4.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "dims", tuple(int(x) for x in self.dims))
        if self.kind not in ("teacher_student_regression", "gaussian_classification"):
            raise InvalidConfig("kind", f"unknown task kind {self.kind!r}")
        if len(self.dims) < 2 or any(x < 1 for x in self.dims):
            raise InvalidConfig("dims", "need at least two positive widths")
        if self.kind == "gaussian_classification" and self.dims[-1] < 2:
            raise InvalidConfig("dims", "classification needs at least two classes")
        if self.noise_std < 0:
            raise InvalidConfig("noise_std", "must be >= 0")
        if self.cluster_std < 0:
            raise InvalidConfig("cluster_std", "must be >= 0")
        if self.seed < 0:
            raise InvalidConfig("seed", "must be >= 0")
        if self.n_train < 1 or self.n_eval < 1:
            raise InvalidConfig("n_train", "train and eval sets must be non-empty")
        if self.activation not in ("tanh", "relu", "none"):
            raise InvalidConfig("activation", f"unknown activation {self.activation!r}")

    @property
    def loss_kind(self) -> LossKind:
        return "mse" if self.kind == "teacher_student_regression" else "softmax_ce"


@dataclass(eq=False)
class TaskData:
    train: Dataset
    eval: Dataset
    teacher: Optional[DenseNet] = None


# activations


def _activate(z: Matrix, activation: Activation) -> Matrix:
    if activation == "tanh":
        return np.tanh(z)
    if activation == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_grad(z: Matrix, h: Matrix, activation: Activation) -> Matrix:
    if activation == "tanh":
        return 1.0 - h * h
    if activation == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def _log_softmax(logits: Matrix) -> Matrix:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def _one_hot(targets: Targets, n_out: int) -> Matrix:
    if targets.ndim == 1:
        out = np.zeros((targets.shape[0], n_out))
        out[np.arange(targets.shape[0]), targets.astype(np.int64)] = 1.0
        return out
    return targets  # type:ignore


# forward / backward


def forward(net: DenseNet, batch: Batch) -> tuple[float, ForwardCache]:
    """Mean loss over the batch, and the activations needed by ``backward``."""
    if batch.inputs.shape[1] != net.n_in:
        raise ContractViolation(
            f"inputs have {batch.inputs.shape[1]} features, net takes {net.n_in}"
        )
    if net.loss_kind == "mse" and (batch.targets.ndim != 2 or batch.targets.shape[1] != net.n_out):
        raise ContractViolation("mse targets must be a batch × n_out matrix")

    hs = [batch.inputs]
    zs = []
    for layer in net.layers:
        z = hs[-1] @ layer.W
        zs.append(z)
        hs.append(_activate(z, layer.activation))
    out = hs[-1]
    if not np.all(np.isfinite(out)):
        raise NumericAbort("non-finite activations in forward pass")

    if net.loss_kind == "mse":
        diff = out - batch.targets
        loss = float(np.sum(diff * diff) / batch.size)
    else:
        log_p = _log_softmax(out)
        loss = float(-np.sum(_one_hot(batch.targets, net.n_out) * log_p) / batch.size)
    if not np.isfinite(loss):
        raise NumericAbort(f"non-finite loss {loss}")

    return loss, ForwardCache(id(net), net.version, hs, zs, batch.targets, loss)


def _output_grad(net: DenseNet, cache: ForwardCache) -> Matrix:
    out = cache.hs[-1]
    if net.loss_kind == "mse":
        return 2.0 * (out - cache.targets) / cache.batch_size
    probs = np.exp(_log_softmax(out))
    return (probs - _one_hot(cache.targets, net.n_out)) / cache.batch_size


def backprop(net: DenseNet, cache: ForwardCache) -> tuple[list[Matrix], list[Matrix]]:
    """Gradients of the mean loss per weight, and the pre-activation signals ``dL/dz``."""
    if cache.net_id != id(net) or cache.version != net.version:
        raise ContractViolation(
            f"stale forward cache (cache version {cache.version}, net version {net.version})"
        )
    grads: list[Matrix] = [np.empty(0)] * len(net.layers)
    signals: list[Matrix] = [np.empty(0)] * len(net.layers)
    d_h = _output_grad(net, cache)
    for i in reversed(range(len(net.layers))):
        layer = net.layers[i]
        d_z = d_h * _activation_grad(cache.zs[i], cache.hs[i + 1], layer.activation)
        signals[i] = d_z
        grads[i] = cache.hs[i].T @ d_z
        d_h = d_z @ layer.W.T
    return grads, signals


def backward(net: DenseNet, cache: ForwardCache) -> list[Matrix]:
    """Exact gradients of the mean loss with respect to each ``W``."""
    return backprop(net, cache)[0]


def weighted_backward(net: DenseNet, cache: ForwardCache, weights: Matrix) -> list[Matrix]:
    """Gradients of ``sum_i weights[i] * loss_i`` with respect to each ``W``.

    Uniform weights of ``1 / batch_size`` give :func:`backward`; multinomial counts over
    ``k`` draws divided by ``k`` give the mean gradient of a with-replacement resample.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (cache.batch_size,):
        raise ContractViolation(
            f"expected {cache.batch_size} sample weights, got shape {weights.shape}"
        )
    _, signals = backprop(net, cache)
    scale = (weights * cache.batch_size)[:, None]
    return [h.T @ (s * scale) for h, s in zip(cache.hs, signals)]


def per_sample_grad_norms(net: DenseNet, cache: ForwardCache) -> Matrix:
    """Spectral norm of each sample's own gradient, shape ``batch × n_layers``.

    A single sample's gradient is the outer product of its layer input and its signal, so the
    spectral norm is the product of their Euclidean norms.
    """
    _, signals = backprop(net, cache)
    b = cache.batch_size
    cols = [
        np.linalg.norm(cache.hs[i], axis=1) * np.linalg.norm(signals[i], axis=1) * b
        for i in range(len(net.layers))
    ]
    return np.stack(cols, axis=1)


def evaluate(net: DenseNet, dataset: Dataset) -> float:
    return forward(net, dataset)[0]


# tasks


def _random_net(
    dims: Sequence[int], activation: Activation, loss_kind: LossKind, seed: Sequence[int]
) -> DenseNet:
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        rng = derive_rng(seed, i)
        W = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
        act: Activation = activation if i < len(dims) - 2 else "none"
        layers.append(Layer(W, act))
    return DenseNet(layers, loss_kind)


def make_student(task: SyntheticTask, seed: Optional[int] = None) -> DenseNet:
    """A freshly initialised network shaped for ``task``."""
    seed = task.seed if seed is None else seed
    return _random_net(task.dims, task.activation, task.loss_kind, [seed, STREAM_WEIGHTS])


def make_task(spec: SyntheticTask) -> TaskData:
    """Deterministic train/eval split for ``spec``."""
    n_in = spec.dims[0]
    total = spec.n_train + spec.n_eval
    rng = derive_rng(spec.seed, STREAM_DATA)

    if spec.kind == "teacher_student_regression":
        teacher = _random_net(spec.dims, spec.activation, "mse", [spec.seed, STREAM_DATA, 1])
        inputs = rng.standard_normal((total, n_in))
        _, cache = forward(teacher, Batch(inputs, np.zeros((total, teacher.n_out))))
        targets: Targets = cache.hs[-1] + spec.noise_std * rng.standard_normal(
            (total, teacher.n_out)
        )
    else:
        teacher = None
        n_classes = spec.dims[-1]
        centers = rng.standard_normal((n_classes, n_in))
        targets = rng.integers(0, n_classes, size=total).astype(np.int64)
        inputs = centers[targets] + spec.cluster_std * rng.standard_normal((total, n_in))
        # keep inputs on a unit-ish scale for tanh layers
        inputs = inputs / np.sqrt(1.0 + spec.cluster_std**2)

    train = Batch(inputs[: spec.n_train], targets[: spec.n_train])
    held_out = Batch(inputs[spec.n_train :], targets[spec.n_train :])
    return TaskData(train, held_out, teacher)


def sample_batch(dataset: Dataset, size: int, rng: np.random.Generator) -> Batch:
    """Batch of ``size`` rows drawn without replacement (capped at the dataset size)."""
    idx = rng.choice(dataset.size, size=min(size, dataset.size), replace=False)
    return Batch(dataset.inputs[idx], dataset.targets[idx])


def save_dataset(path: Union[str, Path], dataset: Dataset) -> None:
    """CSV with ``x0..`` input columns then either ``y0..`` targets or a ``label`` column."""
    df = pd.DataFrame(dataset.inputs, columns=[f"x{i}" for i in range(dataset.inputs.shape[1])])
    if dataset.targets.ndim == 1:
        df["label"] = dataset.targets
    else:
        for i in range(dataset.targets.shape[1]):
            df[f"y{i}"] = dataset.targets[:, i]
    df.to_csv(path, index=False)


def load_dataset(path: Union[str, Path]) -> Dataset:
    df = pd.read_csv(path, float_precision="round_trip")
    x_cols = [c for c in df.columns if c.startswith("x")]
    inputs = df[x_cols].to_numpy(dtype=np.float64)
    if "label" in df.columns:
        return Batch(inputs, df["label"].to_numpy(dtype=np.int64))
    y_cols = [c for c in df.columns if c.startswith("y")]
    return Batch(inputs, df[y_cols].to_numpy(dtype=np.float64))
