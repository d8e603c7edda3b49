"""Loss, exact gradients, Adam, the training loop, and checkpoints.

Gradients come from reverse-mode differentiation of the same graph builders
that serve predictions, and are verified against central finite differences
in the test suite (1e-4 relative agreement is an acceptance gate, not an
aspiration).

Training is bit-deterministic for a given (seed, data, config): seeded
shuffles, fixed batch order, fixed accumulation order in every reduction
that feeds a parameter update.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .dataio import NormalizerStats, WindowSample
from .errors import CheckpointError, DataError, DimensionError, NumericError
from .models import (
    ARCHITECTURES,
    ModelParams,
    arch_of,
    build_prediction,
    dims_of,
    params_to_tensors,
    tensor_shapes,
    tensors_to_params,
)
from .numcore import Rng, finite_diff_grad

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    learning_rate: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    shuffle: bool = True
    freeze: frozenset = frozenset()
    clip_norm: float | None = 5.0  # global gradient-norm ceiling; None disables

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class LossHistory:
    train: list[float] = field(default_factory=list)
    eval: list[float] | None = None


def mse_loss(pred, target) -> float:
    """Mean squared error between two equal-length vectors."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.size == 0:
        raise DimensionError("mse_loss of empty vectors is undefined")
    if pred.size != target.size:
        raise DimensionError(f"length mismatch: {pred.size} predictions vs {target.size} targets")
    diff = pred - target
    return float(np.mean(diff * diff))


def stack_samples(samples) -> tuple[np.ndarray, np.ndarray]:
    """Stack window samples into (n, window, features) inputs and (n,)
    targets."""
    if len(samples) == 0:
        raise DataError("empty sample list")
    x = np.stack([np.asarray(s.inputs, dtype=np.float64) for s in samples])
    y = np.array([s.target for s in samples], dtype=np.float64)
    return x, y


def _loss_node_and_nodes(params: ModelParams, x: np.ndarray, y: np.ndarray, for_grad: bool):
    make = ad.parameter if for_grad else ad.constant
    nodes = {name: make(v) for name, v in params_to_tensors(params).items()}
    pred = build_prediction(params, nodes, x)
    resid = ad.sub(pred, ad.constant(y.reshape(-1, 1)))
    loss = ad.mean_all(ad.mul(resid, resid))
    if not np.isfinite(loss.value):
        bad = np.flatnonzero(~np.isfinite(pred.value[:, 0]))
        index = int(bad[0]) if bad.size else 0
        raise NumericError(f"non-finite loss during forward pass at sample index {index}")
    return loss, pred, nodes


def batch_loss(params: ModelParams, samples) -> float:
    """MSE of the model over a batch, without gradients."""
    x, y = stack_samples(samples)
    loss, _, _ = _loss_node_and_nodes(params, x, y, for_grad=False)
    return float(loss.value)


def backward(params: ModelParams, samples) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradient of the batch MSE with respect to every
    named parameter tensor."""
    x, y = stack_samples(samples)
    _, grads = _loss_and_grads(params, x, y)
    return grads


def _loss_and_grads(params: ModelParams, x: np.ndarray, y: np.ndarray):
    loss, _, nodes = _loss_node_and_nodes(params, x, y, for_grad=True)
    ad.backward(loss)
    grads = {
        name: (node.grad if node.grad is not None else np.zeros_like(node.value))
        for name, node in nodes.items()
    }
    return float(loss.value), grads


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        tensors = params_to_tensors(params)
        return cls(
            m={name: np.zeros_like(t) for name, t in tensors.items()},
            v={name: np.zeros_like(t) for name, t in tensors.items()},
        )


def is_frozen(name: str, freeze) -> bool:
    """A tensor is frozen when its name or any dotted prefix of it is in the
    freeze set (so "head" covers "head.w" and "head.b")."""
    if not freeze:
        return False
    parts = name.split(".")
    return any(".".join(parts[: i + 1]) in freeze for i in range(len(parts)))


def adam_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    freeze=frozenset(),
) -> tuple[ModelParams, AdamState]:
    """One Adam update with bias correction. Frozen groups keep their exact
    parameter arrays and moment estimates."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    t = state.t + 1
    new_tensors: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, theta in params_to_tensors(params).items():
        if is_frozen(name, freeze):
            new_tensors[name] = theta
            new_m[name] = state.m[name]
            new_v[name] = state.v[name]
            continue
        g = grads[name]
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        new_tensors[name] = theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name] = m
        new_v[name] = v
    updated = tensors_to_params(arch_of(params), dims_of(params), new_tensors)
    new_state = replace(state, m=new_m, v=new_v, t=t)
    return updated, new_state


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Scale the whole gradient down when its global L2 norm exceeds
    ``max_norm`` (BPTT can spike even over six steps)."""
    total = 0.0
    for name in grads:
        total += float(np.sum(grads[name] * grads[name]))
    norm = np.sqrt(total)
    if norm <= max_norm or norm == 0.0:
        return grads
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}


# ---------------------------------------------------------------------------
# training loop


def train(
    params: ModelParams,
    train_samples,
    eval_samples=None,
    config: TrainConfig = TrainConfig(),
) -> tuple[ModelParams, LossHistory]:
    """Mini-batch Adam for exactly ``config.epochs`` epochs (no early
    stopping), with a seeded shuffle per epoch. Deterministic per
    (seed, data, config)."""
    if len(train_samples) == 0:
        raise DataError("cannot train on an empty sample list")
    x, y = stack_samples(train_samples)
    n = x.shape[0]
    rng = Rng(config.seed)
    state = AdamState.for_params(params)
    history = LossHistory(eval=[] if eval_samples is not None else None)
    eval_xy = stack_samples(eval_samples) if eval_samples else None
    for _ in range(config.epochs):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        sq_error_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = _loss_and_grads(params, x[idx], y[idx])
            if config.clip_norm is not None:
                grads = clip_gradients(grads, config.clip_norm)
            params, state = adam_step(params, grads, state, config.learning_rate, config.freeze)
            sq_error_sum += loss * idx.size
        history.train.append(sq_error_sum / n)
        if eval_xy is not None:
            ex, ey = eval_xy
            loss_node, _, _ = _loss_node_and_nodes(params, ex, ey, for_grad=False)
            history.eval.append(float(loss_node.value))
    return params, history


# ---------------------------------------------------------------------------
# gradient verification


def gradient_check(params: ModelParams, samples, h: float = 1e-5) -> float:
    """Maximum relative disagreement between backpropagated gradients and
    central finite differences over every parameter coordinate.

    Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
    """
    x, y = stack_samples(samples)
    _, grads = _loss_and_grads(params, x, y)
    arch, dims = arch_of(params), dims_of(params)
    shapes = tensor_shapes(arch, dims)
    order = list(shapes)
    analytic = np.concatenate([grads[name].ravel() for name in order])

    def unflatten(vec: np.ndarray) -> ModelParams:
        tensors = {}
        pos = 0
        for name in order:
            size = int(np.prod(shapes[name])) if shapes[name] else 1
            tensors[name] = vec[pos : pos + size].reshape(shapes[name])
            pos += size
        return tensors_to_params(arch, dims, tensors)

    def objective(vec: np.ndarray) -> float:
        loss, _, _ = _loss_node_and_nodes(unflatten(vec), x, y, for_grad=False)
        return float(loss.value)

    theta = np.concatenate([params_to_tensors(params)[name].ravel() for name in order])
    numeric = finite_diff_grad(objective, theta, h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    """Self-describing snapshot: architecture, dimensions, named tensors,
    the normalizer the model was trained against, and provenance."""

    architecture: str
    dims: dict
    tensors: dict[str, np.ndarray]
    normalizer: NormalizerStats | None = None
    provenance: dict = field(default_factory=dict)
    format_version: int = CHECKPOINT_FORMAT_VERSION

    def to_params(self, expect_arch: str | None = None) -> ModelParams:
        if expect_arch is not None and expect_arch != self.architecture:
            raise CheckpointError(
                f"checkpoint holds a {self.architecture} model, expected {expect_arch}"
            )
        return tensors_to_params(self.architecture, self.dims, self.tensors)


def make_checkpoint(
    params: ModelParams,
    normalizer: NormalizerStats | None = None,
    provenance: dict | None = None,
) -> Checkpoint:
    return Checkpoint(
        architecture=arch_of(params),
        dims=dims_of(params),
        tensors=params_to_tensors(params),
        normalizer=normalizer,
        provenance=dict(provenance or {}),
    )


def _checkpoint_document(ckpt: Checkpoint) -> dict:
    tensors = {}
    for name, t in ckpt.tensors.items():
        if not np.all(np.isfinite(t)):
            raise NumericError(f"refusing to serialize non-finite tensor {name}")
        tensors[name] = {"shape": list(t.shape), "values": t.ravel().tolist()}
    return {
        "format_version": ckpt.format_version,
        "architecture": ckpt.architecture,
        "dims": dict(ckpt.dims),
        "tensors": tensors,
        "normalizer": ckpt.normalizer.to_dict() if ckpt.normalizer is not None else None,
        "provenance": dict(ckpt.provenance),
    }


def checkpoint_to_json(ckpt: Checkpoint) -> str:
    """Canonical serialization: sorted keys, two-space indent, full 64-bit
    round-trip float precision. Re-serializing a loaded checkpoint yields
    identical bytes."""
    return json.dumps(_checkpoint_document(ckpt), indent=2, sort_keys=True) + "\n"


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write atomically: the file either holds a complete checkpoint or the
    previous contents."""
    text = checkpoint_to_json(ckpt)
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def checkpoint_from_json(text: str) -> Checkpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CheckpointError("checkpoint document must be a JSON object")
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format_version {version!r}, "
            f"this build reads version {CHECKPOINT_FORMAT_VERSION}"
        )
    try:
        arch = doc["architecture"]
        dims = doc["dims"]
        raw_tensors = doc["tensors"]
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing required key {exc}") from exc
    if arch not in ARCHITECTURES:
        raise CheckpointError(f"unknown architecture {arch!r} in checkpoint")
    tensors: dict[str, np.ndarray] = {}
    try:
        for name, entry in raw_tensors.items():
            arr = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
            tensors[name] = arr
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed tensor table: {exc}") from exc
    normalizer = None
    if doc.get("normalizer") is not None:
        try:
            normalizer = NormalizerStats.from_dict(doc["normalizer"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"malformed normalizer block: {exc}") from exc
    ckpt = Checkpoint(
        architecture=arch,
        dims=dims,
        tensors=tensors,
        normalizer=normalizer,
        provenance=dict(doc.get("provenance", {})),
    )
    # validate shapes eagerly so a bad file fails at load, not first use
    ckpt.to_params()
    return ckpt


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return checkpoint_from_json(text)
