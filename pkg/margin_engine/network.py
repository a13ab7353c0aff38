"""Bias-free ReLU feed-forward networks.

f_w(x) = W_d relu(W_{d-1} relu(... relu(W_1 x))). Layers are 1-indexed in
the public API: x^0 is the input, x^i = W_i relu(x^{i-1}) with relu(x^0)
taken as x^0 itself, and x^d are the class scores.
"""

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InvalidConfigError
from .linalg import as_matrix, as_vector

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "margin_engine.checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkParams:
    weights: tuple

    def __post_init__(self):
        if not self.weights:
            raise InvalidConfigError("a network needs at least one weight matrix")
        weights = tuple(as_matrix(w) for w in self.weights)
        for i in range(1, len(weights)):
            if weights[i].shape[1] != weights[i - 1].shape[0]:
                raise DimensionError(
                    f"W_{i + 1} has {weights[i].shape[1]} columns but W_{i} "
                    f"has {weights[i - 1].shape[0]} rows"
                )
        for w in weights:
            w.setflags(write=False)
        object.__setattr__(self, "weights", weights)

    @property
    def d(self) -> int:
        return len(self.weights)

    @property
    def rho(self) -> int:
        return max(w.shape[0] for w in self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def layer_dims(self) -> list:
        return [self.input_dim] + [w.shape[0] for w in self.weights]

    def weight(self, i: int) -> np.ndarray:
        """W_i for 1 <= i <= d."""
        return self.weights[i - 1]

    def scaled(self, factor: float) -> "NetworkParams":
        return NetworkParams(tuple(w * factor for w in self.weights))


@dataclass
class ForwardTrace:
    input: np.ndarray
    preacts: list  # x^1 .. x^d
    postacts: list  # relu(x^1) .. relu(x^{d-1})
    masks: list = field(default_factory=list)  # preacts > 0 for layers 1 .. d-1

    @property
    def scores(self) -> np.ndarray:
        return self.preacts[-1]

    def x(self, i: int) -> np.ndarray:
        """x^i for 0 <= i <= d."""
        return self.input if i == 0 else self.preacts[i - 1]

    def phi(self, i: int) -> np.ndarray:
        """relu(x^i) for 0 <= i <= d-1, with relu(x^0) = x^0."""
        return self.input if i == 0 else self.postacts[i - 1]


@dataclass
class BatchTrace:
    """Row-stacked forward pass over a batch; same layout as ForwardTrace."""

    input: np.ndarray
    preacts: list
    postacts: list

    @property
    def scores(self) -> np.ndarray:
        return self.preacts[-1]

    def x(self, i: int) -> np.ndarray:
        return self.input if i == 0 else self.preacts[i - 1]

    def phi(self, i: int) -> np.ndarray:
        return self.input if i == 0 else self.postacts[i - 1]

    def sample(self, index: int) -> ForwardTrace:
        post = [p[index] for p in self.postacts]
        return ForwardTrace(
            input=self.input[index],
            preacts=[p[index] for p in self.preacts],
            postacts=post,
            masks=[p > 0 for p in post],
        )


def forward(params: NetworkParams, x) -> ForwardTrace:
    x = as_vector(x)
    if x.shape[0] != params.input_dim:
        raise DimensionError(f"input has dim {x.shape[0]}, network expects {params.input_dim}")
    preacts, postacts, masks = [], [], []
    h = x
    for i, w in enumerate(params.weights):
        z = w @ h
        preacts.append(z)
        if i < params.d - 1:
            mask = z > 0
            h = np.where(mask, z, 0.0)
            masks.append(mask)
            postacts.append(h)
    return ForwardTrace(input=x, preacts=preacts, postacts=postacts, masks=masks)


def forward_batch(params: NetworkParams, inputs: np.ndarray) -> BatchTrace:
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != params.input_dim:
        raise DimensionError(
            f"batch has shape {inputs.shape}, network expects (*, {params.input_dim})"
        )
    preacts, postacts = [], []
    h = inputs
    for i, w in enumerate(params.weights):
        z = h @ w.T
        preacts.append(z)
        if i < params.d - 1:
            h = np.where(z > 0, z, 0.0)
            postacts.append(h)
    return BatchTrace(input=inputs, preacts=preacts, postacts=postacts)


def scores_batch(params: NetworkParams, inputs: np.ndarray) -> np.ndarray:
    return forward_batch(params, inputs).scores


def jacobian_between(params: NetworkParams, trace: ForwardTrace, i: int, j: int) -> np.ndarray:
    """Jacobian J^{i,j} of x^i -> x^j at the trace's fixed ReLU pattern.

    J = W_j D_{j-1} W_{j-1} ... W_{i+1} D_i, and the identity when i == j,
    so that J @ x^i == x^j exactly on the activation region of the trace.
    """
    if not 1 <= i <= j <= params.d:
        raise DimensionError(f"invalid layer pair ({i}, {j}) for a {params.d}-layer network")
    jac = np.eye(trace.x(i).shape[0])
    for layer in range(i, j):
        # apply D_layer then W_{layer+1}
        jac = params.weight(layer + 1) @ (trace.masks[layer - 1][:, None] * jac)
    return jac


def backward(params: NetworkParams, trace: ForwardTrace, dscores) -> list:
    """Gradients dL/dW_i for a loss whose score gradient is ``dscores``."""
    delta = as_vector(dscores)
    if delta.shape[0] != params.output_dim:
        raise DimensionError(
            f"score gradient has dim {delta.shape[0]}, network outputs {params.output_dim}"
        )
    grads = [None] * params.d
    for i in range(params.d, 0, -1):
        grads[i - 1] = np.outer(delta, trace.phi(i - 1))
        if i > 1:
            delta = (params.weight(i).T @ delta) * trace.masks[i - 2]
    return grads


def backward_batch(params: NetworkParams, trace: BatchTrace, dscores: np.ndarray) -> list:
    """Summed gradients over the rows of a batch."""
    delta = np.asarray(dscores, dtype=np.float64)
    if delta.shape != trace.scores.shape:
        raise DimensionError(
            f"score gradient has shape {delta.shape}, expected {trace.scores.shape}"
        )
    grads = [None] * params.d
    for i in range(params.d, 0, -1):
        grads[i - 1] = delta.T @ trace.phi(i - 1)
        if i > 1:
            delta = (delta @ params.weight(i)) * (trace.preacts[i - 2] > 0)
    return grads


def init_params(layer_dims, seed: int) -> NetworkParams:
    """He-initialised weights, std sqrt(2 / fan_in), deterministic per seed."""
    layer_dims = [int(n) for n in layer_dims]
    if len(layer_dims) < 2:
        raise InvalidConfigError("layer_dims needs an input and at least one output size")
    if any(n < 1 for n in layer_dims):
        raise InvalidConfigError(f"all layer sizes must be >= 1, got {layer_dims}")
    rng = np.random.default_rng(seed)
    weights = []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
    logger.debug("initialised network %s with seed %d", layer_dims, seed)
    return NetworkParams(tuple(weights))


def save_checkpoint(params: NetworkParams, path: str, extra: dict = None) -> str:
    """Write weights as JSON; float repr round-trips bit-exactly."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_dims": params.layer_dims,
        "weights": [w.ravel().tolist() for w in params.weights],
    }
    if extra:
        payload["meta"] = extra
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, sort_keys=True)
        handle.write("\n")
    return path


def load_checkpoint(path: str) -> NetworkParams:
    with open(path, encoding="utf-8") as handle:
        payload = json.load(handle)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise InvalidConfigError(f"{path} is not a margin_engine checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise InvalidConfigError(f"unsupported checkpoint version {payload.get('version')}")
    dims = payload["layer_dims"]
    weights = []
    for fan_in, fan_out, flat in zip(dims[:-1], dims[1:], payload["weights"]):
        if len(flat) != fan_in * fan_out:
            raise DimensionError(f"checkpoint layer {fan_out}x{fan_in} has {len(flat)} values")
        weights.append(np.array(flat, dtype=np.float64).reshape(fan_out, fan_in))
    return NetworkParams(tuple(weights))


def checkpoint_meta(path: str) -> dict:
    with open(path, encoding="utf-8") as handle:
        return json.load(handle).get("meta", {})
