#!/usr/bin/env python3
"""
Network Module
Feed-forward layers, losses and the Adam optimizer with hand-derived backward passes

A network is a stack of blocks. Hidden blocks are Dense -> [BatchNorm] -> [Activation]
(BatchNorm after the activation when block_order says so), the output block is a single
Dense layer. Boundary n is the output h^n of block n; boundary 0 is the input.
"""

import copy
import hashlib
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from dni_lab.errors import MissingCacheError, ShapeError, ValidationError
from dni_lab.linalg import Matrix, Rng, check_finite

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "sigmoid", "identity")
BLOCK_ORDERS = ("bn_before_activation", "bn_after_activation")
MODES = ("train", "eval")


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")


def _check_cache(cache, layer: str) -> None:
    if cache is None or cache.get("layer") != layer:
        raise MissingCacheError(f"{layer} backward called without a matching forward cache")


def sigmoid(x: Matrix) -> Matrix:
    # split on sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits: Matrix) -> Matrix:
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


class DenseLayer:
    """Affine map x W + b"""

    kind = "dense"

    def __init__(self, W: Matrix, b: Optional[Matrix] = None):
        self.W = np.ascontiguousarray(W, dtype=np.float64)
        self.b = np.zeros((1, self.W.shape[1])) if b is None else np.ascontiguousarray(b, dtype=np.float64)
        if self.b.shape != (1, self.W.shape[1]):
            raise ShapeError("dense bias must be 1 x out_dim", self.W.shape, self.b.shape)

    @classmethod
    def initialize(cls, in_dim: int, out_dim: int, rng: Rng) -> "DenseLayer":
        """W ~ N(0, 1/in_dim), b = 0"""
        return cls(rng.gaussian(in_dim, out_dim, std=1.0 / np.sqrt(in_dim)))

    @property
    def in_dim(self) -> int:
        return self.W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W.shape[1]

    def params(self) -> Dict[str, Matrix]:
        return {"W": self.W, "b": self.b}

    def buffers(self) -> Dict[str, Matrix]:
        return {}

    def forward(self, x: Matrix, mode: str = "train") -> Tuple[Matrix, dict]:
        _check_mode(mode)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError("dense input does not match in_dim", x.shape, self.W.shape)
        return x @ self.W + self.b, {"layer": self.kind, "x": x}

    def backward(self, cache: dict, upstream: Matrix) -> Tuple[Matrix, Dict[str, Matrix]]:
        _check_cache(cache, self.kind)
        x = cache["x"]
        if upstream.shape != (x.shape[0], self.out_dim):
            raise ShapeError("dense upstream does not match output", upstream.shape, (x.shape[0], self.out_dim))
        grads = {"W": x.T @ upstream, "b": upstream.sum(axis=0, keepdims=True)}
        return upstream @ self.W.T, grads


class ActivationLayer:
    """Elementwise relu / sigmoid / identity"""

    def __init__(self, kind: str):
        if kind not in ACTIVATIONS:
            raise ValidationError(f"Unsupported activation: {kind}")
        self.activation = kind

    @property
    def kind(self) -> str:
        return f"activation:{self.activation}"

    def params(self) -> Dict[str, Matrix]:
        return {}

    def buffers(self) -> Dict[str, Matrix]:
        return {}

    def forward(self, x: Matrix, mode: str = "train") -> Tuple[Matrix, dict]:
        _check_mode(mode)
        if self.activation == "relu":
            out = np.maximum(x, 0.0)
        elif self.activation == "sigmoid":
            out = sigmoid(x)
        else:
            out = x
        return out, {"layer": self.kind, "x": x, "out": out}

    def backward(self, cache: dict, upstream: Matrix) -> Tuple[Matrix, Dict[str, Matrix]]:
        _check_cache(cache, self.kind)
        if upstream.shape != cache["out"].shape:
            raise ShapeError("activation upstream does not match output", upstream.shape, cache["out"].shape)
        if self.activation == "relu":
            return upstream * (cache["x"] > 0.0), {}
        if self.activation == "sigmoid":
            s = cache["out"]
            return upstream * s * (1.0 - s), {}
        return upstream, {}


class BatchNormLayer:
    """Per-feature batch normalisation with explicit train/eval mode"""

    kind = "batchnorm"

    def __init__(self, dim: int, momentum: float = 0.9, eps: float = 1e-5):
        if not 0.0 < momentum < 1.0:
            raise ValidationError("batchnorm momentum must lie in (0, 1)")
        if eps < 0.0:
            raise ValidationError("batchnorm eps must be >= 0")
        self.gamma = np.ones((1, dim))
        self.beta = np.zeros((1, dim))
        self.running_mean = np.zeros((1, dim))
        self.running_var = np.ones((1, dim))
        self.momentum = momentum
        self.eps = eps

    @property
    def dim(self) -> int:
        return self.gamma.shape[1]

    def params(self) -> Dict[str, Matrix]:
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self) -> Dict[str, Matrix]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x: Matrix, mode: str = "train") -> Tuple[Matrix, dict]:
        _check_mode(mode)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ShapeError("batchnorm input does not match dim", x.shape, self.gamma.shape)
        if mode == "train":
            mean = x.mean(axis=0, keepdims=True)
            var = x.var(axis=0, keepdims=True)
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        cache = {"layer": self.kind, "mode": mode, "xhat": xhat, "inv_std": inv_std,
                 "batch_mean": mean, "batch_var": var}
        return self.gamma * xhat + self.beta, cache

    def update_running_stats(self, cache: dict) -> None:
        """Fold a train-mode batch's statistics into the running estimates"""
        if cache.get("mode") != "train":
            return
        self.running_mean[...] = self.momentum * self.running_mean + (1.0 - self.momentum) * cache["batch_mean"]
        self.running_var[...] = self.momentum * self.running_var + (1.0 - self.momentum) * cache["batch_var"]

    def backward(self, cache: dict, upstream: Matrix) -> Tuple[Matrix, Dict[str, Matrix]]:
        _check_cache(cache, self.kind)
        xhat = cache["xhat"]
        if upstream.shape != xhat.shape:
            raise ShapeError("batchnorm upstream does not match output", upstream.shape, xhat.shape)
        grads = {"gamma": (upstream * xhat).sum(axis=0, keepdims=True),
                 "beta": upstream.sum(axis=0, keepdims=True)}
        dxhat = upstream * self.gamma
        if cache["mode"] == "eval":
            return dxhat * cache["inv_std"], grads
        n = xhat.shape[0]
        dx = (cache["inv_std"] / n) * (n * dxhat - dxhat.sum(axis=0, keepdims=True)
                                       - xhat * (dxhat * xhat).sum(axis=0, keepdims=True))
        return dx, grads


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

class Loss:
    """Base loss; forward is the batch mean unless reduction='sum'"""

    kind = "loss"

    def __init__(self, reduction: str = "mean"):
        if reduction not in ("mean", "sum"):
            raise ValidationError("reduction must be 'mean' or 'sum'")
        self.reduction = reduction

    def _check(self, pred: Matrix, target: Matrix) -> None:
        if pred.shape != target.shape:
            raise ShapeError(f"{self.kind} prediction/target mismatch", pred.shape, target.shape)

    def _reduce_scale(self, n: int) -> float:
        return 1.0 / n if self.reduction == "mean" else 1.0

    def per_sample(self, pred: Matrix, target: Matrix) -> np.ndarray:
        raise NotImplementedError

    def per_sample_grad(self, pred: Matrix, target: Matrix) -> Matrix:
        raise NotImplementedError

    def forward(self, pred: Matrix, target: Matrix) -> float:
        values = self.per_sample(pred, target)
        return float(values.sum() * self._reduce_scale(pred.shape[0]))

    def backward(self, pred: Matrix, target: Matrix) -> Matrix:
        return self.per_sample_grad(pred, target) * self._reduce_scale(pred.shape[0])


class MSELoss(Loss):
    """(1/n) * 1/2 * sum ||y - p||^2 (or the unnormalised 1/2 sum)"""

    kind = "mse"

    def per_sample(self, pred: Matrix, target: Matrix) -> np.ndarray:
        self._check(pred, target)
        return 0.5 * np.sum(np.square(pred - target), axis=1)

    def per_sample_grad(self, pred: Matrix, target: Matrix) -> Matrix:
        self._check(pred, target)
        return pred - target


class LogLoss(Loss):
    """Fused softmax + cross-entropy on one-hot targets"""

    kind = "logloss"

    @staticmethod
    def validate_one_hot(target: Matrix) -> None:
        ok = np.all((target == 0.0) | (target == 1.0)) and np.all(target.sum(axis=1) == 1.0)
        if not ok:
            raise ValidationError("logloss targets must be one-hot rows")

    def per_sample(self, pred: Matrix, target: Matrix) -> np.ndarray:
        self._check(pred, target)
        self.validate_one_hot(target)
        top = pred.max(axis=1, keepdims=True)
        lse = np.log(np.exp(pred - top).sum(axis=1, keepdims=True)) + top
        return (lse - np.sum(target * pred, axis=1, keepdims=True)).ravel()

    def per_sample_grad(self, pred: Matrix, target: Matrix) -> Matrix:
        self._check(pred, target)
        self.validate_one_hot(target)
        return softmax(pred) - target


LOSSES = {"mse": MSELoss, "logloss": LogLoss}


def build_loss(kind: str, reduction: str = "mean") -> Loss:
    if kind not in LOSSES:
        raise ValidationError(f"Unsupported loss: {kind}")
    return LOSSES[kind](reduction)


def loss_forward(loss: Loss, pred: Matrix, target: Matrix) -> float:
    return loss.forward(pred, target)


def loss_backward(loss: Loss, pred: Matrix, target: Matrix) -> Matrix:
    return loss.backward(pred, target)


def accuracy(pred: Matrix, target: Matrix) -> float:
    return float(np.mean(np.argmax(pred, axis=1) == np.argmax(target, axis=1)))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: Matrix
    v: Matrix
    t: int = 0
    lr: float = 3e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, param: Matrix, lr: float = 3e-5, **kwargs) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), lr=lr, **kwargs)


def adam_step(state: AdamState, param: Matrix, grad: Matrix, name: str = "param") -> Matrix:
    """One bias-corrected Adam update; returns the new parameter value and advances the state"""
    if grad.shape != param.shape:
        raise ShapeError(f"gradient shape does not match parameter {name}", param.shape, grad.shape)
    check_finite(f"gradient of {name}", grad)
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    return param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


class OptimizerBank:
    """One AdamState per named parameter, created lazily"""

    def __init__(self, lr: float = 3e-5):
        self.lr = lr
        self.states: "OrderedDict[str, AdamState]" = OrderedDict()

    def state_for(self, name: str, param: Matrix) -> AdamState:
        if name not in self.states:
            self.states[name] = AdamState.like(param, lr=self.lr)
        return self.states[name]

    def apply(self, params: Dict[str, Matrix], grads: Dict[str, Matrix],
              order: Optional[Sequence[str]] = None) -> None:
        """Update every parameter that has a gradient, in place"""
        for name in (order if order is not None else grads.keys()):
            param = params[name]
            param[...] = adam_step(self.state_for(name, param), param, grads[name], name)


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------

@dataclass
class ForwardPass:
    """Boundary activations (index 0 is the input) and per-block layer caches"""
    boundaries: List[Matrix]
    caches: List[List[dict]] = field(default_factory=list)
    mode: str = "train"

    @property
    def output(self) -> Matrix:
        return self.boundaries[-1]


class Network:
    """Ordered block stack with boundary-addressable forward/backward"""

    def __init__(self, blocks: List[List[object]]):
        if not blocks:
            raise ValidationError("network needs at least one block")
        self.blocks = blocks

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def layer_dims(self) -> List[int]:
        dims = [self.blocks[0][0].in_dim]
        dims.extend(block[0].out_dim for block in self.blocks)
        return dims

    def dense_layers(self) -> List[DenseLayer]:
        return [block[0] for block in self.blocks]

    def _named(self, getter: str) -> "OrderedDict[str, Matrix]":
        named = OrderedDict()
        for n, block in enumerate(self.blocks, start=1):
            for i, layer in enumerate(block):
                for pname, value in getattr(layer, getter)().items():
                    named[f"b{n}.{i}.{pname}"] = value
        return named

    def parameters(self) -> "OrderedDict[str, Matrix]":
        return self._named("params")

    def buffers(self) -> "OrderedDict[str, Matrix]":
        return self._named("buffers")

    def block_parameter_names(self, n: int) -> List[str]:
        return [name for name in self.parameters() if name.startswith(f"b{n}.")]

    def block_forward(self, n: int, x: Matrix, mode: str) -> Tuple[Matrix, List[dict]]:
        caches = []
        for layer in self.blocks[n - 1]:
            x, cache = layer.forward(x, mode)
            caches.append(cache)
        return x, caches

    def forward(self, x: Matrix, mode: str = "train", update_running: bool = False) -> ForwardPass:
        _check_mode(mode)
        fp = ForwardPass(boundaries=[x], mode=mode)
        for n in range(1, self.n_blocks + 1):
            x, caches = self.block_forward(n, x, mode)
            fp.boundaries.append(x)
            fp.caches.append(caches)
        if update_running:
            self.commit_running_stats(fp)
        return fp

    def predict(self, x: Matrix, mode: str = "eval") -> Matrix:
        return self.forward(x, mode).output

    def commit_running_stats(self, fp: ForwardPass) -> None:
        for block, caches in zip(self.blocks, fp.caches):
            for layer, cache in zip(block, caches):
                if isinstance(layer, BatchNormLayer):
                    layer.update_running_stats(cache)

    def block_backward(self, n: int, caches: List[dict], upstream: Matrix) -> Tuple[Matrix, Dict[str, Matrix]]:
        """Backprop through block n, returning the gradient at its input"""
        grads = {}
        block = self.blocks[n - 1]
        for i in range(len(block) - 1, -1, -1):
            upstream, pgrads = block[i].backward(caches[i], upstream)
            for pname, g in pgrads.items():
                grads[f"b{n}.{i}.{pname}"] = g
        return upstream, grads

    def block_backward_to_dense(self, n: int, caches: List[dict], upstream: Matrix
                                ) -> Tuple[Matrix, Dict[str, Matrix]]:
        """
        Backprop through block n but return dL/dg, the gradient at the dense output

        The dense layer's parameter gradients are still included; its input gradient is
        left to the caller (feedback alignment replaces W^T there).
        """
        grads = {}
        block = self.blocks[n - 1]
        for i in range(len(block) - 1, 0, -1):
            upstream, pgrads = block[i].backward(caches[i], upstream)
            for pname, g in pgrads.items():
                grads[f"b{n}.{i}.{pname}"] = g
        _, dense_grads = block[0].backward(caches[0], upstream)
        for pname, g in dense_grads.items():
            grads[f"b{n}.0.{pname}"] = g
        return upstream, grads

    def backward_range(self, fp: ForwardPass, upstream: Matrix, top: int, bottom: int = 0
                       ) -> Tuple[Matrix, Dict[str, Matrix]]:
        """Backprop an upstream gradient at boundary `top` down to boundary `bottom`"""
        if not 0 <= bottom <= top <= self.n_blocks:
            raise ValidationError(f"bad boundary range top={top} bottom={bottom}")
        if upstream.shape != fp.boundaries[top].shape:
            raise ShapeError("upstream does not match boundary activation", upstream.shape,
                             fp.boundaries[top].shape)
        grads: Dict[str, Matrix] = {}
        for n in range(top, bottom, -1):
            upstream, block_grads = self.block_backward(n, fp.caches[n - 1], upstream)
            grads.update(block_grads)
        return upstream, grads

    def add_l2(self, grads: Dict[str, Matrix], penalty: float) -> None:
        """Add penalty * W to the dense-weight gradients present in grads"""
        if penalty <= 0.0:
            return
        params = self.parameters()
        for name in grads:
            if name.endswith(".0.W"):
                grads[name] = grads[name] + penalty * params[name]

    def param_hash(self) -> str:
        digest = hashlib.sha256()
        for name, value in list(self.parameters().items()) + list(self.buffers().items()):
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(value).tobytes())
        return digest.hexdigest()

    def copy(self) -> "Network":
        return copy.deepcopy(self)


def build_network(layer_dims: Sequence[int], rng: Rng, activation: str = "relu",
                  batchnorm: bool = False, block_order: str = "bn_before_activation",
                  bn_momentum: float = 0.9, bn_eps: float = 1e-5) -> Network:
    """Stack of len(layer_dims)-1 blocks; the last block is the linear output layer"""
    if len(layer_dims) < 2 or any(int(d) < 1 for d in layer_dims):
        raise ValidationError(f"layer_dims must list at least two positive sizes, got {list(layer_dims)}")
    if activation not in ACTIVATIONS:
        raise ValidationError(f"Unsupported activation: {activation}")
    if block_order not in BLOCK_ORDERS:
        raise ValidationError(f"Unsupported block order: {block_order}")

    n_blocks = len(layer_dims) - 1
    blocks = []
    for n in range(1, n_blocks + 1):
        in_dim, out_dim = int(layer_dims[n - 1]), int(layer_dims[n])
        block: List[object] = [DenseLayer.initialize(in_dim, out_dim, rng.child(n))]
        if n < n_blocks:
            act = ActivationLayer(activation) if activation != "identity" else None
            bn = BatchNormLayer(out_dim, bn_momentum, bn_eps) if batchnorm else None
            tail = [bn, act] if block_order == "bn_before_activation" else [act, bn]
            block.extend(layer for layer in tail if layer is not None)
        blocks.append(block)
    logger.debug(f"Built network {list(layer_dims)} activation={activation} batchnorm={batchnorm}")
    return Network(blocks)


def forward(layer, x: Matrix, mode: str = "train") -> Tuple[Matrix, dict]:
    return layer.forward(x, mode)


def backward(layer, cache: dict, upstream: Matrix) -> Tuple[Matrix, Dict[str, Matrix]]:
    return layer.backward(cache, upstream)
