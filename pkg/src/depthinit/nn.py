"""Fully connected ReLU network with exact backprop and plain SGD.

Batches are row-major: ``x`` has shape (batch, features) and a layer with
weight ``W`` of shape (fan_out, fan_in) computes ``y = x @ W.T + b``.
The output layer emits raw logits.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgument
from .scheme import LayerInitPlan, NetworkSpec, sample_matrix


@dataclass
class DenseNetwork:
    spec: NetworkSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    provenance: dict = field(default_factory=dict)

    def copy(self) -> DenseNetwork:
        return replace(self, weights=[w.copy() for w in self.weights],
                       biases=[b.copy() for b in self.biases], provenance=dict(self.provenance))

    def parameters(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]


@dataclass
class BatchActivations:
    """``inputs[i]`` is x_{i+1} (the input of layer i+1); ``pre[i]`` is y_{i+1}."""

    inputs: list[np.ndarray]
    pre: list[np.ndarray]

    @property
    def logits(self) -> np.ndarray:
        return self.pre[-1]


@dataclass
class GradientSet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    d_inputs: list[np.ndarray]  # dE/dx_l for each layer input
    d_pre: list[np.ndarray]  # dE/dy_l


def init_network(spec: NetworkSpec, plan: LayerInitPlan, seed: int) -> DenseNetwork:
    if not plan.matches(spec):
        raise InvalidArgument("plan dimensions do not match the network spec")
    rng = np.random.default_rng(seed)
    weights = [
        sample_matrix(rng, fo, fi, var, plan.distribution)
        for fi, fo, var in zip(spec.fan_ins, spec.fan_outs, plan.weight_variance)
    ]
    biases = [np.zeros(fo) for fo in spec.fan_outs]
    return DenseNetwork(spec, weights, biases, {"scheme": plan.scheme, "seed": seed})


def forward(net: DenseNetwork, batch: np.ndarray) -> BatchActivations:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.spec.input_dim:
        raise InvalidArgument(
            f"batch must have shape (B, {net.spec.input_dim}), got {x.shape}")
    inputs, pre = [], []
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(x)
        y = x @ w.T + b
        pre.append(y)
        if i < last:
            x = np.maximum(y, 0.0)
    return BatchActivations(inputs, pre)


def _check_labels(labels: np.ndarray, n_rows: int, classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n_rows,):
        raise InvalidArgument(f"expected {n_rows} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise InvalidArgument(f"labels must lie in [0, {classes})")
    return labels.astype(np.int64)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_softmax_ce(logits: np.ndarray, labels: np.ndarray) -> float:
    """Batch-mean softmax cross-entropy."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(labels, logits.shape[0], logits.shape[1])
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(log_norm - z[np.arange(len(labels)), labels]))


def backward_from(net: DenseNetwork, acts: BatchActivations, d_logits: np.ndarray) -> GradientSet:
    """Backpropagate an arbitrary gradient of the loss w.r.t. the logits."""
    if len(acts.pre) != len(net.weights) or acts.logits.shape != np.shape(d_logits):
        raise InvalidArgument("activations do not match the network")
    L = len(net.weights)
    dW, db = [None] * L, [None] * L
    d_inputs, d_pre = [None] * L, [None] * L
    dy = np.asarray(d_logits, dtype=np.float64)
    for i in range(L - 1, -1, -1):
        if i < L - 1:
            # ReLU gate; derivative at exactly 0 taken as 0
            dy = dx * (acts.pre[i] > 0)
        d_pre[i] = dy
        dW[i] = dy.T @ acts.inputs[i]
        db[i] = dy.sum(axis=0)
        dx = dy @ net.weights[i]
        d_inputs[i] = dx
    return GradientSet(dW, db, d_inputs, d_pre)


def backward(net: DenseNetwork, acts: BatchActivations, labels: np.ndarray) -> GradientSet:
    logits = acts.logits
    labels = _check_labels(labels, logits.shape[0], logits.shape[1])
    d_logits = softmax(logits)
    d_logits[np.arange(len(labels)), labels] -= 1.0
    d_logits /= len(labels)
    return backward_from(net, acts, d_logits)


def _loss_extended(weights: list[np.ndarray], biases: list[np.ndarray], x: np.ndarray,
                   labels: np.ndarray) -> np.longdouble:
    # same chain as forward + loss_softmax_ce, in extended precision
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        y = x @ w.T + b
        x = np.maximum(y, 0) if i < last else y
    z = x - x.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    return np.mean(log_norm - z[np.arange(len(labels)), labels])


def gradcheck_finite_diff(net: DenseNetwork, batch: np.ndarray, labels: np.ndarray,
                          epsilon: float = 1e-5) -> float:
    """Max relative error between backprop and central differences over all parameters.

    The perturbed losses are evaluated in ``np.longdouble``: in float64 the
    difference quotient carries ~1e-11 absolute round-off, which swamps
    gradient entries near 1e-8. On platforms where longdouble is plain
    double that floor returns.

    Only meaningful away from ReLU kinks: with zero biases a sample whose
    previous layer is entirely dead has pre-activations exactly at 0, and a
    bias perturbation of either sign then crosses the kink.
    """
    if not epsilon > 0:
        raise InvalidArgument(f"epsilon must be positive, got {epsilon}")
    acts = forward(net, batch)
    labels = _check_labels(labels, acts.logits.shape[0], acts.logits.shape[1])
    grads = backward(net, acts, labels)
    analytic = [g for pair in zip(grads.weights, grads.biases) for g in pair]
    weights = [w.astype(np.longdouble) for w in net.weights]
    biases = [b.astype(np.longdouble) for b in net.biases]
    x = np.asarray(batch, dtype=np.longdouble)
    eps = np.longdouble(epsilon)
    params = [p for pair in zip(weights, biases) for p in pair]
    worst = 0.0
    for param, g in zip(params, analytic):
        flat, gflat = param.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = _loss_extended(weights, biases, x, labels)
            flat[j] = orig - eps
            down = _loss_extended(weights, biases, x, labels)
            flat[j] = orig
            numeric = float((up - down) / (2 * eps))
            err = abs(gflat[j] - numeric) / max(abs(gflat[j]), abs(numeric), 1e-12)
            worst = max(worst, err)
    return worst


def sgd_step(net: DenseNetwork, grads: GradientSet, lr: float) -> DenseNetwork:
    if not lr > 0:
        raise InvalidArgument(f"learning rate must be positive, got {lr}")
    if [w.shape for w in net.weights] != [g.shape for g in grads.weights]:
        raise InvalidArgument("gradient shapes do not match the network")
    return replace(
        net,
        weights=[w - lr * g for w, g in zip(net.weights, grads.weights)],
        biases=[b - lr * g for b, g in zip(net.biases, grads.biases)],
    )
