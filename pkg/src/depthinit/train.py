"""Minibatch SGD training with per-epoch bookkeeping."""
from __future__ import annotations

import math

import numpy as np

from .data import Dataset
from .errors import Divergence, InvalidArgument
from .nn import DenseNetwork, backward, forward, init_network, loss_softmax_ce, sgd_step
from .scheme import InitScheme, NetworkSpec, build_plan


def derive_seeds(seed: int) -> tuple[int, int]:
    """Independent (init, data-order) seeds from one master seed."""
    init_ss, order_ss = np.random.SeedSequence(seed).spawn(2)
    return int(init_ss.generate_state(1)[0]), int(order_ss.generate_state(1)[0])


def evaluate(net: DenseNetwork, data: Dataset) -> tuple[float, float]:
    logits = forward(net, data.features).logits
    loss = loss_softmax_ce(logits, data.labels)
    acc = float(np.mean(np.argmax(logits, axis=1) == data.labels))
    return loss, acc


def layer_grad_variance(net: DenseNetwork, data: Dataset) -> list[float]:
    """Population variance of each layer's weight gradient on the full set."""
    grads = backward(net, forward(net, data.features), data.labels)
    return [float(np.var(g)) for g in grads.weights]


def train(spec: NetworkSpec, scheme: InitScheme, data: Dataset, epochs: int, lr: float,
          batch_size: int, seed: int) -> dict:
    if epochs < 1 or batch_size < 1:
        raise InvalidArgument("epochs and batch size must be positive")
    if not lr > 0:
        raise InvalidArgument(f"learning rate must be positive, got {lr}")
    if data.dims != spec.input_dim or data.num_classes != spec.layer_widths[-1]:
        raise InvalidArgument(
            f"network ({spec.input_dim} in, {spec.layer_widths[-1]} out) does not fit data "
            f"({data.dims} features, {data.num_classes} classes)")

    init_seed, order_seed = derive_seeds(seed)
    plan = build_plan(spec, scheme)
    net = init_network(spec, plan, init_seed)
    order_rng = np.random.default_rng(order_seed)

    checkpoints = sorted({0, epochs // 2, epochs})
    grad_var = []

    def record(epoch: int, loss: float) -> None:
        if not math.isfinite(loss):
            raise Divergence(f"non-finite loss {loss} at epoch {epoch}")
        if epoch in checkpoints:
            grad_var.append({"epoch": epoch, "per_layer": layer_grad_variance(net, data)})

    loss0, acc0 = evaluate(net, data)
    record(0, loss0)
    history = []
    n = len(data)
    for epoch in range(1, epochs + 1):
        order = order_rng.permutation(n)
        # overflow shows up as a non-finite loss below, reported as Divergence
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, batch_size):
                idx = order[start:start + batch_size]
                xb, yb = data.features[idx], data.labels[idx]
                net = sgd_step(net, backward(net, forward(net, xb), yb), lr)
            loss, acc = evaluate(net, data)
        record(epoch, loss)
        history.append({"epoch": epoch, "loss": loss, "accuracy": acc})

    return {
        "k": plan.k,
        "initial": {"loss": loss0, "accuracy": acc0},
        "epochs": history,
        "grad_var": grad_var,
        "final_weight_var": [float(np.var(w)) for w in net.weights],
    }
