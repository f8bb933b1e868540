"""Initialization schemes and the per-layer variance plan.

Layers are indexed 1..L as in the variance recursions; internally every
per-layer tuple is 0-based, so layer ``l`` lives at index ``l - 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

import numpy as np

from .errors import InvalidArgument, NoValidK, UnsupportedConfiguration


class Distribution(str, Enum):
    NORMAL = "normal"
    UNIFORM = "uniform"


class FanMode(str, Enum):
    FAN_IN = "fan_in"
    FAN_OUT = "fan_out"


class BaseMode(str, Enum):
    HE_FAN_IN = "he_fan_in"
    HE_FAN_OUT = "he_fan_out"
    GLOROT = "glorot"


class Direction(str, Enum):
    INCREASING = "increasing"
    DECREASING = "decreasing"


class PropagationDirection(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


@dataclass(frozen=True)
class NetworkSpec:
    """Fully connected ReLU network shape.

    ``layer_widths[l - 1]`` is the number of units of layer ``l``; the last
    entry is the output layer.
    """

    input_dim: int
    layer_widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if int(self.input_dim) < 1:
            raise InvalidArgument(f"input_dim must be positive, got {self.input_dim}")
        if len(self.layer_widths) < 2:
            raise InvalidArgument("a network needs at least 2 layers")
        if any(w < 1 for w in self.layer_widths):
            raise InvalidArgument(f"layer widths must be positive: {self.layer_widths}")
        if self.activation != "relu":
            raise InvalidArgument(f"unsupported activation {self.activation!r}")

    @classmethod
    def uniform(cls, depth: int, width: int, input_dim: int | None = None,
                output_dim: int | None = None) -> NetworkSpec:
        widths = [width] * depth
        if output_dim is not None:
            widths[-1] = output_dim
        return cls(input_dim=width if input_dim is None else input_dim, layer_widths=tuple(widths))

    @property
    def depth(self) -> int:
        return len(self.layer_widths)

    @property
    def fan_ins(self) -> tuple[int, ...]:
        return (self.input_dim,) + self.layer_widths[:-1]

    @property
    def fan_outs(self) -> tuple[int, ...]:
        return self.layer_widths

    def fan_in(self, l: int) -> int:
        return self.fan_ins[l - 1]

    def fan_out(self, l: int) -> int:
        return self.fan_outs[l - 1]

    def hidden_width(self) -> int | None:
        """Common width of layers 1..L-1, or None when they differ."""
        hidden = set(self.layer_widths[:-1])
        return hidden.pop() if len(hidden) == 1 else None

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "layer_widths": list(self.layer_widths),
                "activation": self.activation}


# -- schemes -----------------------------------------------------------------

def _check_variance(v: float) -> None:
    if not (v > 0 and math.isfinite(v)):
        raise InvalidArgument(f"target variance must be positive and finite, got {v}")


@dataclass(frozen=True)
class Glorot:
    distribution: Distribution = Distribution.NORMAL

    def to_dict(self) -> dict:
        return {"kind": "glorot", "distribution": self.distribution.value}


@dataclass(frozen=True)
class He:
    distribution: Distribution = Distribution.NORMAL
    fan_mode: FanMode = FanMode.FAN_OUT

    def to_dict(self) -> dict:
        return {"kind": "he", "distribution": self.distribution.value,
                "fan_mode": self.fan_mode.value}


@dataclass(frozen=True)
class ConstantScaled:
    variance: float
    distribution: Distribution = Distribution.NORMAL
    fan_mode: FanMode = FanMode.FAN_OUT

    def __post_init__(self):
        _check_variance(self.variance)

    def to_dict(self) -> dict:
        return {"kind": "const", "variance": self.variance,
                "distribution": self.distribution.value, "fan_mode": self.fan_mode.value}


@dataclass(frozen=True)
class DepthwiseLog:
    """Logarithmic depth scaling.

    Exactly one of ``k`` (explicit crossing depth) or ``variance`` (target
    network gain, K solved from it) must be given.
    """

    k: float | None = None
    variance: float | None = None
    shift: int = 0
    direction: Direction = Direction.INCREASING
    distribution: Distribution = Distribution.NORMAL
    fan_mode: FanMode = FanMode.FAN_OUT

    def __post_init__(self):
        if (self.k is None) == (self.variance is None):
            raise InvalidArgument("DepthwiseLog needs exactly one of k or variance")
        if self.k is not None and not self.k > 1:
            raise InvalidArgument(f"K must exceed 1, got {self.k}")
        if self.variance is not None:
            _check_variance(self.variance)
        if int(self.shift) != self.shift or self.shift < 0:
            raise InvalidArgument(f"shift must be a non-negative integer, got {self.shift}")

    def to_dict(self) -> dict:
        return {"kind": "depthwise", "k": self.k, "variance": self.variance,
                "shift": self.shift, "direction": self.direction.value,
                "distribution": self.distribution.value, "fan_mode": self.fan_mode.value}


InitScheme = Union[Glorot, He, ConstantScaled, DepthwiseLog]


def scheme_from_dict(d: dict) -> InitScheme:
    kind = d.get("kind")
    dist = Distribution(d.get("distribution", "normal"))
    fan_mode = FanMode(d.get("fan_mode", "fan_out"))
    if kind == "glorot":
        return Glorot(dist)
    if kind == "he":
        return He(dist, fan_mode)
    if kind == "const":
        return ConstantScaled(float(d["variance"]), dist, fan_mode)
    if kind == "depthwise":
        return DepthwiseLog(k=d.get("k"), variance=d.get("variance"), shift=int(d.get("shift", 0)),
                            direction=Direction(d.get("direction", "increasing")),
                            distribution=dist, fan_mode=fan_mode)
    raise InvalidArgument(f"unknown scheme kind {kind!r}")


# -- the plan ----------------------------------------------------------------

@dataclass(frozen=True)
class LayerInitPlan:
    """Per-layer ``weight_variance = alpha * beta`` and how to sample it."""

    alpha: tuple[float, ...]
    beta: tuple[float, ...]
    weight_variance: tuple[float, ...]
    fan_in: tuple[int, ...]
    fan_out: tuple[int, ...]
    distribution: Distribution
    k: float | None = None
    scheme: dict = field(default_factory=dict)

    @property
    def depth(self) -> int:
        return len(self.weight_variance)

    @property
    def scale(self) -> tuple[float, ...]:
        """Std (normal) or half-width (uniform) per layer."""
        if self.distribution is Distribution.NORMAL:
            return tuple(math.sqrt(v) for v in self.weight_variance)
        return tuple(math.sqrt(3.0 * v) for v in self.weight_variance)

    def matches(self, spec: NetworkSpec) -> bool:
        return self.fan_in == spec.fan_ins and self.fan_out == spec.fan_outs

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "distribution": self.distribution.value,
            "k": self.k,
            "alpha": list(self.alpha),
            "beta": list(self.beta),
            "weight_variance": list(self.weight_variance),
        }


def base_variance(fan_in: int, fan_out: int, mode: BaseMode | str) -> float:
    if fan_in < 1 or fan_out < 1:
        raise InvalidArgument(f"fan counts must be positive, got ({fan_in}, {fan_out})")
    mode = BaseMode(mode)
    if mode is BaseMode.HE_FAN_IN:
        return 2.0 / fan_in
    if mode is BaseMode.HE_FAN_OUT:
        return 2.0 / fan_out
    return 2.0 / (fan_in + fan_out)


def beta(l: int, k: float, alpha: float, c: int = 0) -> float:
    """Depth scale ``alpha ** (log_K(l + c) ** -1 - 1)``.

    Equals 1 exactly at ``l + c == k``, is below 1 for shallower layers and
    above 1 for deeper ones.
    """
    base = l + c
    if base <= 1:
        raise InvalidArgument(f"log base l + c must exceed 1, got {base}")
    if not k > 1:
        raise InvalidArgument(f"K must exceed 1, got {k}")
    if not 0 < alpha < 1:
        raise InvalidArgument(f"alpha must lie in (0, 1), got {alpha}")
    return alpha ** (math.log(k) / math.log(base) - 1.0)


def log_inverse_sum(L: int, shift: int = 0) -> float:
    """Sum of ``1 / ln(l + shift)`` for l = 2..L."""
    if L < 2:
        raise InvalidArgument(f"L must be at least 2, got {L}")
    if shift < 0:
        raise InvalidArgument(f"shift must be non-negative, got {shift}")
    return math.fsum(1.0 / math.log(l + shift) for l in range(2, L + 1))


def solve_k(L: int, n: int, V: float, shift: int = 0) -> float:
    """K such that the depth-scaled betas multiply to the target gain V.

    Solves ``sum_{l=2}^{L} log_{l+shift} K = log_{2/n} V + (L - 1)`` with
    ``alpha = 2/n``.
    """
    if L < 2:
        raise InvalidArgument(f"L must be at least 2, got {L}")
    if shift < 0:
        raise InvalidArgument(f"shift must be non-negative, got {shift}")
    if n <= 2:
        raise UnsupportedConfiguration(f"width n={n} gives alpha = 2/n >= 1; need n >= 3")
    _check_variance(V)
    rhs = math.log(V) / math.log(2.0 / n) + (L - 1)
    if rhs <= 0:
        raise NoValidK(
            f"log_(2/n) V + (L - 1) = {rhs:.6g} <= 0 for L={L}, n={n}, V={V}; "
            f"V must be below (n/2)^(L-1) = {(n / 2) ** (L - 1):.6g}"
        )
    return math.exp(rhs / log_inverse_sum(L, shift))


def _alphas(spec: NetworkSpec, scheme: InitScheme) -> list[float]:
    if isinstance(scheme, Glorot):
        mode = BaseMode.GLOROT
    elif scheme.fan_mode is FanMode.FAN_IN:
        mode = BaseMode.HE_FAN_IN
    else:
        mode = BaseMode.HE_FAN_OUT
    return [base_variance(fi, fo, mode) for fi, fo in zip(spec.fan_ins, spec.fan_outs)]


def build_plan(spec: NetworkSpec, scheme: InitScheme) -> LayerInitPlan:
    L = spec.depth
    alphas = _alphas(spec, scheme)
    betas = [1.0] * L
    k = None

    if isinstance(scheme, ConstantScaled):
        b = scheme.variance ** (1.0 / (L - 1))
        betas[1:] = [b] * (L - 1)
    elif isinstance(scheme, DepthwiseLog):
        if scheme.k is not None:
            k = float(scheme.k)
        else:
            n = spec.hidden_width()
            if n is None:
                raise UnsupportedConfiguration(
                    "solving K from V needs uniform hidden widths; pass an explicit K instead")
            k = solve_k(L, n, scheme.variance, scheme.shift)
        for l in range(2, L + 1):
            # depth-scale base uses the layer fan-in, i.e. the hidden width n
            n_l = spec.fan_in(l)
            if n_l <= 2:
                raise UnsupportedConfiguration(f"layer {l} fan-in {n_l} gives 2/n >= 1")
            betas[l - 1] = beta(l, k, 2.0 / n_l, scheme.shift)
        if scheme.direction is Direction.DECREASING:
            betas[1:] = betas[1:][::-1]

    return LayerInitPlan(
        alpha=tuple(alphas),
        beta=tuple(betas),
        weight_variance=tuple(a * b for a, b in zip(alphas, betas)),
        fan_in=spec.fan_ins,
        fan_out=spec.fan_outs,
        distribution=scheme.distribution,
        k=k,
        scheme=scheme.to_dict(),
    )


def gain_product(plan: LayerInitPlan, spec: NetworkSpec,
                 direction: PropagationDirection | str = PropagationDirection.FORWARD) -> float:
    """Product over l = 2..L of ``(1/2) * n * Var[w_l]``.

    ``n`` is the fan-in for the forward gain and the fan-out for the
    backward gain.
    """
    if not plan.matches(spec):
        raise InvalidArgument("plan dimensions do not match the network spec")
    fans = spec.fan_ins if PropagationDirection(direction) is PropagationDirection.FORWARD \
        else spec.fan_outs
    return math.prod(0.5 * fans[i] * plan.weight_variance[i] for i in range(1, spec.depth))


def sample_matrix(rng: np.random.Generator, rows: int, cols: int, variance: float,
                  distribution: Distribution | str) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise InvalidArgument(f"matrix shape must be positive, got ({rows}, {cols})")
    if not variance >= 0:
        raise InvalidArgument(f"variance must be non-negative, got {variance}")
    if Distribution(distribution) is Distribution.NORMAL:
        return rng.normal(0.0, math.sqrt(variance), size=(rows, cols))
    half_width = math.sqrt(3.0 * variance)
    return rng.uniform(-half_width, half_width, size=(rows, cols))
