"""Theoretical and Monte Carlo variance profiles at initialization."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .nn import backward_from, forward, init_network
from .scheme import InitScheme, LayerInitPlan, NetworkSpec, build_plan

DEAD_SIGNAL_THRESHOLD = 1e-30

CSV_COLUMNS = ("layer", "theo_fwd", "theo_bwd", "emp_act_var", "emp_grad_var",
               "rel_err_fwd", "rel_err_bwd")


@dataclass
class VarianceProfile:
    """Per-layer variance ratios, theoretical and (optionally) measured.

    ``theoretical_forward[l-1]`` predicts Var[y_l] / Var[y_1];
    ``theoretical_backward[l-1]`` predicts Var[dE/dx_l] relative to the
    variance of the gradient injected at the logits.
    """

    theoretical_forward: list[float]
    theoretical_backward: list[float]
    empirical_act_var: list[float] | None = None
    empirical_grad_var: list[float] | None = None
    empirical_seed_grad_var: float | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def depth(self) -> int:
        return len(self.theoretical_forward)

    def to_dict(self) -> dict:
        return {
            "theoretical_forward": self.theoretical_forward,
            "theoretical_backward": self.theoretical_backward,
            "empirical_act_var": self.empirical_act_var,
            "empirical_grad_var": self.empirical_grad_var,
            "empirical_seed_grad_var": self.empirical_seed_grad_var,
            "metadata": self.metadata,
        }


@dataclass
class ProfileComparison:
    rel_err_fwd: list[float]
    rel_err_bwd: list[float]
    max_abs_rel_err_fwd: float
    max_abs_rel_err_bwd: float
    dead_act_layers: list[int]
    dead_grad_layers: list[int]

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def theoretical_profile(spec: NetworkSpec, plan: LayerInitPlan) -> VarianceProfile:
    if not plan.matches(spec):
        raise InvalidArgument("plan dimensions do not match the network spec")
    L = spec.depth
    wv = plan.weight_variance
    fwd = [1.0]
    for i in range(1, L):
        fwd.append(fwd[-1] * 0.5 * spec.fan_ins[i] * wv[i])
    # the output layer has no ReLU, so its factor carries no 1/2
    bwd = [spec.fan_outs[L - 1] * wv[L - 1]]
    for i in range(L - 2, -1, -1):
        bwd.append(bwd[-1] * 0.5 * spec.fan_outs[i] * wv[i])
    bwd.reverse()
    return VarianceProfile(fwd, bwd, metadata={"plan": plan.to_dict()})


def _trial(spec: NetworkSpec, plan: LayerInitPlan, seed: int, trial: int, batch: int,
           inputs: str) -> tuple[np.ndarray, np.ndarray]:
    """Per-layer (mean, variance) rows for activations, then input gradients.

    The last column of the gradient block holds the injected seed gradient.
    """
    # spawn_key keeps earlier trials fixed when the trial count changes
    ss = np.random.SeedSequence(seed, spawn_key=(trial,))
    net_seed, data_seed = (int(s) for s in ss.generate_state(2))
    net = init_network(spec, plan, net_seed)
    rng = np.random.default_rng(data_seed)
    if inputs == "normal":
        x = rng.normal(size=(batch, spec.input_dim))
    else:
        x = rng.uniform(0.0, 1.0, size=(batch, spec.input_dim))
    g = rng.normal(size=(batch, spec.layer_widths[-1]))
    acts = forward(net, x)
    grads = backward_from(net, acts, g)
    act = np.array([[y.mean(), y.var()] for y in acts.pre])
    grad = np.array([[d.mean(), d.var()] for d in grads.d_inputs + [g]])
    return act, grad


def _pooled_variance(stats: np.ndarray) -> np.ndarray:
    """Population variance over all trials from per-trial (mean, var) of equal size.

    ``stats`` has shape (trials, layers, 2).
    """
    means, variances = stats[..., 0], stats[..., 1]
    grand = means.mean(axis=0)
    return (variances + (means - grand) ** 2).mean(axis=0)


def empirical_profile(spec: NetworkSpec, scheme: InitScheme | LayerInitPlan, trials: int,
                      batch: int, seed: int, inputs: str = "normal",
                      workers: int = 1) -> VarianceProfile:
    """Monte Carlo estimate of per-layer activation and gradient variance.

    Each trial draws a fresh network and a fresh input batch, runs forward,
    then backpropagates a unit-variance Gaussian gradient injected at the
    logits. Variances are population variances pooled over units, batch
    rows and trials, with the mean removed per layer. Per-trial moments are
    combined in trial order, so the result does not depend on ``workers``. ``scheme`` may also be a
    prebuilt plan.
    """
    if trials < 1 or batch < 1:
        raise InvalidArgument(f"trials and batch must be positive, got {trials}, {batch}")
    if inputs not in ("normal", "zero_one"):
        raise InvalidArgument(f"inputs must be 'normal' or 'zero_one', got {inputs!r}")
    plan = scheme if isinstance(scheme, LayerInitPlan) else build_plan(spec, scheme)
    profile = theoretical_profile(spec, plan)

    def run(t):
        return _trial(spec, plan, seed, t, batch, inputs)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, range(trials)))
    else:
        results = [run(t) for t in range(trials)]

    act = _pooled_variance(np.array([r[0] for r in results]))
    grad = _pooled_variance(np.array([r[1] for r in results]))
    profile.empirical_act_var = [float(v) for v in act]
    profile.empirical_grad_var = [float(v) for v in grad[:-1]]
    profile.empirical_seed_grad_var = float(grad[-1])
    profile.metadata.update({"trials": trials, "batch": batch, "seed": seed, "inputs": inputs,
                             "spec": spec.to_dict()})
    return profile


def _ratio_error(num: float, den: float, theo: float) -> float:
    if den <= 0 or theo <= 0:
        return math.nan
    return num / den / theo - 1.0


def _max_abs(values: list[float]) -> float:
    finite = [abs(v) for v in values if math.isfinite(v)]
    return max(finite) if finite else math.nan


def compare_profiles(profile: VarianceProfile) -> ProfileComparison:
    """Relative error of measured vs predicted ratios, plus dead-signal flags.

    Undefined ratios (zero reference variance) are reported as NaN.
    """
    if profile.empirical_act_var is None or profile.empirical_grad_var is None \
            or profile.empirical_seed_grad_var is None:
        raise InvalidArgument("profile has no empirical fields")
    act, grad = profile.empirical_act_var, profile.empirical_grad_var
    if len(act) != profile.depth or len(grad) != profile.depth:
        raise InvalidArgument("empirical and theoretical profiles differ in depth")
    fwd = [_ratio_error(a, act[0], t) for a, t in zip(act, profile.theoretical_forward)]
    bwd = [_ratio_error(g, profile.empirical_seed_grad_var, t)
           for g, t in zip(grad, profile.theoretical_backward)]
    return ProfileComparison(
        rel_err_fwd=fwd,
        rel_err_bwd=bwd,
        max_abs_rel_err_fwd=_max_abs(fwd),
        max_abs_rel_err_bwd=_max_abs(bwd),
        dead_act_layers=[i + 1 for i, a in enumerate(act) if a < DEAD_SIGNAL_THRESHOLD],
        dead_grad_layers=[i + 1 for i, g in enumerate(grad) if g < DEAD_SIGNAL_THRESHOLD],
    )


def profile_rows(profile: VarianceProfile, comparison: ProfileComparison | None = None) -> list[list]:
    """Rows in ``CSV_COLUMNS`` order; missing empirical values are None."""
    rows = []
    for i in range(profile.depth):
        rows.append([
            i + 1,
            profile.theoretical_forward[i],
            profile.theoretical_backward[i],
            None if profile.empirical_act_var is None else profile.empirical_act_var[i],
            None if profile.empirical_grad_var is None else profile.empirical_grad_var[i],
            None if comparison is None else comparison.rel_err_fwd[i],
            None if comparison is None else comparison.rel_err_bwd[i],
        ])
    return rows
