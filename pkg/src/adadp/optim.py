"""Training loops and single steps: the adaptive DP optimizer, a DP-SGD
baseline, and their non-private counterparts (SGD, RMSProp), plus the
single-component ablations (adaptive learning rate only / adaptive noise
only).

Per step the adaptive optimizer: picks the clipping mode from the spread of
the sensitivity prior; clips every per-example gradient (per-coordinate while
local, by l2 norm while global); sums the clipped gradients, adds one noise
vector to the sum, and divides by the lot size; updates the two running
averages; then scales the step per-coordinate by the root of the noisy-square
average.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .noise import (
    ClipMode,
    ClipSettings,
    NoisePlan,
    add_noise,
    allocate_sigmas,
    clipping_mode,
    global_clip,
    global_plan,
    local_clip,
)
from .seeding import SeedBundle

__all__ = [
    "PriorSource",
    "Algorithm",
    "TrainConfig",
    "EmaState",
    "StepRecord",
    "TrainResult",
    "StepContext",
    "sample_lot",
    "adadp_step",
    "dpsgd_step",
    "rmsprop_step",
    "sgd_step",
    "noise_plan_for_state",
    "train",
]

DIVERGENCE_FACTOR = 1e6


class PriorSource(enum.Enum):
    """Which gradient feeds the sensitivity prior: the raw lot mean, or the
    noisy gradient actually applied."""

    RAW_GRADIENT = "raw"
    NOISY_GRADIENT = "noisy"


class Algorithm(enum.Enum):
    ADADP = "adadp"
    DPSGD = "dpsgd"
    SGD = "sgd"
    RMSPROP = "rmsprop"
    ADAL = "adal"   # adaptive learning rate only, uniform noise
    ADAN = "adan"   # adaptive noise only, fixed learning rate


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run.

    gamma weighs the new squared noisy gradient in the learning-rate average;
    gamma_prime weighs the OLD value in the sensitivity prior average (the two
    recursions are written with opposite conventions). sigma_star = 0 switches
    all noise off for diagnostics. `noise_per_example` adds one noise vector
    per example instead of per lot (not covered by the accountant; comparison
    only). `prior_spread_of` picks whether the mode switch looks at the spread
    of sqrt(prior) or of the prior itself.
    """

    lot_size: int
    dataset_size: int
    steps: int
    sigma_star: float
    eta: float = 0.002
    clip: ClipSettings = field(default_factory=ClipSettings)
    gamma: float = 0.1
    gamma_prime: float = 0.9
    eps0: float = 1e-8
    prior_source: PriorSource = PriorSource.RAW_GRADIENT
    noise_per_example: bool = False
    prior_spread_of: str = "sqrt_prior"

    def __post_init__(self):
        if not 1 <= self.lot_size <= self.dataset_size:
            raise ValueError(
                f"need 1 <= lot_size <= dataset_size, got {self.lot_size} and {self.dataset_size}"
            )
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if not (self.sigma_star >= 0):
            raise ValueError(f"sigma_star must be >= 0, got {self.sigma_star}")
        if not (self.eta > 0):
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 < self.gamma_prime <= 1.0:
            raise ValueError(f"gamma_prime must lie in (0, 1], got {self.gamma_prime}")
        if not (self.eps0 > 0):
            raise ValueError(f"eps0 must be positive, got {self.eps0}")
        if self.prior_spread_of not in ("sqrt_prior", "prior"):
            raise ValueError(f"unknown prior_spread_of {self.prior_spread_of!r}")

    @property
    def sampling_ratio(self) -> float:
        return self.lot_size / self.dataset_size


@dataclass(frozen=True)
class EmaState:
    """The two running averages and the step counter."""

    lr_ema: np.ndarray       # average of squared noisy gradients
    prior_ema: np.ndarray    # average of squared raw gradients (sensitivity prior)
    step: int

    def __post_init__(self):
        object.__setattr__(self, "lr_ema", np.asarray(self.lr_ema, dtype=float))
        object.__setattr__(self, "prior_ema", np.asarray(self.prior_ema, dtype=float))
        if self.lr_ema.shape != self.prior_ema.shape or self.lr_ema.ndim != 1:
            raise ValueError("lr_ema and prior_ema must be 1-d arrays of equal length")
        if np.any(self.lr_ema < 0) or np.any(self.prior_ema < 0):
            raise ValueError("running averages must be nonnegative")
        if self.step < 0:
            raise ValueError(f"step must be >= 0, got {self.step}")

    @classmethod
    def zeros(cls, dim: int) -> "EmaState":
        return cls(np.zeros(dim), np.zeros(dim), 0)


@dataclass(frozen=True)
class StepRecord:
    """What one step did: the mode, the applied gradient, and where it landed."""

    step: int
    mode: Optional[ClipMode]
    params_after: np.ndarray
    noisy_grad: np.ndarray
    loss: float
    sigma_summary: tuple[float, float, float]       # (min, mean, max) noise scale


@dataclass(frozen=True)
class TrainResult:
    records: list[StepRecord]
    final_params: np.ndarray
    diverged: bool


@dataclass(frozen=True)
class StepContext:
    """Handed to a training observer after each step.

    `prev_state` is the state the step read (its prior drives the noise
    plan), `state` the state it produced; `plan` is None for algorithms that
    add no noise; `lot_mean` is the raw lot-averaged gradient.
    """

    record: StepRecord
    prev_state: EmaState
    state: EmaState
    plan: Optional[NoisePlan]
    lot_mean: np.ndarray


def sample_lot(dataset_size: int, lot_size: int, rng: np.random.Generator) -> np.ndarray:
    """A uniformly random subset of exactly lot_size distinct indices."""
    if not 1 <= lot_size <= dataset_size:
        raise ValueError(f"need 1 <= lot_size <= dataset_size, got {lot_size}, {dataset_size}")
    return rng.choice(dataset_size, size=lot_size, replace=False)


def _check_grads(per_example_grads, dim: int) -> np.ndarray:
    grads = np.asarray(per_example_grads, dtype=float)
    if grads.ndim != 2 or grads.shape[1] != dim:
        raise ValueError(f"per-example gradients must have shape (L, {dim}), got {grads.shape}")
    if grads.shape[0] < 1:
        raise ValueError("need at least one example per lot")
    if not np.all(np.isfinite(grads)):
        raise ValueError("non-finite gradient encountered")
    return grads


def noise_plan_for_state(state: EmaState, config: TrainConfig) -> NoisePlan:
    """The plan the adaptive optimizer would use at this state."""
    mode = clipping_mode(state.prior_ema, config.clip.threshold, spread_of=config.prior_spread_of)
    if mode is ClipMode.LOCAL:
        return allocate_sigmas(state.prior_ema, config.clip, config.sigma_star)
    return global_plan(state.prior_ema.size, config.clip, config.sigma_star)


def _sigma_summary(plan: NoisePlan) -> tuple[float, float, float]:
    return (float(plan.sigmas.min()), float(plan.sigmas.mean()), float(plan.sigmas.max()))


def adadp_step(
    params: np.ndarray,
    state: EmaState,
    per_example_grads,
    config: TrainConfig,
    rng: np.random.Generator,
    *,
    loss: float = math.nan,
    adaptive_lr: bool = True,
) -> tuple[np.ndarray, EmaState, StepRecord]:
    """One adaptive differentially private step.

    `adaptive_lr=False` drops the per-coordinate step scaling (the
    adaptive-noise-only ablation) while keeping clipping and noise identical.
    """
    params = np.asarray(params, dtype=float)
    grads = _check_grads(per_example_grads, params.size)
    if state.lr_ema.size != params.size:
        raise ValueError("state dimension does not match parameters")
    lot = grads.shape[0]

    plan = noise_plan_for_state(state, config)
    if plan.mode is ClipMode.LOCAL:
        clipped = local_clip(grads, plan.sensitivities)
    else:
        clipped = np.vstack([global_clip(row, config.clip.global_bound) for row in grads])

    if config.noise_per_example:
        noisy_sum = np.sum([add_noise(row, plan, rng) for row in clipped], axis=0)
    else:
        noisy_sum = add_noise(clipped.sum(axis=0), plan, rng)
    noisy_grad = noisy_sum / lot

    raw_mean = grads.sum(axis=0) / lot
    prior_input = noisy_grad if config.prior_source is PriorSource.NOISY_GRADIENT else raw_mean

    lr_ema = (1.0 - config.gamma) * state.lr_ema + config.gamma * noisy_grad ** 2
    prior_ema = config.gamma_prime * state.prior_ema + (1.0 - config.gamma_prime) * prior_input ** 2

    if adaptive_lr:
        update = noisy_grad / np.sqrt(lr_ema + config.eps0)
    else:
        update = noisy_grad
    new_params = params - config.eta * update

    new_state = EmaState(lr_ema, prior_ema, state.step + 1)
    record = StepRecord(
        step=state.step + 1,
        mode=plan.mode,
        params_after=new_params.copy(),
        noisy_grad=noisy_grad,
        loss=float(loss),
        sigma_summary=_sigma_summary(plan),
    )
    return new_params, new_state, record


def dpsgd_step(
    params: np.ndarray,
    state: EmaState,
    per_example_grads,
    config: TrainConfig,
    rng: np.random.Generator,
    *,
    loss: float = math.nan,
) -> tuple[np.ndarray, StepRecord]:
    """DP-SGD: clip each per-example gradient to l2 norm C, sum, add one
    N(0, C^2 sigma_star^2) vector, divide by the lot size, take a plain step."""
    params = np.asarray(params, dtype=float)
    grads = _check_grads(per_example_grads, params.size)
    lot = grads.shape[0]
    plan = global_plan(params.size, config.clip, config.sigma_star)
    clipped = np.vstack([global_clip(row, config.clip.global_bound) for row in grads])
    noisy_grad = add_noise(clipped.sum(axis=0), plan, rng) / lot
    new_params = params - config.eta * noisy_grad
    record = StepRecord(
        step=state.step + 1,
        mode=ClipMode.GLOBAL,
        params_after=new_params.copy(),
        noisy_grad=noisy_grad,
        loss=float(loss),
        sigma_summary=_sigma_summary(plan),
    )
    return new_params, record


def rmsprop_step(
    params: np.ndarray,
    state: EmaState,
    grad,
    config: TrainConfig,
) -> tuple[np.ndarray, EmaState]:
    """Non-private adaptive step: average the squared gradient, scale by its root."""
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient encountered")
    lr_ema = (1.0 - config.gamma) * state.lr_ema + config.gamma * grad ** 2
    new_params = params - config.eta * grad / np.sqrt(lr_ema + config.eps0)
    return new_params, EmaState(lr_ema, state.prior_ema, state.step + 1)


def sgd_step(params: np.ndarray, grad, config: TrainConfig) -> np.ndarray:
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient encountered")
    return np.asarray(params, dtype=float) - config.eta * grad


def _adal_step(params, state, per_example_grads, config, rng, *, loss=math.nan):
    """Global clipping and uniform noise as in DP-SGD, but with the adaptive
    per-coordinate learning rate."""
    params = np.asarray(params, dtype=float)
    grads = _check_grads(per_example_grads, params.size)
    lot = grads.shape[0]
    plan = global_plan(params.size, config.clip, config.sigma_star)
    clipped = np.vstack([global_clip(row, config.clip.global_bound) for row in grads])
    noisy_grad = add_noise(clipped.sum(axis=0), plan, rng) / lot
    lr_ema = (1.0 - config.gamma) * state.lr_ema + config.gamma * noisy_grad ** 2
    new_params = params - config.eta * noisy_grad / np.sqrt(lr_ema + config.eps0)
    new_state = EmaState(lr_ema, state.prior_ema, state.step + 1)
    record = StepRecord(
        step=state.step + 1,
        mode=ClipMode.GLOBAL,
        params_after=new_params.copy(),
        noisy_grad=noisy_grad,
        loss=float(loss),
        sigma_summary=_sigma_summary(plan),
    )
    return new_params, new_state, record


def _lot_for(objective, data, config, rngs):
    """Per-example gradient closure for one step; analytic objectives are a
    single full-batch example."""
    if data is None:
        def pull(params):
            value, grad = objective.value_and_grad(params)
            return value, grad[None, :], grad
        return pull

    def pull(params):
        indices = sample_lot(config.dataset_size, config.lot_size, rngs.lot)
        features, labels = data.subset(indices)
        grads = objective.per_example_grads(params, features, labels)
        return objective.loss(params, features, labels), grads, grads.mean(axis=0)

    return pull


def train(
    objective,
    data,
    config: TrainConfig,
    algorithm: Algorithm,
    rngs: SeedBundle,
    *,
    initial_params: Optional[np.ndarray] = None,
    observer=None,
) -> TrainResult:
    """Run `config.steps` optimization steps and record every one.

    `data=None` treats the objective as a deterministic full-batch function
    (analytic surfaces); otherwise a fresh lot is drawn per step. Aborts early
    (diverged=True) when the loss stops being finite or exceeds 1e6 times its
    initial magnitude. `observer`, when given, is called with a StepContext
    after every step.
    """
    if initial_params is not None:
        params = np.array(initial_params, dtype=float)
    elif data is None:
        params = np.array(objective.default_start, dtype=float)
    else:
        params = objective.init_params(rngs.init)
    dim = params.size
    state = EmaState.zeros(dim)
    pull = _lot_for(objective, data, config, rngs)
    records: list[StepRecord] = []
    initial_magnitude = None
    diverged = False

    for _ in range(config.steps):
        loss, grads, lot_mean = pull(params)
        if initial_magnitude is None:
            initial_magnitude = max(abs(loss), 1.0)
        if not math.isfinite(loss) or abs(loss) > DIVERGENCE_FACTOR * initial_magnitude:
            diverged = True
            break
        prev_state = state
        plan: Optional[NoisePlan] = None
        if algorithm is Algorithm.ADADP:
            plan = noise_plan_for_state(state, config)
            params, state, record = adadp_step(params, state, grads, config, rngs.noise, loss=loss)
        elif algorithm is Algorithm.ADAN:
            plan = noise_plan_for_state(state, config)
            params, state, record = adadp_step(
                params, state, grads, config, rngs.noise, loss=loss, adaptive_lr=False
            )
        elif algorithm is Algorithm.ADAL:
            plan = global_plan(dim, config.clip, config.sigma_star)
            params, state, record = _adal_step(params, state, grads, config, rngs.noise, loss=loss)
        elif algorithm is Algorithm.DPSGD:
            plan = global_plan(dim, config.clip, config.sigma_star)
            params, record = dpsgd_step(params, state, grads, config, rngs.noise, loss=loss)
            state = EmaState(state.lr_ema, state.prior_ema, state.step + 1)
        elif algorithm is Algorithm.RMSPROP:
            params, state = rmsprop_step(params, state, lot_mean, config)
            record = StepRecord(
                step=state.step,
                mode=None,
                params_after=params.copy(),
                noisy_grad=lot_mean,
                loss=float(loss),
                sigma_summary=(0.0, 0.0, 0.0),
            )
        elif algorithm is Algorithm.SGD:
            params = sgd_step(params, lot_mean, config)
            state = EmaState(state.lr_ema, state.prior_ema, state.step + 1)
            record = StepRecord(
                step=state.step,
                mode=None,
                params_after=params.copy(),
                noisy_grad=lot_mean,
                loss=float(loss),
                sigma_summary=(0.0, 0.0, 0.0),
            )
        else:
            raise ValueError(f"unknown algorithm {algorithm}")
        records.append(record)
        if observer is not None:
            observer(StepContext(record=record, prev_state=prev_state, state=state, plan=plan, lot_mean=lot_mean))

    return TrainResult(records=records, final_params=params, diverged=diverged)
