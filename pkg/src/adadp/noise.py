"""Per-coordinate sensitivities, clipping, noise allocation, and the
analytic / Monte-Carlo privacy oracles for inhomogeneous Gaussian noise.

A mechanism that adds noise of scale sigma_i to a query whose i-th coordinate
has sensitivity s_i inherits the (epsilon, delta) guarantee of the
unit-sensitivity reference mechanism with scale sigma_star whenever

    sum_i s_i^2 / sigma_i^2  <=  1 / sigma_star^2.

The allocation rule implemented here spends that budget proportionally to a
per-coordinate prior of squared gradient magnitudes: s_i = beta sqrt(prior_i)
and sigma_i = beta sigma_star sqrt(dim * prior_i), which saturates the bound
whenever every coordinate of the prior is nonzero.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np

__all__ = [
    "ClipMode",
    "ClipSettings",
    "NoisePlan",
    "DeltaEstimate",
    "check_feasibility",
    "allocate_sigmas",
    "global_plan",
    "local_clip",
    "global_clip",
    "clipping_mode",
    "add_noise",
    "privacy_loss_variance",
    "analytic_dp_delta",
    "monte_carlo_dp_delta",
    "cosine_similarity_study",
]

FEASIBILITY_SLACK = 1e-9

_SQRT2 = math.sqrt(2.0)


class ClipMode(enum.Enum):
    LOCAL = "local"
    GLOBAL = "global"


@dataclass(frozen=True)
class ClipSettings:
    """Clipping hyperparameters.

    Attributes:
        beta: local clipping factor scaling the per-coordinate sensitivities.
        threshold: spread threshold on the prior that switches local clipping on.
        global_bound: l2-norm bound used while in global mode.
    """

    beta: float = 1.2
    threshold: float = 1e-6
    global_bound: float = 4.0

    def __post_init__(self):
        if not (self.beta > 0):
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not (self.threshold >= 0):
            raise ValueError(f"threshold must be nonnegative, got {self.threshold}")
        if not (self.global_bound > 0):
            raise ValueError(f"global_bound must be positive, got {self.global_bound}")


@dataclass(frozen=True)
class NoisePlan:
    """Per-coordinate sensitivities and noise scales for one step.

    In LOCAL mode the plan must satisfy the feasibility inequality (zero
    sensitivity coordinates are exempt and carry zero noise). In GLOBAL mode
    every scale equals global_bound * sigma_star and the stored sensitivities
    are the per-coordinate bound implied by the l2 clip.
    """

    mode: ClipMode
    sensitivities: np.ndarray
    sigmas: np.ndarray
    sigma_star: float
    global_bound: float
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "sensitivities", np.asarray(self.sensitivities, dtype=float))
        object.__setattr__(self, "sigmas", np.asarray(self.sigmas, dtype=float))
        if self.sensitivities.shape != (self.dim,) or self.sigmas.shape != (self.dim,):
            raise ValueError("sensitivities and sigmas must both have length dim")
        if np.any(self.sensitivities < 0) or np.any(self.sigmas < 0):
            raise ValueError("sensitivities and sigmas must be nonnegative")
        if not (self.sigma_star >= 0):
            raise ValueError(f"sigma_star must be nonnegative, got {self.sigma_star}")
        if self.mode is ClipMode.LOCAL:
            if self.sigma_star > 0 and not check_feasibility(
                self.sensitivities, self.sigmas, self.sigma_star
            ):
                raise ValueError("local noise plan violates the feasibility budget")
        else:
            expected = self.global_bound * self.sigma_star
            if not np.all(self.sigmas == expected):
                raise ValueError("global noise plan must use uniform sigma = bound * sigma_star")


class DeltaEstimate(NamedTuple):
    estimate: float
    std_error: float
    trials: int


def privacy_loss_variance(sensitivities, sigmas) -> float:
    """Variance H = sum_i s_i^2 / sigma_i^2 of the privacy loss variable.

    Coordinates with zero sensitivity contribute nothing regardless of their
    noise scale; a zero scale on a sensitive coordinate is an error.
    """
    s = np.asarray(sensitivities, dtype=float)
    sig = np.asarray(sigmas, dtype=float)
    if s.shape != sig.shape:
        raise ValueError(f"length mismatch: {s.shape} vs {sig.shape}")
    active = s > 0
    if np.any(sig[active] == 0):
        raise ValueError("zero noise scale on a coordinate with positive sensitivity")
    ratios = s[active] / sig[active]
    return float(np.sum(ratios * ratios))


def check_feasibility(sensitivities, sigmas, sigma_star: float, *, rel_slack: float = FEASIBILITY_SLACK) -> bool:
    """Whether sum s_i^2/sigma_i^2 <= 1/sigma_star^2, within relative slack.

    The slack absorbs round-off for allocations that meet the budget with
    analytic equality.
    """
    if not (sigma_star > 0):
        raise ValueError(f"sigma_star must be positive, got {sigma_star}")
    total = privacy_loss_variance(sensitivities, sigmas)
    return total <= (1.0 + rel_slack) / (sigma_star * sigma_star)


def allocate_sigmas(prior, settings: ClipSettings, sigma_star: float) -> NoisePlan:
    """Local-mode noise plan from a per-coordinate squared-magnitude prior.

    s_i = beta sqrt(prior_i) and sigma_i = beta sigma_star sqrt(dim prior_i).
    Zero-prior coordinates get s_i = sigma_i = 0: their clipped value is
    pinned to zero, which has no sensitivity, so adding no noise is safe and
    they drop out of the feasibility sum.
    """
    p = np.asarray(prior, dtype=float)
    if p.ndim != 1 or p.size < 1:
        raise ValueError("prior must be a nonempty 1-d array")
    if np.any(p < 0):
        raise ValueError("prior entries must be nonnegative")
    if not (sigma_star >= 0):
        raise ValueError(f"sigma_star must be nonnegative, got {sigma_star}")
    root = np.sqrt(p)
    sens = settings.beta * root
    sigmas = settings.beta * sigma_star * math.sqrt(p.size) * root
    return NoisePlan(
        mode=ClipMode.LOCAL,
        sensitivities=sens,
        sigmas=sigmas,
        sigma_star=sigma_star,
        global_bound=settings.global_bound,
        dim=p.size,
    )


def global_plan(dim: int, settings: ClipSettings, sigma_star: float) -> NoisePlan:
    """Global-mode plan: uniform sigma = global_bound * sigma_star on every coordinate."""
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    scale = settings.global_bound * sigma_star
    return NoisePlan(
        mode=ClipMode.GLOBAL,
        sensitivities=np.full(dim, settings.global_bound, dtype=float),
        sigmas=np.full(dim, scale, dtype=float),
        sigma_star=sigma_star,
        global_bound=settings.global_bound,
        dim=dim,
    )


def local_clip(grad, sensitivities) -> np.ndarray:
    """Clamp each coordinate into [-s_i, s_i]."""
    g = np.asarray(grad, dtype=float)
    s = np.asarray(sensitivities, dtype=float)
    if g.shape[-1] != s.shape[-1]:
        raise ValueError(f"length mismatch: {g.shape} vs {s.shape}")
    return np.clip(g, -s, s)


def global_clip(grad, bound: float) -> np.ndarray:
    """Rescale the whole vector to l2 norm at most `bound`, preserving direction."""
    if not (bound > 0):
        raise ValueError(f"bound must be positive, got {bound}")
    g = np.asarray(grad, dtype=float)
    norm = float(np.linalg.norm(g))
    return g / max(1.0, norm / bound)


def clipping_mode(
    prior,
    threshold: float,
    *,
    spread_of: Literal["sqrt_prior", "prior"] = "sqrt_prior",
) -> ClipMode:
    """LOCAL once the spread of the prior exceeds `threshold`, else GLOBAL.

    The spread is the population variance across coordinates of sqrt(prior);
    `spread_of="prior"` switches to the variance of the prior itself.
    """
    p = np.asarray(prior, dtype=float)
    if p.ndim != 1 or p.size < 1:
        raise ValueError("prior must be a nonempty 1-d array")
    values = np.sqrt(p) if spread_of == "sqrt_prior" else p
    return ClipMode.LOCAL if float(np.var(values)) > threshold else ClipMode.GLOBAL


def add_noise(clipped, plan: NoisePlan, rng: np.random.Generator) -> np.ndarray:
    """clipped + z with z_i ~ N(0, sigma_i^2) drawn independently.

    Coordinates are drawn in index order from the single stream `rng`, so the
    output is a deterministic function of the generator state; zero-scale
    coordinates receive exactly zero noise.
    """
    values = np.asarray(clipped, dtype=float)
    if values.shape != (plan.dim,):
        raise ValueError(f"expected a vector of length {plan.dim}, got shape {values.shape}")
    return values + rng.normal(0.0, plan.sigmas)


def _normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def analytic_dp_delta(loss_variance: float, epsilon: float) -> float:
    """Exact delta for which a Gaussian privacy-loss variable l ~ N(H/2, H)
    satisfies Pr(l >= eps) - e^eps Pr(l' <= -eps) <= delta, H = `loss_variance`.

    Equals Phi(sqrt(H)/2 - eps/sqrt(H)) - e^eps Phi(-eps/sqrt(H) - sqrt(H)/2);
    strictly increasing in H, strictly decreasing in eps. Underflow returns 0.
    """
    if loss_variance < 0:
        raise ValueError(f"loss_variance must be nonnegative, got {loss_variance}")
    if not (epsilon > 0):
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if loss_variance == 0.0:
        return 0.0
    root = math.sqrt(loss_variance)
    upper = _normal_cdf(root / 2.0 - epsilon / root)
    lower = _normal_cdf(-epsilon / root - root / 2.0)
    if lower == 0.0:
        scaled = 0.0
    else:
        # e^eps * Phi(...) evaluated in log space; the product never exceeds 1.
        scaled = math.exp(epsilon + math.log(lower))
    return max(upper - scaled, 0.0)


def monte_carlo_dp_delta(
    sensitivities,
    sigmas,
    epsilon: float,
    trials: int,
    rng: np.random.Generator,
    *,
    max_std_error: float = 1e-3,
    chunk: int = 262144,
) -> DeltaEstimate:
    """Empirical estimate of Pr(l >= eps) - e^eps Pr(l <= -eps) by sampling
    the privacy loss variable l = sum_j s_j^2/(2 sigma_j^2) + sum_j r_j s_j / sigma_j^2
    with r_j ~ N(0, sigma_j^2).

    Each trial draws one noise vector, coordinates in index order from the
    single stream `rng`. Raises if `trials` cannot bound the standard error of
    the estimate below `max_std_error` (assessed from the analytic tail
    probabilities before sampling).
    """
    if trials < 100_000:
        raise ValueError(f"trials must be at least 1e5, got {trials}")
    if not (epsilon > 0):
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    s = np.asarray(sensitivities, dtype=float)
    sig = np.asarray(sigmas, dtype=float)
    variance = privacy_loss_variance(s, sig)
    if variance == 0.0:
        return DeltaEstimate(0.0, 0.0, trials)

    root = math.sqrt(variance)
    p_upper = _normal_cdf(root / 2.0 - epsilon / root)
    p_lower = _normal_cdf(-epsilon / root - root / 2.0)
    scale = math.exp(epsilon)
    predicted_var = (
        p_upper * (1.0 - p_upper)
        + scale * scale * p_lower * (1.0 - p_lower)
        + 2.0 * scale * p_upper * p_lower
    )
    if math.sqrt(predicted_var / trials) > max_std_error:
        raise ValueError(
            f"{trials} trials cannot bound the standard error below {max_std_error}; "
            "increase trials"
        )

    mean = variance / 2.0
    weights = np.where(s > 0, np.divide(s, sig, out=np.zeros_like(s), where=sig > 0), 0.0)
    hits_upper = 0
    hits_lower = 0
    remaining = trials
    while remaining > 0:
        block = min(chunk, remaining)
        draws = rng.normal(0.0, sig, size=(block, sig.size))
        losses = mean + draws @ (weights / np.where(sig > 0, sig, 1.0))
        hits_upper += int(np.count_nonzero(losses >= epsilon))
        hits_lower += int(np.count_nonzero(losses <= -epsilon))
        remaining -= block
    p_up = hits_upper / trials
    p_lo = hits_lower / trials
    estimate = p_up - scale * p_lo
    std_error = math.sqrt(
        (p_up * (1.0 - p_up) + scale * scale * p_lo * (1.0 - p_lo) + 2.0 * scale * p_up * p_lo)
        / trials
    )
    return DeltaEstimate(estimate, std_error, trials)


def cosine_similarity_study(values, sigmas, trials: int, rng: np.random.Generator) -> float:
    """Mean over trials of the cosine similarity between `values` + noise and
    `values`, with noise z_i ~ N(0, sigma_i^2).

    One fresh noise vector per trial, coordinates drawn in index order from
    the single stream `rng`, so the result is deterministic given the seed.
    """
    f = np.asarray(values, dtype=float)
    if f.ndim != 1 or f.size < 1:
        raise ValueError("values must be a nonempty 1-d array")
    norm = float(np.linalg.norm(f))
    if norm == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    sig = np.asarray(sigmas, dtype=float)
    if sig.shape != f.shape:
        raise ValueError(f"length mismatch: {f.shape} vs {sig.shape}")
    noisy = f + rng.normal(0.0, sig, size=(trials, f.size))
    cosines = (noisy @ f) / (np.linalg.norm(noisy, axis=1) * norm)
    return float(np.mean(cosines))
