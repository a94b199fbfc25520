"""Config-driven experiment runners behind the CLI.

Each experiment kind has a frozen config dataclass; `load_config` builds one
from a mapping and rejects unknown keys by name. Runners return JSON-ready
report dicts and, when the config names an output directory, also write
plot-ready CSV series plus a JSON summary whose bytes depend only on the
config (identical seeds give identical files).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import reports
from .accountant import (
    DEFAULT_ALPHAS,
    MechanismParams,
    PrivacySpec,
    calibrate_sigma,
    delta_for_epsilon,
    epsilon_for_delta,
    subsampled_rdp,
)
from .datasets import Dataset, load_idx, pca_project, synthetic_classification
from .noise import analytic_dp_delta, cosine_similarity_study, monte_carlo_dp_delta, privacy_loss_variance
from .objectives import MlpObjective, suite_function
from .optim import Algorithm, ClipSettings, PriorSource, TrainConfig, train
from .seeding import SeedBundle

__all__ = [
    "ConfigError",
    "NumericalFailure",
    "AccountantConfig",
    "CalibrateConfig",
    "CosineConfig",
    "OracleConfig",
    "TrajectoryConfig",
    "TrainingRunConfig",
    "SweepConfig",
    "CONFIG_TYPES",
    "load_config",
    "trajectory_distance",
    "run_accountant",
    "run_calibrate",
    "run_cosine",
    "run_oracle",
    "run_trajectory",
    "run_training",
    "run_sweep",
]


class ConfigError(ValueError):
    """Bad experiment configuration: unknown key or out-of-range value."""


class NumericalFailure(RuntimeError):
    """Overflow or divergence while running an experiment."""


@dataclass(frozen=True)
class AccountantConfig:
    sigma_star: Optional[float] = None
    sampling_ratio: float = 0.01
    steps: int = 1
    delta: Optional[float] = None
    epsilon: Optional[float] = None
    alpha_min: int = 2
    alpha_max: int = 64
    pair_term: str = "expm1"
    seed: int = 0
    out: Optional[str] = None

    def __post_init__(self):
        if self.alpha_min < 2 or self.alpha_max < self.alpha_min:
            raise ConfigError(f"alpha range [{self.alpha_min}, {self.alpha_max}] is invalid")
        if self.delta is None and self.epsilon is None:
            raise ConfigError("accountant needs delta (for epsilon mode) or epsilon (for delta mode)")

    @property
    def alphas(self) -> range:
        return range(self.alpha_min, self.alpha_max + 1)


@dataclass(frozen=True)
class CalibrateConfig:
    epsilon: float = 1.0
    delta: float = 1e-5
    sampling_ratio: float = 0.01
    steps: int = 1
    alpha_min: int = 2
    alpha_max: int = 64
    pair_term: str = "expm1"
    seed: int = 0
    out: Optional[str] = None

    @property
    def alphas(self) -> range:
        return range(self.alpha_min, self.alpha_max + 1)


@dataclass(frozen=True)
class CosineConfig:
    values: tuple[float, ...] = (10.0, 5.0)
    sensitivities: tuple[float, ...] = (12.0, 6.0)
    sigma_sets: tuple[tuple[float, ...], ...] = ((17.0, 8.5), (13.5, 13.5), (12.4, 24.8))
    trials: int = 10_000
    seed: int = 0
    out: Optional[str] = None


@dataclass(frozen=True)
class OracleConfig:
    sensitivities: tuple[float, ...] = (12.0, 6.0)
    sigmas: tuple[float, ...] = (17.0, 8.5)
    epsilon: float = 1.0
    trials: int = 1_000_000
    seed: int = 0
    out: Optional[str] = None


@dataclass(frozen=True)
class TrajectoryConfig:
    function: str = "beale"
    beale_cubed_third_term: bool = False
    start: Optional[tuple[float, float]] = None
    steps: int = 150
    eta_adaptive: float = 0.005
    eta_sgd: float = 2e-4
    sigma_star: float = 1.0
    beta: float = 1.5
    threshold: float = 1e-6
    global_bound: float = 2.0
    gamma: float = 0.1
    gamma_prime: float = 0.9
    eps0: float = 1e-8
    seed: int = 0
    out: Optional[str] = None


@dataclass(frozen=True)
class SyntheticDataConfig:
    n: int = 2048
    dim: int = 20
    classes: int = 2
    separation: float = 3.0


@dataclass(frozen=True)
class IdxDataConfig:
    images: str = ""
    labels: str = ""


@dataclass(frozen=True)
class TrainingRunConfig:
    algorithm: str = "adadp"
    synthetic: Optional[SyntheticDataConfig] = field(default_factory=SyntheticDataConfig)
    idx: Optional[IdxDataConfig] = None
    hidden_dim: int = 32
    pca_components: Optional[int] = None
    eta: float = 0.02
    lot_size: int = 64
    steps: int = 200
    sigma_star: float = 1.0
    beta: float = 1.2
    threshold: float = 1e-6
    global_bound: float = 4.0
    gamma: float = 0.1
    gamma_prime: float = 0.9
    eps0: float = 1e-8
    prior_source: str = "raw"
    epsilon_budget: float = 2.0
    alpha_min: int = 2
    alpha_max: int = 64
    snapshot_steps: tuple[int, ...] = ()
    seed: int = 0
    out: Optional[str] = None

    def __post_init__(self):
        if self.algorithm not in {a.value for a in Algorithm}:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.idx is None and self.synthetic is None:
            raise ConfigError("one of `synthetic` or `idx` must describe the dataset")

    @property
    def alphas(self) -> range:
        return range(self.alpha_min, self.alpha_max + 1)


SWEEPABLE = ("eta", "beta", "sigma_star", "lot_size")


@dataclass(frozen=True)
class SweepConfig:
    base: TrainingRunConfig = field(default_factory=TrainingRunConfig)
    parameter: str = "sigma_star"
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.parameter not in SWEEPABLE:
            raise ConfigError(f"parameter must be one of {SWEEPABLE}, got {self.parameter!r}")
        if not self.values:
            raise ConfigError("sweep needs a nonempty list of values")


CONFIG_TYPES = {
    "accountant": AccountantConfig,
    "calibrate": CalibrateConfig,
    "cosine": CosineConfig,
    "oracle": OracleConfig,
    "trajectory": TrajectoryConfig,
    "train": TrainingRunConfig,
    "sweep": SweepConfig,
}

_NESTED = {
    "synthetic": SyntheticDataConfig,
    "idx": IdxDataConfig,
    "base": TrainingRunConfig,
}


def _build(cls, mapping, path=""):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{path or cls.__name__}: expected a mapping, got {type(mapping).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(mapping) - known - {"kind"})
    if unknown:
        raise ConfigError(f"unknown config key(s) {unknown} for {path or cls.__name__}")
    kwargs = {}
    for key, value in mapping.items():
        if key == "kind":
            continue
        if key in _NESTED and value is not None:
            value = _build(_NESTED[key], value, path=f"{path}{key}.")
        elif isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(kind: str, mapping: dict):
    """Build the config dataclass for `kind`, rejecting unknown keys by name."""
    if kind not in CONFIG_TYPES:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    declared = mapping.get("kind")
    if declared is not None and declared != kind:
        raise ConfigError(f"config declares kind {declared!r} but {kind!r} was requested")
    return _build(CONFIG_TYPES[kind], mapping)


def trajectory_distance(p, q) -> float:
    """Mean pointwise euclidean distance between two equal-length paths."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 2 or p.shape[0] < 1:
        raise ValueError(f"paths must share a nonempty (steps, dim) shape, got {p.shape} vs {q.shape}")
    return float(np.mean(np.linalg.norm(p - q, axis=1)))


def _maybe_write_json(cfg, name: str, payload) -> None:
    if cfg.out is not None:
        reports.write_json(Path(cfg.out) / name, payload)


def run_accountant(cfg: AccountantConfig) -> dict:
    """Per-alpha RDP curve plus the requested conversion.

    delta given -> smallest epsilon; epsilon given -> smallest delta (with the
    vacuous regime flagged); both given and sigma_star omitted -> calibrated
    noise scale.
    """
    if cfg.sigma_star is None:
        if cfg.epsilon is None or cfg.delta is None:
            raise ConfigError("calibration mode needs both epsilon and delta")
        sigma = calibrate_sigma(
            PrivacySpec(cfg.epsilon, cfg.delta), cfg.sampling_ratio, cfg.steps, cfg.alphas,
            pair_term=cfg.pair_term,
        )
        report = {
            "mode": "calibrate",
            "sigma_star": sigma,
            "epsilon": cfg.epsilon,
            "delta": cfg.delta,
            "sampling_ratio": cfg.sampling_ratio,
            "steps": cfg.steps,
            "pair_term": cfg.pair_term,
        }
        _maybe_write_json(cfg, "accountant.json", report)
        return report

    params = MechanismParams(cfg.sigma_star, cfg.sampling_ratio, cfg.steps)
    curve = [
        [alpha, cfg.steps * subsampled_rdp(alpha, cfg.sampling_ratio, cfg.sigma_star, pair_term=cfg.pair_term)]
        for alpha in cfg.alphas
    ]
    report = {
        "mode": "epsilon" if cfg.delta is not None else "delta_star",
        "sigma_star": cfg.sigma_star,
        "sampling_ratio": cfg.sampling_ratio,
        "steps": cfg.steps,
        "pair_term": cfg.pair_term,
        "rdp_curve": curve,
    }
    if cfg.delta is not None:
        result = epsilon_for_delta(params, cfg.delta, cfg.alphas, pair_term=cfg.pair_term)
        report.update(delta=cfg.delta, epsilon=result.epsilon, alpha=result.alpha)
    else:
        result = delta_for_epsilon(cfg.epsilon, params, cfg.alphas, pair_term=cfg.pair_term)
        report.update(epsilon=cfg.epsilon, delta_star=result.delta, alpha=result.alpha, vacuous=result.vacuous)
    _maybe_write_json(cfg, "accountant.json", report)
    if cfg.out is not None:
        reports.write_csv(Path(cfg.out) / "rdp_curve.csv", ["alpha", "rdp_epsilon"], curve)
    return report


def run_calibrate(cfg: CalibrateConfig) -> dict:
    sigma = calibrate_sigma(
        PrivacySpec(cfg.epsilon, cfg.delta), cfg.sampling_ratio, cfg.steps, cfg.alphas,
        pair_term=cfg.pair_term,
    )
    report = {
        "mode": "calibrate",
        "sigma_star": sigma,
        "epsilon": cfg.epsilon,
        "delta": cfg.delta,
        "sampling_ratio": cfg.sampling_ratio,
        "steps": cfg.steps,
        "pair_term": cfg.pair_term,
    }
    _maybe_write_json(cfg, "calibrate.json", report)
    return report


def run_cosine(cfg: CosineConfig) -> dict:
    """Mean noisy-vs-clean cosine similarity for each noise allocation."""
    rows = []
    for sigmas in cfg.sigma_sets:
        rng = SeedBundle(cfg.seed).trials
        mean = cosine_similarity_study(cfg.values, sigmas, cfg.trials, rng)
        rows.append({
            "sigmas": list(sigmas),
            "mean_cosine": mean,
            "loss_variance": privacy_loss_variance(cfg.sensitivities, sigmas),
        })
    report = {
        "values": list(cfg.values),
        "sensitivities": list(cfg.sensitivities),
        "trials": cfg.trials,
        "seed": cfg.seed,
        "results": rows,
    }
    _maybe_write_json(cfg, "cosine.json", report)
    if cfg.out is not None:
        reports.write_csv(
            Path(cfg.out) / "cosine.csv",
            ["sigmas", "mean_cosine", "loss_variance"],
            [[" ".join(repr(s) for s in row["sigmas"]), row["mean_cosine"], row["loss_variance"]] for row in rows],
        )
    return report


def run_oracle(cfg: OracleConfig) -> dict:
    """Analytic delta against its Monte-Carlo estimate for one mechanism."""
    variance = privacy_loss_variance(cfg.sensitivities, cfg.sigmas)
    analytic = analytic_dp_delta(variance, cfg.epsilon)
    estimate = monte_carlo_dp_delta(
        cfg.sensitivities, cfg.sigmas, cfg.epsilon, cfg.trials, SeedBundle(cfg.seed).trials
    )
    deviation = (
        abs(estimate.estimate - analytic) / estimate.std_error if estimate.std_error > 0 else 0.0
    )
    report = {
        "sensitivities": list(cfg.sensitivities),
        "sigmas": list(cfg.sigmas),
        "epsilon": cfg.epsilon,
        "trials": cfg.trials,
        "seed": cfg.seed,
        "loss_variance": variance,
        "analytic_delta": analytic,
        "monte_carlo_delta": estimate.estimate,
        "std_error": estimate.std_error,
        "deviation_std_errors": deviation,
        "agrees_within_3_std_errors": bool(deviation <= 3.0),
    }
    _maybe_write_json(cfg, "oracle.json", report)
    return report


def _trajectory_train_config(cfg: TrajectoryConfig, eta: float, sigma_star: float) -> TrainConfig:
    return TrainConfig(
        lot_size=1,
        dataset_size=1,
        steps=cfg.steps,
        sigma_star=sigma_star,
        eta=eta,
        clip=ClipSettings(beta=cfg.beta, threshold=cfg.threshold, global_bound=cfg.global_bound),
        gamma=cfg.gamma,
        gamma_prime=cfg.gamma_prime,
        eps0=cfg.eps0,
    )


def run_trajectory(cfg: TrajectoryConfig) -> dict:
    """Private-vs-nonprivate trajectory pairs from one start point.

    Runs the adaptive optimizer against its noise-free counterpart and DP-SGD
    against plain SGD, all on the same surface with the same derived seeds,
    and reports the mean pointwise distance within each pair.
    """
    objective = suite_function(cfg.function, beale_cubed_third_term=cfg.beale_cubed_third_term)
    start = np.asarray(cfg.start if cfg.start is not None else objective.default_start, dtype=float)

    runs = {}
    for name, algorithm, eta, sigma in [
        ("adadp", Algorithm.ADADP, cfg.eta_adaptive, cfg.sigma_star),
        ("rmsprop", Algorithm.RMSPROP, cfg.eta_adaptive, 0.0),
        ("dpsgd", Algorithm.DPSGD, cfg.eta_sgd, cfg.sigma_star),
        ("sgd", Algorithm.SGD, cfg.eta_sgd, 0.0),
    ]:
        result = train(
            objective,
            None,
            _trajectory_train_config(cfg, eta, sigma),
            algorithm,
            SeedBundle(cfg.seed),
            initial_params=start,
        )
        if result.diverged:
            raise NumericalFailure(f"{name} diverged on {cfg.function} after {len(result.records)} steps")
        runs[name] = np.array([record.params_after for record in result.records])

    distance_adaptive = trajectory_distance(runs["adadp"], runs["rmsprop"])
    distance_sgd = trajectory_distance(runs["dpsgd"], runs["sgd"])
    report = {
        "function": cfg.function,
        "beale_cubed_third_term": cfg.beale_cubed_third_term,
        "start": [float(v) for v in start],
        "steps": cfg.steps,
        "seed": cfg.seed,
        "eta_adaptive": cfg.eta_adaptive,
        "eta_sgd": cfg.eta_sgd,
        "sigma_star": cfg.sigma_star,
        "beta": cfg.beta,
        "threshold": cfg.threshold,
        "global_bound": cfg.global_bound,
        "gamma": cfg.gamma,
        "gamma_prime": cfg.gamma_prime,
        "distance_adaptive_vs_rmsprop": distance_adaptive,
        "distance_dpsgd_vs_sgd": distance_sgd,
    }
    _maybe_write_json(cfg, "trajectory.json", report)
    if cfg.out is not None:
        header = ["step"] + [f"{name}_{axis}" for name in ("adadp", "rmsprop", "dpsgd", "sgd") for axis in ("x", "y")]
        rows = [
            [step + 1]
            + [runs[name][step][i] for name in ("adadp", "rmsprop", "dpsgd", "sgd") for i in range(2)]
            for step in range(cfg.steps)
        ]
        reports.write_csv(Path(cfg.out) / "trajectory.csv", header, rows)
    return report


def _load_training_data(cfg: TrainingRunConfig, rngs: SeedBundle) -> Dataset:
    if cfg.idx is not None:
        return load_idx(cfg.idx.images, cfg.idx.labels)
    s = cfg.synthetic
    return synthetic_classification(s.n, s.dim, s.classes, s.separation, rngs.data)


_PRIVATE_ALGORITHMS = {"adadp", "dpsgd", "adal", "adan"}


def _delta_star_column(cfg: TrainingRunConfig, config: TrainConfig, steps_done: int) -> object:
    if cfg.sigma_star <= 0 or cfg.algorithm not in _PRIVATE_ALGORITHMS:
        return ""
    params = MechanismParams(cfg.sigma_star, config.sampling_ratio, steps_done)
    result = delta_for_epsilon(cfg.epsilon_budget, params, cfg.alphas)
    return result.delta


def run_training(cfg: TrainingRunConfig) -> dict:
    """One training run with per-step metrics and privacy bookkeeping.

    Emits metrics.csv (loss, accuracy, cumulative smallest delta at the fixed
    epsilon budget, noise-scale summary), optional per-step noise-scale and
    prior-vs-gradient snapshots, and a JSON summary. Partial metrics are
    flushed even when the run aborts on divergence.
    """
    rngs = SeedBundle(cfg.seed)
    data = _load_training_data(cfg, rngs)
    features = data.features
    if cfg.pca_components is not None:
        _, features = pca_project(features, cfg.pca_components)
        data = Dataset(features=features, labels=data.labels, num_classes=data.num_classes)
    objective = MlpObjective(data.features.shape[1], cfg.hidden_dim, data.num_classes)
    config = TrainConfig(
        lot_size=cfg.lot_size,
        dataset_size=len(data),
        steps=cfg.steps,
        sigma_star=cfg.sigma_star,
        eta=cfg.eta,
        clip=ClipSettings(beta=cfg.beta, threshold=cfg.threshold, global_bound=cfg.global_bound),
        gamma=cfg.gamma,
        gamma_prime=cfg.gamma_prime,
        eps0=cfg.eps0,
        prior_source=PriorSource.NOISY_GRADIENT if cfg.prior_source == "noisy" else PriorSource.RAW_GRADIENT,
    )
    algorithm = Algorithm(cfg.algorithm)

    wanted = set(cfg.snapshot_steps)
    snapshots = []

    def observer(ctx):
        if ctx.record.step in wanted and ctx.plan is not None:
            snapshots.append((
                ctx.record.step,
                ctx.plan.sigmas.copy(),
                np.sqrt(ctx.prev_state.prior_ema),
                np.abs(ctx.lot_mean),
            ))

    result = train(objective, data, config, algorithm, rngs, observer=observer)

    rows = []
    for record in result.records:
        accuracy = objective.accuracy(record.params_after, data.features, data.labels)
        rows.append([
            record.step,
            record.loss,
            accuracy,
            _delta_star_column(cfg, config, record.step),
            record.mode.value if record.mode is not None else "",
            record.sigma_summary[0],
            record.sigma_summary[1],
            record.sigma_summary[2],
        ])

    summary = {
        "algorithm": cfg.algorithm,
        "seed": cfg.seed,
        "steps_run": len(result.records),
        "diverged": result.diverged,
        "final_loss": rows[-1][1] if rows else None,
        "final_accuracy": rows[-1][2] if rows else None,
        "final_delta_star": rows[-1][3] if rows and rows[-1][3] != "" else None,
        "epsilon_budget": cfg.epsilon_budget,
        "sigma_star": cfg.sigma_star,
        "lot_size": cfg.lot_size,
        "eta": cfg.eta,
        "dataset_size": len(data),
        "feature_dim": int(data.features.shape[1]),
        "num_classes": data.num_classes,
    }
    if cfg.out is not None:
        out = Path(cfg.out)
        reports.write_csv(
            out / "metrics.csv",
            ["step", "loss", "accuracy", "delta_star", "mode", "sigma_min", "sigma_mean", "sigma_max"],
            rows,
        )
        for step, sigmas, root_prior, abs_grad in snapshots:
            reports.write_csv(
                out / f"sigma_step{step:05d}.csv",
                ["coordinate", "sigma"],
                [[i, s] for i, s in enumerate(sigmas)],
            )
            reports.write_csv(
                out / f"prior_vs_grad_step{step:05d}.csv",
                ["coordinate", "sqrt_prior", "abs_grad"],
                [[i, rp, ag] for i, (rp, ag) in enumerate(zip(root_prior, abs_grad))],
            )
        reports.write_json(out / "summary.json", summary)
    if result.diverged:
        raise NumericalFailure(
            f"{cfg.algorithm} diverged after {len(result.records)} steps (partial metrics flushed)"
        )
    return summary


def _with_sweep_value(base: TrainingRunConfig, parameter: str, value) -> TrainingRunConfig:
    if parameter == "lot_size":
        return replace(base, lot_size=int(value))
    return replace(base, **{parameter: float(value)})


def run_sweep(cfg: SweepConfig) -> dict:
    """One training run per grid value of a single parameter.

    Every run shares the base master seed so grid points differ only in the
    swept parameter. Diverged runs are marked and the sweep continues.
    """
    rows = []
    for index, value in enumerate(cfg.values):
        point = _with_sweep_value(cfg.base, cfg.parameter, value)
        if cfg.base.out is not None:
            point = replace(point, out=str(Path(cfg.base.out) / f"point_{index:02d}"))
        try:
            summary = run_training(point)
            rows.append([cfg.parameter, value, summary["steps_run"], False,
                         summary["final_loss"], summary["final_accuracy"]])
        except NumericalFailure:
            rows.append([cfg.parameter, value, None, True, None, None])
    report = {
        "parameter": cfg.parameter,
        "values": list(cfg.values),
        "seed": cfg.base.seed,
        "results": [
            {"value": row[1], "steps_run": row[2], "diverged": row[3],
             "final_loss": row[4], "final_accuracy": row[5]}
            for row in rows
        ],
    }
    if cfg.base.out is not None:
        reports.write_csv(
            Path(cfg.base.out) / "sweep.csv",
            ["parameter", "value", "steps_run", "diverged", "final_loss", "final_accuracy"],
            [[c if c is not None else "" for c in row] for row in rows],
        )
        reports.write_json(Path(cfg.base.out) / "sweep.json", report)
    return report
