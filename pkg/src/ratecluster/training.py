"""Multistage training of the encoder against coding-rate objectives.

Each step samples a batch, builds two Gaussian-augmented views, runs both
through the encoder and minimizes either the expansion objective ("tcr") or
the full joint objective ("clustering"). All randomness per step derives
from (stage seed, step index, stream tag), so a run is reproducible
bit-for-bit from its seed on a single thread.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import objectives
from .data import Dataset, gaussian_augment
from .model import MlpSpec, forward, init_mlp

OBJECTIVES = ("tcr", "clustering")

# stream tags for per-step rng derivation
_BATCH, _VIEW1, _VIEW2, _GUMBEL1, _GUMBEL2 = range(5)


class TrainingAbort(RuntimeError):
    """Training hit a non-finite loss; carries the failing step index."""

    def __init__(self, step: int, reason: str, last_finite: dict | None = None):
        self.step = step
        self.reason = reason
        self.last_finite = last_finite or {}
        detail = f"training aborted at step {step}: {reason}"
        if self.last_finite:
            parts = ", ".join(f"{k}={v:.6g}" for k, v in self.last_finite.items())
            detail += f" (last finite values: {parts})"
        super().__init__(detail)


@dataclass
class StageConfig:
    """Hyperparameters of one training stage."""

    objective: str
    lr: float
    weight_decay: float
    epsilon: float
    lam: float
    batch_size: int
    steps: int
    augment_sigma: float
    gumbel_temperature: float | None = None  # None: keep the model's
    seed: int | None = None  # None: derived from the run seed and stage index

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.lr < 0:
            raise ValueError(f"lr must be nonnegative, got {self.lr}")
        for name in ("weight_decay", "lam", "augment_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.gumbel_temperature is not None and self.gumbel_temperature <= 0:
            raise ValueError(f"gumbel_temperature must be positive, got {self.gumbel_temperature}")
        for name in ("batch_size", "steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1, got {getattr(self, name)}")


@dataclass
class RunRecord:
    """Per-step loss components of one stage; one entry per optimizer step."""

    objective: str
    loss: list[float] = field(default_factory=list)
    total_rate: list[float] = field(default_factory=list)
    cluster_rate: list[float] = field(default_factory=list)
    constraint_d: list[float] = field(default_factory=list)
    wall_clock: float = 0.0

    def append(self, terms: dict) -> None:
        self.loss.append(terms["loss"])
        self.total_rate.append(terms["total_rate"])
        self.cluster_rate.append(terms.get("cluster_rate", float("nan")))
        self.constraint_d.append(terms["constraint_d"])

    def last_finite(self) -> dict:
        out = {}
        for key in ("loss", "total_rate", "cluster_rate", "constraint_d"):
            series = getattr(self, key)
            if series and np.isfinite(series[-1]):
                out[key] = series[-1]
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("step,loss,total_rate,cluster_rate,constraint_d\n")
            for i in range(len(self.loss)):
                fh.write(
                    f"{i},{self.loss[i]:.17g},{self.total_rate[i]:.17g},"
                    f"{self.cluster_rate[i]:.17g},{self.constraint_d[i]:.17g}\n"
                )


def _step_rng(seed: int, step: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, step, stream])


def next_batch(data, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw one batch from a Dataset (subset of rows) or an online sampler."""
    if callable(data):
        return np.asarray(data(batch_size, rng), dtype=np.float64)
    if not isinstance(data, Dataset):
        raise TypeError(f"data must be a Dataset or a sampler callable, got {type(data)!r}")
    points = data.points
    if batch_size >= points.shape[0]:
        return points
    return points[rng.choice(points.shape[0], size=batch_size, replace=False)]


def train_stage(
    spec: MlpSpec,
    params: dict[str, ad.Var],
    data,
    cfg: StageConfig,
) -> tuple[dict[str, ad.Var], RunRecord]:
    """Run one stage, mutating the parameters in place.

    Optimizer state is fresh for the stage. A non-finite loss aborts with
    the step index and the last finite component values; log-det losses are
    never clamped.
    """
    seed = cfg.seed if cfg.seed is not None else 0
    if cfg.gumbel_temperature is not None:
        spec = replace(spec, gumbel_temperature=cfg.gumbel_temperature)
    rate_params = objectives.CodingRateParams(epsilon=cfg.epsilon, d_emb=spec.feature_dim)
    state = ad.AdamState.for_params(params)
    record = RunRecord(objective=cfg.objective)
    start = time.perf_counter()
    for step in range(cfg.steps):
        try:
            x = next_batch(data, cfg.batch_size, _step_rng(seed, step, _BATCH))
            x1 = gaussian_augment(x, cfg.augment_sigma, _step_rng(seed, step, _VIEW1))
            x2 = gaussian_augment(x, cfg.augment_sigma, _step_rng(seed, step, _VIEW2))
            o1 = forward(spec, params, x1, train_mode=True, rng=_step_rng(seed, step, _GUMBEL1))
            o2 = forward(spec, params, x2, train_mode=True, rng=_step_rng(seed, step, _GUMBEL2))
            if cfg.objective == "tcr":
                terms = objectives.tcr_terms(o1.features, o2.features, rate_params, cfg.lam)
            else:
                gamma_avg = 0.5 * (o1.assignment + o2.assignment)
                terms = objectives.clustering_terms(
                    o1.features, o2.features, gamma_avg, rate_params, cfg.lam
                )
            if cfg.lr > 0:
                ad.zero_grads(params)
                terms["loss"].backward()
                ad.adam_step(
                    params,
                    {k: p.grad for k, p in params.items()},
                    state,
                    cfg.lr,
                    cfg.weight_decay,
                )
        except (ad.NonFiniteError, ad.PositiveDefiniteError, FloatingPointError) as exc:
            raise TrainingAbort(step, str(exc), record.last_finite()) from exc
        record.append({k: v.item() for k, v in terms.items()})
    record.wall_clock = time.perf_counter() - start
    return params, record


def _derived_stage_seed(run_seed: int, stage_index: int) -> int:
    return int(np.random.SeedSequence([run_seed, stage_index]).generate_state(1)[0])


def multistage_train(
    spec: MlpSpec,
    data,
    stage_configs: list[StageConfig],
    seed: int = 0,
) -> tuple[dict[str, ad.Var], list[RunRecord]]:
    """Initialize the encoder, then run the stages in order.

    Parameters carry forward between stages; stages without an explicit seed
    get one derived from (run seed, stage index).
    """
    if not stage_configs:
        raise ValueError("at least one stage is required")
    params = init_mlp(spec, seed)
    records = []
    for i, cfg in enumerate(stage_configs):
        if cfg.seed is None:
            cfg = replace(cfg, seed=_derived_stage_seed(seed, i))
        params, record = train_stage(spec, params, data, cfg)
        records.append(record)
    return params, records


def double_spiral_recipe(desk_scale: bool = True) -> tuple[MlpSpec, list[StageConfig]]:
    """Single-stage joint objective for the two-spiral toy problem.

    Desk scale shrinks steps 30000 -> 3000 and batch 4096 -> 1024; the other
    hyperparameters (lr 1e-3, wd 1e-6, eps 0.01, feature dim 6, lam 4000)
    are the full-scale values.
    """
    spec = MlpSpec(
        input_dim=2, hidden_widths=(256, 256), feature_dim=6, n_clusters=2, activation="elu"
    )
    steps, batch = (3000, 1024) if desk_scale else (30000, 4096)
    stage = StageConfig(
        objective="clustering",
        lr=1e-3,
        weight_decay=1e-6,
        epsilon=0.01,
        lam=4000.0,
        batch_size=batch,
        steps=steps,
        augment_sigma=0.05,
    )
    return spec, [stage]


def synthetic_recipe(desk_scale: bool = True) -> tuple[MlpSpec, list[StageConfig]]:
    """Two-stage recipe for the random-manifold mixture: expansion then
    clustering (lr 1e-3, wd 1e-6, eps 0.01, feature dim 12, lam 100).

    Desk scale: 1000 + 500 steps at batch 1024 instead of 2000 + 1000 at
    4096.
    """
    spec = MlpSpec(
        input_dim=12, hidden_widths=(256, 256, 256), feature_dim=12, n_clusters=2, activation="elu"
    )
    if desk_scale:
        s1, s2, batch = 1000, 500, 1024
    else:
        s1, s2, batch = 2000, 1000, 4096
    common = dict(lr=1e-3, weight_decay=1e-6, epsilon=0.01, lam=100.0, batch_size=batch, augment_sigma=0.1)
    return spec, [
        StageConfig(objective="tcr", steps=s1, **common),
        StageConfig(objective="clustering", steps=s2, **common),
    ]
