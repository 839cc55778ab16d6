"""YAML run configs: seed, data source, model architecture, training stages.

Validation collects every problem with its field path (e.g.
``stages[1].lr: must be a positive number``) instead of stopping at the
first one.
"""

from __future__ import annotations

from dataclasses import dataclass

import yaml

from .data import DoubleSpiralSampler, double_spiral, load_csv, random_mlp_manifolds
from .model import MlpSpec
from .training import OBJECTIVES, StageConfig

GENERATORS = ("double-spiral", "random-mlp", "csv")


class ConfigError(ValueError):
    """One or more invalid config fields; ``problems`` lists them."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid config:\n" + "\n".join(f"  {p}" for p in self.problems))


@dataclass
class RunConfig:
    seed: int
    data: dict
    model: MlpSpec
    stages: list[StageConfig]
    raw: dict


class _Checker:
    def __init__(self):
        self.problems: list[str] = []

    def fail(self, path: str, message: str) -> None:
        self.problems.append(f"{path}: {message}")

    def number(self, mapping, path, key, default=None, minimum=None, positive=False, integer=False):
        value = mapping.get(key, default)
        if value is None:
            self.fail(f"{path}.{key}", "missing required value")
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(f"{path}.{key}", f"expected a number, got {value!r}")
            return None
        if integer and int(value) != value:
            self.fail(f"{path}.{key}", f"expected an integer, got {value!r}")
            return None
        if positive and value <= 0:
            self.fail(f"{path}.{key}", f"must be positive, got {value!r}")
            return None
        if minimum is not None and value < minimum:
            self.fail(f"{path}.{key}", f"must be at least {minimum}, got {value!r}")
            return None
        return int(value) if integer else float(value)

    def choice(self, mapping, path, key, choices, default=None):
        value = mapping.get(key, default)
        if value not in choices:
            self.fail(f"{path}.{key}", f"expected one of {choices}, got {value!r}")
            return None
        return value


def _check_mapping(raw, path, checker) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        checker.fail(path, f"expected a mapping, got {type(raw).__name__}")
        return {}
    return raw


def parse_config(raw: dict) -> RunConfig:
    """Validate a parsed YAML document and build the typed run config."""
    checker = _Checker()
    if not isinstance(raw, dict):
        raise ConfigError(["top level: expected a mapping"])

    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        checker.fail("seed", f"expected a nonnegative integer, got {seed!r}")
        seed = 0

    data = _check_mapping(raw.get("data"), "data", checker)
    if "generator" not in data and not data:
        checker.fail("data", "missing section")
    generator = checker.choice(data, "data", "generator", GENERATORS)
    if generator == "double-spiral":
        checker.number(data, "data", "n_per_arm", default=1000, integer=True, minimum=1)
        checker.number(data, "data", "radius", default=15.0, positive=True)
        checker.number(data, "data", "noise_sigma", default=0.05, minimum=0.0)
    elif generator == "random-mlp":
        checker.number(data, "data", "n_per_manifold", default=512, integer=True, minimum=1)
        checker.number(data, "data", "ambient_dim", default=12, integer=True, minimum=1)
        dims = data.get("latent_dims", [3, 6])
        if not isinstance(dims, list) or not dims or not all(
            isinstance(d, int) and d >= 1 for d in dims
        ):
            checker.fail("data.latent_dims", f"expected a list of positive integers, got {dims!r}")
    elif generator == "csv":
        if not isinstance(data.get("path"), str) or not data.get("path"):
            checker.fail("data.path", "expected a file path")

    model_raw = _check_mapping(raw.get("model"), "model", checker)
    if not model_raw:
        checker.fail("model", "missing section")
    input_dim = checker.number(model_raw, "model", "input_dim", integer=True, minimum=1)
    feature_dim = checker.number(model_raw, "model", "feature_dim", integer=True, minimum=1)
    n_clusters = checker.number(model_raw, "model", "n_clusters", integer=True, minimum=1)
    hidden = model_raw.get("hidden_widths", [])
    if not isinstance(hidden, list) or not all(isinstance(w, int) and w >= 1 for w in hidden):
        checker.fail("model.hidden_widths", f"expected a list of positive integers, got {hidden!r}")
        hidden = []
    activation = checker.choice(
        model_raw, "model", "activation", ("elu", "relu", "leaky_relu"), default="elu"
    )
    temperature = checker.number(model_raw, "model", "gumbel_temperature", default=1.0, positive=True)

    stages_raw = raw.get("stages")
    stages: list[StageConfig] = []
    if not isinstance(stages_raw, list) or not stages_raw:
        checker.fail("stages", "expected a nonempty list of stages")
    else:
        for i, stage in enumerate(stages_raw):
            path = f"stages[{i}]"
            stage = _check_mapping(stage, path, checker)
            fields = {
                "objective": checker.choice(stage, path, "objective", OBJECTIVES),
                "lr": checker.number(stage, path, "lr", minimum=0.0),
                "weight_decay": checker.number(stage, path, "weight_decay", default=0.0, minimum=0.0),
                "epsilon": checker.number(stage, path, "epsilon", positive=True),
                "lam": checker.number(stage, path, "lambda", default=0.0, minimum=0.0),
                "batch_size": checker.number(stage, path, "batch_size", integer=True, minimum=1),
                "steps": checker.number(stage, path, "steps", integer=True, minimum=1),
                "augment_sigma": checker.number(stage, path, "augment_sigma", minimum=0.0),
            }
            if "gumbel_temperature" in stage:
                fields["gumbel_temperature"] = checker.number(
                    stage, path, "gumbel_temperature", positive=True
                )
            if "seed" in stage:
                fields["seed"] = checker.number(stage, path, "seed", integer=True, minimum=0)
            if all(v is not None for v in fields.values()):
                stages.append(StageConfig(**fields))

    if checker.problems:
        raise ConfigError(checker.problems)

    model = MlpSpec(
        input_dim=input_dim,
        hidden_widths=tuple(hidden),
        feature_dim=feature_dim,
        n_clusters=n_clusters,
        activation=activation,
        gumbel_temperature=temperature,
    )
    return RunConfig(seed=seed, data=data, model=model, stages=stages, raw=raw)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    cfg = parse_config(raw)
    problems = []
    if cfg.data.get("generator") == "double-spiral" and cfg.model.input_dim != 2:
        problems.append("model.input_dim: double-spiral data is 2-D")
    if cfg.data.get("generator") == "random-mlp":
        ambient = int(cfg.data.get("ambient_dim", 12))
        if cfg.model.input_dim != ambient:
            problems.append(
                f"model.input_dim: expected data.ambient_dim ({ambient}), got {cfg.model.input_dim}"
            )
    if problems:
        raise ConfigError(problems)
    return cfg


def build_data(cfg: RunConfig):
    """Materialize the training data source named by the config.

    double-spiral defaults to an online sampler (fresh points per batch);
    set ``data.online: false`` to train on a fixed draw.
    """
    data = cfg.data
    generator = data["generator"]
    if generator == "double-spiral":
        if data.get("online", True):
            return DoubleSpiralSampler(
                radius=float(data.get("radius", 15.0)),
                noise_sigma=float(data.get("noise_sigma", 0.05)),
            )
        return double_spiral(
            n_per_arm=int(data.get("n_per_arm", 1000)),
            radius=float(data.get("radius", 15.0)),
            noise_sigma=float(data.get("noise_sigma", 0.05)),
            seed=cfg.seed,
        )
    if generator == "random-mlp":
        return random_mlp_manifolds(
            latent_dims=tuple(data.get("latent_dims", [3, 6])),
            with_bias=bool(data.get("with_bias", True)),
            n_per_manifold=int(data.get("n_per_manifold", 512)),
            ambient_dim=int(data.get("ambient_dim", 12)),
            seed=cfg.seed,
        )
    if generator == "csv":
        dataset = load_csv(data["path"])
        if dataset.ambient_dim != cfg.model.input_dim:
            raise ConfigError(
                [f"data.path: CSV has {dataset.ambient_dim} columns, model.input_dim is {cfg.model.input_dim}"]
            )
        return dataset
    raise ConfigError([f"data.generator: unknown generator {generator!r}"])
