"""MLP encoder with a unit-sphere feature head and a cluster-logits head."""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad

CHECKPOINT_FORMAT = "ratecluster-checkpoint-v1"


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of the encoder.

    A shared MLP backbone feeds two linear heads: one producing features
    that are row-normalized onto the unit sphere, one producing cluster
    logits fed through a Gumbel-Softmax.
    """

    input_dim: int
    hidden_widths: tuple[int, ...]
    feature_dim: int
    n_clusters: int
    activation: str = "elu"
    leaky_slope: float = 0.2
    gumbel_temperature: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        for name in ("input_dim", "feature_dim", "n_clusters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1, got {getattr(self, name)}")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError(f"hidden widths must be at least 1, got {self.hidden_widths}")
        if self.activation not in ad.ACTIVATION_KINDS:
            raise ValueError(
                f"unknown activation {self.activation!r}; expected one of {ad.ACTIVATION_KINDS}"
            )
        if self.gumbel_temperature <= 0:
            raise ValueError(f"gumbel_temperature must be positive, got {self.gumbel_temperature}")


@dataclass
class EncoderOutput:
    """Features on the unit sphere, soft cluster assignment, raw logits."""

    features: ad.Var
    assignment: ad.Var
    logits: ad.Var


def init_mlp(spec: MlpSpec, seed: int) -> dict[str, ad.Var]:
    """Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases.

    Deterministic given the seed. Weight matrices are stored (fan_in,
    fan_out) so the forward pass is ``x @ W + b``.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, ad.Var] = {}

    def linear(name: str, fan_in: int, fan_out: int) -> None:
        bound = np.sqrt(6.0 / fan_in)
        params[f"{name}.weight"] = ad.Var(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        params[f"{name}.bias"] = ad.Var(np.zeros((1, fan_out)))

    width = spec.input_dim
    for i, hidden in enumerate(spec.hidden_widths):
        linear(f"backbone{i}", width, hidden)
        width = hidden
    linear("feature_head", width, spec.feature_dim)
    linear("cluster_head", width, spec.n_clusters)
    return params


def forward(
    spec: MlpSpec,
    params: dict[str, ad.Var],
    x,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> EncoderOutput:
    """Encode a batch: backbone -> feature head (unit sphere) + cluster head.

    Eval mode is deterministic (plain softmax on the logits); train mode
    draws fresh Gumbel noise from ``rng`` for the assignment.
    """
    h = ad.as_var(x)
    if h.shape[1] != spec.input_dim:
        raise ValueError(f"input has {h.shape[1]} columns, spec.input_dim is {spec.input_dim}")
    for i in range(len(spec.hidden_widths)):
        pre = h @ params[f"backbone{i}.weight"] + params[f"backbone{i}.bias"]
        h = ad.activation(pre, spec.activation, spec.leaky_slope)
    features = ad.row_normalize(h @ params["feature_head.weight"] + params["feature_head.bias"])
    logits = h @ params["cluster_head.weight"] + params["cluster_head.bias"]
    assignment = ad.gumbel_softmax(logits, spec.gumbel_temperature, rng, train_mode)
    return EncoderOutput(features=features, assignment=assignment, logits=logits)


def average_views(o1: EncoderOutput, o2: EncoderOutput) -> tuple[ad.Var, ad.Var]:
    """View-averaged features (re-normalized) and assignment probabilities."""
    if o1.features.shape != o2.features.shape:
        raise ValueError("feature shapes differ between views")
    if o1.assignment.shape != o2.assignment.shape:
        raise ValueError("assignment shapes differ between views")
    z_avg = ad.row_normalize(0.5 * (o1.features + o2.features))
    gamma_avg = 0.5 * (o1.assignment + o2.assignment)
    return z_avg, gamma_avg


def save_checkpoint(path, spec: MlpSpec, params: dict[str, ad.Var]) -> None:
    """Write an .npz with one array per parameter plus a JSON metadata blob.

    Layout: every parameter tensor under its own name, and ``__meta__`` as a
    uint8 array holding UTF-8 JSON with the format tag and the MlpSpec
    fields. Stable across versions; see README for the exact schema.
    """
    meta = {"format": CHECKPOINT_FORMAT, "spec": asdict(spec)}
    blob = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    arrays = {name: p.value for name, p in sorted(params.items())}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=blob, **arrays)


def load_checkpoint(path) -> tuple[MlpSpec, dict[str, ad.Var]]:
    with np.load(path) as data:
        if "__meta__" not in data:
            raise ValueError(f"{path} is not a checkpoint (missing __meta__)")
        meta = json.loads(bytes(data["__meta__"].tobytes()).decode("utf-8"))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {meta.get('format')!r}")
        spec_fields = dict(meta["spec"])
        spec_fields["hidden_widths"] = tuple(spec_fields["hidden_widths"])
        spec = MlpSpec(**spec_fields)
        params = {
            name: ad.Var(data[name]) for name in data.files if name != "__meta__"
        }
    expected = set(init_mlp(spec, seed=0))
    if set(params) != expected:
        missing = expected - set(params)
        extra = set(params) - expected
        raise ValueError(f"checkpoint parameters do not match spec (missing {missing}, extra {extra})")
    return spec, params
