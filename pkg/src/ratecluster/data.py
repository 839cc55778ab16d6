"""Synthetic union-of-manifold generators, Gaussian augmentation, CSV I/O."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

SPIRAL_T_MIN = 0.25 * np.pi
SPIRAL_T_MAX = 3.0 * np.pi


@dataclass
class Dataset:
    """A point cloud with optional ground-truth labels and generator metadata."""

    points: np.ndarray
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise ValueError(f"points must be a nonempty 2-D array, got shape {self.points.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.points.shape[0],):
                raise ValueError("labels length must match number of points")
            if self.labels.min() < 0:
                raise ValueError("labels must be nonnegative")

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.points.shape[1]


def spiral_curve(t: np.ndarray, arm: int, radius: float) -> np.ndarray:
    """Noise-free Archimedean arm: radius grows linearly in t, phase offset pi."""
    r = radius * t / SPIRAL_T_MAX
    phase = t + arm * np.pi
    return np.column_stack([r * np.cos(phase), r * np.sin(phase)])


def sample_double_spiral(
    n_per_arm: int, radius: float, noise_sigma: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    points = np.empty((2 * n_per_arm, 2))
    labels = np.empty(2 * n_per_arm, dtype=np.int64)
    for arm in (0, 1):
        t = rng.uniform(SPIRAL_T_MIN, SPIRAL_T_MAX, size=n_per_arm)
        block = slice(arm * n_per_arm, (arm + 1) * n_per_arm)
        points[block] = spiral_curve(t, arm, radius)
        labels[block] = arm
    if noise_sigma > 0:
        points += noise_sigma * rng.standard_normal(points.shape)
    return points, labels


def double_spiral(
    n_per_arm: int, radius: float = 15.0, noise_sigma: float = 0.05, seed: int = 0
) -> Dataset:
    """Two interleaved planar spirals, exactly n_per_arm points per arm."""
    if n_per_arm < 1:
        raise ValueError(f"n_per_arm must be at least 1, got {n_per_arm}")
    rng = np.random.default_rng(seed)
    points, labels = sample_double_spiral(n_per_arm, radius, noise_sigma, rng)
    meta = {
        "generator": "double-spiral",
        "n_per_arm": n_per_arm,
        "radius": radius,
        "noise_sigma": noise_sigma,
        "seed": seed,
    }
    return Dataset(points, labels, meta)


class DoubleSpiralSampler:
    """Online batch source: fresh spiral points for every training step."""

    def __init__(self, radius: float = 15.0, noise_sigma: float = 0.05):
        self.radius = radius
        self.noise_sigma = noise_sigma
        self.ambient_dim = 2
        self.meta = {
            "generator": "double-spiral",
            "online": True,
            "radius": radius,
            "noise_sigma": noise_sigma,
        }

    def __call__(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        n_per_arm = (batch_size + 1) // 2
        points, _ = sample_double_spiral(n_per_arm, self.radius, self.noise_sigma, rng)
        return points[:batch_size]


def _leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def _random_generator_net(
    latent_dim: int,
    ambient_dim: int,
    hidden: tuple[int, ...],
    with_bias: bool,
    slope: float,
    bias_scale: float,
    rng: np.random.Generator,
):
    """A fresh random MLP mapping latent space into the ambient space."""
    gain = np.sqrt(2.0 / (1.0 + slope**2))
    dims = [latent_dim, *hidden, ambient_dim]
    weights = [
        rng.standard_normal((dims[i], dims[i + 1])) * gain / np.sqrt(dims[i])
        for i in range(len(dims) - 1)
    ]
    biases = [
        bias_scale * rng.standard_normal(dims[i + 1]) if with_bias else np.zeros(dims[i + 1])
        for i in range(len(dims) - 1)
    ]

    def net(latent: np.ndarray) -> np.ndarray:
        h = latent
        for i, (w, b) in enumerate(zip(weights, biases)):
            h = h @ w + b
            if i < len(weights) - 1:
                h = _leaky_relu(h, slope)
        return h

    return net


def _min_cross_distance(points: np.ndarray, labels: np.ndarray) -> float:
    a = points[labels == 0]
    b = points[labels == 1]
    # pairwise distances in blocks to bound memory
    best = np.inf
    step = 1024
    for i in range(0, a.shape[0], step):
        chunk = a[i : i + step]
        d2 = ((chunk[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        best = min(best, float(np.sqrt(d2.min())))
    return best


def random_mlp_manifolds(
    latent_dims: tuple[int, ...] = (3, 6),
    with_bias: bool = True,
    n_per_manifold: int = 512,
    ambient_dim: int = 12,
    seed: int = 0,
    hidden: tuple[int, ...] = (64, 64),
    slope: float = 0.2,
    bias_scale: float = 1.0,
    min_separation: float | None = None,
    max_attempts: int = 64,
) -> Dataset:
    """Union of manifolds traced by random leaky-ReLU networks.

    Each manifold pushes iid standard-normal latents through its own fresh
    random MLP into the ambient space. With biases the manifolds sit apart
    (identifiable); without biases every manifold passes through the origin
    and they intersect there.

    For the two-manifold biased case, seeds whose minimum inter-manifold
    distance falls below ``min_separation`` (default 1.0, ten times the
    usual 0.1 augmentation noise) are rejected and deterministically
    resampled, so the identifiability premise actually holds.
    """
    latent_dims = tuple(int(d) for d in latent_dims)
    if ambient_dim < max(latent_dims):
        raise ValueError(f"ambient_dim {ambient_dim} smaller than max latent dim {max(latent_dims)}")
    if n_per_manifold < 1:
        raise ValueError(f"n_per_manifold must be at least 1, got {n_per_manifold}")
    if min_separation is None:
        min_separation = 1.0 if (with_bias and len(latent_dims) == 2) else 0.0

    for attempt in range(max_attempts):
        rng = np.random.default_rng([seed, attempt])
        blocks, labels = [], []
        for j, d_lat in enumerate(latent_dims):
            net = _random_generator_net(d_lat, ambient_dim, hidden, with_bias, slope, bias_scale, rng)
            latent = rng.standard_normal((n_per_manifold, d_lat))
            blocks.append(net(latent))
            labels.append(np.full(n_per_manifold, j, dtype=np.int64))
        points = np.vstack(blocks)
        labels = np.concatenate(labels)
        if min_separation <= 0 or _min_cross_distance(points, labels) >= min_separation:
            meta = {
                "generator": "random-mlp",
                "latent_dims": list(latent_dims),
                "with_bias": with_bias,
                "n_per_manifold": n_per_manifold,
                "ambient_dim": ambient_dim,
                "seed": seed,
                "attempt": attempt,
                "hidden": list(hidden),
                "slope": slope,
                "bias_scale": bias_scale,
                "min_separation": min_separation,
            }
            return Dataset(points, labels, meta)
    raise RuntimeError(
        f"no seed within {max_attempts} attempts gave inter-manifold distance >= {min_separation}"
    )


def gaussian_augment(x: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """One augmented view: x plus iid Gaussian noise of the given magnitude."""
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    x = np.asarray(x, dtype=np.float64)
    if sigma == 0:
        return x.copy()
    return x + sigma * rng.standard_normal(x.shape)


def _sidecar_path(path) -> str:
    return f"{os.fspath(path)}.meta.json"


def save_csv(dataset: Dataset, path, sidecar: bool = True) -> None:
    """Write points (and labels, if any) as CSV with full float precision.

    Header is ``x0,...,x{d-1}[,label]``; values use %.17g so doubles
    round-trip exactly. A ``<path>.meta.json`` sidecar records the generator
    metadata.
    """
    d = dataset.ambient_dim
    cols = [f"x{i}" for i in range(d)]
    if dataset.labels is not None:
        cols.append("label")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(dataset.n_points):
            row = [f"{v:.17g}" for v in dataset.points[i]]
            if dataset.labels is not None:
                row.append(str(int(dataset.labels[i])))
            fh.write(",".join(row) + "\n")
    if sidecar:
        with open(_sidecar_path(path), "w", encoding="utf-8") as fh:
            json.dump(dataset.meta, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_csv(path) -> Dataset:
    """Read a dataset written by :func:`save_csv`; errors name the bad line."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty file")
    header = lines[0].split(",")
    has_labels = header and header[-1] == "label"
    n_cols = len(header)
    d = n_cols - 1 if has_labels else n_cols
    if d < 1:
        raise ValueError(f"{path}: header has no coordinate columns")

    points = np.empty((len(lines) - 1, d))
    labels = np.empty(len(lines) - 1, dtype=np.int64) if has_labels else None
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != n_cols:
            raise ValueError(f"{path}: line {lineno}: expected {n_cols} columns, got {len(cells)}")
        try:
            points[lineno - 2] = [float(c) for c in cells[:d]]
        except ValueError:
            raise ValueError(f"{path}: line {lineno}: non-numeric coordinate") from None
        if has_labels:
            try:
                labels[lineno - 2] = int(cells[-1])
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: non-integer label") from None
    if not np.isfinite(points).all():
        raise ValueError(f"{path}: non-finite coordinates")

    meta = {}
    sidecar = _sidecar_path(path)
    if os.path.exists(sidecar):
        with open(sidecar, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    return Dataset(points, labels, meta)
