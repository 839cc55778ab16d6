"""The coding-rate loss family.

The building block is the Gaussian coding rate of a feature batch,
``0.5 * logdet(I + (d / eps^2) * cov(Z))`` with ``cov`` the uncentered second
moment. Partitioning the batch with a (soft) cluster assignment gives a
per-cluster rate; their difference is the rate reduction that training
maximizes. Two composite losses are exposed: an expansion objective over
two augmented views (total coding rate) and the full joint
clustering-and-embedding objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

EMPTY_CLUSTER_MASS = 1e-8


@dataclass(frozen=True)
class CodingRateParams:
    """Distortion and feature dimension of the coding-rate model."""

    epsilon: float
    d_emb: int

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.d_emb < 1:
            raise ValueError(f"d_emb must be at least 1, got {self.d_emb}")

    @property
    def alpha(self) -> float:
        """Scale d / eps^2 applied to the second moment."""
        return self.d_emb / self.epsilon**2


def _check_features(z: ad.Var, params: CodingRateParams) -> None:
    if z.shape[1] != params.d_emb:
        raise ValueError(f"feature dim {z.shape[1]} != params.d_emb {params.d_emb}")


def coding_rate(z: ad.Var, params: CodingRateParams) -> ad.Var:
    """Volume of the whole feature batch at distortion epsilon (scalar node)."""
    _check_features(z, params)
    eye = ad.Var(np.eye(params.d_emb))
    return 0.5 * ad.logdet_spd(eye + params.alpha * ad.second_moment(z))


def per_cluster_rate(z: ad.Var, gamma: ad.Var, params: CodingRateParams) -> ad.Var:
    """Assignment-weighted sum of per-cluster coding rates.

    Cluster j with soft mass m_j = sum_i gamma_ij contributes
    (m_j / m) * 0.5 * logdet(I + alpha / m_j * Z' diag(gamma_j) Z);
    clusters with mass below ``EMPTY_CLUSTER_MASS`` contribute nothing.
    Gradients flow through both the features and the assignment.
    """
    _check_features(z, params)
    m = z.shape[0]
    if gamma.shape[0] != m:
        raise ValueError(f"assignment rows {gamma.shape[0]} != feature rows {m}")
    if np.any(gamma.value < 0):
        raise ValueError("assignment has negative entries")
    eye = ad.Var(np.eye(params.d_emb))
    total = ad.Var(0.0)
    for j in range(gamma.shape[1]):
        col = ad.column(gamma, j)
        mass = ad.sum_all(col)
        if mass.item() < EMPTY_CLUSTER_MASS:
            continue
        weighted = ad.matmul(ad.transpose(z), col * z)
        inner = eye + params.alpha * (weighted / mass)
        total = total + (mass * (0.5 / m)) * ad.logdet_spd(inner)
    return total


def rate_reduction(z: ad.Var, gamma: ad.Var, params: CodingRateParams) -> ad.Var:
    """Total rate minus per-cluster rate; what clustering tries to maximize."""
    return coding_rate(z, params) - per_cluster_rate(z, gamma, params)


def view_alignment_penalty(z: ad.Var, z_prime: ad.Var) -> ad.Var:
    """Mean of (1 - cosine) over aligned rows of the two views.

    Zero iff every pair points the same way, 2 for antipodal pairs. Row i of
    both inputs must come from augmentations of the same sample.
    """
    if z.shape != z_prime.shape:
        raise ValueError(f"view shapes differ: {z.shape} vs {z_prime.shape}")
    m = z.shape[0]
    cos_sum = ad.sum_all(ad.row_normalize(z) * ad.row_normalize(z_prime))
    return 1.0 - cos_sum / float(m)


def tcr_terms(
    z: ad.Var, z_prime: ad.Var, params: CodingRateParams, lam: float
) -> dict[str, ad.Var]:
    """Total-coding-rate objective split into its named terms."""
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    both = ad.concat_rows(z, z_prime)
    total = coding_rate(both, params)
    penalty = view_alignment_penalty(z, z_prime)
    return {"loss": -total + lam * penalty, "total_rate": total, "constraint_d": penalty}


def tcr_loss(
    z: ad.Var, z_prime: ad.Var, params: CodingRateParams, lam: float
) -> ad.Var:
    """Total-coding-rate objective: expand the volume of the concatenated
    views while keeping them aligned.

    Minimizing ``-R(concat) + lam * alignment`` spreads the features over the
    sphere (uniform spectrum, diagonal covariance) without collapsing the
    augmentation pairs.
    """
    return tcr_terms(z, z_prime, params, lam)["loss"]


def average_features(z: ad.Var, z_prime: ad.Var) -> ad.Var:
    """Row-wise mean of two unit-norm views, re-normalized to the sphere."""
    return ad.row_normalize(0.5 * (z + z_prime))


def clustering_terms(
    z: ad.Var,
    z_prime: ad.Var,
    gamma_avg: ad.Var,
    params: CodingRateParams,
    lam: float,
) -> dict[str, ad.Var]:
    """Joint clustering-and-embedding objective split into its named terms."""
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    z_avg = average_features(z, z_prime)
    total = coding_rate(z_avg, params)
    clusterwise = per_cluster_rate(z_avg, gamma_avg, params)
    penalty = view_alignment_penalty(z, z_prime)
    return {
        "loss": clusterwise - total + lam * penalty,
        "total_rate": total,
        "cluster_rate": clusterwise,
        "constraint_d": penalty,
    }


def clustering_loss(
    z: ad.Var,
    z_prime: ad.Var,
    gamma_avg: ad.Var,
    params: CodingRateParams,
    lam: float,
) -> ad.Var:
    """Joint clustering-and-embedding objective over two augmented views.

    Computes ``per_cluster_rate(z_avg) - coding_rate(z_avg) + lam * alignment``
    on the re-normalized view average, i.e. minus the rate reduction plus the
    alignment constraint. ``gamma_avg`` must already be the view-averaged
    assignment.
    """
    return clustering_terms(z, z_prime, gamma_avg, params, lam)["loss"]


def singular_value_identity_check(z: np.ndarray) -> tuple[float, float, float]:
    """Compare logdet(I + Z'Z) against sum(log(1 + sigma_i^2)).

    The left side goes through the production Cholesky log-det, the right
    side through an SVD; returns (lhs, rhs, absolute difference).
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {z.shape}")
    lhs = ad.logdet_spd(ad.Var(np.eye(z.shape[1]) + z.T @ z)).item()
    rhs = float(np.log1p(np.linalg.svd(z, compute_uv=False) ** 2).sum())
    return lhs, rhs, abs(lhs - rhs)
