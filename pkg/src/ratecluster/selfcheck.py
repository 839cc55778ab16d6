"""Built-in verification: gradient checks, the log-det/SVD identity, and
metric cross-checks against brute force. ``ratecluster check`` runs these
and fails loudly if any regresses."""

from __future__ import annotations

import itertools

import numpy as np

from . import autodiff as ad
from . import evaluation, model, objectives


def _random_unit_rows(rng, m, d):
    z = rng.standard_normal((m, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _gradient_checks(rng) -> list[tuple[str, bool, str]]:
    params = objectives.CodingRateParams(epsilon=0.5, d_emb=4)
    z = _random_unit_rows(rng, 16, 4)
    z2 = _random_unit_rows(rng, 16, 4)
    logits = rng.standard_normal((16, 3))
    gamma = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    spd = rng.standard_normal((5, 5))
    spd = spd @ spd.T + 5.0 * np.eye(5)

    cases = {
        "grad matmul": (
            lambda v: ad.sum_all(ad.matmul(v["a"], v["b"])),
            {"a": rng.standard_normal((4, 3)), "b": rng.standard_normal((3, 5))},
            1e-6,
        ),
        "grad row_normalize": (
            lambda v: ad.sum_all(ad.row_normalize(v["z"]) * ad.Var(rng.standard_normal((6, 4)))),
            {"z": rng.standard_normal((6, 4))},
            1e-6,
        ),
        "grad logdet_spd": (
            lambda v: ad.logdet_spd(v["m"]),
            {"m": spd},
            1e-6,
        ),
        "grad coding_rate": (
            lambda v: objectives.coding_rate(v["z"], params),
            {"z": z},
            1e-4,
        ),
        "grad per_cluster_rate": (
            lambda v: objectives.per_cluster_rate(v["z"], v["gamma"], params),
            {"z": z, "gamma": gamma},
            1e-4,
        ),
        "grad alignment": (
            lambda v: objectives.view_alignment_penalty(v["z"], v["z2"]),
            {"z": z, "z2": z2},
            1e-4,
        ),
        "grad tcr_loss": (
            lambda v: objectives.tcr_loss(v["z"], v["z2"], params, lam=2.0),
            {"z": z, "z2": z2},
            1e-4,
        ),
        "grad clustering_loss": (
            lambda v: objectives.clustering_loss(v["z"], v["z2"], ad.Var(gamma), params, lam=2.0),
            {"z": z, "z2": z2},
            1e-4,
        ),
    }
    results = []
    for name, (loss_fn, arrays, tol) in cases.items():
        err = ad.finite_diff_check(loss_fn, arrays, rng=np.random.default_rng(1))
        results.append((name, err <= tol, f"max rel err {err:.2e} (tol {tol:.0e})"))
    return results


def _encoder_gradient_check(rng) -> list[tuple[str, bool, str]]:
    spec = model.MlpSpec(input_dim=3, hidden_widths=(8,), feature_dim=4, n_clusters=2)
    x = rng.standard_normal((6, 3))
    rate = objectives.CodingRateParams(epsilon=0.5, d_emb=4)
    base = model.init_mlp(spec, seed=5)
    arrays = {k: p.value for k, p in base.items()}

    def loss_fn(vars_):
        out1 = model.forward(spec, vars_, x, train_mode=True, rng=np.random.default_rng(7))
        out2 = model.forward(spec, vars_, x + 0.05, train_mode=True, rng=np.random.default_rng(8))
        gamma_avg = 0.5 * (out1.assignment + out2.assignment)
        return objectives.clustering_terms(
            out1.features, out2.features, gamma_avg, rate, lam=3.0
        )["loss"]

    err = ad.finite_diff_check(loss_fn, arrays, max_coords=8, rng=np.random.default_rng(2))
    return [("grad encoder end-to-end", err <= 1e-4, f"max rel err {err:.2e} (tol 1e-04)")]


def _identity_checks(rng) -> list[tuple[str, bool, str]]:
    worst = 0.0
    for _ in range(50):
        m = int(rng.integers(1, 33))
        d = int(rng.integers(1, 17))
        scale = 10.0 ** rng.uniform(-1, 1)
        _, _, diff = objectives.singular_value_identity_check(scale * rng.standard_normal((m, d)))
        worst = max(worst, diff)
    return [("logdet/singular-value identity", worst <= 1e-8, f"max |lhs-rhs| {worst:.2e} (tol 1e-08)")]


def _brute_force_match(counts: np.ndarray) -> float:
    n = counts.shape[0]
    return max(sum(counts[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def _metric_checks(rng) -> list[tuple[str, bool, str]]:
    results = []

    ok = True
    for _ in range(60):
        n = int(rng.integers(1, 6))
        counts = rng.integers(0, 20, size=(n, n))
        perm = evaluation.hungarian_match(counts)
        mass = counts[np.arange(n), perm].sum()
        if mass != _brute_force_match(counts) or sorted(perm) != list(range(n)):
            ok = False
            break
    results.append(("hungarian vs exhaustive", ok, "60 random matrices, n <= 5"))

    ok = True
    detail = "40 random label pairs, N=12, n<=3"
    for _ in range(40):
        pred = rng.integers(0, 3, size=12)
        true = rng.integers(0, 3, size=12)
        # pairwise-agreement ARI oracle
        same_p = pred[:, None] == pred[None, :]
        same_t = true[:, None] == true[None, :]
        iu = np.triu_indices(12, k=1)
        a = np.sum(same_p[iu] & same_t[iu])
        b = np.sum(~same_p[iu] & ~same_t[iu])
        total = len(iu[0])
        exp_idx = (np.sum(same_p[iu]) * np.sum(same_t[iu]) + (total - np.sum(same_p[iu])) * (total - np.sum(same_t[iu]))) / total
        max_idx = total
        denom = max_idx - exp_idx
        ari_oracle = 1.0 if denom == 0 else (a + b - exp_idx) / denom
        if abs(evaluation.ari(pred, true) - ari_oracle) > 1e-12:
            ok = False
            detail = f"ARI mismatch on pred={pred.tolist()} true={true.tolist()}"
            break
        # direct-definition NMI oracle
        n_samples = 12
        mi = 0.0
        for i in np.unique(pred):
            for j in np.unique(true):
                nij = np.sum((pred == i) & (true == j))
                if nij:
                    mi += nij / n_samples * np.log(nij * n_samples / (np.sum(pred == i) * np.sum(true == j)))
        hp = -sum(
            np.sum(pred == i) / n_samples * np.log(np.sum(pred == i) / n_samples)
            for i in np.unique(pred)
        )
        ht = -sum(
            np.sum(true == j) / n_samples * np.log(np.sum(true == j) / n_samples)
            for j in np.unique(true)
        )
        nmi_oracle = 1.0 if hp == 0 and ht == 0 else max(0.0, mi / ((hp + ht) / 2))
        if abs(evaluation.nmi(pred, true) - nmi_oracle) > 1e-12:
            ok = False
            detail = f"NMI mismatch on pred={pred.tolist()} true={true.tolist()}"
            break
    results.append(("ari/nmi vs direct formulas", ok, detail))

    acc = evaluation.clustering_accuracy([0, 0, 1, 1], [1, 1, 0, 0])
    results.append(("accuracy permutation invariance", acc == 1.0, f"swapped labels give {acc}"))
    return results


def run_all(verbose: bool = True) -> bool:
    """Run every check; print one PASS/FAIL line each; True iff all passed."""
    rng = np.random.default_rng(20240)
    checks = (
        _gradient_checks(rng)
        + _encoder_gradient_check(rng)
        + _identity_checks(rng)
        + _metric_checks(rng)
    )
    all_ok = True
    for name, ok, detail in checks:
        all_ok &= ok
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'}  {name:34s} {detail}")
    if verbose:
        print("all checks passed" if all_ok else "SOME CHECKS FAILED")
    return all_ok
