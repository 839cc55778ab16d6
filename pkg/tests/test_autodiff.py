import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ratecluster import autodiff as ad


def unit_rows(rng, m, d):
    z = rng.standard_normal((m, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


class TestMatmul:
    def test_identity(self):
        a = np.arange(4.0).reshape(2, 2)
        out = ad.matmul(ad.Var(np.eye(2)), ad.Var(a))
        np.testing.assert_array_equal(out.value, a)

    def test_hand_arithmetic(self):
        out = ad.matmul(ad.Var([[1.0, 2.0], [3.0, 4.0]]), ad.Var([[1.0], [1.0]]))
        np.testing.assert_array_equal(out.value, [[3.0], [7.0]])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="matmul"):
            ad.matmul(ad.Var(np.ones((2, 3))), ad.Var(np.ones((2, 3))))

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(3)
        b = rng.standard_normal((3, 5))
        err = ad.finite_diff_check(
            lambda v: ad.sum_all(ad.matmul(v["a"], ad.Var(b))),
            {"a": rng.standard_normal((4, 3))},
        )
        assert err <= 1e-6

    def test_backward_formulas(self):
        rng = np.random.default_rng(4)
        a, b = ad.Var(rng.standard_normal((3, 4))), ad.Var(rng.standard_normal((4, 2)))
        out = ad.sum_all(ad.matmul(a, b))
        out.backward()
        g = np.ones((3, 2))
        np.testing.assert_allclose(a.grad, g @ b.value.T, rtol=1e-12)
        np.testing.assert_allclose(b.grad, a.value.T @ g, rtol=1e-12)


class TestActivation:
    def test_elu_closed_forms(self):
        x = ad.Var([[0.0, -1.0, -50.0, 2.0]])
        out = ad.activation(x, "elu")
        np.testing.assert_allclose(
            out.value, [[0.0, np.exp(-1) - 1, np.expm1(-50.0), 2.0]], atol=1e-12
        )
        assert out.value[0, 1] == pytest.approx(-0.6321, abs=1e-4)
        assert out.value[0, 2] == pytest.approx(-1.0, abs=1e-12)  # -inf limit

    def test_elu_derivative_at_zero_is_one(self):
        x = ad.Var([[0.0]])
        ad.sum_all(ad.activation(x, "elu")).backward()
        assert x.grad[0, 0] == 1.0

    def test_leaky_relu(self):
        out = ad.activation(ad.Var([[-2.0]]), "leaky_relu", slope=0.2)
        assert out.value[0, 0] == pytest.approx(-0.4)

    def test_relu(self):
        out = ad.activation(ad.Var([[-2.0, 3.0]]), "relu")
        np.testing.assert_array_equal(out.value, [[0.0, 3.0]])

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="activation"):
            ad.activation(ad.Var([[1.0]]), "gelu")

    @pytest.mark.parametrize("kind", ["elu", "relu", "leaky_relu"])
    def test_gradient(self, kind):
        rng = np.random.default_rng(5)
        w = rng.standard_normal((4, 6))
        # keep entries away from the relu kink where the derivative jumps
        x0 = rng.standard_normal((4, 6))
        x0[np.abs(x0) < 0.05] = 0.5
        err = ad.finite_diff_check(
            lambda v: ad.sum_all(ad.activation(v["x"], kind) * ad.Var(w)), {"x": x0}
        )
        assert err <= 1e-6


class TestRowNormalize:
    def test_three_four_five(self):
        out = ad.row_normalize(ad.Var([[3.0, 4.0]]))
        np.testing.assert_allclose(out.value, [[0.6, 0.8]], rtol=1e-15)

    def test_unit_row_unchanged(self):
        row = np.array([[1.0, 0.0, 0.0]])
        np.testing.assert_allclose(ad.row_normalize(ad.Var(row)).value, row, atol=1e-15)

    def test_zero_row_names_index(self):
        with pytest.raises(ValueError, match="row 1"):
            ad.row_normalize(ad.Var([[1.0, 0.0], [0.0, 0.0]]))

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(6)
        w = rng.standard_normal((5, 3))
        err = ad.finite_diff_check(
            lambda v: ad.sum_all(ad.row_normalize(v["z"]) * ad.Var(w)),
            {"z": rng.standard_normal((5, 3))},
        )
        assert err <= 1e-6

    def test_gradient_tangent_to_sphere(self):
        rng = np.random.default_rng(7)
        z = ad.Var(rng.standard_normal((4, 3)))
        out = ad.row_normalize(z)
        ad.sum_all(out * ad.Var(rng.standard_normal((4, 3)))).backward()
        y = out.value
        # the pulled-back gradient has no radial component
        radial = (z.grad * y).sum(axis=1)
        np.testing.assert_allclose(radial, 0.0, atol=1e-12)


class TestSecondMoment:
    def test_zero(self):
        out = ad.second_moment(ad.Var(np.zeros((3, 2))))
        np.testing.assert_array_equal(out.value, np.zeros((2, 2)))

    def test_orthonormal_rows(self):
        out = ad.second_moment(ad.Var(np.eye(4)))
        np.testing.assert_allclose(out.value, np.eye(4) / 4.0, rtol=1e-15)

    def test_exact_symmetry(self):
        rng = np.random.default_rng(8)
        out = ad.second_moment(ad.Var(rng.standard_normal((50, 7))))
        np.testing.assert_array_equal(out.value, out.value.T)

    def test_gradient(self):
        rng = np.random.default_rng(9)
        w = rng.standard_normal((3, 3))
        err = ad.finite_diff_check(
            lambda v: ad.sum_all(ad.second_moment(v["z"]) * ad.Var(w)),
            {"z": rng.standard_normal((6, 3))},
        )
        assert err <= 1e-6


class TestLogdetSpd:
    def test_identity(self):
        assert ad.logdet_spd(ad.Var(np.eye(2))).item() == 0.0

    def test_diag_2_3(self):
        out = ad.logdet_spd(ad.Var(np.diag([2.0, 3.0])))
        assert out.item() == pytest.approx(np.log(6.0), rel=1e-12)
        assert out.item() == pytest.approx(1.791759, abs=1e-6)

    def test_gradient_at_identity_is_identity(self):
        m = ad.Var(np.eye(3))
        ad.logdet_spd(m).backward()
        np.testing.assert_allclose(m.grad, np.eye(3), atol=1e-12)

    def test_gradient_is_symmetrized_inverse(self):
        rng = np.random.default_rng(10)
        a = rng.standard_normal((4, 4))
        spd = a @ a.T + 4.0 * np.eye(4)
        m = ad.Var(spd)
        ad.logdet_spd(m).backward()
        np.testing.assert_allclose(m.grad, np.linalg.inv(spd), rtol=1e-10)
        np.testing.assert_allclose(m.grad, m.grad.T, atol=1e-14)

    def test_gradient_vs_finite_differences_5x5(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((5, 5))
        spd = a @ a.T + 5.0 * np.eye(5)
        err = ad.finite_diff_check(lambda v: ad.logdet_spd(v["m"]), {"m": spd})
        assert err <= 1e-6

    def test_non_spd_raises_after_jitter_retry(self):
        with pytest.raises(ad.PositiveDefiniteError):
            ad.logdet_spd(ad.Var(np.diag([1.0, -1.0])))

    def test_jitter_rescues_semidefinite(self):
        # singular but PSD: one retry with jitter must succeed
        out = ad.logdet_spd(ad.Var(np.diag([1.0, 0.0])))
        assert np.isfinite(out.item())


class TestGumbelSoftmax:
    def test_eval_symmetric_logits(self):
        out = ad.gumbel_softmax(ad.Var([[0.0, 0.0]]), train_mode=False)
        np.testing.assert_allclose(out.value, [[0.5, 0.5]], rtol=1e-15)

    def test_eval_large_gap(self):
        out = ad.gumbel_softmax(ad.Var([[10.0, 0.0]]), train_mode=False)
        expected = np.exp([10.0, 0.0]) / np.exp([10.0, 0.0]).sum()
        np.testing.assert_allclose(out.value, [expected], rtol=1e-12)
        assert out.value[0, 0] == pytest.approx(0.9999546, abs=1e-7)
        assert out.value[0, 1] == pytest.approx(4.54e-5, rel=1e-2)

    def test_eval_deterministic(self):
        logits = np.array([[0.3, -1.2, 0.8]])
        a = ad.gumbel_softmax(ad.Var(logits), train_mode=False).value
        b = ad.gumbel_softmax(ad.Var(logits), train_mode=False).value
        np.testing.assert_array_equal(a, b)

    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 5.0))
    @settings(max_examples=30, deadline=None)
    def test_train_rows_sum_to_one(self, seed, temperature):
        rng = np.random.default_rng(seed)
        logits = ad.Var(10.0 * rng.standard_normal((7, 4)))
        out = ad.gumbel_softmax(logits, temperature, rng=rng, train_mode=True)
        np.testing.assert_allclose(out.value.sum(axis=1), 1.0, atol=1e-12)

    def test_train_needs_rng(self):
        with pytest.raises(ValueError, match="rng"):
            ad.gumbel_softmax(ad.Var([[0.0, 1.0]]), train_mode=True)

    def test_bad_temperature(self):
        with pytest.raises(ValueError, match="temperature"):
            ad.gumbel_softmax(ad.Var([[0.0]]), temperature=0.0, train_mode=False)

    def test_gradient_frozen_noise(self):
        rng = np.random.default_rng(12)
        w = rng.standard_normal((5, 3))

        def loss(v):
            soft = ad.gumbel_softmax(
                v["logits"], temperature=0.7, rng=np.random.default_rng(99), train_mode=True
            )
            return ad.sum_all(soft * ad.Var(w))

        err = ad.finite_diff_check(loss, {"logits": rng.standard_normal((5, 3))})
        assert err <= 1e-6


class TestAdam:
    def test_zero_gradient_no_decay_keeps_params(self):
        params = {"w": ad.Var(np.full((2, 2), 1.5))}
        state = ad.AdamState.for_params(params)
        ad.adam_step(params, {"w": np.zeros((2, 2))}, state, lr=0.1, weight_decay=0.0)
        np.testing.assert_array_equal(params["w"].value, np.full((2, 2), 1.5))

    def test_first_step_matches_hand_computation(self):
        # bias-corrected m_hat = v_hat = 1, so the step is -lr / (1 + eps)
        params = {"w": ad.Var(np.zeros((1, 1)))}
        state = ad.AdamState.for_params(params)
        ad.adam_step(params, {"w": np.ones((1, 1))}, state, lr=0.1)
        assert params["w"].value[0, 0] == pytest.approx(-0.1, abs=1e-8)
        assert state.step_count == 1

    def test_parameters_update_independently(self):
        params = {"a": ad.Var(np.zeros((1, 1))), "b": ad.Var(np.full((1, 1), 2.0))}
        state = ad.AdamState.for_params(params)
        ad.adam_step(params, {"a": np.ones((1, 1)), "b": np.zeros((1, 1))}, state, lr=0.1)
        assert params["a"].value[0, 0] != 0.0
        assert params["b"].value[0, 0] == 2.0

    def test_decoupled_weight_decay(self):
        params = {"w": ad.Var(np.full((1, 1), 10.0))}
        state = ad.AdamState.for_params(params)
        ad.adam_step(params, {"w": np.zeros((1, 1))}, state, lr=0.1, weight_decay=0.01)
        # zero gradient: the only change is -lr * wd * w
        assert params["w"].value[0, 0] == pytest.approx(10.0 - 0.1 * 0.01 * 10.0, rel=1e-12)

    def test_bad_lr(self):
        params = {"w": ad.Var(np.zeros((1, 1)))}
        with pytest.raises(ValueError, match="lr"):
            ad.adam_step(params, {"w": np.zeros((1, 1))}, ad.AdamState.for_params(params), lr=0.0)


class TestBackwardSemantics:
    def test_reused_node_accumulates(self):
        x = ad.Var([[3.0]])
        y = ad.activation(x, "elu")
        (y + y).backward()
        assert x.grad[0, 0] == 2.0

    def test_backward_requires_scalar(self):
        with pytest.raises(ValueError, match="scalar"):
            ad.Var(np.ones((2, 2))).backward()

    def test_broadcast_add_bias(self):
        x = ad.Var(np.ones((4, 3)))
        b = ad.Var(np.zeros((1, 3)))
        ad.sum_all(x + b).backward()
        np.testing.assert_array_equal(b.grad, np.full((1, 3), 4.0))

    def test_diamond_graph(self):
        # f(x) = sum(x*x + x*x); df/dx = 4x
        x = ad.Var([[2.0, -1.0]])
        y = x * x
        ad.sum_all(y + y).backward()
        np.testing.assert_allclose(x.grad, [[8.0, -4.0]], rtol=1e-15)

    def test_non_finite_raises(self):
        with pytest.raises(ad.NonFiniteError):
            ad.Var([[1.0]]) / ad.Var([[0.0]])

    def test_nan_input_rejected(self):
        with pytest.raises(ad.NonFiniteError):
            ad.Var([[np.nan]])


class TestFiniteDiffCheck:
    def test_quadratic_is_tight(self):
        # loss = 0.5 * ||x||^2 has exact gradient x
        err = ad.finite_diff_check(
            lambda v: 0.5 * ad.sum_all(v["x"] * v["x"]), {"x": np.array([[1.0, 2.0]])}
        )
        assert err <= 1e-8

    def test_detects_wrong_gradient(self):
        # negative control: a deliberately wrong backward must be flagged
        def bad_square(x):
            value = x.value**2

            def backward(g):
                x.grad += g  # wrong: should be 2 * x * g

            return ad.Var(value, (x,), backward)

        err = ad.finite_diff_check(
            lambda v: ad.sum_all(bad_square(v["x"])), {"x": np.array([[1.0, 2.0]])}
        )
        assert err > 0.1

    def test_bad_h(self):
        with pytest.raises(ValueError, match="h"):
            ad.finite_diff_check(lambda v: ad.sum_all(v["x"]), {"x": np.ones((1, 1))}, h=0.0)


@given(st.integers(0, 2**32 - 1), st.integers(2, 16), st.integers(2, 16))
@settings(max_examples=25, deadline=None)
def test_every_core_op_passes_gradcheck(seed, m, d):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((m, d))
    z0 = rng.standard_normal((m, d)) + 0.1

    def loss(v):
        z = v["z"]
        a = ad.activation(z, "elu")
        n = ad.row_normalize(a + ad.Var(np.full((m, d), 3.0)))
        cov = ad.second_moment(n)
        return ad.logdet_spd(ad.Var(np.eye(d)) + cov * 2.0) + ad.sum_all(n * ad.Var(w)) / m

    err = ad.finite_diff_check(loss, {"z": z0}, max_coords=12, rng=rng)
    assert err <= 1e-4
