import numpy as np
import pytest

from herdweight.engine import (Tensor, add, bmm, concat_last, dropout,
                               gather_points, gradient_check, huber_loss,
                               leaky_relu, linear, mean_all, mul, pool_points,
                               reduce_max, reduce_mean, relu, reshape,
                               scale_shift, smooth_l1_loss, sub, sum_all)
from herdweight.errors import ShapeError

RNG = np.random.default_rng(20240601)


def rand(*shape, lo=-2.0, hi=2.0):
    return RNG.uniform(lo, hi, size=shape)


class TestForwardValues:
    def test_linear_identity_weights(self):
        out = linear(Tensor([[1.0, 2.0]]), Tensor(np.eye(2)), Tensor(np.zeros(2)))
        assert np.array_equal(out.data, [[1.0, 2.0]])

    def test_linear_bias_only(self):
        out = linear(Tensor([[1.0, 2.0]]), Tensor(np.zeros((2, 2))),
                     Tensor([3.0, 4.0]))
        assert np.array_equal(out.data, [[3.0, 4.0]])

    def test_linear_weight_gradient_of_sum(self):
        x = Tensor([[1.0, 2.0]])
        w = Tensor(np.zeros((2, 2)), requires_grad=True)
        out = sum_all(linear(x, w, Tensor(np.zeros(2))))
        out.backward()
        assert np.array_equal(w.grad, [[1.0, 1.0], [2.0, 2.0]])

    def test_linear_shape_error_names_shapes(self):
        with pytest.raises(ShapeError, match=r"\(1, 3\).*\(2, 2\)"):
            linear(Tensor(np.ones((1, 3))), Tensor(np.ones((2, 2))))

    def test_relu_values(self):
        out = relu(Tensor([-1.0, 0.0, 2.0]))
        assert np.array_equal(out.data, [0.0, 0.0, 2.0])

    def test_leaky_relu_values(self):
        out = leaky_relu(Tensor([-1.0]), 0.2)
        assert out.data[0] == pytest.approx(-0.2)

    def test_relu_subgradient_zero_at_kink(self):
        x = Tensor([0.0], requires_grad=True)
        sum_all(relu(x)).backward()
        assert x.grad[0] == 0.0

    def test_pool_single_point(self):
        x = Tensor(rand(2, 1, 4))
        assert np.array_equal(pool_points(x, "max").data, x.data[:, 0])
        assert np.allclose(pool_points(x, "avg").data, x.data[:, 0])

    def test_pool_hand_values(self):
        x = Tensor(np.array([[[1.0], [3.0], [2.0]]]))
        assert pool_points(x, "max").data[0, 0] == 3.0
        assert pool_points(x, "avg").data[0, 0] == 2.0

    def test_pool_permutation_invariant(self):
        x = rand(3, 20, 5)
        perm = RNG.permutation(20)
        for kind in ("max", "avg"):
            a = pool_points(Tensor(x), kind).data
            b = pool_points(Tensor(x[:, perm]), kind).data
            assert np.allclose(a, b, atol=1e-12)

    def test_max_pool_gradient_ties_to_first_index(self):
        x = Tensor(np.array([[[2.0], [2.0], [1.0]]]), requires_grad=True)
        sum_all(pool_points(x, "max")).backward()
        assert np.array_equal(x.grad[0, :, 0], [1.0, 0.0, 0.0])

    def test_pool_empty_axis_errors(self):
        with pytest.raises(ShapeError):
            pool_points(Tensor(np.zeros((2, 0, 3))), "max")

    def test_losses_at_zero_residual(self):
        p = Tensor([1.0, 2.0])
        assert smooth_l1_loss(p, Tensor([1.0, 2.0])).data == 0.0
        assert huber_loss(p, Tensor([1.0, 2.0])).data == 0.0

    def test_smooth_l1_hand_value(self):
        # r=0.5, beta=1 -> 0.5 r^2/beta = 0.125
        out = smooth_l1_loss(Tensor([0.5]), Tensor([0.0]))
        assert out.data == pytest.approx(0.125)

    def test_huber_hand_value(self):
        # r=2, delta=1 -> 1*(2-0.5) = 1.5
        out = huber_loss(Tensor([2.0]), Tensor([0.0]))
        assert out.data == pytest.approx(1.5)

    def test_loss_empty_batch_errors(self):
        with pytest.raises(ValueError):
            smooth_l1_loss(Tensor(np.zeros(0)), Tensor(np.zeros(0)))

    def test_bmm_applies_per_batch_transform(self):
        x = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
        t = np.stack([2 * np.eye(2), 3 * np.eye(2)])
        out = bmm(Tensor(x), Tensor(t))
        assert np.allclose(out.data, [[[2.0, 0.0]], [[0.0, 3.0]]])

    def test_gather_points(self):
        x = Tensor(np.arange(12, dtype=float).reshape(1, 4, 3))
        idx = np.array([[[1], [0], [3], [2]]])
        out = gather_points(x, idx)
        assert np.array_equal(out.data[0, 0, 0], x.data[0, 1])

    def test_gather_rejects_bad_index(self):
        x = Tensor(np.zeros((1, 4, 3)))
        with pytest.raises(ShapeError):
            gather_points(x, np.array([[[4]]]))
        with pytest.raises(ShapeError):
            gather_points(x, np.array([[[-1]]]))


class TestDropout:
    def test_p_zero_is_identity(self):
        x = Tensor(rand(5, 5))
        assert np.array_equal(dropout(x, 0.0, True).data, x.data)

    def test_eval_is_identity(self):
        x = Tensor(rand(5, 5))
        assert np.array_equal(dropout(x, 0.9, False).data, x.data)

    def test_expectation_preserved(self):
        x = Tensor(np.ones(100_000))
        out = dropout(x, 0.5, True, np.random.default_rng(0))
        assert 0.98 <= out.data.mean() <= 1.02

    def test_seeded_reproducible(self):
        x = Tensor(rand(200))
        a = dropout(x, 0.3, True, np.random.default_rng(7)).data
        b = dropout(x, 0.3, True, np.random.default_rng(7)).data
        assert np.array_equal(a, b)

    def test_p_one_rejected(self):
        with pytest.raises(ValueError):
            dropout(Tensor([1.0]), 1.0, True, np.random.default_rng(0))


class TestBackwardGraph:
    def test_diamond_graph_accumulates_once(self):
        x = Tensor([3.0], requires_grad=True)
        u = mul(x, Tensor([2.0]))
        v = mul(x, Tensor([3.0]))
        out = sum_all(add(u, v))
        out.backward()
        assert x.grad[0] == pytest.approx(5.0)

    def test_reuse_in_three_branches(self):
        x = Tensor(rand(4), requires_grad=True)
        out = sum_all(add(add(x, x), x))
        out.backward()
        assert np.allclose(x.grad, 3.0)

    def test_backward_needs_scalar(self):
        x = Tensor(rand(3), requires_grad=True)
        with pytest.raises(ShapeError):
            add(x, x).backward()

    def test_no_graph_without_requires_grad(self):
        out = relu(linear(Tensor(rand(2, 3)), Tensor(rand(3, 4))))
        assert out.parents == () and not out.requires_grad


GRAD_CASES = {
    "linear": lambda ts: sum_all(linear(ts[0], ts[1], ts[2])),
    "bmm": lambda ts: sum_all(bmm(ts[0], ts[1])),
    "relu_chain": lambda ts: sum_all(relu(linear(ts[0], ts[1], ts[2]))),
    "leaky_chain": lambda ts: sum_all(leaky_relu(linear(ts[0], ts[1], ts[2]), 0.2)),
    "pool_max": lambda ts: sum_all(pool_points(ts[0], "max")),
    "pool_avg": lambda ts: sum_all(pool_points(ts[0], "avg")),
    "concat_mul": lambda ts: sum_all(mul(concat_last([ts[0], ts[1]]), ts[2])),
    "smooth_l1": lambda ts: smooth_l1_loss(ts[0], ts[1]),
    "huber": lambda ts: huber_loss(ts[0], ts[1]),
    "sub_mean": lambda ts: mean_all(mul(sub(ts[0], ts[1]), ts[0])),
    "reshape_scale": lambda ts: sum_all(scale_shift(reshape(ts[0], (6,)), 1.7, 0.3)),
    "reduce_max2": lambda ts: sum_all(reduce_max(ts[0], 0)),
    "reduce_mean2": lambda ts: sum_all(reduce_mean(ts[0], 1)),
}


def case_inputs(name, rng):
    if name == "linear" or name.endswith("_chain"):
        return [rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)]
    if name == "bmm":
        return [rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3, 3))]
    if name.startswith("pool"):
        return [rng.normal(size=(2, 5, 3))]
    if name == "concat_mul":
        return [rng.normal(size=(2, 3)), rng.normal(size=(2, 2)),
                rng.normal(size=(2, 5))]
    if name in ("smooth_l1", "huber"):
        # keep residuals away from the |r| = threshold kink
        base = rng.normal(size=6)
        return [base + np.where(rng.random(6) < 0.5, 0.4, 2.0), base]
    if name == "sub_mean":
        return [rng.normal(size=(4, 3)), rng.normal(size=(4, 3))]
    if name == "reshape_scale":
        return [rng.normal(size=(2, 3))]
    if name.startswith("reduce"):
        return [rng.normal(size=(3, 4))]
    raise KeyError(name)


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_gradients_match_finite_differences(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    worst = 0.0
    for _ in range(5):
        err = gradient_check(GRAD_CASES[name], case_inputs(name, rng))
        worst = max(worst, err)
    assert worst <= 1e-5, f"{name}: {worst}"


def test_gather_gradient():
    rng = np.random.default_rng(11)
    idx = rng.integers(0, 5, size=(2, 5, 3))

    def fn(ts):
        return sum_all(mul(gather_points(ts[0], idx), ts[1]))

    err = gradient_check(fn, [rng.normal(size=(2, 5, 4)),
                              rng.normal(size=(2, 5, 3, 4))])
    assert err <= 1e-5


def test_dropout_gradient_fixed_mask():
    rng = np.random.default_rng(12)

    def fn(ts):
        return sum_all(dropout(ts[0], 0.4, True, np.random.default_rng(99)))

    err = gradient_check(fn, [rng.normal(size=(4, 4))])
    assert err <= 1e-5
