import math

import numpy as np
import pytest

from constgcn import tensor as T
from constgcn.errors import ContractError, DomainError, ShapeError
from constgcn.tensor import ComplexVec, Tensor


class TestSoftmax:
    def test_symmetry(self):
        out = T.softmax(Tensor([0.0, 0.0]), axis=0)
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_hand_values(self):
        # e^{ln 1} = 1, e^{ln 3} = 3 -> 1/4, 3/4
        out = T.softmax(Tensor([math.log(1.0), math.log(3.0)]), axis=0)
        np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-12)

    def test_stabilized_no_overflow(self):
        out = T.softmax(Tensor([1000.0, 1000.0, 1000.0]), axis=0)
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [1 / 3] * 3)

    def test_axis_out_of_range(self):
        with pytest.raises(ShapeError):
            T.softmax(Tensor([[1.0, 2.0]]), axis=2)

    @pytest.mark.parametrize("rank", [1, 2, 3])
    def test_sums_to_one_random(self, rank):
        rng = np.random.default_rng(rank)
        for _ in range(20):
            shape = tuple(rng.integers(1, 5, size=rank))
            x = Tensor(rng.normal(size=shape) * 10)
            for axis in range(rank):
                s = T.softmax(x, axis).data.sum(axis=axis)
                np.testing.assert_allclose(s, np.ones_like(s), atol=1e-6)
                assert np.all(T.softmax(x, axis).data >= 0)


class TestLogsumexp:
    def test_singleton_identity(self):
        x = Tensor([0.0, 0.0])
        out = T.logsumexp([x])
        np.testing.assert_array_equal(out.data, x.data)

    def test_two_zeros(self):
        out = T.logsumexp([Tensor([0.0]), Tensor([0.0])])
        np.testing.assert_allclose(out.data, [math.log(2.0)], atol=1e-15)

    def test_stabilized(self):
        out = T.logsumexp([Tensor([1000.0]), Tensor([1000.0])])
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [1000.0 + math.log(2.0)])

    def test_empty_list(self):
        with pytest.raises(DomainError):
            T.logsumexp([])

    def test_bounds_random(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            n = int(rng.integers(1, 6))
            xs = [Tensor(rng.normal(size=4) * 5) for _ in range(n)]
            out = T.logsumexp(xs).data
            hi = np.max([x.data for x in xs], axis=0)
            assert np.all(out >= hi - 1e-12)
            assert np.all(out <= hi + math.log(n) + 1e-12)


class TestSigmoid:
    def test_zero(self):
        assert T.sigmoid(Tensor(0.0)).item() == 0.5

    def test_large_positive_strictly_below_one(self):
        v = T.sigmoid(Tensor(20.0)).item()
        assert v == pytest.approx(1.0 / (1.0 + math.exp(-20.0)), abs=1e-15)
        assert v < 1.0

    def test_antisymmetry(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=50) * 8)
        a = T.sigmoid(x).data
        b = T.sigmoid(Tensor(-x.data)).data
        np.testing.assert_allclose(a, 1.0 - b, atol=1e-9)

    def test_range_open_interval(self):
        x = Tensor(np.array([-1e4, -50.0, 0.0, 50.0, 1e4]))
        out = T.sigmoid(x).data
        assert np.all(out > 0.0) and np.all(out < 1.0)


class TestLogSigmoid:
    def test_matches_composition_in_safe_range(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=40) * 3)
        np.testing.assert_allclose(
            T.log_sigmoid(x).data, np.log(T.sigmoid(x).data), atol=1e-12)

    def test_no_overflow_far_out(self):
        x = Tensor(np.array([-800.0, 800.0]))
        out = T.log_sigmoid(x).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [-800.0, 0.0], atol=1e-12)


class TestGradCheck:
    def test_square(self):
        x = Tensor(3.0, requires_grad=True)
        err = T.grad_check(lambda: x * x, [x], eps=1e-5)
        assert err <= 1e-6

    def test_constant_function(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        c = Tensor(5.0)
        err = T.grad_check(lambda: (x * 0.0).sum() + c, [x], eps=1e-5)
        assert err <= 1e-5

    def test_non_scalar_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            T.grad_check(lambda: x * x, [x])

    def test_eps_bounds(self):
        x = Tensor(1.0, requires_grad=True)
        with pytest.raises(DomainError):
            T.grad_check(lambda: x * x, [x], eps=1e-2)


def _rand(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


class TestOpGradients:
    """Every differentiable exported op passes finite-difference checks."""

    def test_arithmetic_chain(self):
        rng = np.random.default_rng(11)
        a, b = _rand(rng, 3, 4), _rand(rng, 3, 4)
        f = lambda: ((a * b + a - b / (b * b + 2.0)) ** 3).sum()
        assert T.grad_check(f, [a, b]) <= 1e-4

    def test_matmul(self):
        rng = np.random.default_rng(12)
        a, b = _rand(rng, 3, 4), _rand(rng, 4, 2)
        assert T.grad_check(lambda: (a @ b).sum(), [a, b]) <= 1e-4

    def test_matmul_batched(self):
        rng = np.random.default_rng(13)
        a, b = _rand(rng, 5, 3, 4), _rand(rng, 5, 4, 2)
        assert T.grad_check(lambda: ((a @ b) ** 2).sum(), [a, b]) <= 1e-4

    def test_broadcast_add_mul(self):
        rng = np.random.default_rng(14)
        a, b = _rand(rng, 3, 4), _rand(rng, 4)
        assert T.grad_check(lambda: ((a + b) * (b + 1.5)).sum(), [a, b]) <= 1e-4

    def test_reductions(self):
        rng = np.random.default_rng(15)
        a = _rand(rng, 4, 3)
        f = lambda: (a.sum(axis=0) * a.mean(axis=1).sum()).sum() + (a.max(axis=1) ** 2).sum()
        assert T.grad_check(f, [a]) <= 1e-4

    def test_elementwise_functions(self):
        rng = np.random.default_rng(16)
        a = _rand(rng, 3, 3)
        f = lambda: (a.tanh() + T.sigmoid(a) + (a * a + 0.5).log()
                     + a.exp() * 0.01 + T.log_sigmoid(a)).sum()
        assert T.grad_check(f, [a]) <= 1e-4

    def test_softmax_logsumexp(self):
        rng = np.random.default_rng(17)
        a = _rand(rng, 4, 5)
        w = Tensor(rng.normal(size=(4, 5)))
        f = lambda: (T.softmax(a, axis=1) * w).sum() + T.logsumexp_axis(a, axis=0).sum()
        assert T.grad_check(f, [a]) <= 1e-4

    def test_stack_concat_getitem(self):
        rng = np.random.default_rng(18)
        a, b = _rand(rng, 2, 3), _rand(rng, 2, 3)
        f = lambda: (T.stack([a, b], axis=0)[:, 0, 1:] * T.concat([a, b], axis=1)[:, 2:4]).sum()
        assert T.grad_check(f, [a, b]) <= 1e-4

    def test_take_rows(self):
        rng = np.random.default_rng(19)
        table = _rand(rng, 6, 3)
        idx = [0, 2, 2, 5]
        f = lambda: (table.take_rows(idx) ** 2).sum()
        assert T.grad_check(f, [table]) <= 1e-4

    def test_einsum_bilinear(self):
        rng = np.random.default_rng(20)
        x, w, y = _rand(rng, 4, 3), _rand(rng, 2, 3, 3), _rand(rng, 4, 3)
        f = lambda: T.einsum("pd,rde,pe->pr", x, w, y).sum()
        assert T.grad_check(f, [x, w, y]) <= 1e-4

    def test_abs_away_from_kink(self):
        rng = np.random.default_rng(21)
        a = Tensor(rng.normal(size=(3, 3)) + np.sign(rng.normal(size=(3, 3))) * 0.5,
                   requires_grad=True)
        assert T.grad_check(lambda: a.abs().sum(), [a]) <= 1e-4

    def test_maximum(self):
        rng = np.random.default_rng(22)
        a, b = _rand(rng, 3, 4), _rand(rng, 3, 4)
        assert T.grad_check(lambda: (T.maximum(a, b) ** 2).sum(), [a, b]) <= 1e-4

    def test_complex_hadamard(self):
        rng = np.random.default_rng(23)
        a, b = _rand(rng, 3, 6), _rand(rng, 3, 6)
        assert T.grad_check(lambda: (T.complex_hadamard(a, b) ** 2).sum(), [a, b]) <= 1e-4


class TestComplexVec:
    @pytest.mark.parametrize("n", [1, 2, 5, 16])
    def test_pack_unpack_roundtrip(self, n):
        rng = np.random.default_rng(n)
        values = [complex(r, i) for r, i in rng.normal(size=(n, 2))]
        assert ComplexVec.pack(values).unpack() == values

    def test_odd_dim_rejected(self):
        with pytest.raises(DomainError):
            ComplexVec(dim=3, data=np.zeros(3))

    def test_interleave_split_roundtrip(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.normal(size=(4, 8)))
        re, im = T.complex_split(x)
        back = T.complex_interleave(re, im)
        np.testing.assert_array_equal(back.data, x.data)


class TestTensorBasics:
    def test_invariant_grad_shape(self):
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        (x * 2.0).sum().backward()
        assert x.grad.shape == x.data.shape

    def test_grad_accumulates_across_backwards(self):
        x = Tensor(2.0, requires_grad=True)
        (x * x).backward()
        (x * x).backward()
        assert x.grad == pytest.approx(8.0)

    def test_no_grad_blocks_tape(self):
        x = Tensor(2.0, requires_grad=True)
        with T.no_grad():
            y = x * x
        assert not y.requires_grad

    def test_finite_outputs_on_finite_inputs(self):
        rng = np.random.default_rng(29)
        x = Tensor(rng.normal(size=(3, 3)) * 500)
        for out in [T.softmax(x, 1), T.sigmoid(x), T.log_sigmoid(x),
                    x.tanh(), T.logsumexp_axis(x, 0)]:
            assert np.all(np.isfinite(out.data))

    def test_backward_requires_scalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            (x * 2.0).backward()
