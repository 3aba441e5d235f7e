"""Balance-loss values against independent scalar-loop oracles."""

import itertools
import math

import numpy as np
import pytest
from helpers import fd_check

from dialstruct.errors import InputError, ParameterError, ShapeError
from dialstruct.losses import (
    BalanceLossKind,
    balance_kl_loss,
    balance_loss,
    balance_regularizer,
    greedy_balance_loss,
    greedy_target,
    hard_target,
    top_balance_loss,
    total_loss,
)
from dialstruct.tensor import EPS, Tensor, kl_divergence, multiply, softmax, tensor_sum


def reg_oracle(P):
    total = 0.0
    for j in range(P.shape[1]):
        col = 0.0
        for i in range(P.shape[0]):
            col += P[i, j]
        total += col * col
    return total


def kl_oracle(T, P):
    total = 0.0
    for i in range(T.shape[0]):
        for j in range(T.shape[1]):
            t = T[i, j]
            if t > 0:
                total += t * (math.log(t) - math.log(max(P[i, j], EPS)))
    return total


def random_stochastic(rng, rows, cols):
    return rng.dirichlet(np.ones(cols), size=rows)


class TestBalanceRegularizer:
    def test_uniform_matrix(self):
        for rows, cols in ((4, 2), (6, 3), (5, 5)):
            P = np.full((rows, cols), 1.0 / cols)
            value = balance_regularizer(Tensor(P)).item()
            np.testing.assert_allclose(value, rows ** 2 / cols, rtol=1e-12)

    def test_single_column_mass_is_maximum(self):
        P = np.zeros((5, 3))
        P[:, 1] = 1.0
        np.testing.assert_allclose(balance_regularizer(Tensor(P)).item(), 25.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            P = random_stochastic(rng, 4, 3)
            np.testing.assert_allclose(
                balance_regularizer(Tensor(P)).item(), reg_oracle(P), rtol=1e-12)

    def test_uniform_column_sums_are_the_minimum(self):
        rng = np.random.default_rng(43)
        for _ in range(200):
            rows = int(rng.integers(2, 12))
            cols = int(rng.integers(2, 6))
            P = random_stochastic(rng, rows, cols)
            assert balance_regularizer(Tensor(P)).item() >= rows ** 2 / cols - 1e-9

    def test_non_stochastic_rows_rejected(self):
        with pytest.raises(InputError):
            balance_regularizer(Tensor(np.array([[0.5, 0.6], [0.5, 0.5]])))

    def test_non_matrix_rejected(self):
        with pytest.raises(ShapeError):
            balance_regularizer(Tensor(np.array([0.5, 0.5])))

    def test_gradients(self):
        rng = np.random.default_rng(44)
        logits = rng.normal(size=(4, 3))
        fd_check(lambda t: balance_regularizer(softmax(t)), [logits])


class TestHardTarget:
    def test_rounds_dominant_entries(self):
        P = np.array([[0.9, 0.1], [0.2, 0.8]])
        np.testing.assert_array_equal(hard_target(P), [[1, 0], [0, 1]])

    def test_tie_takes_lowest_index(self):
        np.testing.assert_array_equal(hard_target(np.array([[0.5, 0.5]])), [[1, 0]])

    def test_argmax_preserved(self):
        rng = np.random.default_rng(45)
        for _ in range(50):
            P = random_stochastic(rng, 6, 4)
            T = hard_target(P)
            np.testing.assert_array_equal(T.argmax(axis=1), P.argmax(axis=1))
            np.testing.assert_allclose(T.sum(axis=1), np.ones(6))


class TestBalanceKl:
    def test_balanced_one_hot_hits_floor(self):
        P = np.zeros((6, 3))
        for i in range(6):
            P[i, i % 3] = 1.0
        np.testing.assert_allclose(balance_kl_loss(Tensor(P)).item(), 36 / 3,
                                   rtol=1e-12)

    def test_uniform_value(self):
        rows, cols = 6, 3
        P = np.full((rows, cols), 1.0 / cols)
        expected = rows ** 2 / cols + rows * math.log(cols)
        np.testing.assert_allclose(balance_kl_loss(Tensor(P)).item(), expected,
                                   rtol=1e-12)

    def test_matches_composed_oracle(self):
        rng = np.random.default_rng(46)
        for _ in range(100):
            P = random_stochastic(rng, 6, 3)
            expected = reg_oracle(P) + kl_oracle(hard_target(P), P)
            np.testing.assert_allclose(balance_kl_loss(Tensor(P)).item(), expected,
                                       rtol=1e-12)

    def test_gradients_treat_target_as_constant(self):
        rng = np.random.default_rng(47)
        logits = rng.normal(size=(5, 3))
        fd_check(lambda t: balance_kl_loss(softmax(t)), [logits])

    def test_matches_precomputed_constant_target_run(self):
        rng = np.random.default_rng(48)
        logits_data = rng.normal(size=(4, 3))
        live = Tensor(logits_data, requires_grad=True)
        balance_kl_loss(softmax(live)).backward()
        frozen = Tensor(logits_data, requires_grad=True)
        P = softmax(frozen)
        T = hard_target(P.data)
        loss = balance_regularizer(P) + kl_divergence(T, P)
        loss.backward()
        np.testing.assert_array_equal(live.grad, frozen.grad)


class TestGreedyTarget:
    def test_single_row_goes_to_first_column(self):
        np.testing.assert_array_equal(greedy_target(np.array([[0.1, 0.9]])),
                                      [[1.0, 0.0]])

    def test_recovers_dominant_permutation(self):
        rng = np.random.default_rng(49)
        for _ in range(30):
            perm = rng.permutation(3)
            P = np.full((3, 3), 0.1)
            for i, j in enumerate(perm):
                P[i, j] = 0.8
            T = greedy_target(P)
            expected = np.zeros((3, 3))
            expected[np.arange(3), perm] = 1.0
            np.testing.assert_array_equal(T, expected)
            # The dominant permutation is also the best assignment overall.
            best = max(itertools.permutations(range(3)),
                       key=lambda s: sum(P[i, s[i]] for i in range(3)))
            assert list(best) == list(perm)

    def test_round_robin_trace(self):
        P = np.array([
            [0.9, 0.1],
            [0.8, 0.2],
            [0.1, 0.9],
            [0.6, 0.4],
        ])
        # Visit order: col0 takes row0, col1 takes row2, col0 takes row1,
        # col1 takes the only row left (row3).
        expected = np.array([
            [1.0, 0.0],
            [1.0, 0.0],
            [0.0, 1.0],
            [0.0, 1.0],
        ])
        np.testing.assert_array_equal(greedy_target(P), expected)

    def test_assignment_matrix_properties(self):
        rng = np.random.default_rng(50)
        for _ in range(100):
            rows = int(rng.integers(1, 20))
            cols = int(rng.integers(1, 7))
            P = random_stochastic(rng, rows, cols)
            T = greedy_target(P)
            np.testing.assert_allclose(T.sum(axis=1), np.ones(rows))
            counts = T.sum(axis=0)
            assert counts.min() >= rows // cols
            assert counts.max() <= -(-rows // cols)


class TestGreedyBalance:
    def test_zero_at_its_own_target(self):
        P = np.eye(3)
        np.testing.assert_allclose(greedy_balance_loss(Tensor(P)).item(), 0.0,
                                   atol=1e-12)

    def test_uniform_square_value(self):
        n = 4
        P = np.full((n, n), 1.0 / n)
        np.testing.assert_allclose(greedy_balance_loss(Tensor(P)).item(),
                                   n * math.log(n), rtol=1e-12)

    def test_matches_composed_oracle(self):
        rng = np.random.default_rng(51)
        for _ in range(100):
            P = random_stochastic(rng, 7, 3)
            expected = kl_oracle(greedy_target(P), P)
            np.testing.assert_allclose(greedy_balance_loss(Tensor(P)).item(),
                                       expected, rtol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(52)
        logits = rng.normal(size=(5, 3))
        fd_check(lambda t: greedy_balance_loss(softmax(t)), [logits])


class TestTopBalance:
    def test_zero_on_permutation_submatrix(self):
        P = np.array([
            [1.0, 0.0, 0.0],
            [0.2, 0.5, 0.3],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.4, 0.4, 0.2],
        ])
        np.testing.assert_allclose(top_balance_loss(Tensor(P)).item(), 0.0,
                                   atol=1e-12)

    def test_uniform_value(self):
        n = 3
        P = np.full((5, n), 1.0 / n)
        np.testing.assert_allclose(top_balance_loss(Tensor(P)).item(),
                                   n * math.log(n), rtol=1e-12)

    def test_matches_column_scan_oracle(self):
        rng = np.random.default_rng(53)
        for _ in range(100):
            P = random_stochastic(rng, 5, 3)
            val = 0.0
            for j in range(3):
                best_row, best = 0, -1.0
                for i in range(5):
                    if P[i, j] > best:
                        best, best_row = P[i, j], i
                val += -math.log(max(P[best_row, j], EPS))
            np.testing.assert_allclose(top_balance_loss(Tensor(P)).item(), val,
                                       rtol=1e-12)

    def test_duplicate_rows_allowed(self):
        P = np.array([[0.6, 0.6, 0.4], [0.4, 0.4, 0.6]])
        P = P / P.sum(axis=1, keepdims=True)
        val = top_balance_loss(Tensor(P)).item()
        expected = -math.log(P[0, 0]) - math.log(P[0, 1]) - math.log(P[1, 2])
        np.testing.assert_allclose(val, expected, rtol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(54)
        logits = rng.normal(size=(5, 3))
        fd_check(lambda t: top_balance_loss(softmax(t)), [logits])


class TestTotalLossAndDispatch:
    def test_lambda_zero_keeps_mlm(self):
        out = total_loss(Tensor(2.5), Tensor(100.0), 0.0)
        np.testing.assert_allclose(out.item(), 2.5)

    def test_arithmetic(self):
        np.testing.assert_allclose(total_loss(Tensor(2.0), Tensor(3.0), 0.5).item(),
                                   3.5)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ParameterError):
            total_loss(Tensor(1.0), Tensor(1.0), -0.1)

    def test_gradient_is_scaled_sum(self):
        a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        b = Tensor(np.array([3.0]), requires_grad=True)
        total = total_loss(tensor_sum(multiply(a, a)), tensor_sum(multiply(b, b)),
                           0.5)
        total.backward()
        np.testing.assert_allclose(a.grad, [2.0, 4.0])
        np.testing.assert_allclose(b.grad, [3.0])

    def test_end_to_end_gradient_through_chain(self):
        rng = np.random.default_rng(55)
        logits = rng.normal(size=(4, 3))
        fd_check(
            lambda t: total_loss(tensor_sum(multiply(t, t)),
                                 balance_kl_loss(softmax(t)), 0.7),
            [logits],
        )

    def test_dispatch(self):
        rng = np.random.default_rng(56)
        P = Tensor(random_stochastic(rng, 4, 2))
        np.testing.assert_allclose(
            balance_loss(P, BalanceLossKind.BALANCE_KL).item(),
            balance_kl_loss(P).item())
        np.testing.assert_allclose(
            balance_loss(P, "greedy").item(), greedy_balance_loss(P).item())
        np.testing.assert_allclose(
            balance_loss(P, BalanceLossKind.TOP).item(), top_balance_loss(P).item())
        np.testing.assert_allclose(
            balance_loss(P, BalanceLossKind.NONE).item(), 0.0)

    def test_all_losses_nonnegative(self):
        rng = np.random.default_rng(57)
        for _ in range(50):
            P = Tensor(random_stochastic(rng, 6, 3))
            assert balance_kl_loss(P).item() >= 36 / 3 - 1e-9
            assert greedy_balance_loss(P).item() >= -1e-12
            assert top_balance_loss(P).item() >= -1e-12
