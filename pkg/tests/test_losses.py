import math

import numpy as np
import pytest

from lmkg import nn
from oracles import finite_difference_grads, relative_error


class TestQErrorLoss:
    def test_perfect_prediction_is_one(self):
        loss, grad = nn.qerror_loss(np.array([0.4]), np.array([0.4]), 0.0, 3.0)
        assert loss == 1.0
        assert grad[0] == 0.0  # defined subgradient at the kink

    def test_halving_distance_gives_two(self):
        m, M = 1.0, 5.0
        delta = math.log(2) / (M - m)
        loss, _ = nn.qerror_loss(np.array([0.5 + delta]), np.array([0.5]), m, M)
        assert loss == pytest.approx(2.0, rel=1e-12)

    def test_matches_raw_space_ratio(self):
        # y_hat=8 vs y=4 must cost q = 2 regardless of the scaling window
        m, M = 0.0, math.log(64.0)
        u = (math.log(4.0) - m) / (M - m)
        u_hat = (math.log(8.0) - m) / (M - m)
        loss, _ = nn.qerror_loss(np.array([u_hat]), np.array([u]), m, M)
        assert loss == pytest.approx(2.0, rel=1e-12)

    def test_bad_window_rejected(self):
        with pytest.raises(ValueError):
            nn.qerror_loss(np.array([0.5]), np.array([0.5]), 2.0, 2.0)

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(0)
        pred = rng.uniform(0.05, 0.95, size=7)
        target = rng.uniform(0.0, 1.0, size=7)
        m, M = 0.3, 4.2
        _, grad = nn.qerror_loss(pred, target, m, M)
        fd = finite_difference_grads(lambda: nn.qerror_loss(pred, target, m, M)[0], [pred])[0]
        assert relative_error(grad, fd) <= 1e-4


class TestNllLoss:
    def test_uniform_logits_give_log_v(self):
        for v in (2, 5, 11):
            logits = np.zeros((3, v))
            loss, _ = nn.nll_loss(logits, np.zeros((3, 1), dtype=int), [v])
            assert loss == pytest.approx(math.log(v), rel=1e-12)

    def test_concentrated_logits_approach_zero(self):
        logits = np.zeros((1, 4))
        logits[0, 2] = 60.0
        loss, _ = nn.nll_loss(logits, np.array([[2]]), [4])
        assert loss < 1e-12

    def test_out_of_vocabulary_id_rejected(self):
        with pytest.raises(ValueError):
            nn.nll_loss(np.zeros((1, 4)), np.array([[4]]), [4])

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(4, 9))
        observed = np.stack([rng.integers(0, 4, size=4), rng.integers(0, 5, size=4)], axis=1)
        _, grad = nn.nll_loss(logits, observed, [4, 5])
        fd = finite_difference_grads(lambda: nn.nll_loss(logits, observed, [4, 5])[0], [logits])[0]
        assert relative_error(grad, fd) <= 1e-4

    def test_softmax_groups_normalize(self):
        rng = np.random.default_rng(2)
        logits = rng.normal(scale=8.0, size=(16, 12))
        probs = nn.grouped_softmax(logits, [3, 4, 5])
        for lo, hi in ((0, 3), (3, 7), (7, 12)):
            np.testing.assert_allclose(probs[:, lo:hi].sum(axis=1), 1.0, atol=1e-9)

    def test_end_to_end_gradcheck_through_network(self):
        # NLL through a masked autoregressive net, checked against FD
        rng = np.random.default_rng(5)
        group_sizes = [3, 4]
        net, _ = nn.build_resmade(2, [2, 2], hidden_width=8, n_blocks=1, output_widths=group_sizes, seed=7)
        x = rng.normal(size=(5, 4))
        observed = np.stack([rng.integers(0, 3, size=5), rng.integers(0, 4, size=5)], axis=1)

        def compute():
            out, _ = net.forward(x)
            return nn.nll_loss(out, observed, group_sizes)[0]

        out, caches = net.forward(x)
        _, dlogits = nn.nll_loss(out, observed, group_sizes)
        grads, _ = net.backward(caches, dlogits)
        fd = finite_difference_grads(compute, net.parameters())
        for a, b in zip(grads, fd):
            assert relative_error(a, b) <= 1e-4
