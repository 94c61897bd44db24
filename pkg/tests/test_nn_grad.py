"""Analytic gradients against central finite differences.

The oracle: for loss L(theta), dL/dtheta ~ (L(theta+h) - L(theta-h)) / 2h
with h = 1e-4; relative error must stay under 1e-4. Dropout stays disabled
so the loss is a deterministic function of the parameters.
"""

import numpy as np
import pytest

from tripsense.nn import (
    Conv2D,
    Dense,
    Flatten,
    LeakyReLU,
    MaxPool2,
    Model,
    SoftmaxOutput,
)
from tripsense.nn.train import cross_entropy, loss_and_gradients

H = 1e-4
TOLERANCE = 1e-4


def toy_model(seed: int) -> Model:
    model = Model((1, 8, 8), [
        Conv2D(1, 3), LeakyReLU(0.1), MaxPool2(), Flatten(),
        Dense(3 * 3 * 3, 5), LeakyReLU(0.1), SoftmaxOutput(5, 2),
    ])
    model.init_params(seed=seed)
    return model


def fd_check(model: Model, x: np.ndarray, y: np.ndarray, rng: np.random.Generator,
             per_param: int = 10) -> float:
    _, grads = loss_and_gradients(model, x, y, train=False)
    grads = dict(grads)
    worst = 0.0
    for name, param in model.parameters():
        flat = param.ravel()
        gflat = grads[name].ravel()
        for i in rng.choice(flat.size, size=min(per_param, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + H
            up, _ = loss_and_gradients(model, x, y, train=False)
            flat[i] = orig - H
            down, _ = loss_and_gradients(model, x, y, train=False)
            flat[i] = orig
            numeric = (up - down) / (2 * H)
            scale = max(abs(numeric), abs(gflat[i]), 1e-12)
            worst = max(worst, abs(numeric - gflat[i]) / scale)
    return worst


class TestGradientCheck:
    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_toy_model_gradients(self, seed):
        rng = np.random.default_rng(seed + 100)
        model = toy_model(seed)
        x = rng.random((4, 1, 8, 8))
        y = rng.integers(0, 2, size=4)
        assert fd_check(model, x, y, rng) < TOLERANCE

    def test_dense_only_model(self):
        rng = np.random.default_rng(9)
        model = Model((1, 4, 4), [Flatten(), Dense(16, 6), LeakyReLU(0.1),
                                  SoftmaxOutput(6, 3)])
        model.init_params(seed=9)
        x = rng.random((5, 1, 4, 4))
        y = rng.integers(0, 3, size=5)
        assert fd_check(model, x, y, rng, per_param=15) < TOLERANCE


class TestGradientStructure:
    def test_batch_of_identical_samples_equals_single(self):
        model = toy_model(4)
        x1 = np.random.default_rng(5).random((1, 1, 8, 8))
        y1 = np.array([1])
        xb = np.repeat(x1, 6, axis=0)
        yb = np.repeat(y1, 6)
        _, g1 = loss_and_gradients(model, x1, y1, train=False)
        _, gb = loss_and_gradients(model, xb, yb, train=False)
        for (n1, a), (nb, b) in zip(g1, gb):
            assert n1 == nb
            assert a == pytest.approx(b, rel=1e-9, abs=1e-12)

    def test_perfect_prediction_gives_zero_projection_gradient(self):
        # force probability 1 on the true class via a huge bias
        model = Model((1, 2, 2), [Flatten(), SoftmaxOutput(4, 2)])
        model.init_params(seed=0)
        model.layers[-1].W = np.zeros((4, 2))
        model.layers[-1].b = np.array([500.0, -500.0])
        x = np.random.default_rng(6).random((3, 1, 2, 2))
        y = np.zeros(3, dtype=np.int64)
        loss, grads = loss_and_gradients(model, x, y, train=False)
        grads = dict(grads)
        assert loss == pytest.approx(0.0, abs=1e-12)
        # softmax residual p - y = 0, so the projection sees no gradient
        assert grads["1.W"] == pytest.approx(np.zeros((4, 2)), abs=1e-200)
        assert grads["1.b"] == pytest.approx(np.zeros(2), abs=1e-200)

    def test_loss_decreases_along_negative_gradient(self):
        model = toy_model(8)
        rng = np.random.default_rng(8)
        x = rng.random((6, 1, 8, 8))
        y = rng.integers(0, 2, size=6)
        loss0, grads = loss_and_gradients(model, x, y, train=False)
        params = dict(model.parameters())
        for name, grad in grads:
            params[name] -= 0.01 * grad
        loss1, _ = loss_and_gradients(model, x, y, train=False)
        assert loss1 < loss0


class TestCrossEntropy:
    def test_perfect_prediction_zero_loss(self):
        probs = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert cross_entropy(probs, np.array([0, 1])) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_prediction_log2(self):
        probs = np.full((4, 2), 0.5)
        assert cross_entropy(probs, np.array([0, 1, 0, 1])) == pytest.approx(np.log(2))

    def test_confidently_wrong_is_large_but_finite(self):
        probs = np.array([[1.0, 0.0]])
        loss = cross_entropy(probs, np.array([1]))
        assert np.isfinite(loss) and loss > 30.0

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            cross_entropy(np.zeros((0, 2)), np.zeros(0, dtype=int))
