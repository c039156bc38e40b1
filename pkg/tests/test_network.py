import numpy as np
import pytest

from gradcheck import assert_grad_close
from dni_lab.errors import MissingCacheError, NonFiniteError, ShapeError, ValidationError
from dni_lab.linalg import Rng
from dni_lab.network import (
    ActivationLayer,
    AdamState,
    BatchNormLayer,
    DenseLayer,
    LogLoss,
    MSELoss,
    OptimizerBank,
    accuracy,
    adam_step,
    build_loss,
    build_network,
    loss_backward,
    loss_forward,
    sigmoid,
    softmax,
)


def _probe(rng, shape):
    """Random projection so a layer output becomes a scalar"""
    return rng.child(99).gaussian(*shape)


def test_dense_gradients(rng):
    layer = DenseLayer.initialize(4, 3, rng.child(0))
    x = rng.child(1).gaussian(5, 4)
    R = _probe(rng, (5, 3))
    _, cache = layer.forward(x)
    dx, grads = layer.backward(cache, R)

    def f():
        return float(np.sum(layer.forward(x)[0] * R))

    assert_grad_close(dx, f, x)
    assert_grad_close(grads["W"], f, layer.W)
    assert_grad_close(grads["b"], f, layer.b)


def test_dense_init_scale():
    layer = DenseLayer.initialize(400, 300, Rng(0))
    assert layer.W.std() == pytest.approx(1.0 / np.sqrt(400), rel=0.05)
    assert np.all(layer.b == 0.0)


@pytest.mark.parametrize("kind", ["relu", "sigmoid", "identity"])
def test_activation_gradients(rng, kind):
    layer = ActivationLayer(kind)
    x = rng.child(1).gaussian(6, 4)
    R = _probe(rng, (6, 4))
    _, cache = layer.forward(x)
    dx, _ = layer.backward(cache, R)
    assert_grad_close(dx, lambda: float(np.sum(layer.forward(x)[0] * R)), x)


def test_activation_ranges(rng):
    x = rng.gaussian(10, 10, std=50.0)
    assert np.all(ActivationLayer("relu").forward(x)[0] >= 0.0)
    s = sigmoid(x)
    assert np.all(np.isfinite(s))
    assert np.all((s >= 0.0) & (s <= 1.0))
    assert sigmoid(np.array([[-1000.0, 1000.0]])).tolist() == [[0.0, 1.0]]


@pytest.mark.parametrize("mode", ["train", "eval"])
def test_batchnorm_gradients(rng, mode):
    layer = BatchNormLayer(3)
    layer.gamma[...] = rng.child(2).gaussian(1, 3)
    layer.beta[...] = rng.child(3).gaussian(1, 3)
    layer.running_mean[...] = 0.3
    layer.running_var[...] = 2.0
    x = rng.child(1).gaussian(7, 3)
    R = _probe(rng, (7, 3))
    _, cache = layer.forward(x, mode)
    dx, grads = layer.backward(cache, R)

    def f():
        return float(np.sum(layer.forward(x, mode)[0] * R))

    assert_grad_close(dx, f, x)
    assert_grad_close(grads["gamma"], f, layer.gamma)
    assert_grad_close(grads["beta"], f, layer.beta)


def test_batchnorm_normalizes_in_train_mode(rng):
    layer = BatchNormLayer(4)
    out, cache = layer.forward(rng.gaussian(32, 4, std=3.0) + 5.0, "train")
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-6)
    np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-4)
    assert np.all(layer.running_mean == 0.0)
    layer.update_running_stats(cache)
    np.testing.assert_allclose(layer.running_mean, 0.1 * cache["batch_mean"])


def test_backward_needs_matching_cache(rng):
    layer = DenseLayer.initialize(2, 2, rng)
    with pytest.raises(MissingCacheError):
        layer.backward(None, np.zeros((1, 2)))
    with pytest.raises(MissingCacheError):
        layer.backward({"layer": "batchnorm"}, np.zeros((1, 2)))


@pytest.mark.parametrize("kind", ["mse", "logloss"])
def test_loss_gradients(rng, kind, small_batch):
    _, Y, _ = small_batch
    loss = build_loss(kind)
    pred = rng.child(4).gaussian(*Y.shape)
    assert_grad_close(loss.backward(pred, Y), lambda: loss.forward(pred, Y), pred)


def test_mse_values():
    loss = MSELoss()
    pred = np.array([[1.0, 0.0], [0.0, 0.0]])
    target = np.array([[0.0, 0.0], [0.0, 2.0]])
    np.testing.assert_allclose(loss.per_sample(pred, target), [0.5, 2.0])
    assert loss.forward(pred, target) == pytest.approx(1.25)
    assert MSELoss("sum").forward(pred, target) == pytest.approx(2.5)


def test_logloss_rejects_soft_targets():
    with pytest.raises(ValidationError):
        LogLoss().forward(np.zeros((1, 2)), np.array([[0.5, 0.5]]))
    with pytest.raises(ShapeError):
        LogLoss().forward(np.zeros((1, 3)), np.array([[0.0, 1.0]]))


def test_logloss_is_stable_for_large_logits():
    value = LogLoss().forward(np.array([[1000.0, -1000.0]]), np.array([[1.0, 0.0]]))
    assert value == pytest.approx(0.0)


def test_accuracy():
    assert accuracy(np.array([[0.9, 0.1], [0.2, 0.8]]), np.array([[1.0, 0.0], [1.0, 0.0]])) == 0.5


def test_adam_first_step_moves_by_lr():
    param = np.array([[1.0, -1.0]])
    state = AdamState.like(param, lr=0.1)
    new = adam_step(state, param, np.array([[2.0, -0.5]]))
    np.testing.assert_allclose(new, [[0.9, -0.9]], rtol=1e-6)
    assert state.t == 1


def test_adam_zero_gradient_is_a_no_op():
    param = np.array([[0.25]])
    bank = OptimizerBank(lr=0.1)
    bank.apply({"p": param}, {"p": np.zeros((1, 1))})
    assert param[0, 0] == 0.25


def test_network_backward_matches_numeric(rng):
    net = build_network([3, 5, 4, 2], rng, activation="sigmoid", batchnorm=True)
    x = rng.child(1).gaussian(6, 3)
    R = _probe(rng, (6, 2))
    fp = net.forward(x, "train")
    dx, grads = net.backward_range(fp, R, net.n_blocks, 0)
    params = net.parameters()

    def f():
        return float(np.sum(net.forward(x, "train").output * R))

    assert_grad_close(dx, f, x)
    for name in ("b1.0.W", "b1.1.gamma", "b2.0.b", "b3.0.W"):
        assert_grad_close(grads[name], f, params[name])
    # batchnorm subtracts the batch mean, so the bias feeding it has no effect
    np.testing.assert_allclose(grads["b2.0.b"], 0.0, atol=1e-12)


def test_network_layout_and_names(rng):
    net = build_network([3, 4, 2], rng, activation="relu", batchnorm=True)
    assert net.layer_dims == [3, 4, 2]
    assert list(net.parameters()) == ["b1.0.W", "b1.0.b", "b1.1.gamma", "b1.1.beta", "b2.0.W", "b2.0.b"]
    assert [layer.kind for layer in net.blocks[0]] == ["dense", "batchnorm", "activation:relu"]
    after = build_network([3, 4, 2], rng, activation="relu", batchnorm=True, block_order="bn_after_activation")
    assert [layer.kind for layer in after.blocks[0]] == ["dense", "activation:relu", "batchnorm"]
    linear = build_network([3, 4, 2], rng, activation="identity")
    assert [len(block) for block in linear.blocks] == [1, 1]


def test_block_backward_to_dense_returns_pre_activation_grad(rng):
    net = build_network([3, 4, 2], rng, activation="relu")
    x = rng.child(1).gaussian(5, 3)
    fp = net.forward(x)
    upstream = rng.child(2).gaussian(5, 4)
    dl_dg, grads = net.block_backward_to_dense(1, fp.caches[0], upstream)
    dx, full = net.block_backward(1, fp.caches[0], upstream)
    np.testing.assert_array_equal(dl_dg, upstream * (fp.caches[0][1]["x"] > 0.0))
    np.testing.assert_allclose(dx, dl_dg @ net.blocks[0][0].W.T)
    np.testing.assert_allclose(grads["b1.0.W"], full["b1.0.W"])


def test_add_l2_touches_dense_weights_only(rng):
    net = build_network([2, 3, 2], rng, batchnorm=True)
    grads = {name: np.zeros_like(value) for name, value in net.parameters().items()}
    net.add_l2(grads, 0.5)
    np.testing.assert_allclose(grads["b1.0.W"], 0.5 * net.parameters()["b1.0.W"])
    assert np.all(grads["b1.0.b"] == 0.0) and np.all(grads["b1.1.gamma"] == 0.0)


def test_param_hash_and_copy(rng):
    net = build_network([2, 3, 2], rng)
    twin = net.copy()
    assert twin.param_hash() == net.param_hash()
    twin.parameters()["b2.0.b"][0, 0] += 1.0
    assert twin.param_hash() != net.param_hash()


def test_eval_mode_uses_running_stats(rng):
    net = build_network([2, 3, 2], rng, batchnorm=True)
    x = rng.child(1).gaussian(4, 2)
    before = net.predict(x)
    net.forward(x, "train", update_running=True)
    assert not np.allclose(net.predict(x), before)


def test_build_network_validation(rng):
    with pytest.raises(ValidationError):
        build_network([3], rng)
    with pytest.raises(ValidationError):
        build_network([3, 2], rng, activation="tanh")


def test_batchnorm_hand_example():
    layer = BatchNormLayer(1, eps=0.0)
    out, _ = layer.forward(np.array([[0.0], [2.0]]), "train")
    np.testing.assert_allclose(out, [[-1.0], [1.0]])


def test_softmax_rows_sum_to_one(rng):
    np.testing.assert_allclose(softmax(rng.gaussian(5, 4, std=10.0)).sum(axis=1), 1.0, atol=1e-12)


def test_adam_minimizes_a_parabola():
    x = np.array([[1.0]])
    state = AdamState.like(x, lr=0.1)
    for _ in range(1000):
        x = adam_step(state, x, 2.0 * x)
    assert abs(x[0, 0]) < 1e-3


def test_adam_rejects_bad_gradients():
    state = AdamState.like(np.zeros((1, 2)))
    with pytest.raises(ShapeError):
        adam_step(state, np.zeros((1, 2)), np.zeros((2, 1)))
    with pytest.raises(NonFiniteError, match="b1.0.W"):
        adam_step(state, np.zeros((1, 2)), np.array([[np.inf, 0.0]]), name="b1.0.W")


@pytest.mark.parametrize("kind", ["mse", "logloss"])
def test_loss_functions_match_loss_objects(kind, small_batch, rng):
    _, Y, _ = small_batch
    pred = rng.gaussian(*Y.shape)
    loss = build_loss(kind)
    assert loss_forward(loss, pred, Y) == loss.forward(pred, Y)
    np.testing.assert_array_equal(loss_backward(loss, pred, Y), loss.backward(pred, Y))
