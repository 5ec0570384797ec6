import math

import numpy as np
import pytest

from dragsim.agent import build_networks
from dragsim.nn import (
    Adam,
    BatchNorm,
    DimensionMismatch,
    Layer,
    LinearSchedule,
    Mlp,
    Sgd,
    ShapeMismatch,
    StaleCache,
    activate,
    backward,
    forward,
    grad_inverse,
    schedule_value,
    sgd_step,
    soft_update,
)

from gradcheck import check_net, randomize_stats


def small_net(rng, bn=True, acts=("softplus", "relu", "shifted_tanh")):
    return Mlp.build([5, 7, 6, 3], list(acts), [bn, bn, False], rng, out_init=0.5)


# -- activations and forward --------------------------------------------------

def test_identity_linear_layer():
    net = Mlp([Layer(np.eye(3), np.zeros(3), "linear")])
    x = np.random.default_rng(0).normal(size=(4, 3))
    out, _ = forward(net, x)
    np.testing.assert_array_equal(out, x)


def test_activation_values():
    assert activate("shifted_tanh", np.array([-2.0]))[0] == 0.5
    assert activate("softplus", np.array([0.0]))[0] == pytest.approx(math.log(2), abs=1e-15)
    assert activate("shifted_tanh", np.array([0.0]))[0] > 0.9
    extreme = activate("shifted_tanh", np.array([-1e6, -50.0, 50.0, 1e6]))
    assert np.all((extreme > 0) & (extreme < 1))
    # softplus stays finite and accurate far from zero
    np.testing.assert_allclose(activate("softplus", np.array([800.0, -800.0])), [800.0, 0.0], atol=1e-300)


def test_unknown_activation_rejected():
    with pytest.raises(ValueError):
        Mlp([Layer(np.eye(2), np.zeros(2), "swish")])


def test_dimension_checks():
    rng = np.random.default_rng(0)
    net = small_net(rng)
    with pytest.raises(DimensionMismatch):
        net.forward(np.zeros((4, 6)))
    with pytest.raises(DimensionMismatch):
        net.forward(np.zeros((1, 5)), "train")
    with pytest.raises(DimensionMismatch):
        Mlp([Layer(np.zeros((3, 2)), np.zeros(3), "tanh"), Layer(np.zeros((1, 4)), np.zeros(1), "linear")])


def test_eval_forward_is_pure():
    rng = np.random.default_rng(1)
    net = small_net(rng)
    randomize_stats(net, rng)
    x = rng.normal(size=(8, 5))
    stats = [s.copy() for s in net.stats()]
    a = net.predict(x)
    b = net.predict(x)
    assert a.tobytes() == b.tobytes()
    for s, t in zip(stats, net.stats()):
        np.testing.assert_array_equal(s, t)


def test_train_forward_updates_running_stats():
    rng = np.random.default_rng(2)
    net = small_net(rng)
    x = rng.normal(size=(16, 5))
    before = net.layers[0].bn.running_mean.copy()
    _, cache = net.forward(x, "train")
    z = cache.pre_bn[0]
    np.testing.assert_allclose(net.layers[0].bn.running_mean, 0.99 * before + 0.01 * z.mean(axis=0))
    net.forward(x, "train", update_stats=False)
    np.testing.assert_allclose(net.layers[0].bn.running_mean, 0.99 * before + 0.01 * z.mean(axis=0))


def test_batchnorm_train_output_moments():
    rng = np.random.default_rng(3)
    net = small_net(rng)
    for layer in net.layers[:2]:
        layer.bn.scale[...] = rng.uniform(0.5, 2.0, layer.n_out)
        layer.bn.offset[...] = rng.normal(size=layer.n_out)
    _, cache = net.forward(rng.normal(size=(64, 5)), "train")
    for i, layer in enumerate(net.layers[:2]):
        u = cache.pre_act[i]
        np.testing.assert_allclose(u.mean(axis=0), layer.bn.offset, atol=1e-6)
        np.testing.assert_allclose(u.std(axis=0), layer.bn.scale, atol=1e-6)


# -- backward --------------------------------------------------------------------

@pytest.mark.parametrize("mode", ["eval", "train"])
@pytest.mark.parametrize("bn", [True, False])
def test_gradients_match_finite_differences(mode, bn):
    rng = np.random.default_rng(4)
    net = small_net(rng, bn, acts=("tanh", "softplus", "shifted_tanh"))
    randomize_stats(net, rng)
    x = rng.normal(size=(6, 5))
    up = rng.normal(size=(6, 3))
    assert check_net(net, x, up, mode) < 1e-4


@pytest.mark.parametrize("name", ["arp", "cen", "actor", "critic"])
def test_agent_architectures_gradcheck(name):
    rng = np.random.default_rng(5)
    net = build_networks(11, 10, 4, 0.15, rng)[name]
    randomize_stats(net, rng)
    x = rng.uniform(0, 1, size=(4, net.n_in))
    up = rng.normal(size=(4, net.n_out))
    assert check_net(net, x, up, "eval") < 1e-4


def test_input_standardization_gradcheck():
    rng = np.random.default_rng(6)
    net = small_net(rng, acts=("tanh", "tanh", "linear"))
    randomize_stats(net, rng)
    net.set_input_standardization(rng.normal(size=5), rng.uniform(0.5, 3, 5))
    x = rng.normal(size=(4, 5))
    assert check_net(net, x, rng.normal(size=(4, 3)), "eval") < 1e-6


def test_zero_upstream_gives_zero_gradients():
    rng = np.random.default_rng(7)
    net = small_net(rng)
    out, cache = net.forward(rng.normal(size=(4, 5)), "train")
    grads, gx = backward(net, cache, np.zeros_like(out))
    assert all(np.all(g == 0) for g in grads)
    assert np.all(gx == 0)


def test_linear_input_gradient_hand_case():
    W = np.array([[1.0, 2.0], [3.0, 4.0]])
    net = Mlp([Layer(W.copy(), np.zeros(2), "linear")])
    out, cache = net.forward(np.array([[0.5, -1.0]]))
    up = np.array([[1.0, -2.0]])
    grads, gx = net.backward(cache, up)
    np.testing.assert_allclose(gx[0], W.T @ up[0])  # [1 - 6, 2 - 8]
    np.testing.assert_allclose(gx[0], [-5.0, -6.0])
    np.testing.assert_allclose(grads[0], up.T @ np.array([[0.5, -1.0]]))


def test_stale_cache_detected():
    rng = np.random.default_rng(8)
    a = small_net(rng)
    b = Mlp.build([5, 4, 3], ["tanh", "linear"], [False, False], rng)
    out, cache = a.forward(rng.normal(size=(3, 5)), "train")
    with pytest.raises(StaleCache):
        b.backward(cache, np.ones((3, 3)))
    with pytest.raises(StaleCache):
        a.backward(cache, np.ones((3, 2)))


def test_gradients_share_flat_layout():
    rng = np.random.default_rng(9)
    net = small_net(rng)
    out, cache = net.forward(rng.normal(size=(4, 5)), "train")
    grads, _ = net.backward(cache, np.ones_like(out))
    np.testing.assert_array_equal(np.concatenate([g.ravel() for g in grads]), grads.flat)
    assert [g.shape for g in grads] == [p.shape for p in net.params()]


# -- updates -----------------------------------------------------------------------

def test_sgd_examples():
    net = Mlp([Layer(np.array([[1.0]]), np.zeros(1), "linear")])
    before = net.flat.copy()
    sgd_step(net, [np.array([[2.0]]), np.array([0.0])], 0.0)
    np.testing.assert_array_equal(net.flat, before)
    sgd_step(net, [np.array([[2.0]]), np.array([0.0])], 0.1)
    assert net.layers[0].W[0, 0] == pytest.approx(0.8)


def test_sgd_two_steps_equal_summed_step():
    rng = np.random.default_rng(10)
    a = Mlp.build([3, 2], ["linear"], [False], rng)
    b = a.copy()
    g1 = [rng.normal(size=p.shape) for p in a.params()]
    g2 = [rng.normal(size=p.shape) for p in a.params()]
    a.sgd_step(g1, 0.1)
    a.sgd_step(g2, 0.1)
    b.sgd_step([x + y for x, y in zip(g1, g2)], 0.1)
    np.testing.assert_allclose(a.flat, b.flat, rtol=1e-14)


def test_sgd_leaves_running_stats():
    rng = np.random.default_rng(11)
    net = small_net(rng)
    randomize_stats(net, rng)
    stats = [s.copy() for s in net.stats()]
    net.sgd_step([np.ones_like(p) for p in net.params()], 0.5)
    for s, t in zip(stats, net.stats()):
        np.testing.assert_array_equal(s, t)


def test_sgd_shape_check():
    net = small_net(np.random.default_rng(0))
    with pytest.raises(DimensionMismatch):
        net.sgd_step([np.ones(3)], 0.1)


def test_optimizer_wrappers():
    rng = np.random.default_rng(12)
    net = small_net(rng)
    g = [rng.normal(size=p.shape) for p in net.params()]
    ref = net.copy()
    Sgd(net).step(g, 0.01)
    ref.sgd_step(g, 0.01)
    np.testing.assert_array_equal(net.flat, ref.flat)

    before = net.flat.copy()
    opt = Adam(net)
    opt.step(g, 1e-3)
    # first bias-corrected step: lr * g / (|g| + eps / sqrt(1 - beta2))
    flat_g = np.concatenate([x.ravel() for x in g])
    r = math.sqrt(1 - 0.999)
    np.testing.assert_allclose(net.flat - before, -1e-3 * flat_g * r / (r * np.abs(flat_g) + 1e-8), rtol=1e-9)
    other = Adam(net.copy())
    other.load_state_arrays(opt.state_arrays())
    assert other.t == 1
    np.testing.assert_array_equal(other.m, opt.m)


def test_grad_inverse_examples():
    # negative cost gradient pushes the action up
    assert grad_inverse([-1.0], [1.0])[0] == 0.0
    assert grad_inverse([1.0], [0.0])[0] == 0.0
    np.testing.assert_allclose(grad_inverse([-2.0, 2.0], [0.5, 0.5]), [-1.0, 1.0])
    np.testing.assert_allclose(grad_inverse([-1.0, 1.0], [0.2, 0.2]), [-0.8, 0.2])


def test_schedule_examples():
    s = LinearSchedule(0.5, 0.05, 10000)
    assert schedule_value(s, 0) == 0.5
    assert schedule_value(s, 10000) == pytest.approx(0.05)
    assert schedule_value(s, 5000) == pytest.approx(0.275)
    assert schedule_value(s, 10**6) == pytest.approx(0.05)
    vals = [s.value(t) for t in range(0, 12000, 37)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        s.value(-1)


# -- target networks -------------------------------------------------------------------

def test_soft_update_examples():
    rng = np.random.default_rng(13)
    online = small_net(rng)
    randomize_stats(online, rng)
    target = small_net(rng)
    frozen = target.copy()
    soft_update(online, target, 0.0)
    np.testing.assert_array_equal(target.flat, frozen.flat)
    soft_update(online, target, 1.0)
    np.testing.assert_array_equal(target.flat, online.flat)
    for s, t in zip(online.stats(), target.stats()):
        np.testing.assert_array_equal(s, t)

    one = Mlp([Layer(np.ones((1, 1)), np.zeros(1), "linear")])
    zero = Mlp([Layer(np.zeros((1, 1)), np.zeros(1), "linear")])
    soft_update(one, zero, 1e-4)
    assert zero.layers[0].W[0, 0] == pytest.approx(1e-4, rel=1e-12)


def test_soft_update_geometric_lag():
    rng = np.random.default_rng(14)
    online = small_net(rng)
    target = small_net(rng)
    gap0 = np.linalg.norm(online.flat - target.flat)
    tau = 0.05
    for _ in range(30):
        soft_update(online, target, tau)
    gap = np.linalg.norm(online.flat - target.flat)
    assert gap == pytest.approx(gap0 * (1 - tau) ** 30, rel=1e-9)


def test_soft_update_shape_mismatch():
    rng = np.random.default_rng(15)
    with pytest.raises(ShapeMismatch):
        soft_update(small_net(rng), Mlp.build([5, 3], ["linear"], [False], rng), 0.1)


# -- persistence -------------------------------------------------------------------------

def test_snapshot_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(16)
    net = small_net(rng)
    randomize_stats(net, rng)
    net.set_input_standardization(np.arange(5.0), np.full(5, 2.0))
    path = tmp_path / "net.npz"
    net.save(path)
    back = Mlp.load(path)
    assert back.flat.tobytes() == net.flat.tobytes()
    for s, t in zip(net.stats(), back.stats()):
        assert s.tobytes() == t.tobytes()
    x = rng.normal(size=(3, 5))
    assert back.predict(x).tobytes() == net.predict(x).tobytes()
    assert [l.activation for l in back.layers] == [l.activation for l in net.layers]
    # loaded parameters are still views of the flat vector
    back.flat[:] = 0.0
    assert np.all(back.layers[0].W == 0)


def test_snapshot_version_checked(tmp_path):
    net = small_net(np.random.default_rng(0))
    path = tmp_path / "net.npz"
    np.savez(path, version=np.array(99), **net.to_arrays())
    with pytest.raises(ValueError, match="version"):
        Mlp.load(path)


def test_copy_is_independent():
    net = small_net(np.random.default_rng(17))
    twin = net.copy()
    twin.flat += 1.0
    twin.layers[0].bn.running_mean += 1.0
    assert not np.shares_memory(twin.flat, net.flat)
    assert np.all(net.layers[0].bn.running_mean == 0)
    np.testing.assert_allclose(twin.layers[2].b, net.layers[2].b + 1.0)


def test_fresh_batchnorm():
    bn = BatchNorm.fresh(3)
    assert np.all(bn.running_var > 0) and bn.momentum == 0.99
