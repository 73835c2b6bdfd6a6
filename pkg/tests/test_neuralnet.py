import numpy as np
import pytest

from gradcheck import network_errors, random_net
from oracles import adam_first_step
from swapcon.container import ChecksumError, CheckpointError
from swapcon.neuralnet import (
    Adam,
    LayerBlock,
    Network,
    NetworkError,
    backward,
    build_network,
    build_trunk,
    checkpoint_bytes,
    forward,
    freeze_prefix,
    load_checkpoint,
    predict,
    save_checkpoint,
)


def _identity_block(activation="none"):
    one = np.ones(1)
    return LayerBlock(np.eye(1), np.zeros(1), one.copy(), np.zeros(1), np.zeros(1), one.copy(),
                      activation, True)


def test_bn_train_mode_standardises():
    net = Network([_identity_block()], 1)
    out, _ = forward(net, np.array([[1.0], [3.0]]))
    np.testing.assert_allclose(out, [[-1.0], [1.0]], atol=1e-5)
    # biased batch variance is 1 here, so the only deviation is eps
    np.testing.assert_allclose(out[1, 0], 1.0 / np.sqrt(1.0 + 1e-5), rtol=1e-12)


def test_bn_running_stats_update():
    net = Network([_identity_block()], 1)
    forward(net, np.array([[1.0], [3.0]]))
    blk = net.blocks[0]
    np.testing.assert_allclose(blk.running_mean, [0.2])
    # unbiased batch variance 2 -> 0.9 * 1 + 0.1 * 2
    np.testing.assert_allclose(blk.running_var, [1.1])


def test_bn_eval_mode_identity():
    net = Network([_identity_block()], 1).eval()
    x = np.array([[-4.0], [0.5], [9.0]])
    out, _ = forward(net, x)
    np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5), rtol=1e-12)


def test_relu_activation():
    blk = _identity_block("relu")
    blk.use_bn = False
    out, _ = forward(Network([blk], 1), np.array([[-2.0], [3.0]]))
    np.testing.assert_array_equal(out, [[0.0], [3.0]])


def test_single_row_batch_rejected_in_train_mode():
    net = build_trunk(4, 2, 8)
    with pytest.raises(NetworkError):
        forward(net, np.zeros((1, 4)))
    assert predict(net.eval(), np.zeros((1, 4))).shape == (1, 8)


def test_three_block_gradcheck():
    net = build_network(5, [7, 6, 3], ["tanh", "relu", "none"], [True, True, False], seed=1)
    rng = np.random.default_rng(0)
    errs = network_errors(net, rng.standard_normal((8, 5)), rng.standard_normal((8, 3)))
    assert max(errs.values()) < 1e-5, errs


@pytest.mark.parametrize("seed", range(5))
def test_random_network_gradcheck(seed):
    net, rng = random_net(seed)
    X = rng.standard_normal((8, net.input_width))
    G = rng.standard_normal((8, net.output_width))
    errs = network_errors(net, X, G)
    assert max(errs.values()) < 1e-5, errs


def test_frozen_block_zero_grads_but_input_grad_flows():
    net = build_trunk(6, 3, 5, seed=0)
    freeze_prefix(net, 2)
    rng = np.random.default_rng(1)
    X = rng.standard_normal((8, 6))
    before = [b.running_mean.copy() for b in net.blocks]
    out, caches = forward(net, X)
    grads, dX = backward(net, caches, rng.standard_normal(out.shape))
    for i in range(2):
        for k in ("W", "b", "gamma", "beta"):
            assert np.all(grads[f"{i}.{k}"] == 0)
        np.testing.assert_array_equal(net.blocks[i].running_mean, before[i])
    assert np.any(grads["2.W"] != 0)
    assert np.any(dX != 0)


def test_zero_upstream_gives_zero_grads():
    net = build_trunk(6, 3, 5, seed=0)
    out, caches = forward(net, np.random.default_rng(0).standard_normal((8, 6)))
    grads, dX = backward(net, caches, np.zeros_like(out))
    assert all(np.all(g == 0) for g in grads.values())
    assert np.all(dX == 0)


def test_adam_first_step_closed_form():
    p = {"w": np.array([1.0])}
    Adam(lr=1e-3).step(p, {"w": np.array([0.3])})
    assert p["w"][0] == pytest.approx(adam_first_step(1.0, 0.3), abs=1e-15)
    assert abs(1.0 - p["w"][0]) == pytest.approx(1e-3, rel=1e-6)


def test_adam_sign_and_zero_gradient():
    p = {"a": np.array([0.0]), "b": np.array([2.0])}
    opt = Adam()
    trail = []
    for _ in range(50):
        opt.step(p, {"a": np.array([0.7]), "b": np.array([0.0])})
        trail.append(p["a"][0])
    assert np.all(np.diff(trail) < 0)
    assert p["b"][0] == 2.0


def test_adam_skips_frozen():
    p = {"a": np.array([1.0]), "b": np.array([1.0])}
    Adam().step(p, {"a": np.array([1.0]), "b": np.array([1.0])}, frozen={"a"})
    assert p["a"][0] == 1.0 and p["b"][0] < 1.0


def test_freeze_round_trip_updates_everything():
    net = build_trunk(4, 3, 4, seed=0)
    freeze_prefix(net, 3)
    freeze_prefix(net, 0)
    before = {k: v.copy() for k, v in net.params().items()}
    rng = np.random.default_rng(0)
    out, caches = forward(net, rng.standard_normal((8, 4)))
    grads, _ = backward(net, caches, rng.standard_normal(out.shape))
    Adam().step(net.params(), grads, net.frozen_names())
    for k, v in net.params().items():
        if k.endswith(".b"):
            continue  # pre-BN bias: zero gradient, so Adam leaves it
        assert np.any(v != before[k]), k
    with pytest.raises(NetworkError):
        freeze_prefix(net, 4)


def test_checkpoint_roundtrip_bytes_and_outputs(tmp_path, small_splits):
    from swapcon.embed import EmbedderSpec, fit

    emb = fit(small_splits.pretrain_set, EmbedderSpec("EB", d=16, eb_bin_count=8))
    net = build_trunk(emb.input_width, 2, 8, seed=4)
    X = emb.embed_table(small_splits.pretrain_set, np.arange(16)).reshape(16, -1)
    out, caches = forward(net, X)
    opt = Adam()
    opt.step(net.params(), backward(net, caches, np.ones_like(out))[0])
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, net, emb, opt, seeds={"seed": 4})
    net2, emb2, opt2, header = load_checkpoint(p1)
    save_checkpoint(p2, net2, emb2, opt2, seeds=header["seeds"])
    assert p1.read_bytes() == p2.read_bytes()
    net.eval()
    np.testing.assert_array_equal(predict(net, X), predict(net2, X))
    assert header["schema_hash"] == small_splits.schema.schema_hash()


def test_truncated_checkpoint_rejected(tmp_path):
    net = build_trunk(4, 2, 4)
    blob = checkpoint_bytes(net, None)
    p = tmp_path / "t.ckpt"
    p.write_bytes(blob[:-10])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
    p.write_bytes(blob[:-1] + bytes([blob[-1] ^ 1]))
    with pytest.raises(ChecksumError):
        load_checkpoint(p)
