import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedabr.neural import (
    HEAD_LINEAR,
    HEAD_SOFTMAX,
    Mlp,
    MlpSpec,
    ShapeError,
    WeightVector,
    adam_step,
    combined_hash,
    flatten,
    flatten_nets,
    init_mlp,
    load_checkpoint,
    load_weights,
    make_adam,
    save_checkpoint,
    stable_softmax,
    unflatten,
    unflatten_many,
)


def finite_difference_grad(net, x, loss_of_output, h=1e-5):
    """Independent central-difference gradient of loss_of_output(net.forward(x))."""
    grad = np.empty_like(net.flat)
    for i in range(net.flat.size):
        orig = net.flat[i]
        net.flat[i] = orig + h
        up = loss_of_output(net.forward(x))
        net.flat[i] = orig - h
        down = loss_of_output(net.forward(x))
        net.flat[i] = orig
        grad[i] = (up - down) / (2 * h)
    return grad


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def test_spec_param_count_and_hash():
    spec = MlpSpec(22, (64, 64), 7)
    assert spec.num_params() == 22 * 64 + 64 + 64 * 64 + 64 + 64 * 7 + 7
    assert spec.spec_hash() == MlpSpec(22, (64, 64), 7).spec_hash()
    assert spec.spec_hash() != MlpSpec(22, (64, 64), 7, head=HEAD_SOFTMAX).spec_hash()


def test_zero_weights_linear_head_outputs_zero():
    net = Mlp(MlpSpec(5, (4,), 3))
    assert np.all(net.forward(np.ones(5)) == 0.0)


def test_zero_weights_softmax_head_uniform():
    net = Mlp(MlpSpec(5, (4,), 7, head=HEAD_SOFTMAX))
    out = net.forward(np.ones(5))
    assert np.allclose(out, 1.0 / 7.0, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=9))
def test_softmax_normalization(logits):
    p = stable_softmax(np.array(logits))
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.all(p > 0) and np.all(p < 1 + 1e-12)


def test_forward_batch_matches_single_rows():
    rng = np.random.default_rng(0)
    net = init_mlp(MlpSpec(6, (8, 5), 4, head=HEAD_SOFTMAX), rng)
    X = rng.standard_normal((10, 6))
    batch = net.forward(X)
    for i in range(10):
        assert np.allclose(batch[i], net.forward(X[i]), atol=1e-14)


@pytest.mark.parametrize("head", [HEAD_LINEAR, HEAD_SOFTMAX])
def test_backward_matches_finite_differences(head):
    rng = np.random.default_rng(1)
    spec = MlpSpec(22, (8, 6), 7, head=head)
    for trial in range(5):
        net = init_mlp(spec, rng)
        X = rng.standard_normal((3, 22))
        w = rng.standard_normal((3, 7))  # arbitrary linear functional of the output

        def loss(out, w=w):
            return float(np.sum(w * out))

        out, cache = net.forward(X, want_cache=True)
        analytic = net.backward(cache, w)
        numeric = finite_difference_grad(net, X, loss)
        assert rel_err(analytic, numeric) < 1e-6


def test_backward_of_constant_loss_is_zero():
    rng = np.random.default_rng(2)
    net = init_mlp(MlpSpec(4, (5,), 3), rng)
    out, cache = net.forward(np.ones((2, 4)), want_cache=True)
    grad = net.backward(cache, np.zeros((2, 3)))
    assert np.all(grad == 0.0)


def test_backward_linearity():
    rng = np.random.default_rng(3)
    net = init_mlp(MlpSpec(4, (5,), 3), rng)
    g = rng.standard_normal((2, 3))
    out, cache = net.forward(np.ones((2, 4)), want_cache=True)
    g1 = net.backward(cache, g)
    out, cache = net.forward(np.ones((2, 4)), want_cache=True)
    g3 = net.backward(cache, 3.0 * g)
    assert np.allclose(3.0 * g1, g3, atol=1e-12)


def test_adam_zero_gradient_keeps_weights():
    rng = np.random.default_rng(4)
    net = init_mlp(MlpSpec(3, (4,), 2), rng)
    before = net.flat.copy()
    adam = make_adam(net.flat.size, lr=0.01)
    adam_step(adam, net.flat, np.zeros_like(net.flat))
    assert np.array_equal(net.flat, before)


def test_adam_first_step_closed_form():
    rng = np.random.default_rng(5)
    n = 50
    w = rng.standard_normal(n)
    g = rng.standard_normal(n)
    adam = make_adam(n, lr=0.003)
    before = w.copy()
    adam_step(adam, w, g)
    expected = before - 0.003 * g / (np.abs(g) + 1e-8)
    assert np.allclose(w, expected, rtol=1e-12, atol=1e-15)
    # and therefore approximately a signed step of size lr
    assert np.allclose(w - before, -0.003 * np.sign(g), atol=1e-8)


def test_adam_deterministic_trajectories():
    rng = np.random.default_rng(6)
    g_seq = [rng.standard_normal(10) for _ in range(20)]

    def run():
        w = np.ones(10)
        adam = make_adam(10, lr=0.01)
        for g in g_seq:
            adam_step(adam, w, g)
        return w

    assert np.array_equal(run(), run())


def test_adam_shape_mismatch():
    adam = make_adam(4, lr=0.1)
    with pytest.raises(ShapeError):
        adam_step(adam, np.zeros(4), np.zeros(5))


def test_flatten_unflatten_round_trip():
    rng = np.random.default_rng(7)
    spec = MlpSpec(5, (6, 4), 3, head=HEAD_SOFTMAX)
    net = init_mlp(spec, rng)
    vec = flatten(net)
    rebuilt = unflatten(spec, vec)
    assert np.array_equal(rebuilt.flat, net.flat)
    X = rng.standard_normal((4, 5))
    assert np.array_equal(rebuilt.forward(X), net.forward(X))


def test_unflatten_rejects_wrong_layout():
    spec_a = MlpSpec(5, (6,), 3)
    spec_b = MlpSpec(5, (7,), 3)
    vec = flatten(Mlp(spec_a))
    with pytest.raises(ShapeError):
        unflatten(spec_b, vec)
    with pytest.raises(ShapeError):
        bad = WeightVector(values=np.zeros(spec_a.num_params() + 1), spec_hash=spec_a.spec_hash())
        unflatten(spec_a, bad)


def test_weight_vector_immutability():
    vec = flatten(Mlp(MlpSpec(3, (2,), 2)))
    with pytest.raises(ValueError):
        vec.values[0] = 1.0


def test_average_with_itself_is_identity():
    rng = np.random.default_rng(8)
    net = init_mlp(MlpSpec(4, (3,), 2), rng)
    vec = flatten(net)
    mean = (vec.values + vec.values) / 2.0
    assert np.array_equal(mean, vec.values)


def test_multi_net_flatten_round_trip():
    rng = np.random.default_rng(9)
    specs = [MlpSpec(5, (6, 6), 3, head=HEAD_SOFTMAX), MlpSpec(5, (4,), 1)]
    nets = [init_mlp(s, rng) for s in specs]
    vec = flatten_nets(nets)
    assert len(vec) == sum(s.num_params() for s in specs)
    assert vec.spec_hash == combined_hash(specs)
    rebuilt = unflatten_many(specs, vec)
    for a, b in zip(rebuilt, nets):
        assert np.array_equal(a.flat, b.flat)
    with pytest.raises(ShapeError):
        load_weights([nets[0]], vec)  # single-net layout cannot accept the pair


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(10)
    specs = [MlpSpec(22, (8,), 7, head=HEAD_SOFTMAX), MlpSpec(22, (8,), 1)]
    vec = flatten_nets([init_mlp(s, rng) for s in specs])
    scaling = {"throughput_mbps": 10.0, "buffer_s": 20.0}
    path = tmp_path / "model.json"
    save_checkpoint(path, algo="a2c", specs=specs, weights=vec, feature_scaling=scaling, meta={"round": 3})
    ckpt = load_checkpoint(path)
    assert ckpt.algo == "a2c"
    assert ckpt.specs == specs
    assert np.array_equal(ckpt.weights.values, vec.values)
    assert ckpt.feature_scaling == scaling
    assert ckpt.meta["round"] == 3
