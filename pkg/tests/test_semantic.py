import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cvocfsl.errors import InputError
from cvocfsl.semantic import (PARAM_NAMES, SinNetwork, SinTrainConfig, load_sin, refine_prototype,
                              save_sin, sin_forward, sin_loss, sin_train)


def kink_free_net(seed, d=4, d_t=4, h=8, B=3):
    """A net and batch whose L1 residuals all sit well away from zero."""
    r = np.random.default_rng(seed)
    net = SinNetwork(d, d_t, h, seed=seed)
    for k in net.params:
        net.params[k] += 0.1 * r.standard_normal(net.params[k].shape)
    while True:
        P, T = r.standard_normal((B, d)), r.standard_normal((B, d_t))
        if np.min(np.abs(net.residuals(P, T))) > 1e-3:
            return net, P, T


def numeric_grad(net, P, T, name, h=1e-6):
    g = np.zeros_like(net.params[name])
    for idx in np.ndindex(g.shape):
        old = net.params[name][idx]
        net.params[name][idx] = old + h
        up = sin_loss(net, P, T)[3]
        net.params[name][idx] = old - h
        dn = sin_loss(net, P, T)[3]
        net.params[name][idx] = old
        g[idx] = (up - dn) / (2 * h)
    return g


def test_zero_network_outputs_zero():
    params = {k: np.zeros_like(v) for k, v in SinNetwork(3, 2, 4).params.items()}
    net = SinNetwork(3, 2, 4, params)
    z, Pr, tr = sin_forward(net, np.ones(3), np.ones(2))
    assert np.all(z == 0) and np.all(Pr == 0) and np.all(tr == 0)
    assert z.shape == (3,) and tr.shape == (2,)


def test_forward_is_stable(rng):
    net = SinNetwork(4, 3, 6, seed=2)
    P, t = rng.standard_normal(4), rng.standard_normal(3)
    a = sin_forward(net, P, t)
    b = sin_forward(SinNetwork(4, 3, 6, seed=2), P, t)
    for x, y in zip(a, b):
        assert x.tobytes() == y.tobytes()


def test_shape_mismatch():
    net = SinNetwork(4, 3, 6)
    with pytest.raises(InputError):
        sin_forward(net, np.ones(5), np.ones(3))


def test_loss_reduction_is_componentwise_mean():
    net = SinNetwork(2, 1, 3)
    p = {k: np.zeros_like(v) for k, v in net.params.items()}
    p["dec_b2"] = np.array([1.0, 1.0, 0.0])
    net = SinNetwork(2, 1, 3, p)
    l_jep, l_fr, l_sr, l_s = sin_loss(net, np.zeros(2), np.zeros(1))
    # z = 0 = P, P_rec - P = [1, 1], t_rec = t
    assert (l_jep, l_fr, l_sr) == (0.0, 1.0, 0.0)
    assert l_s == 1.0


def test_perfect_autoencoder_has_zero_reconstruction_terms():
    net = SinNetwork(1, 1, 1)
    p = {k: np.zeros_like(v) for k, v in net.params.items()}
    P = np.array([0.3])
    t = np.array([-0.2])
    p["enc_b2"] = P.copy()
    p["dec_b2"] = np.concatenate([P, t])
    l = sin_loss(SinNetwork(1, 1, 1, p), P, t)
    assert l[0] == l[1] == l[2] == 0.0


@pytest.mark.parametrize("seed", range(3))
def test_parameter_gradients_match_finite_differences(seed):
    net, P, T = kink_free_net(seed)
    _, g = net.loss_and_grads(P, T)
    for name in PARAM_NAMES:
        num = numeric_grad(net, P, T, name)
        err = np.max(np.abs(g[name] - num)) / max(np.max(np.abs(num)), 1e-12)
        assert err <= 1e-4, name


def test_encoder_jacobian_matches_finite_differences(rng):
    net = SinNetwork(4, 3, 8, seed=5)
    P, t = rng.standard_normal(4), rng.standard_normal(3)
    J = net.encode_jacobian(P, t)
    h = 1e-6
    num = np.column_stack([(net.encode(P + h * e, t) - net.encode(P - h * e, t)) / (2 * h) for e in np.eye(4)])
    np.testing.assert_allclose(J, num, rtol=1e-4, atol=1e-9)


def _pairs(seed, C=5, d=8, d_t=8):
    r = np.random.default_rng(seed)
    P = r.standard_normal((C, d))
    return list(zip(P, P @ r.standard_normal((d, d_t)) / np.sqrt(d)))


def test_training_descends_and_is_deterministic():
    data = _pairs(0)
    P = np.stack([p for p, _ in data])
    T = np.stack([t for _, t in data])
    cfg = SinTrainConfig(epochs=200, batch_size=5, lr=3e-3, seed=1)
    init = sin_loss(SinNetwork(8, 8, 16, seed=1), P, T)[3]
    a = sin_train(data, cfg, hidden=16)
    b = sin_train(data, cfg, hidden=16)
    assert sin_loss(a, P, T)[3] < init
    for k in PARAM_NAMES:
        assert np.array_equal(a.params[k], b.params[k])


def test_training_picks_best_validation_state():
    data = _pairs(3)
    val = _pairs(4)
    net = sin_train(data, SinTrainConfig(epochs=30, batch_size=2, lr=1e-2), hidden=8, validation=val)
    VP = np.stack([p for p, _ in val])
    VT = np.stack([t for _, t in val])
    assert np.isfinite(sin_loss(net, VP, VT)[3])


def test_training_input_errors():
    with pytest.raises(InputError):
        sin_train([])
    with pytest.raises(InputError):
        sin_train(_pairs(0, C=1))
    with pytest.raises(InputError):
        SinTrainConfig(lr=0)


def test_refine_degenerate_blends(rng):
    net = SinNetwork(4, 2, 5, seed=3)
    P, t = rng.standard_normal(4), rng.standard_normal(2)
    out = refine_prototype(P, t, net, 1.0)
    assert out.tobytes() == P.tobytes() and out is not P
    np.testing.assert_array_equal(refine_prototype(P, t, net, 0.0), net.encode(P, t))
    for s in (-0.1, 1.5):
        with pytest.raises(InputError):
            refine_prototype(P, t, net, s)


@settings(max_examples=50, deadline=None)
@given(s=st.floats(0, 1), seed=st.integers(0, 1000))
def test_refined_prototype_lies_on_segment(s, seed):
    r = np.random.default_rng(seed)
    net = SinNetwork(4, 2, 5, seed=seed)
    P, t = r.standard_normal(4), r.standard_normal(2)
    z = net.encode(P, t)
    out = refine_prototype(P, t, net, s)
    lo, hi = np.minimum(P, z), np.maximum(P, z)
    assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


def test_checkpoint_round_trip(tmp_path):
    net = SinNetwork(5, 3, 7, seed=11)
    path = tmp_path / "sin.npz"
    save_sin(net, path)
    back = load_sin(path)
    assert (back.d, back.d_t, back.hidden) == (5, 3, 7)
    for k in PARAM_NAMES:
        assert back.params[k].tobytes() == net.params[k].tobytes()


def test_checkpoint_errors(tmp_path):
    with pytest.raises(InputError):
        load_sin(tmp_path / "missing.npz")
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(InputError):
        load_sin(bad)
    net = SinNetwork(2, 2, 2)
    with open(tmp_path / "v9.npz", "wb") as fh:
        np.savez(fh, format_version=np.int64(9), dims=np.array([2, 2, 2]), activation=np.array("tanh"),
                 **net.params)
    with pytest.raises(InputError):
        load_sin(tmp_path / "v9.npz")
