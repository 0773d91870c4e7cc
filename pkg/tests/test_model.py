import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dogpain.numerics as nx
from dogpain.errors import ConfigurationError, DimensionError
from dogpain.model import (
    AttentionParams,
    ConvLstmCellParams,
    LstmCellParams,
    TwoStreamConfig,
    TwoStreamParams,
    convlstm_step,
    count_params,
    forward_batch,
    fuse_concat,
    lstm_cell_param_count,
    lstm_step,
    parameter_shapes,
    time_attention,
)
from dogpain.numerics import Tensor, grad_check, precision


def sig(z):
    return 1.0 / (1.0 + math.exp(-z))


def _lstm_params(rng, n_in, hidden, scale=0.5):
    return LstmCellParams(
        Tensor(rng.normal(0, scale, (4 * hidden, hidden))),
        Tensor(rng.normal(0, scale, (4 * hidden, n_in))),
        Tensor(rng.normal(0, scale, 4 * hidden)),
    )


def _toy_config(**kw):
    base = dict(hidden=4, lstm_layers=2, channels=(2, 3), image_size=16, attention_hidden=3)
    base.update(kw)
    return TwoStreamConfig(**base)


# ------------------------------------------------------------- LSTM cell


def test_lstm_scalar_reference_trace(f64, rng):
    # independent scalar recurrence, hand-written from the gate equations
    p = _lstm_params(rng, 1, 1)
    W, I, b = (np.asarray(t.data).ravel() for t in (p.W, p.I, p.b))
    xs = rng.normal(size=6)
    h_ref = c_ref = 0.0
    h = c = Tensor(np.zeros(1))
    for x in xs:
        zi, zf, zo, zc = (I[g] * x + W[g] * h_ref + b[g] for g in range(4))
        c_ref = sig(zf) * c_ref + sig(zi) * math.tanh(zc)
        h_ref = math.tanh(sig(zo) * c_ref)
        h, c = lstm_step(p, Tensor([x]), h, c)
        assert abs(h.item() - h_ref) < 1e-12
        assert abs(c.item() - c_ref) < 1e-12


def test_lstm_standard_output_variant(f64, rng):
    p = _lstm_params(rng, 2, 3)
    x, h0, c0 = (Tensor(rng.normal(size=k)) for k in (2, 3, 3))
    z = p.I.data @ x.data + p.W.data @ h0.data + p.b.data
    o = 1 / (1 + np.exp(-z[6:9]))
    _, c = lstm_step(p, x, h0, c0)
    h_std, _ = lstm_step(p, x, h0, c0, standard_output=True)
    np.testing.assert_allclose(h_std.data, o * np.tanh(c.data), atol=1e-14)


def test_lstm_batched_matches_unbatched(f64, rng):
    p = _lstm_params(rng, 5, 4)
    xs = rng.normal(size=(3, 5))
    hb, cb = lstm_step(p, Tensor(xs), Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 4))))
    for n in range(3):
        h, c = lstm_step(p, Tensor(xs[n]), Tensor(np.zeros(4)), Tensor(np.zeros(4)))
        np.testing.assert_allclose(hb.data[n], h.data, atol=1e-14)


def test_lstm_gradient_three_step_chain(f64, rng):
    p = _lstm_params(rng, 3, 4)
    xs = rng.normal(size=(3, 3))

    def fn(W, I, b, x):
        cell = LstmCellParams(W, I, b)
        h = c = Tensor(np.zeros(4))
        for t in range(3):
            h, c = lstm_step(cell, x[t], h, c)
        return nx.tsum(h * h) + nx.tsum(c)

    assert grad_check(fn, [p.W, p.I, p.b, xs]) < 1e-4


def test_lstm_shape_mismatch_names_shapes(f64, rng):
    p = _lstm_params(rng, 3, 4)
    with pytest.raises(DimensionError, match=r"\(5,\)"):
        lstm_step(p, Tensor(np.zeros(5)), Tensor(np.zeros(4)), Tensor(np.zeros(4)))


# --------------------------------------------------------- ConvLSTM cell


def test_convlstm_single_pixel_is_peephole_lstm(f64, rng):
    # on a 1×1 map with zero padding only the kernel centre tap sees data,
    # so the cell collapses to a scalar LSTM with peephole weights
    p = ConvLstmCellParams(
        Tensor(rng.normal(0, 0.7, (4, 1, 3, 3))),
        Tensor(rng.normal(0, 0.7, (4, 1, 3, 3))),
        Tensor(rng.normal(0, 0.7, (3, 1, 1, 1))),
        Tensor(rng.normal(0, 0.7, 4)),
    )
    w = p.W.data[:, 0, 1, 1]
    u = p.U.data[:, 0, 1, 1]
    vf, vi, vo = p.V.data.ravel()
    b = p.b.data
    h_ref = c_ref = 0.0
    h = c = Tensor(np.zeros((1, 1, 1)))
    for x in rng.normal(size=5):
        zf, zi, zc, zo = (w[g] * x + u[g] * h_ref + b[g] for g in range(4))
        f = sig(zf + vf * c_ref)
        i = sig(zi + vi * c_ref)
        c_ref = f * c_ref + i * math.tanh(zc)
        h_ref = sig(zo + vo * c_ref) * math.tanh(c_ref)
        h, c = convlstm_step(p, Tensor(np.full((1, 1, 1), x)), h, c)
        assert abs(h.item() - h_ref) < 1e-12
        assert abs(c.item() - c_ref) < 1e-12


def test_convlstm_preserves_extent_and_batches(f64, rng):
    p = ConvLstmCellParams(
        Tensor(rng.normal(size=(8, 3, 3, 3))),
        Tensor(rng.normal(size=(8, 2, 3, 3))),
        Tensor(rng.normal(size=(3, 2, 5, 6))),
        Tensor(rng.normal(size=8)),
    )
    x = rng.normal(size=(2, 3, 5, 6))
    h0 = c0 = Tensor(np.zeros((2, 2, 5, 6)))
    h, c = convlstm_step(p, Tensor(x), h0, c0)
    assert h.shape == c.shape == (2, 2, 5, 6)
    h1, _ = convlstm_step(p, Tensor(x[1]), Tensor(np.zeros((2, 5, 6))), Tensor(np.zeros((2, 5, 6))))
    np.testing.assert_allclose(h.data[1], h1.data, atol=1e-13)


def test_convlstm_gradient_check(f64, rng):
    shapes = [(8, 1, 3, 3), (8, 2, 3, 3), (3, 2, 4, 4), (8,)]
    params = [rng.normal(0, 0.5, s) for s in shapes]
    x0, h0, c0 = rng.normal(size=(1, 4, 4)), rng.normal(size=(2, 4, 4)), rng.normal(size=(2, 4, 4))

    def fn(W, U, V, b, x, h, c):
        h1, c1 = convlstm_step(ConvLstmCellParams(W, U, V, b), x, h, c)
        return nx.tsum(h1 * h1) + nx.tsum(c1)

    assert grad_check(fn, [*params, x0, h0, c0]) < 1e-4


def test_convlstm_rejects_extent_mismatch(f64, rng):
    p = ConvLstmCellParams(
        Tensor(np.zeros((4, 1, 3, 3))), Tensor(np.zeros((4, 1, 3, 3))), Tensor(np.zeros((3, 1, 4, 4))), Tensor(np.zeros(4))
    )
    with pytest.raises(DimensionError):
        convlstm_step(p, Tensor(np.zeros((1, 4, 5))), Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 4, 4))))


# -------------------------------------------------------------- attention


def _attention(rng, d, width=3):
    return AttentionParams(
        Tensor(rng.normal(size=(width, d))),
        Tensor(rng.normal(size=(width, d))),
        Tensor(rng.normal(size=width)),
        Tensor(rng.normal(size=width)),
    )


def test_attention_single_step_returns_annotation(f64, rng):
    ann = rng.normal(size=(1, 5))
    ctx, alpha = time_attention(_attention(rng, 5), Tensor(ann))
    assert alpha.data.tolist() == [1.0]
    np.testing.assert_allclose(ctx.data, ann[0], atol=1e-15)


def test_attention_zero_scores_give_mean(f64, rng):
    a = _attention(rng, 4)
    a.v = Tensor(np.zeros(3))
    ann = rng.normal(size=(6, 4))
    ctx, alpha = time_attention(a, Tensor(ann))
    np.testing.assert_allclose(alpha.data, np.full(6, 1 / 6), atol=1e-15)
    np.testing.assert_allclose(ctx.data, ann.mean(axis=0), atol=1e-14)


def test_attention_matches_numpy_reference(f64, rng):
    a = _attention(rng, 4)
    ann = rng.normal(size=(2, 5, 4))
    ctx, alpha = time_attention(a, Tensor(ann))
    for n in range(2):
        q = ann[n, -1]
        e = np.tanh(ann[n] @ a.Wa.data.T + a.Wq.data @ q + a.b.data) @ a.v.data
        w = np.exp(e - e.max())
        w /= w.sum()
        np.testing.assert_allclose(alpha.data[n], w, atol=1e-14)
        np.testing.assert_allclose(ctx.data[n], w @ ann[n], atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(t=st.integers(1, 12), d=st.integers(1, 6), seed=st.integers(0, 2**16))
def test_attention_weights_form_distribution(t, d, seed):
    with precision("float64"):
        rng = np.random.default_rng(seed)
        _, alpha = time_attention(_attention(rng, d), Tensor(rng.normal(0, 3, (t, d))))
        assert np.all(alpha.data >= 0)
        assert abs(alpha.data.sum() - 1.0) < 1e-12


def test_attention_gradient_into_annotations(f64, rng):
    shapes = [(3, 4), (3, 4), (3,), (3,)]
    params = [rng.normal(size=s) for s in shapes]
    ann = rng.normal(size=(5, 4))

    def fn(Wq, Wa, b, v, x):
        ctx, _ = time_attention(AttentionParams(Wq, Wa, b, v), x)
        return nx.tsum(ctx * ctx)

    assert grad_check(fn, [*params, ann]) < 1e-4


# ----------------------------------------------------------------- fusion


def test_fuse_concat_order_and_gradient(f64, rng):
    a, b = rng.normal(size=3), rng.normal(size=2)
    out = fuse_concat(Tensor(a), Tensor(b))
    np.testing.assert_array_equal(out.data, np.concatenate([a, b]))
    w = rng.normal(size=5)
    assert grad_check(lambda x, y: nx.tsum(fuse_concat(x, y) * Tensor(w)), [a, b]) < 1e-4


def test_fuse_concat_rejects_mixed_rank(f64):
    with pytest.raises(DimensionError):
        fuse_concat(Tensor(np.zeros(3)), Tensor(np.zeros((1, 2))))


# ---------------------------------------------------------------- network


def test_lstm_cell_parameter_count():
    assert lstm_cell_param_count(34, 64) == 25_344
    shapes = parameter_shapes(TwoStreamConfig(hidden=64))
    assert sum(int(np.prod(shapes[f"pose.l0.{k}"][0])) for k in "WIb") == 25_344


def test_count_params_monotone_in_hidden():
    counts = [count_params(TwoStreamConfig(hidden=h)) for h in (32, 64, 128)]
    assert counts[0] < counts[1] < counts[2]
    w_blocks = [4 * h * h for h in (32, 64, 128)]
    assert w_blocks[1] == 4 * w_blocks[0] and w_blocks[2] == 4 * w_blocks[1]


def test_config_digest_and_count_stable():
    a, b = TwoStreamConfig(hidden=128), TwoStreamConfig(hidden=128)
    assert a.digest() == b.digest() and count_params(a) == count_params(b)
    assert a.digest() != TwoStreamConfig(hidden=64).digest()
    assert TwoStreamConfig.from_dict(a.to_dict()) == a


def test_config_rejects_even_kernel():
    with pytest.raises(ConfigurationError):
        TwoStreamConfig(kernel=4)


def test_init_is_seeded_and_sets_forget_bias():
    cfg = _toy_config()
    p1, p2 = TwoStreamParams.init(cfg, 3), TwoStreamParams.init(cfg, 3)
    for k in p1.tensors:
        assert np.array_equal(p1[k].data, p2[k].data)
    assert not np.array_equal(p1["head.w"].data, TwoStreamParams.init(cfg, 4)["head.w"].data)
    assert p1["pose.l0.b"].data[4:8].tolist() == [1.0] * 4
    assert p1["rgb.l1.b"].data[:3].tolist() == [1.0] * 3
    assert not p1["rgb.l0.V"].data.any()
    bound = 1 / np.sqrt(34)
    assert np.abs(p1["pose.l0.I"].data).max() <= bound


def test_forward_shapes_and_probabilities(rng):
    cfg = _toy_config()
    p = TwoStreamParams.init(cfg, 0)
    frames = rng.random((3, 8, 3, 16, 16))
    poses = rng.normal(size=(3, 8, 34))
    res = forward_batch(p, frames, poses, training=False, keep_hidden=True)
    assert res.prob.shape == (3,)
    assert np.all((res.prob.data > 0) & (res.prob.data < 1))
    np.testing.assert_allclose(res.pose_alpha.data.sum(axis=1), 1.0, atol=1e-6)
    assert len(res.last_hidden) == 8 and res.last_hidden[0].shape == (3, 3, 8, 8)


def test_forward_rejects_bad_streams(rng):
    p = TwoStreamParams.init(_toy_config(), 0)
    with pytest.raises(DimensionError, match="RGB stream"):
        forward_batch(p, np.zeros((1, 8, 3, 15, 16)), np.zeros((1, 8, 34)))
    with pytest.raises(DimensionError, match="pose stream"):
        forward_batch(p, np.zeros((1, 8, 3, 16, 16)), np.zeros((1, 8, 33)))


def test_full_network_gradient_check(f64, rng):
    cfg = _toy_config()
    p = TwoStreamParams.init(cfg, 1)
    frames = rng.random((2, 8, 3, 16, 16))
    poses = rng.normal(size=(2, 8, 34))
    probe = ["pose.l0.I", "rgb.l0.W", "rgb.l0.V", "rgb.bn1.gamma", "rgb.att.Wa", "head.w"]

    def fn(fr, po, *tensors):
        for name, t in zip(probe, tensors):
            p.tensors[name] = t
        res = forward_batch(p, fr, po, training=True)
        return nx.tsum(res.logit * res.logit)

    err = grad_check(fn, [frames, poses, *(p[n].data for n in probe)], max_coords=8, rng=rng)
    assert err < 1e-3
