import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mblab.numcore import (
    GRU, Adam, CheckpointError, CheckpointVersionError, Dropout, EncoderBlock, Linear, MultiHeadAttention,
    NonFiniteGradientError, OptimizerState, ShapeError, Tensor, adam_step, clip_by_global_norm, finite_diff_check,
    global_norm, load_checkpoint, no_grad, ops, save_checkpoint,
)
from mblab.numcore.checkpoint import decode_checkpoint, encode_checkpoint

SEEDS = range(10)
TOL = 1e-4


def _rand(rng, *shape):
    return rng.standard_normal(shape)


def _bce_against(target):
    return lambda p: ops.binary_cross_entropy(p, Tensor(target.astype(np.float64)))


# (name, builder(rng) -> (fn, inputs))
PRIMITIVES = {
    "add": lambda r: (ops.add, [_rand(r, 3, 4), _rand(r, 4)]),
    "sub": lambda r: (ops.sub, [_rand(r, 3, 1), _rand(r, 3, 4)]),
    "mul": lambda r: (ops.mul, [_rand(r, 2, 3), _rand(r, 2, 3)]),
    "div": lambda r: (ops.div, [_rand(r, 2, 3), r.uniform(0.5, 2.0, (2, 3))]),
    "matmul": lambda r: (ops.matmul, [_rand(r, 2, 3, 4), _rand(r, 4, 5)]),
    "linear": lambda r: (ops.linear, [_rand(r, 2, 3, 4), _rand(r, 4, 5), _rand(r, 5)]),
    "reshape": lambda r: (lambda x: ops.reshape(x, (6, 2)), [_rand(r, 3, 4)]),
    "transpose": lambda r: (lambda x: ops.transpose(x, (2, 0, 1)), [_rand(r, 2, 3, 4)]),
    "getitem": lambda r: (lambda x: x[:, 1:3], [_rand(r, 3, 4)]),
    "concat": lambda r: (lambda a, b: ops.concat([a, b], axis=1), [_rand(r, 2, 3), _rand(r, 2, 2)]),
    "stack": lambda r: (lambda a, b: ops.stack([a, b], axis=1), [_rand(r, 2, 3), _rand(r, 2, 3)]),
    "broadcast_to": lambda r: (lambda x: ops.broadcast_to(x, (4, 2, 3)), [_rand(r, 2, 1)]),
    "sum": lambda r: (lambda x: ops.sum(x, axis=1), [_rand(r, 3, 4)]),
    "mean": lambda r: (lambda x: ops.mean(x, axis=(0, 2)), [_rand(r, 2, 3, 4)]),
    "relu": lambda r: (ops.relu, [_rand(r, 4, 5)]),
    "tanh": lambda r: (ops.tanh, [_rand(r, 4, 5)]),
    "sigmoid": lambda r: (ops.sigmoid, [_rand(r, 4, 5) * 3]),
    "softmax": lambda r: (ops.softmax, [_rand(r, 3, 5)]),
    "layer_norm": lambda r: (ops.layer_norm, [_rand(r, 3, 6), _rand(r, 6), _rand(r, 6)]),
    "conv2d": lambda r: (lambda x, w, b: ops.conv2d(x, w, b, stride=1, padding=1),
                         [_rand(r, 2, 2, 5, 6), _rand(r, 3, 2, 3, 3), _rand(r, 3)]),
    "conv2d_stride2": lambda r: (lambda x, w: ops.conv2d(x, w, stride=2, padding=0),
                                 [_rand(r, 1, 2, 7, 7), _rand(r, 2, 2, 3, 3)]),
    "attention": lambda r: (lambda q, k, v: ops.scaled_dot_product_attention(q, k, v)[0],
                            [_rand(r, 2, 4, 3), _rand(r, 2, 5, 3), _rand(r, 2, 5, 2)]),
    "multi_head_attention": lambda r: (lambda x, wq, bq, wo, bo: ops.multi_head_attention(x, wq, bq, wo, bo, 2)[0],
                                       [_rand(r, 2, 3, 4), _rand(r, 4, 12) * 0.5, _rand(r, 12), _rand(r, 4, 4),
                                        _rand(r, 4)]),
    "gru_cell": lambda r: (ops.gru_cell, [_rand(r, 2, 3), _rand(r, 2, 4), _rand(r, 3, 12), _rand(r, 4, 8),
                                          _rand(r, 4, 4), _rand(r, 12)]),
    "bce": lambda r: (_bce_against(r.integers(0, 2, 6)), [r.uniform(0.05, 0.95, 6)]),
    "bce_logits": lambda r: (lambda z: ops.binary_cross_entropy_with_logits(z, Tensor([0, 1, 1, 0, 1.0])),
                             [_rand(r, 5) * 3]),
}


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name, seed):
    fn, inputs = PRIMITIVES[name](np.random.default_rng(seed))
    res = finite_diff_check(fn, inputs, seed=seed)
    assert res.n_checked > 0
    assert res.max_rel_error < TOL


def test_gradcheck_flags_relu_kink():
    res = finite_diff_check(ops.relu, [np.array([0.0, 1.0, -1.0])])
    assert res.kinks == [(0, 0)]
    assert res.n_checked == 2


def test_gradcheck_detects_wrong_gradient():
    from mblab.numcore.tensor import make_result

    def bad_square(x):
        return make_result(x.data ** 2, (x,), lambda g: (g * x.data,))  # missing factor 2

    assert finite_diff_check(bad_square, [np.array([1.0, 2.0])]).max_rel_error > 0.1


def test_gradcheck_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_diff_check(ops.relu, [np.ones(2)], h=0.0)


# ---------------------------------------------------------------------------
# shape diagnostics
# ---------------------------------------------------------------------------

def test_shape_errors_name_op_and_shapes():
    with pytest.raises(ShapeError, match=r"add.*\(2, 3\).*\(4,\)"):
        ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))
    with pytest.raises(ShapeError, match="matmul"):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    with pytest.raises(ShapeError):
        ops.gru_cell(np.ones((2, 3)), np.ones((3, 4)), np.ones((3, 12)), np.ones((4, 8)), np.ones((4, 4)), np.ones(12))


@pytest.mark.parametrize("p", [-0.1, 1.0, 1.5])
def test_dropout_probability_validated(p):
    with pytest.raises(ValueError):
        ops.dropout(Tensor(np.ones(3)), p, True, np.random.default_rng(0))
    with pytest.raises(ValueError):
        Dropout(p, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# invariants
# ---------------------------------------------------------------------------

finite = st.floats(-50, 50, allow_nan=False)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite))
def test_softmax_rows_sum_to_one(x):
    out = ops.softmax(Tensor(x)).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)


@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 5)), elements=finite), finite)
def test_softmax_shift_invariant(x, c):
    np.testing.assert_allclose(ops.softmax(Tensor(x)).data, ops.softmax(Tensor(x + c)).data, atol=1e-12)


@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 6))
def test_attention_weights_are_row_stochastic(seed, heads, T):
    rng = np.random.default_rng(seed)
    D = 2 * heads
    mha = MultiHeadAttention(D, heads, rng)
    out = mha(Tensor(rng.standard_normal((2, T, D))))
    assert out.shape == (2, T, D)
    w = mha.last_weights
    assert w.shape == (2, heads, T, T)
    np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-12)


def test_mha_weights_not_parameters():
    mha = MultiHeadAttention(4, 2, np.random.default_rng(0))
    before = [n for n, _ in mha.named_parameters()]
    mha(Tensor(np.ones((1, 3, 4))))
    assert [n for n, _ in mha.named_parameters()] == before


@given(st.floats(0.0, 0.9), st.integers(0, 1000))
def test_dropout_eval_is_identity_and_train_preserves_mean_scale(p, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((50, 40)))
    np.testing.assert_array_equal(ops.dropout(x, p, False, rng).data, x.data)
    out = ops.dropout(x, p, True, rng).data
    kept = out != 0
    np.testing.assert_allclose(out[kept], x.data[kept] / (1 - p), rtol=1e-12)


def test_dropout_module_respects_eval():
    d = Dropout(0.5, np.random.default_rng(0))
    x = Tensor(np.ones((4, 4)))
    d.eval()
    np.testing.assert_array_equal(d(x).data, x.data)


def test_layer_norm_normalises_last_axis():
    x = np.random.default_rng(0).standard_normal((5, 8)) * 3 + 2
    out = ops.layer_norm(Tensor(x), np.ones(8), np.zeros(8)).data
    np.testing.assert_allclose(out.mean(-1), 0, atol=1e-12)
    np.testing.assert_allclose(out.var(-1), 1, atol=1e-3)


def test_gru_update_gate_interpolates():
    # z -> 1 keeps the previous state, z -> 0 takes the candidate
    H = 3
    h = np.array([[0.3, -0.2, 0.9]])
    x = np.zeros((1, 2))
    b_keep = np.concatenate([np.full(H, 50.0), np.zeros(2 * H)])
    out = ops.gru_cell(x, h, np.zeros((2, 3 * H)), np.zeros((H, 2 * H)), np.zeros((H, H)), b_keep).data
    np.testing.assert_allclose(out, h, atol=1e-12)
    b_new = np.concatenate([np.full(H, -50.0), np.zeros(H), np.full(H, 0.5)])
    out = ops.gru_cell(x, h, np.zeros((2, 3 * H)), np.zeros((H, 2 * H)), np.zeros((H, H)), b_new).data
    np.testing.assert_allclose(out, np.tanh(0.5), atol=1e-12)


def test_gru_sequence_matches_cell_loop():
    rng = np.random.default_rng(3)
    gru = GRU(3, 4, rng)
    x = rng.standard_normal((2, 5, 3))
    seq = gru(Tensor(x)).data
    h = np.zeros((2, 4))
    c = gru.cell
    for t in range(5):
        h = c(Tensor(x[:, t]), Tensor(h)).data
        np.testing.assert_allclose(seq[:, t], h, atol=1e-12)


def test_full_encoder_block_gradient():
    rng = np.random.default_rng(0)
    block = EncoderBlock(4, 2, 8, rng)
    res = finite_diff_check(lambda x: block(x), [rng.standard_normal((2, 3, 4))])
    assert res.max_rel_error < TOL


def test_no_grad_builds_no_graph():
    w = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        out = ops.mul(w, 2.0)
    assert not out.requires_grad


def test_backward_accumulates_through_shared_node():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = x * x + x
    y.sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@given(st.lists(arrays(np.float64, st.integers(1, 5), elements=st.floats(-1e3, 1e3)), min_size=1, max_size=4),
       st.floats(1e-3, 1e3))
def test_clipping_bounds_global_norm(grads, threshold):
    clipped, norm = clip_by_global_norm(grads, threshold)
    assert norm == pytest.approx(global_norm(grads))
    assert global_norm(clipped) <= threshold * (1 + 1e-9) or global_norm(clipped) == pytest.approx(norm)
    if norm > threshold:
        for c, g in zip(clipped, grads):
            np.testing.assert_allclose(c, g * threshold / norm)


def test_clip_rejects_non_positive_threshold():
    with pytest.raises(ValueError):
        clip_by_global_norm([np.ones(2)], 0.0)


def test_adam_first_step_moves_by_learning_rate():
    p = np.array([1.0, -1.0, 2.0])
    g = np.array([0.5, -3.0, 1e-3])
    state = OptimizerState.for_shapes([p.shape], learning_rate=0.1)
    adam_step([p], [g], state)
    np.testing.assert_allclose(p, [0.9, -0.9, 1.9], atol=1e-4)


def test_adam_matches_reference_recurrence():
    rng = np.random.default_rng(5)
    p = rng.standard_normal(4)
    ref = p.copy()
    m = np.zeros(4)
    v = np.zeros(4)
    state = OptimizerState.for_shapes([p.shape], learning_rate=0.01)
    for t in range(1, 6):
        g = rng.standard_normal(4)
        adam_step([p], [g], state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p, ref, rtol=1e-12)


def test_adam_zero_gradient_is_noop():
    p = np.array([1.0, 2.0])
    state = OptimizerState.for_shapes([p.shape], learning_rate=0.1)
    adam_step([p], [np.array([1.0, 1.0])], state)
    snap, m1 = p.copy(), state.first_moment[0].copy()
    adam_step([p], [np.zeros(2)], state)
    np.testing.assert_array_equal(p, snap)
    np.testing.assert_array_equal(state.first_moment[0], m1)


def test_adam_rejects_non_finite_and_mismatch():
    p = np.ones(2)
    state = OptimizerState.for_shapes([p.shape])
    with pytest.raises(NonFiniteGradientError):
        adam_step([p], [np.array([np.nan, 0.0])], state)
    with pytest.raises(ValueError):
        adam_step([p], [np.ones(3)], state)


def test_adam_per_parameter_learning_rates():
    rng = np.random.default_rng(0)
    a, b = Linear(2, 1, rng), Linear(2, 1, rng)
    params = a.parameters() + b.parameters()
    opt = Adam(params, lr=[0.1, 0.1, 0.0, 0.0])
    before = [p.data.copy() for p in params]
    for p in params:
        p.grad = np.ones_like(p.data)
    opt.step()
    assert not np.array_equal(params[0].data, before[0])
    np.testing.assert_array_equal(params[2].data, before[2])


def test_adam_learning_rate_count_checked():
    with pytest.raises(ValueError):
        Adam([Tensor(np.ones(2), requires_grad=True)], lr=[0.1, 0.2])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip_with_optimizer(tmp_path):
    params = {"a.weight": np.arange(6.0).reshape(2, 3), "b": np.array(3.5)}
    state = OptimizerState.for_shapes([(2, 3), ()], learning_rate=0.01, clip_threshold=1.0, param_lrs=[0.1, 0.2])
    state.step = 7
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, params, state, metadata={"k": 1})
    got, opt, meta = load_checkpoint(path)
    assert meta == {"k": 1}
    for k in params:
        np.testing.assert_array_equal(got[k], params[k])
    assert opt.step == 7 and opt.clip_threshold == 1.0 and opt.param_lrs == [0.1, 0.2]


def test_checkpoint_errors_are_distinct():
    blob = encode_checkpoint({"w": np.ones(3)})
    with pytest.raises(CheckpointError, match="checksum"):
        decode_checkpoint(blob[:-9] + bytes([blob[-9] ^ 1]) + blob[-8:])
    with pytest.raises(CheckpointError):
        decode_checkpoint(blob[:20])
    bumped = blob.replace(b"MBLAB-CKPT-1", b"MBLAB-CKPT-9", 1)
    with pytest.raises(CheckpointVersionError, match="'9'.*'1'"):
        decode_checkpoint(bumped)
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(b"garbage" * 5)


def test_module_state_dict_round_trip():
    rng = np.random.default_rng(0)
    a, b = EncoderBlock(4, 2, 8, rng), EncoderBlock(4, 2, 8, rng)
    b.load_state_dict(a.state_dict())
    x = Tensor(rng.standard_normal((1, 3, 4)))
    np.testing.assert_array_equal(a(x).data, b(x).data)
    with pytest.raises(KeyError):
        b.load_state_dict({})
