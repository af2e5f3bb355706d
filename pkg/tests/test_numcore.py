import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from tacvit.errors import NumericError, ShapeError, StorageError, UsageError
from tacvit.numcore import (Adam, AdamState, GradTape, Tensor, adam_step, conv2d, default_dtype, gelu,
                            layernorm, linear, load_checkpoint, matmul, maxpool2d, mse_loss, relu,
                            save_checkpoint, softmax_lastdim, tsum)
from tacvit.numcore.checkpoint import decode, encode


def grads_of(f, *ts):
    for t in ts:
        t.requires_grad = True
        t.grad = None
    with GradTape() as tape:
        y = f()
    tape.backward(y)
    return [t.grad for t in ts]


# -- forward examples --------------------------------------------------------

def test_matmul_small_example():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[5.0], [6.0]])
    np.testing.assert_array_equal(matmul(a, b).data, [[17.0], [39.0]])


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_relu_and_gelu_values():
    x = Tensor([-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(relu(x).data, [0.0, 0.0, 2.0])
    # exact GELU: x * Phi(x)
    with default_dtype(np.float64):
        g = gelu(Tensor([-1.0, 0.0, 1.0])).data
    np.testing.assert_allclose(g, [-0.15865525393145707, 0.0, 0.8413447460685429], rtol=1e-12)


def test_softmax_rows_sum_to_one_and_resist_overflow():
    x = Tensor([[1000.0, 1000.0], [0.0, np.log(3.0)]])
    s = softmax_lastdim(x).data
    np.testing.assert_allclose(s, [[0.5, 0.5], [0.25, 0.75]], rtol=1e-6)


def test_layernorm_zero_mean_unit_var():
    rng = np.random.default_rng(0)
    with default_dtype(np.float64):
        x = Tensor(rng.normal(3.0, 5.0, size=(4, 16)))
        y = layernorm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)), eps=1e-12).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, rtol=1e-9)


def test_conv2d_identity_kernel_and_shape_error():
    x = Tensor(np.arange(16.0).reshape(1, 4, 4))
    k = Tensor(np.zeros((1, 1, 3, 3)))
    k.data[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(conv2d(x, k, padding=1).data, x.data)
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 6, 5))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    with default_dtype(np.float64):
        out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 4, 3, 3))
    for n in range(2):
        for o in range(4):
            for i in range(3):
                for j in range(3):
                    ref[n, o, i, j] = (xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]).sum() + b[o]
    np.testing.assert_allclose(out, ref, rtol=1e-12)


def test_conv2d_channels_last_matches_channels_first():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 3, 7, 7))
    w = rng.standard_normal((5, 3, 3, 3))
    with default_dtype(np.float64):
        a = conv2d(Tensor(x), Tensor(w), padding=1).data
        b = conv2d(Tensor(x.transpose(0, 2, 3, 1)), Tensor(w), padding=1, channels_last=True).data
    np.testing.assert_allclose(a, b.transpose(0, 3, 1, 2), rtol=1e-12)


def test_maxpool_first_max_gets_gradient_on_ties():
    x = Tensor(np.ones((1, 2, 2)))
    (g,) = grads_of(lambda: tsum(maxpool2d(x, 2)), x)
    np.testing.assert_array_equal(g, [[[1.0, 0.0], [0.0, 0.0]]])


def test_mse_is_per_element_mean():
    assert mse_loss(Tensor([[1.0, 2.0]]), Tensor([[0.0, 0.0]])).item() == pytest.approx(2.5)


# -- tape semantics ------------------------------------------------------------

def test_gradients_accumulate_across_backward_calls():
    x = Tensor([1.0, 2.0], requires_grad=True)
    for _ in range(2):
        with GradTape() as tape:
            y = tsum(x * x)
        tape.backward(y)
    np.testing.assert_array_equal(x.grad, [4.0, 8.0])


def test_shared_subexpression_gradient_sums_paths():
    x = Tensor([3.0], requires_grad=True)
    with GradTape() as tape:
        h = x * x
        y = tsum(h + h)
    tape.backward(y)
    np.testing.assert_array_equal(x.grad, [12.0])


def test_no_recording_outside_tape_or_without_grad():
    x = Tensor([1.0], requires_grad=True)
    assert not (x * x).requires_grad
    with GradTape() as tape:
        Tensor([1.0]) * Tensor([2.0])
    assert len(tape) == 0


def test_backward_usage_errors():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with GradTape() as tape:
        y = x * x
    with pytest.raises(UsageError, match="scalar"):
        tape.backward(y)
    with GradTape() as other:
        pass
    with GradTape() as tape2:
        z = tsum(x)
    with pytest.raises(UsageError):
        other.backward(z)
    with pytest.raises(UsageError):
        tape2.backward(tsum(Tensor([1.0])))


def test_nan_raises_numeric_error_naming_op():
    with pytest.raises(NumericError, match="matmul"):
        matmul(Tensor([[np.nan]]), Tensor([[1.0]]))


def test_same_inputs_same_gradients():
    rng = np.random.default_rng(3)
    w = rng.standard_normal((4, 3))
    runs = []
    for _ in range(2):
        wt = Tensor(w.copy())
        x = Tensor(rng.standard_normal((5, 3)) * 0 + 1.0)
        (g,) = grads_of(lambda: tsum(relu(linear(x, wt))), wt)
        runs.append(g)
    assert np.array_equal(runs[0], runs[1])


# -- Adam --------------------------------------------------------------------

def test_adam_first_step_moves_by_lr_against_gradient_sign():
    p = Tensor([0.0, 0.0], name="p")
    p.grad = np.array([0.5, -3.0], dtype=np.float32)
    st = AdamState.for_param(p, lr=1e-4)
    adam_step(p, st)
    np.testing.assert_allclose(p.data, [-1e-4, 1e-4], rtol=1e-3)
    assert p.grad is None and st.t == 1


def test_adam_matches_reference_recursion_over_steps():
    rng = np.random.default_rng(4)
    with default_dtype(np.float64):
        p = Tensor(rng.standard_normal(3))
        theta = p.data.copy()
        m = v = np.zeros(3)
        st = AdamState.for_param(p, lr=1e-2, weight_decay=0.1)
        for t in range(1, 6):
            g = rng.standard_normal(3)
            p.grad = g.copy()
            adam_step(p, st)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            upd = (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8) + 0.1 * theta
            theta = theta - 1e-2 * upd
    np.testing.assert_allclose(p.data, theta, rtol=1e-12)


def test_adam_coupled_weight_decay_folds_into_gradient():
    with default_dtype(np.float64):
        p = Tensor([1.0])
        p.grad = np.array([0.0])
        st = AdamState.for_param(p, lr=0.1, weight_decay=0.5, decoupled_wd=False)
        adam_step(p, st)
    # g' = 0.5 * 1 -> unit-normalised step of lr
    np.testing.assert_allclose(p.data, [0.9], rtol=1e-6)


def test_adam_errors_and_frozen_skip():
    p = Tensor([1.0])
    with pytest.raises(UsageError):
        adam_step(p, AdamState.for_param(p))
    p.grad = np.ones(1, dtype=np.float32)
    with pytest.raises(UsageError):
        adam_step(p, AdamState(np.zeros(2), np.zeros(2)))
    frozen = Tensor([2.0], requires_grad=False)
    frozen.grad = np.ones(1, dtype=np.float32)
    Adam(lr=1.0).step({"f": frozen})
    assert frozen.data[0] == 2.0


# -- TVT1 checkpoints --------------------------------------------------------

def test_checkpoint_round_trip_exact(tmp_path):
    rng = np.random.default_rng(5)
    tensors = {"a.w": rng.standard_normal((3, 4)).astype(np.float32), "b": np.float32([1.5]),
               "scalar": np.array(2.0, dtype=np.float32)}
    save_checkpoint(tmp_path / "c.tvt1", tensors)
    back = load_checkpoint(tmp_path / "c.tvt1")
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert back[k].tobytes() == tensors[k].tobytes()


def test_checkpoint_layout_is_little_endian_tvt1():
    buf = encode({"w": np.float32([[1.0, 2.0]])})
    assert buf[:4] == b"TVT1"
    assert int.from_bytes(buf[4:8], "little") == 1
    assert buf.endswith(np.float32([1.0, 2.0]).astype("<f4").tobytes())


@pytest.mark.parametrize("mutate", [lambda b: b"XXXX" + b[4:], lambda b: b[:-3], lambda b: b + b"\0"])
def test_checkpoint_corruption_is_storage_error(mutate):
    buf = encode({"w": np.ones((2, 2), np.float32)})
    with pytest.raises(StorageError):
        decode(mutate(buf))


def test_missing_checkpoint_is_storage_error(tmp_path):
    with pytest.raises(StorageError, match="nope"):
        load_checkpoint(tmp_path / "nope.tvt1")


names = st.text(alphabet="abcdefghij._0123456789", min_size=1, max_size=12)
arrays = hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=3, max_side=4),
                    elements=st.floats(-1e6, 1e6, width=32))


@settings(max_examples=60, deadline=None)
@given(st.dictionaries(names, arrays, min_size=1, max_size=4))
def test_checkpoint_encode_decode_property(tensors):
    back = decode(encode(tensors))
    assert list(back) == list(tensors)
    assert all(back[k].shape == v.shape and back[k].tobytes() == v.tobytes() for k, v in tensors.items())
