import math

import numpy as np
import pytest

from stbeamsnet import nn
from stbeamsnet.errors import ShapeError
from stbeamsnet.nn import Tensor

SEEDS = range(20)


def T(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


def _weights(rng, shape):
    return Tensor(rng.normal(size=shape))


# --- forward examples -----------------------------------------------------


def test_matmul_examples():
    x = np.random.default_rng(0).normal(size=(3, 4))
    np.testing.assert_array_equal(nn.matmul(T(np.eye(3)), T(x)).data, x)
    np.testing.assert_array_equal(nn.matmul(T([[1, 2], [3, 4]]), T([[5], [6]])).data, [[17], [39]])


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        nn.matmul(T(np.zeros((2, 3))), T(np.zeros((4, 5))))


def test_softmax_examples():
    np.testing.assert_allclose(nn.softmax(T([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(nn.softmax(T(np.log([1.0, 2.0, 3.0]))).data, [1 / 6, 1 / 3, 1 / 2], atol=1e-15)


def test_softmax_shift_invariance_and_rows():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(50, 7)) * 10
    s = nn.softmax(T(z)).data
    np.testing.assert_allclose(nn.softmax(T(z + 123.4)).data, s, atol=1e-12)
    assert (s >= 0).all()
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
    big = nn.softmax(T(np.array([1e3, -1e3, 0.0]))).data
    assert np.isfinite(big).all()


def test_layer_norm_examples():
    one, zero = T(np.ones(3)), T(np.zeros(3))
    np.testing.assert_array_equal(nn.layer_norm(T([[5.0, 5.0, 5.0]]), one, zero).data, 0.0)
    expected = np.array([-1.0, 0.0, 1.0]) / math.sqrt(2.0 / 3.0 + 1e-5)
    np.testing.assert_allclose(nn.layer_norm(T([[1.0, 2.0, 3.0]]), one, zero).data[0], expected, atol=1e-12)
    np.testing.assert_allclose(expected, [-1.224744, 0, 1.224744], atol=1e-5)


def test_conv1d_lengths():
    k = T(np.zeros((4, 6, 2)))
    assert nn.conv1d(T(np.zeros((6, 100))), k).shape == (4, 99)
    assert nn.conv1d(T(np.zeros((3, 3))), T(np.zeros((4, 3, 2)))).shape == (4, 2)
    assert nn.conv1d(T(np.zeros((6, 10))), k, stride=3).shape == (4, 3)


def test_conv1d_is_cross_correlation():
    x = T([[1.0, 2.0, 4.0]])
    # out[j] = k[0] x[j] + k[1] x[j+1]
    np.testing.assert_array_equal(nn.conv1d(x, T([[[-1.0, 1.0]]]), T([0.0])).data, [[1.0, 2.0]])
    np.testing.assert_array_equal(nn.conv1d(x, T([[[1.0, -1.0]]]), T([0.0])).data, [[-1.0, -2.0]])


def test_conv1d_too_short():
    with pytest.raises(ShapeError):
        nn.conv1d(T(np.zeros((3, 1))), T(np.zeros((4, 3, 2))))


def test_relu_affine_mse_examples():
    np.testing.assert_array_equal(nn.relu(T([-1.0, 0.0, 2.0])).data, [0, 0, 2])
    x = np.array([[1.0, 2.0]])
    out = nn.affine(T(x), T([[1.0, 0.0], [0.0, 2.0]]), T([0.5, -0.5])).data
    np.testing.assert_array_equal(out, [[1.5, 3.5]])
    p = T([[1.0, 2.0]])
    assert nn.mse_loss(p, p.data).item() == 0.0
    assert nn.mse_loss(T([1.0, 2.0]), [0.0, 0.0]).item() == 2.5


def test_shape_errors():
    with pytest.raises(ShapeError):
        nn.affine(T(np.zeros((2, 3))), T(np.zeros((4, 2))))
    with pytest.raises(ShapeError):
        nn.mse_loss(T(np.zeros(3)), np.zeros(2))


def test_mse_nonnegative():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a, b = rng.normal(size=(2, 5, 3))
        assert nn.mse_loss(T(a), b).item() >= 0


# --- backward -------------------------------------------------------------


def test_linear_map_gradient():
    x = np.array([1.0, -2.0, 3.0])
    W = nn.Parameter(np.ones((2, 3)))
    nn.tsum(nn.matmul(W, T(x.reshape(3, 1)))).backward()
    np.testing.assert_array_equal(W.grad, np.tile(x, (2, 1)))


def test_backward_accumulates():
    W = nn.Parameter(np.ones((2, 3)))
    x = T(np.arange(3.0).reshape(3, 1))
    loss = nn.tsum(nn.matmul(W, x))
    loss.backward()
    first = W.grad.copy()
    loss.backward()
    np.testing.assert_array_equal(W.grad, 2 * first)


def test_disconnected_parameter_has_zero_grad():
    used, unused = nn.Parameter(np.ones(3)), nn.Parameter(np.ones(3))
    nn.tsum(used * 2.0).backward()
    assert unused.grad is None or not unused.grad.any()


def test_non_scalar_backward_rejected():
    with pytest.raises(ValueError):
        (nn.Parameter(np.ones(3)) * 2.0).backward()


def test_reverse_execution_order():
    """A node's gradient is complete before it propagates (diamond graph)."""
    a = nn.Parameter(np.array([2.0]))
    b = a * 3.0
    c = b * b + b
    nn.tsum(c).backward()
    np.testing.assert_allclose(a.grad, [3.0 * (2 * 6.0 + 1)])


def test_no_grad_records_nothing():
    p = nn.Parameter(np.ones(2))
    with nn.no_grad():
        out = p * 2.0
    assert not out.requires_grad


# --- finite differences ----------------------------------------------------


def test_checker_exact_for_linear():
    w = np.random.default_rng(3).normal(size=(4, 5))
    err = nn.finite_diff_check(lambda x: nn.tsum(x * Tensor(w)), [np.ones((4, 5))])
    assert err < 1e-10


def test_checker_softmax_composite():
    rng = np.random.default_rng(4)
    w = Tensor(rng.normal(size=(3, 6)))

    def fn(z):
        s = nn.softmax(z)
        return nn.tsum(s * w) * nn.tsum(s * s)

    assert nn.finite_diff_check(fn, [rng.normal(size=(3, 6))]) < 1e-6


def test_checker_relu_away_from_kink():
    eps = 1e-5
    rng = np.random.default_rng(5)
    x = rng.normal(size=20)
    x[np.abs(x) < 10 * eps] += 20 * eps
    w = Tensor(rng.normal(size=20))
    assert nn.finite_diff_check(lambda t: nn.tsum(nn.relu(t) * w), [x], eps=eps) < 1e-6


def _primitive_cases(rng):
    def away_from_zero(shape):
        x = rng.normal(size=shape)
        return np.where(np.abs(x) < 1e-3, 0.1, x)

    w34 = _weights(rng, (3, 5))
    w_bc = _weights(rng, (2, 3, 4))
    w_conv = _weights(rng, (2, 4, 3))
    return {
        "add_broadcast": (lambda a, b: nn.tsum((a + b) * w_bc), [rng.normal(size=(2, 3, 4)), rng.normal(size=(4,))]),
        "mul_broadcast": (lambda a, b: nn.tsum(a * b * w_bc), [rng.normal(size=(2, 3, 4)), rng.normal(size=(3, 1))]),
        "sub_neg": (lambda a, b: nn.tsum((a - b) * (a - b)), [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]),
        "matmul": (lambda a, b: nn.tsum(nn.matmul(a, b) * w34), [rng.normal(size=(3, 4)), rng.normal(size=(4, 5))]),
        "matmul_batched": (lambda a, b: nn.tsum(nn.matmul(a, b) * w34), [rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))]),
        "softmax": (lambda z: nn.tsum(nn.softmax(z) * w_bc), [rng.normal(size=(2, 3, 4))]),
        "layer_norm": (lambda x, g, s: nn.tsum(nn.layer_norm(x, g, s) * w_bc),
                       [rng.normal(size=(2, 3, 4)), rng.normal(size=4), rng.normal(size=4)]),
        "relu": (lambda x: nn.tsum(nn.relu(x) * w_bc), [away_from_zero((2, 3, 4))]),
        "affine": (lambda x, W, b: nn.tsum(nn.affine(x, W, b) * w34),
                   [rng.normal(size=(3, 4)), rng.normal(size=(4, 5)), rng.normal(size=5)]),
        "conv1d": (lambda x, k, b: nn.tsum(nn.conv1d(x, k, b, stride=2) * w_conv),
                   [rng.normal(size=(2, 3, 7)), rng.normal(size=(4, 3, 2)), rng.normal(size=4)]),
        "mse": (lambda p: nn.mse_loss(p, np.ones((3, 3))), [rng.normal(size=(3, 3))]),
        "reshape_swap_concat": (lambda a, b: nn.tsum(nn.concat([a.reshape(4, 3).swapaxes(0, 1), b], axis=1) * _w36),
                                [rng.normal(size=(3, 4)), rng.normal(size=(3, 2))]),
        "mean": (lambda x: nn.tmean(x * x, axis=-1).sum(), [rng.normal(size=(3, 4))]),
    }


_w36 = Tensor(np.random.default_rng(99).normal(size=(3, 6)))
PRIMITIVES = list(_primitive_cases(np.random.default_rng(0)))


@pytest.mark.parametrize("name", PRIMITIVES)
def test_primitive_gradients(name):
    for seed in SEEDS:
        fn, inputs = _primitive_cases(np.random.default_rng(seed))[name]
        err = nn.finite_diff_check(fn, inputs)
        assert err < 1e-4, f"{name} seed {seed}: {err:.3g}"


# --- optimizer ---------------------------------------------------------------


def test_adam_zero_gradient():
    p = nn.Parameter(np.array([1.0, -2.0]))
    state = nn.AdamState.for_params([p])
    nn.adam_step([p], [np.zeros(2)], state, lr=0.1)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_descends():
    w = nn.Parameter(np.array([1.0]))
    state = nn.AdamState.for_params([w])
    nn.adam_step([w], [2 * w.data], state, lr=0.1)
    assert w.data[0] < 1.0


def test_adam_quadratic_minimizer():
    A = np.array([[3.0, 0.5], [0.5, 1.0]])
    b = np.array([1.0, -1.5])
    minimizer = np.linalg.solve(A, b)  # f(w) = 0.5 w^T A w - b^T w
    w = nn.Parameter(np.zeros(2))
    state = nn.AdamState.for_params([w])
    for _ in range(500):
        nn.adam_step([w], [A @ w.data - b], state, lr=0.05)
    assert np.max(np.abs(w.data - minimizer)) < 1e-3


def test_adam_class_matches_function():
    rng = np.random.default_rng(6)
    p1, p2 = nn.Parameter(rng.normal(size=3)), None
    p2 = nn.Parameter(p1.data.copy())
    opt = nn.Adam([p1], lr=0.01)
    state = nn.AdamState.for_params([p2])
    for _ in range(5):
        g = rng.normal(size=3)
        p1.grad = g
        opt.step()
        nn.adam_step([p2], [g], state, 0.01)
    np.testing.assert_array_equal(p1.data, p2.data)


# --- determinism and persistence ---------------------------------------------


def test_forward_backward_deterministic():
    def run():
        rng = np.random.default_rng(8)
        W = nn.Parameter(rng.normal(size=(4, 4)).astype(np.float32))
        x = Tensor(rng.normal(size=(5, 4)).astype(np.float32))
        loss = nn.tsum(nn.softmax(nn.affine(x, W)) * x)
        loss.backward()
        return loss.data.tobytes(), W.grad.tobytes()

    assert run() == run()


def test_checkpoint_round_trip(tmp_path):
    params = {"a.w": np.arange(6.0).reshape(2, 3).astype(np.float32), "b": np.ones(2)}
    path = nn.save_checkpoint(tmp_path / "ck.npz", params, {"note": "x"}, {"step": np.asarray(3)})
    back, meta, extra = nn.load_checkpoint(path)
    assert meta["format_version"] == 1 and meta["note"] == "x"
    assert set(back) == set(params)
    for k in params:
        np.testing.assert_array_equal(back[k], params[k])
        assert back[k].dtype == params[k].dtype
    assert int(extra["step"]) == 3
    with np.load(path, allow_pickle=False) as z:
        assert "__meta__" in z.files


def test_module_names_unique():
    from stbeamsnet.model import StBeamsNet
    from stbeamsnet.blocks import Hyperparams

    model = StBeamsNet(Hyperparams(D=8, h=2, ffe=16, k=2), head_width=8)
    names = [n for n, _ in model.named_parameters()]
    assert len(names) == len(set(names))
    assert "imu.encoder.blocks.0.mab.attn.wq" in names
