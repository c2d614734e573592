import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from droopstab import nnkernel as nn
from droopstab.errors import BatchTooSmall, ShapeMismatch, StaleCache


def scalar_loss(params, spec, x, weights):
    out, _ = nn.forward(params, spec, x, "train")
    return float(np.sum(out * weights))


def fd_setup(spec, seed, batch):
    rng = np.random.default_rng(seed)
    params = nn.init_params(spec, rng)
    for g in params.bn_gamma:
        g[...] = rng.uniform(0.5, 1.5, g.shape)
    for b in params.bn_beta:
        b[...] = rng.normal(0, 0.3, b.shape)
    for b in params.biases:
        b[...] = rng.normal(0, 0.3, b.shape)
    x = rng.normal(size=(batch, spec.input_width))
    w = rng.normal(size=(batch, spec.output_width))
    return params, x, w


def kink_margin(spec, seed, batch=6):
    """Smallest |input| to any LeakyReLU; central differences are invalid near 0."""
    params, x, _ = fd_setup(spec, seed, batch)
    _, cache = nn.forward(params, spec, x, "train")
    acts = [cache.post_bn[l] if spec.batchnorm_hidden else cache.pre[l] for l in range(spec.n_layers - 1)]
    if spec.output_activation == "leaky_relu":
        acts.append(cache.pre[-1])
    return min((float(np.abs(a).min()) for a in acts), default=np.inf)


def fd_check(spec, seed, batch=6, step=1e-5, per_array=False):
    """Worst relative gap between backward() and central differences of sum(out * w).

    Elementwise by default; ``per_array`` uses the norm of each parameter array's gradient.
    """
    params, x, w = fd_setup(spec, seed, batch)

    snapshot = params.copy()
    out, cache = nn.forward(params, spec, x, "train")
    grads, gin = nn.backward(params, spec, cache, w)

    def restore():
        for dst, src in zip(params.arrays(), snapshot.arrays()):
            dst[...] = src

    pairs = list(zip(params.trainable(), grads.trainable())) + [(x, gin)]
    # entries that are analytically zero (bias ahead of batch norm) only carry round-off
    floor = 1e-6 * max(1.0, max(np.abs(g).max() for _, g in pairs))
    norm_floor = 1e-6 * max(np.linalg.norm(g) for _, g in pairs)
    worst = 0.0
    for arr, g in pairs:
        flat = arr.reshape(-1)
        num = np.empty(flat.size)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            restore_stats = [a.copy() for a in params.bn_running_mean + params.bn_running_var]
            up = scalar_loss(params, spec, x, w)
            flat[k] = orig - step
            down = scalar_loss(params, spec, x, w)
            flat[k] = orig
            for a, b in zip(params.bn_running_mean + params.bn_running_var, restore_stats):
                a[...] = b
            num[k] = (up - down) / (2 * step)
        ana = g.reshape(-1)
        if per_array:
            err = np.linalg.norm(num - ana) / max(np.linalg.norm(num), np.linalg.norm(ana), norm_floor)
        else:
            err = np.abs(num - ana) / np.maximum(np.maximum(np.abs(num), np.abs(ana)), floor)
        worst = max(worst, float(np.max(err)))
    restore()
    return worst


def test_single_layer_forward():
    spec = nn.MlpSpec((2, 1), leaky_slope=0.01)
    params = nn.MlpParams([np.array([[1.0], [-1.0]])], [np.array([0.5])])
    out, _ = nn.forward(params, spec, np.array([[2.0, 1.0], [1.0, 2.0]]), "infer")
    assert out[0, 0] == pytest.approx(1.5)
    assert out[1, 0] == pytest.approx(-0.005)


def test_sigmoid_at_zero():
    spec = nn.MlpSpec((1, 1), output_activation="sigmoid")
    params = nn.MlpParams([np.zeros((1, 1))], [np.zeros(1)])
    out, _ = nn.forward(params, spec, np.array([[3.0]]), "infer")
    assert out[0, 0] == 0.5


def test_batchnorm_two_rows():
    spec = nn.MlpSpec((1, 1, 1), batchnorm_hidden=True)
    params = nn.MlpParams([np.ones((1, 1)), np.ones((1, 1))], [np.zeros(1), np.zeros(1)],
                          [np.ones(1)], [np.zeros(1)], [np.zeros(1)], [np.ones(1)])
    _, cache = nn.forward(params, spec, np.array([[1.0], [3.0]]), "train")
    expected = 1 / np.sqrt(1 + 1e-5)
    assert np.allclose(cache.post_bn[0].ravel(), [-expected, expected])
    assert expected == pytest.approx(0.999995, abs=1e-6)


def test_batch_too_small():
    spec = nn.MlpSpec((2, 3, 1), batchnorm_hidden=True)
    params = nn.init_params(spec, np.random.default_rng(0))
    with pytest.raises(BatchTooSmall):
        nn.forward(params, spec, np.ones((1, 2)), "train")


def test_shape_mismatch():
    spec = nn.MlpSpec((2, 1))
    with pytest.raises(ShapeMismatch):
        nn.forward(nn.init_params(spec, np.random.default_rng(0)), spec, np.ones((3, 4)))


def test_bce_values():
    loss, grad = nn.bce(np.array([0.5]), np.array([1.0]))
    assert loss == pytest.approx(np.log(2))
    assert loss == pytest.approx(0.6931, abs=1e-4)
    loss, _ = nn.bce(np.array([1 - 1e-12]), np.array([1.0]))
    assert loss == pytest.approx(0.0, abs=1e-11)
    loss, grad = nn.bce(np.array([0.5, 0.5]), np.array([1.0, 0.0]))
    assert loss == pytest.approx(0.6931, abs=1e-4)
    assert np.allclose(grad, [-1.0, 1.0])


def test_bce_gradient_finite_difference():
    rng = np.random.default_rng(3)
    p = rng.uniform(0.05, 0.95, 7)
    t = rng.integers(0, 2, 7).astype(float)
    _, grad = nn.bce(p, t)
    h = 1e-6
    for k in range(7):
        e = np.zeros(7)
        e[k] = h
        num = (nn.bce(p + e, t)[0] - nn.bce(p - e, t)[0]) / (2 * h)
        assert num == pytest.approx(grad[k], rel=1e-6)


def test_zero_output_grad_gives_zero_gradients():
    spec = nn.MlpSpec((3, 5, 2), batchnorm_hidden=True)
    params = nn.init_params(spec, np.random.default_rng(1))
    _, cache = nn.forward(params, spec, np.random.default_rng(2).normal(size=(4, 3)))
    grads, gin = nn.backward(params, spec, cache, np.zeros((4, 2)))
    assert all(np.all(g == 0) for g in grads.trainable())
    assert np.all(gin == 0)


def test_input_gradient_affine():
    spec = nn.MlpSpec((3, 2), leaky_slope=0.5)
    w = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    params = nn.MlpParams([w], [np.array([100.0, 100.0])])  # keeps the leaky unit in its identity branch
    _, cache = nn.forward(params, spec, np.ones((2, 3)))
    g = np.array([[1.0, -1.0], [0.5, 2.0]])
    _, gin = nn.backward(params, spec, cache, g)
    assert np.allclose(gin, g @ w.T)


def test_stale_cache():
    spec = nn.MlpSpec((2, 1))
    params = nn.init_params(spec, np.random.default_rng(0))
    _, cache = nn.forward(params, spec, np.ones((2, 2)))
    grads, _ = nn.backward(params, spec, cache, np.ones((2, 1)))
    nn.opt_step(params, grads, nn.init_opt_state(params), 1e-3)
    with pytest.raises(StaleCache):
        nn.backward(params, spec, cache, np.ones((2, 1)))


@pytest.mark.parametrize("bn", [False, True])
@pytest.mark.parametrize("act", ["leaky_relu", "sigmoid"])
def test_gradients_match_finite_differences(bn, act):
    spec = nn.MlpSpec((4, 7, 5, 3), 0.2, bn, act)
    assert fd_check(spec, seed=11) < 1e-4


def test_infer_mode_is_pure():
    spec = nn.MlpSpec((3, 4, 2), batchnorm_hidden=True)
    params = nn.init_params(spec, np.random.default_rng(0))
    before = [a.copy() for a in params.arrays()]
    x = np.random.default_rng(1).normal(size=(5, 3))
    a, _ = nn.forward(params, spec, x, "infer")
    b, _ = nn.forward(params, spec, x, "infer")
    assert np.array_equal(a, b)
    assert all(np.array_equal(u, v) for u, v in zip(before, params.arrays()))


@settings(max_examples=20, deadline=None)
@given(st.integers(8, 40), st.integers(1, 6), st.integers(0, 10_000))
def test_batchnorm_standardizes(batch, width, seed):
    rng = np.random.default_rng(seed)
    spec = nn.MlpSpec((3, width, 1), batchnorm_hidden=True)
    params = nn.init_params(spec, rng)
    x = rng.normal(2.0, 3.0, size=(batch, 3))
    _, cache = nn.forward(params, spec, x)
    z = cache.post_bn[0]
    pre_var = cache.pre[0].var(axis=0)
    assert np.allclose(z.mean(axis=0), 0, atol=1e-9)
    assert np.allclose(z.var(axis=0), pre_var / (pre_var + nn.BN_EPS), atol=1e-9)


def test_adam_first_step():
    params = nn.MlpParams([np.array([[0.0]])], [np.array([0.0])])
    grads = nn.MlpParams([np.array([[1.0]])], [np.array([0.0])])
    state = nn.init_opt_state(params)
    nn.opt_step(params, grads, state, 1e-3)
    assert params.weights[0][0, 0] == pytest.approx(-1e-3, rel=1e-4)
    assert params.biases[0][0] == 0.0
    assert state.step == 1


def test_adam_zero_grads():
    params = nn.MlpParams([np.array([[0.3]])], [np.array([-0.2])])
    grads = nn.MlpParams([np.zeros((1, 1))], [np.zeros(1)])
    state = nn.init_opt_state(params)
    for _ in range(3):
        nn.opt_step(params, grads, state, 1e-2)
    assert params.weights[0][0, 0] == 0.3 and params.biases[0][0] == -0.2
    assert state.step == 3


def reference_adam(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook recurrences written out scalar by scalar."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        theta = theta - lr * m_hat / (v_hat**0.5 + eps)
    return theta, m, v


def test_adam_matches_reference_recurrence():
    seq = [0.7, 0.7, -1.3, 0.02, 2.5]
    params = nn.MlpParams([np.array([[0.4]])], [np.array([0.0])])
    state = nn.init_opt_state(params)
    for g in seq:
        nn.opt_step(params, nn.MlpParams([np.array([[g]])], [np.zeros(1)]), state, 3e-3)
    theta, m, v = reference_adam(0.4, seq, 3e-3)
    assert params.weights[0][0, 0] == pytest.approx(theta, rel=1e-12)
    assert state.first[0][0, 0] == pytest.approx(m, rel=1e-12)
    assert state.second[0][0, 0] == pytest.approx(v, rel=1e-12)


def test_sgd_selectable():
    params = nn.MlpParams([np.array([[1.0]])], [np.array([0.0])])
    state = nn.init_opt_state(params, "sgd")
    nn.opt_step(params, nn.MlpParams([np.array([[2.0]])], [np.zeros(1)]), state, 0.1)
    assert params.weights[0][0, 0] == pytest.approx(0.8)


def test_training_determinism():
    def run():
        rng = np.random.default_rng(5)
        spec = nn.MlpSpec((3, 8, 8, 2), batchnorm_hidden=True)
        params = nn.init_params(spec, rng)
        state = nn.init_opt_state(params)
        for _ in range(20):
            x = rng.normal(size=(6, 3))
            out, cache = nn.forward(params, spec, x)
            grads, _ = nn.backward(params, spec, cache, out - 1.0)
            nn.opt_step(params, grads, state, 1e-2)
        return nn.pack_params(params)

    assert run() == run()


def test_pack_unpack_roundtrip():
    spec = nn.MlpSpec((3, 4, 2), batchnorm_hidden=True)
    params = nn.init_params(spec, np.random.default_rng(0))
    blob = nn.pack_params(params)
    assert len(blob) == 8 * nn.n_param_values(spec)
    again, off = nn.unpack_params(spec, blob)
    assert off == len(blob)
    assert all(np.array_equal(a, b) for a, b in zip(params.arrays(), again.arrays()))
