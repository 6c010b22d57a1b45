"""Autodiff core: finite-difference oracles, Adam, determinism."""

import zlib

import numpy as np
import pytest

from safeloco.autodiff import (ConfigurationError, Graph, ParamStore,
                               TrainingError, UsageError)
from safeloco.nn import (AdamState, GaussianHead, LOG_2PI, NUMPY_OPS, adam_step,
                         clamp_log_std, gru_step, init_gru, init_mlp,
                         mlp_forward)


def central_diff(f, x, eps=1e-5):
    """Central finite differences of a scalar function of a flat vector."""
    grad = np.zeros_like(x)
    for i in range(x.size):
        hi = x.copy(); hi[i] += eps
        lo = x.copy(); lo[i] -= eps
        grad[i] = (f(hi) - f(lo)) / (2 * eps)
    return grad


def rel_err(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom))


def check_param_gradient(store, name, build_scalar, tol=1e-4):
    """Analytic gradient of build_scalar() wrt store[name] vs finite diff."""
    g = Graph()
    loss = build_scalar(g)
    analytic = g.backward(loss, store)[name]

    original = store[name].copy()

    def f(flat):
        store.set_(name, flat.reshape(original.shape))
        out = float(build_scalar(Graph()).data)
        store.set_(name, original)
        return out

    numeric = central_diff(f, original.reshape(-1)).reshape(original.shape)
    assert rel_err(analytic, numeric) < tol, f"gradient mismatch for {name}"


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------


def test_mlp_zero_weights_zero_output():
    store = ParamStore()
    store.create("net/l0/W", np.zeros((3, 4)))
    store.create("net/l0/b", np.zeros(4))
    g = Graph()
    out = mlp_forward(g, store, "net", g.constant(np.array([[1.0, -2.0, 3.0]])),
                      [4], final_activation=None)
    assert np.array_equal(out.data, np.zeros((1, 4)))


def test_mlp_identity_layer_passes_input_through():
    store = ParamStore()
    store.create("net/l0/W", np.eye(3))
    store.create("net/l0/b", np.zeros(3))
    x = np.array([[0.3, -1.2, 2.5]])
    g = Graph()
    out = mlp_forward(g, store, "net", g.constant(x), [3], final_activation=None)
    assert np.array_equal(out.data, x)


def test_mlp_gradient_matches_finite_difference():
    rng = np.random.default_rng(7)
    store = ParamStore()
    init_mlp(store, "net", 5, [6, 3], rng)
    x = rng.standard_normal((2, 5))

    for name in store.names():
        check_param_gradient(
            store, name,
            lambda g: g.sum(mlp_forward(g, store, "net", g.constant(x), [6, 3])))


def test_mlp_shape_mismatch_is_configuration_error():
    rng = np.random.default_rng(0)
    store = ParamStore()
    init_mlp(store, "net", 5, [6], rng)
    g = Graph()
    with pytest.raises(ConfigurationError):
        mlp_forward(g, store, "net", g.constant(np.zeros((1, 4))), [6])


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------


def test_gru_zero_everything_stays_zero():
    # candidate = tanh(0) = 0 and h' = (1-z)*0 + z*0 = 0 for any gate values
    rng = np.random.default_rng(3)
    store = ParamStore()
    init_gru(store, "gru", 4, 6, rng)
    g = Graph()
    h = gru_step(g, store, "gru", g.constant(np.zeros((1, 6))),
                 g.constant(np.zeros((1, 4))))
    assert np.array_equal(h.data, np.zeros((1, 6)))


def test_gru_gradient_wrt_hidden_matches_finite_difference():
    rng = np.random.default_rng(11)
    store = ParamStore()
    init_gru(store, "gru", 4, 5, rng)
    store.create("h0", rng.standard_normal((1, 5)) * 0.5)
    x = rng.standard_normal((1, 4))

    check_param_gradient(
        store, "h0",
        lambda g: g.sum(gru_step(g, store, "gru", g.param(store, "h0"),
                                 g.constant(x))))


def test_gru_parameter_gradients_match_finite_difference():
    rng = np.random.default_rng(12)
    store = ParamStore()
    init_gru(store, "gru", 3, 4, rng)
    x = rng.standard_normal((2, 3))
    h = rng.standard_normal((2, 4)) * 0.3

    for name in store.names():
        check_param_gradient(
            store, name,
            lambda g: g.sum(gru_step(g, store, "gru", g.constant(h),
                                     g.constant(x))))


def test_gru_repeated_step_converges_for_contractive_init():
    rng = np.random.default_rng(5)
    store = ParamStore()
    init_gru(store, "gru", 4, 8, rng, scale=0.1)
    x = rng.standard_normal((1, 4))
    h = rng.standard_normal((1, 8))
    prev = h
    for _ in range(200):
        h = gru_step(NUMPY_OPS, store, "gru", h, x)
        change = float(np.linalg.norm(h - prev))
        prev = h
    assert change < 1e-6


def test_gru_width_mismatch_raises():
    rng = np.random.default_rng(0)
    store = ParamStore()
    init_gru(store, "gru", 4, 6, rng)
    g = Graph()
    with pytest.raises(ConfigurationError):
        gru_step(g, store, "gru", g.constant(np.zeros((1, 6))),
                 g.constant(np.zeros((1, 5))))


# ---------------------------------------------------------------------------
# Gaussian head
# ---------------------------------------------------------------------------


def test_gaussian_logprob_at_mode_unit_std():
    for d in (1, 3, 6):
        mean = np.zeros((1, d))
        head = GaussianHead(NUMPY_OPS, mean, np.zeros(d))
        lp = head.log_prob(mean)
        assert np.allclose(lp, -0.5 * d * LOG_2PI, atol=1e-12)


def test_gaussian_logprob_unit_gaussian_one_sigma():
    head = GaussianHead(NUMPY_OPS, np.zeros((1, 1)), np.zeros(1))
    lp = head.log_prob(np.ones((1, 1)))
    assert np.allclose(lp, -0.5 - 0.5 * LOG_2PI, atol=1e-12)


def test_gaussian_logprob_gradient_wrt_mean_and_log_std():
    rng = np.random.default_rng(21)
    store = ParamStore()
    store.create("mean", rng.standard_normal(4))
    store.create("log_std", rng.uniform(-1, 0.5, 4))
    action = rng.standard_normal((1, 4))

    def build(g):
        mean = g.param(store, "mean")
        head = GaussianHead(g, mean, g.param(store, "log_std"))
        return g.sum(head.log_prob(g.constant(action[0])))

    check_param_gradient(store, "mean", build)
    check_param_gradient(store, "log_std", build)


def test_gaussian_entropy_value():
    log_std = np.array([0.0, -1.0])
    head = GaussianHead(NUMPY_OPS, np.zeros((1, 2)), log_std)
    expected = float(log_std.sum()) + 0.5 * 2 * (1.0 + LOG_2PI)
    assert np.allclose(head.entropy(), expected)


def test_gaussian_action_dim_mismatch():
    head = GaussianHead(NUMPY_OPS, np.zeros((1, 3)), np.zeros(3))
    with pytest.raises(ConfigurationError):
        head.log_prob(np.zeros((1, 2)))


def test_log_std_clamp():
    store = ParamStore()
    store.create("log_std", np.array([-9.0, 0.0, 7.0]))
    clamp_log_std(store, "log_std")
    assert np.array_equal(store["log_std"], [-5.0, 0.0, 2.0])


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def test_adam_zero_gradient_keeps_params():
    store = ParamStore()
    store.create("w", np.array([1.0, -2.0]))
    adam_step(store, {"w": np.zeros(2)}, AdamState(), lr=0.1)
    assert np.allclose(store["w"], [1.0, -2.0], atol=1e-9)


def test_adam_constant_gradient_approaches_lr_steps():
    store = ParamStore()
    store.create("w", np.array([0.0]))
    state = AdamState()
    lr = 0.05
    prev = store["w"].copy()
    for t in range(300):
        adam_step(store, {"w": np.array([2.5])}, state, lr=lr)
        delta = store["w"] - prev
        prev = store["w"].copy()
    # asymptotically the step magnitude is lr * sign(g)
    assert abs(abs(delta[0]) - lr) < 1e-3
    assert delta[0] < 0


def test_adam_three_steps_match_hand_iterated_oracle():
    store = ParamStore()
    store.create("w", np.array([1.0]))
    state = AdamState()
    expected = [0.900000002, 0.8808501989417752, 0.846107430790882]
    for g, want in zip([0.5, -0.3, 0.2], expected):
        adam_step(store, {"w": np.array([g])}, state, lr=0.1)
        assert abs(store["w"][0] - want) < 1e-12


def test_adam_nonfinite_gradient_names_parameter():
    store = ParamStore()
    store.create("layer/W", np.ones(2))
    with pytest.raises(TrainingError, match="layer/W"):
        adam_step(store, {"layer/W": np.array([np.nan, 0.0])}, AdamState())


# ---------------------------------------------------------------------------
# backward mechanics
# ---------------------------------------------------------------------------


def test_backward_accumulates_duplicate_parameter_use():
    store = ParamStore()
    store.create("w", np.array([[2.0, 1.0]]))       # (1, 2)
    x1 = np.array([[1.0], [3.0]])                   # (2, 1) constants
    x2 = np.array([[-2.0], [0.5]])

    g = Graph()
    y = g.add(g.matmul(g.param(store, "w"), g.constant(x1)),
              g.matmul(g.param(store, "w"), g.constant(x2)))
    grads = g.backward(g.sum(y), store)

    # duplicated-parameter construction: separate params, summed grads
    store2 = ParamStore()
    store2.create("wa", np.array([[2.0, 1.0]]))
    store2.create("wb", np.array([[2.0, 1.0]]))
    g2 = Graph()
    y2 = g2.add(g2.matmul(g2.param(store2, "wa"), g2.constant(x1)),
                g2.matmul(g2.param(store2, "wb"), g2.constant(x2)))
    grads2 = g2.backward(g2.sum(y2), store2)
    assert np.array_equal(grads["w"], grads2["wa"] + grads2["wb"])


def test_backward_unreachable_param_gets_zero():
    store = ParamStore()
    store.create("used", np.array([1.0]))
    store.create("unused", np.array([5.0, 5.0]))
    g = Graph()
    loss = g.sum(g.mul(g.param(store, "used"), g.constant(np.array([3.0]))))
    grads = g.backward(loss, store)
    assert np.array_equal(grads["unused"], np.zeros(2))
    assert np.array_equal(grads["used"], np.array([3.0]))


def test_backward_rejects_non_scalar_seed():
    store = ParamStore()
    store.create("w", np.ones(3))
    g = Graph()
    node = g.param(store, "w")
    with pytest.raises(UsageError):
        g.backward(node, store)


def test_forward_backward_bit_deterministic():
    rng = np.random.default_rng(33)
    store = ParamStore()
    init_mlp(store, "net", 6, [8, 2], rng)
    x = rng.standard_normal((4, 6))

    def run():
        g = Graph()
        out = mlp_forward(g, store, "net", g.constant(x), [8, 2])
        loss = g.mean(g.square(out))
        return out.data.copy(), g.backward(loss, store)

    out1, g1 = run()
    out2, g2 = run()
    assert np.array_equal(out1, out2)
    for k in g1:
        assert np.array_equal(g1[k], g2[k])


# ---------------------------------------------------------------------------
# per-op finite-difference property (the module-wide invariant)
# ---------------------------------------------------------------------------

OPS = ["matmul", "add", "sub", "mul", "tanh", "sigmoid", "exp", "log",
       "maximum", "minimum", "clip", "sum", "sum_axis", "mean", "concat",
       "slice", "square", "relu0"]


@pytest.mark.parametrize("op", OPS)
def test_op_gradient_matches_finite_difference(op):
    rng = np.random.default_rng(zlib.crc32(op.encode()))
    for _ in range(8):
        store = ParamStore()
        a = rng.standard_normal((3, 4)) * 0.8
        if op == "log":
            a = np.abs(a) + 0.5
        store.create("a", a)

        def build(g):
            x = g.param(store, "a")
            if op == "matmul":
                y = g.matmul(x, g.constant(rng.standard_normal((4, 2))))
            elif op == "add":
                y = g.add(x, g.constant(rng.standard_normal(4)))
            elif op == "sub":
                y = g.sub(g.constant(rng.standard_normal((3, 4))), x)
            elif op == "mul":
                y = g.mul(x, g.constant(rng.standard_normal((3, 4))))
            elif op == "maximum":
                y = g.maximum(x, g.constant(rng.standard_normal((3, 4))))
            elif op == "minimum":
                y = g.minimum(x, g.constant(rng.standard_normal((3, 4))))
            elif op == "clip":
                y = g.clip(x, -0.5, 0.5)
            elif op == "sum":
                return g.sum(x)
            elif op == "sum_axis":
                y = g.sum(x, axis=-1)
            elif op == "mean":
                return g.mean(x)
            elif op == "concat":
                y = g.concat([x, g.constant(rng.standard_normal((3, 2)))], axis=-1)
            elif op == "slice":
                y = g.slice_cols(x, 1, 3)
            elif op in ("tanh", "sigmoid", "exp", "log", "square", "relu0"):
                y = getattr(g, op)(x)
            return g.sum(g.tanh(y) if y.data.ndim else y)

        # rng state must match between analytic and numeric evaluations
        state = rng.bit_generator.state

        def scalar(flat):
            rng.bit_generator.state = state
            store.set_("a", flat.reshape(3, 4))
            val = float(build(Graph()).data)
            store.set_("a", a)
            return val

        rng.bit_generator.state = state
        g = Graph()
        analytic = g.backward(build(g), store)["a"]
        numeric = central_diff(scalar, a.reshape(-1)).reshape(3, 4)
        assert rel_err(analytic, numeric) < 1e-4
