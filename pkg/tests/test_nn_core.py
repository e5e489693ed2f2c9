import numpy as np
import pytest

from deepsmote.errors import CacheMismatchError, NumericError, ShapeError
from deepsmote.nn import (
    LayerSpec,
    NetworkSpec,
    ParamStore,
    adam_step,
    backward,
    classifier_spec,
    decoder_spec,
    encoder_spec,
    forward,
    grad_check,
    init_params,
    load_params,
    mse_loss,
    save_params,
)


def weighted_sum_loss(rng, shape):
    r = rng.standard_normal(shape)

    def loss_fn(out):
        return float(np.sum(out * r)), r.astype(out.dtype)

    return loss_fn


# ---------------------------------------------------------------- shapes


def test_identity_1x1_conv():
    spec = NetworkSpec((1, 5, 5), (LayerSpec("conv2d", in_channels=1, out_channels=1, kernel=1),))
    params = ParamStore(params={"0.weight": np.ones((1, 1, 1, 1), np.float32), "0.bias": np.zeros(1, np.float32)})
    x = np.random.default_rng(0).standard_normal((3, 1, 5, 5)).astype(np.float32)
    y, _ = forward(spec, params, x)
    np.testing.assert_array_equal(y, x)


def test_stride2_conv_halves_32():
    spec = NetworkSpec((1, 32, 32), (LayerSpec("conv2d", in_channels=1, out_channels=2, kernel=4, stride=2, padding=1),))
    assert spec.output_shape == (2, 16, 16)
    params = init_params(spec, np.random.default_rng(0))
    y, _ = forward(spec, params, np.zeros((2, 1, 32, 32), np.float32))
    assert y.shape == (2, 2, 16, 16)


def test_encoder_shape_chain():
    spec = encoder_spec()
    convs = [s for s, l in zip(spec.shapes()[1:], spec.layers) if l.kind == "conv2d"]
    assert [s[1] for s in convs] == [16, 8, 4, 2]
    assert spec.shapes()[-2] == (256,)
    assert spec.output_shape == (300,)


def test_decoder_mirrors_encoder():
    spec = decoder_spec()
    deconvs = [s for s, l in zip(spec.shapes()[1:], spec.layers) if l.kind == "conv2d_transpose"]
    assert [s[1] for s in deconvs] == [4, 8, 16, 32]
    assert spec.output_shape == (1, 32, 32)
    assert spec.layers[-1].kind == "tanh"


def test_type_check_names_layer():
    with pytest.raises(ShapeError, match="layer 1"):
        NetworkSpec(
            (3, 8, 8),
            (
                LayerSpec("conv2d", in_channels=3, out_channels=4, kernel=3, padding=1),
                LayerSpec("batchnorm2d", num_features=5),
            ),
        )


def test_forward_rejects_bad_input():
    spec = encoder_spec()
    params = init_params(spec, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        forward(spec, params, np.zeros((2, 1, 28, 28), np.float32))


@pytest.mark.parametrize("bad", [dict(kernel=0), dict(stride=0), dict(padding=-1), dict(out_channels=0)])
def test_layerspec_invariants(bad):
    kw = dict(in_channels=1, out_channels=1, kernel=3)
    kw.update(bad)
    with pytest.raises(ValueError):
        LayerSpec("conv2d", **kw)


def test_spec_json_roundtrip():
    spec = decoder_spec(latent_dim=12, channels=(4, 4, 4, 4))
    assert NetworkSpec.from_json(spec.to_json()) == spec


# ---------------------------------------------------------------- closed forms


def test_linear_backward_closed_form():
    spec = NetworkSpec((3,), (LayerSpec("linear", in_features=3, out_features=2),))
    rng = np.random.default_rng(1)
    params = init_params(spec, rng, dtype=np.float64)
    x = rng.standard_normal((1, 3))
    g = rng.standard_normal((1, 2))
    _, cache = forward(spec, params, x)
    grads, gx = backward(spec, params, cache, g)
    np.testing.assert_allclose(grads["0.weight"], g.T @ x)
    np.testing.assert_allclose(grads["0.bias"], g[0])
    np.testing.assert_allclose(gx, g @ params.params["0.weight"])


def test_tanh_grad_at_zero():
    spec = NetworkSpec((4,), (LayerSpec("tanh"),))
    g = np.array([[1.0, -2.0, 0.5, 3.0]])
    _, cache = forward(spec, ParamStore(), np.zeros((1, 4)))
    _, gx = backward(spec, ParamStore(), cache, g)
    np.testing.assert_array_equal(gx, g)


def test_backward_rejects_foreign_cache():
    a = NetworkSpec((4,), (LayerSpec("tanh"),))
    b = NetworkSpec((4,), (LayerSpec("relu"),))
    _, cache = forward(a, ParamStore(), np.zeros((1, 4)))
    with pytest.raises(CacheMismatchError):
        backward(b, ParamStore(), cache, np.zeros((1, 4)))


def test_backward_is_pure():
    spec = encoder_spec(latent_dim=8, channels=(4, 4, 4, 4))
    rng = np.random.default_rng(3)
    params = init_params(spec, rng)
    x = rng.uniform(-1, 1, (2, 1, 32, 32)).astype(np.float32)
    y, cache = forward(spec, params, x)
    snapshot = params.copy()
    backward(spec, params, cache, np.ones_like(y))
    for k in params.params:
        np.testing.assert_array_equal(params.params[k], snapshot.params[k])


# ---------------------------------------------------------------- mse


def test_mse_zero():
    x = np.arange(6.0).reshape(2, 3)
    loss, g = mse_loss(x, x)
    assert loss == 0
    assert not g.any()


def test_mse_simple():
    loss, g = mse_loss(np.array([1.0, 1.0]), np.array([0.0, 0.0]))
    assert loss == 1.0
    np.testing.assert_array_equal(g, [1.0, 1.0])


def test_mse_matches_elementwise_oracle():
    rng = np.random.default_rng(7)
    a, b = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    total = 0.0
    for i in range(3):
        for j in range(3):
            total += (a[i, j] - b[i, j]) ** 2
    loss, g = mse_loss(a, b)
    assert abs(loss - total / 9) < 1e-6
    for i in range(3):
        for j in range(3):
            assert abs(g[i, j] - 2 * (a[i, j] - b[i, j]) / 9) < 1e-12


def test_mse_shape_mismatch():
    with pytest.raises(ShapeError):
        mse_loss(np.zeros(3), np.zeros(4))


# ---------------------------------------------------------------- adam


def _scalar_store(value=0.5):
    return ParamStore(params={"w": np.array([value])})


def test_adam_zero_grad_is_noop():
    store = _scalar_store()
    adam_step(store, {"w": np.zeros(1)})
    assert store.params["w"][0] == 0.5
    assert store.t == 1


def test_adam_first_step_magnitude():
    # t=1: m_hat = g, v_hat = g^2, so step = lr * g / (|g| + eps)
    lr, eps = 0.0002, 1e-8
    store = _scalar_store()
    adam_step(store, {"w": np.array([1.0])}, lr=lr, eps=eps)
    expected = 0.5 - lr * 1.0 / (1.0 + eps)
    assert abs(store.params["w"][0] - expected) < 1e-15


def test_adam_symmetry():
    store = ParamStore(params={"a": np.array([0.3]), "b": np.array([0.3])})
    for g in (0.4, -1.2, 2.0):
        adam_step(store, {"a": np.array([g]), "b": np.array([g])})
    assert store.params["a"][0] == store.params["b"][0]


def test_adam_timestep_and_moment_shapes():
    spec = encoder_spec(latent_dim=4, channels=(2, 2, 2, 2))
    params = init_params(spec, np.random.default_rng(0))
    for step in range(1, 4):
        adam_step(params, params.zeros_like())
        assert params.t == step
    for k, p in params.params.items():
        assert params.m[k].shape == p.shape == params.v[k].shape


def test_adam_rejects_nonfinite():
    store = _scalar_store()
    with pytest.raises(NumericError):
        adam_step(store, {"w": np.array([np.nan])})
    assert store.params["w"][0] == 0.5
    assert store.t == 0


def test_adam_converges_on_quadratic():
    store = ParamStore(params={"w": np.array([3.0])})
    target = -1.25
    for _ in range(1000):
        adam_step(store, {"w": 2 * (store.params["w"] - target)}, lr=0.05)
    assert abs(store.params["w"][0] - target) < 1e-3


# ---------------------------------------------------------------- grad check


def test_gradcheck_linear_tanh():
    spec = NetworkSpec((5,), (LayerSpec("linear", in_features=5, out_features=3), LayerSpec("tanh")))
    rng = np.random.default_rng(0)
    params = init_params(spec, rng, init="he")
    x = rng.standard_normal((2, 5))
    assert grad_check(spec, params, x, weighted_sum_loss(rng, (2, 3))) <= 1e-2


def test_gradcheck_conv_bn():
    spec = NetworkSpec(
        (2, 6, 6),
        (
            LayerSpec("conv2d", in_channels=2, out_channels=3, kernel=4, stride=2, padding=1),
            LayerSpec("batchnorm2d", num_features=3),
        ),
    )
    rng = np.random.default_rng(1)
    params = init_params(spec, rng, init="he")
    x = rng.standard_normal((2, 2, 6, 6))
    assert grad_check(spec, params, x, weighted_sum_loss(rng, (2, 3, 3, 3))) <= 1e-2


def test_gradcheck_zero_network():
    spec = NetworkSpec((3,), (LayerSpec("linear", in_features=3, out_features=2),))
    params = init_params(spec, np.random.default_rng(0))
    for p in params.params.values():
        p[...] = 0
    err = grad_check(spec, params, np.zeros((2, 3)), lambda out: mse_loss(out, np.zeros_like(out)))
    assert err < 1e-6


def test_gradcheck_leaves_params_untouched():
    spec = NetworkSpec((2, 4, 4), (LayerSpec("batchnorm2d", num_features=2),))
    params = init_params(spec, np.random.default_rng(0))
    before = params.copy()
    rng = np.random.default_rng(1)
    grad_check(spec, params, rng.standard_normal((2, 2, 4, 4)), weighted_sum_loss(rng, (2, 2, 4, 4)))
    np.testing.assert_array_equal(params.buffers["0.running_mean"], before.buffers["0.running_mean"])


# ---------------------------------------------------------------- batch norm modes


def test_bn_eval_mode_mutates_nothing():
    spec = NetworkSpec((3, 4, 4), (LayerSpec("batchnorm2d", num_features=3),))
    params = init_params(spec, np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal((4, 3, 4, 4)).astype(np.float32)
    forward(spec, params, x, "eval")
    np.testing.assert_array_equal(params.buffers["0.running_mean"], 0)
    forward(spec, params, x, "train")
    assert np.abs(params.buffers["0.running_mean"]).sum() > 0
    assert (params.buffers["0.running_var"] >= 0).all()


def test_bn_train_eval_consistency():
    spec = NetworkSpec((2, 4, 4), (LayerSpec("batchnorm2d", num_features=2),))
    params = init_params(spec, np.random.default_rng(0))
    rng = np.random.default_rng(5)
    mu = np.array([1.5, -0.5])[None, :, None, None]
    sd = np.array([2.0, 0.5])[None, :, None, None]
    for _ in range(200):
        forward(spec, params, (mu + sd * rng.standard_normal((64, 2, 4, 4))).astype(np.float32), "train")
    batch = (mu + sd * rng.standard_normal((64, 2, 4, 4))).astype(np.float32)
    y_eval, _ = forward(spec, params.copy(), batch, "eval")
    y_train, _ = forward(spec, params.copy(), batch, "train")
    assert np.abs(y_eval - y_train).max() <= 0.1


# ---------------------------------------------------------------- determinism and io


def test_training_determinism():
    def run():
        spec = encoder_spec(latent_dim=6, channels=(3, 3, 3, 3))
        rng = np.random.default_rng(11)
        params = init_params(spec, rng)
        x = rng.uniform(-1, 1, (4, 1, 32, 32)).astype(np.float32)
        for _ in range(5):
            y, cache = forward(spec, params, x)
            _, g = mse_loss(y, np.zeros_like(y))
            grads, _ = backward(spec, params, cache, g)
            adam_step(params, grads)
        return params

    a, b = run(), run()
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()


def test_dsmw_roundtrip(tmp_path):
    spec = classifier_spec()
    params = init_params(spec, np.random.default_rng(0))
    enc = encoder_spec(latent_dim=4, channels=(2, 2, 2, 2))
    params_bn = init_params(enc, np.random.default_rng(1))
    for store in (params, params_bn):
        path = tmp_path / "w.dsmw"
        save_params(store, path)
        data = path.read_bytes()
        assert data[:4] == b"DSMW"
        assert int.from_bytes(data[4:8], "little") == 1
        loaded = load_params(path)
        assert list(loaded.params) == list(store.params)
        for k in store.params:
            np.testing.assert_array_equal(loaded.params[k], store.params[k])
        for k in store.buffers:
            np.testing.assert_array_equal(loaded.buffers[k], store.buffers[k])


def test_dsmw_record_layout(tmp_path):
    store = ParamStore(params={"ab": np.array([[1.5, -2.0]], np.float32)})
    save_params(store, tmp_path / "x.dsmw")
    raw = (tmp_path / "x.dsmw").read_bytes()
    expected = (
        b"DSMW"
        + (1).to_bytes(4, "little")
        + (2).to_bytes(4, "little")
        + b"ab"
        + (2).to_bytes(4, "little")
        + (1).to_bytes(4, "little")
        + (2).to_bytes(4, "little")
        + np.array([1.5, -2.0], "<f4").tobytes()
    )
    assert raw == expected
