import dataclasses
import math
import warnings

import numpy as np
import pytest
from sklearn.base import clone

from mtcbench.exceptions import ConfigurationError, NumericalError, ShapeError, TrainingError
from mtcbench.predictors import (
    ALL_KINDS,
    NEURAL_KINDS,
    AdamMoments,
    ArimaPredictor,
    Batch,
    GRUPredictor,
    LSTMPredictor,
    ModelSpec,
    Network,
    RNNPredictor,
    TCNPredictor,
    TrainConfig,
    adam_step,
    arima_fit,
    arima_forecast,
    forecast_prefixes,
    complexity_budget,
    complexity_class,
    count_params,
    load_model,
    make_estimator,
    predict,
    read_loss_curve,
    save_model,
    train,
    write_loss_curve,
)
from mtcbench.predictors.layers import (
    causal_conv_forward,
    gru_cell_forward,
    lstm_cell_forward,
    rnn_cell_forward,
    tcn_forward,
)
from mtcbench.traffic import QuasiPeriodicConfig, TrafficTrace, gen_quasiperiodic_trace, make_dataset

from gradcheck import gradient_error, random_instance
from oracles import adam_scalar, dilated_conv_loop, gru_cell_loop, lstm_cell_loop, rnn_cell_loop


def _cell_params(d, h, gates, rng=None, fill=None):
    if fill is not None:
        return {"Wx": np.full((d, gates * h), fill), "Wh": np.full((h, gates * h), fill), "b": np.full(gates * h, fill)}
    return {"Wx": rng.normal(size=(d, gates * h)), "Wh": rng.normal(size=(h, gates * h)), "b": rng.normal(size=gates * h)}


# -- cells ------------------------------------------------------------------


def test_rnn_cell_examples():
    zero = _cell_params(3, 4, 1, fill=0.0)
    assert np.all(rnn_cell_forward(np.ones(3), np.ones(4), zero) == 0.0)
    p = {"Wx": np.array([[1.0]]), "Wh": np.array([[0.0]]), "b": np.zeros(1)}
    assert rnn_cell_forward(np.array([0.5]), np.zeros(1), p)[0] == pytest.approx(0.46211716, abs=1e-8)
    big = _cell_params(2, 5, 1, np.random.default_rng(0))
    h = rnn_cell_forward(np.array([40.0, -30.0]), np.full(5, 9.0), big)
    assert np.all(np.abs(h) <= 1.0)


def test_lstm_cell_examples():
    zero = _cell_params(2, 3, 4, fill=0.0)
    h, c = lstm_cell_forward(np.zeros(2), np.zeros(3), np.zeros(3), zero)
    assert np.all(h == 0) and np.all(c == 0)
    h, c = lstm_cell_forward(np.array([0.3, -7.0]), np.zeros(3), np.ones(3), zero)
    assert np.allclose(c, 0.5, atol=1e-15)
    assert np.allclose(h, 0.23105858, atol=1e-8)
    # forget gate saturated open, input gate shut
    p = _cell_params(2, 3, 4, fill=0.0)
    p["b"][:3] = -1e4
    p["b"][3:6] = 1e4
    c_prev = np.array([0.7, -2.0, 5.0])
    _, c = lstm_cell_forward(np.array([1.0, 2.0]), np.full(3, 0.1), c_prev, p)
    assert np.array_equal(c, c_prev)


def test_gru_cell_examples():
    zero = _cell_params(2, 3, 3, fill=0.0)
    assert np.all(gru_cell_forward(np.ones(2), np.zeros(3), zero) == 0)
    assert np.allclose(gru_cell_forward(np.ones(2), np.full(3, 0.8), zero), 0.4, atol=1e-15)
    p = _cell_params(2, 3, 3, np.random.default_rng(1))
    p["b"][:3] = -1e4
    h_prev = np.array([0.1, -0.4, 0.9])
    assert np.array_equal(gru_cell_forward(np.array([0.5, 0.5]), h_prev, p), h_prev)


@pytest.mark.parametrize(
    "fn, gates",
    [(rnn_cell_forward, 1), (gru_cell_forward, 3)],
)
def test_cell_shape_errors(fn, gates):
    p = _cell_params(2, 3, gates, fill=0.1)
    with pytest.raises(ShapeError):
        fn(np.zeros(3), np.zeros(3), p)
    with pytest.raises(ShapeError):
        fn(np.zeros(2), np.zeros(4), p)


def test_lstm_shape_errors():
    p = _cell_params(2, 3, 4, fill=0.1)
    with pytest.raises(ShapeError):
        lstm_cell_forward(np.zeros(2), np.zeros(3), np.zeros(2), p)


@pytest.mark.parametrize("seed", range(5))
def test_cells_match_loop_oracles(seed):
    rng = np.random.default_rng(seed)
    d, h = 3, 4
    x, hp, cp = rng.normal(size=d), rng.normal(size=h), rng.normal(size=h)
    p1, p4, p3 = (_cell_params(d, h, g, rng) for g in (1, 4, 3))
    assert np.allclose(rnn_cell_forward(x, hp, p1), rnn_cell_loop(x, hp, p1["Wx"], p1["Wh"], p1["b"]), atol=1e-12)
    h_t, c_t = lstm_cell_forward(x, hp, cp, p4)
    h_o, c_o = lstm_cell_loop(x, hp, cp, p4["Wx"], p4["Wh"], p4["b"])
    assert np.allclose(h_t, h_o, atol=1e-12) and np.allclose(c_t, c_o, atol=1e-12)
    assert np.allclose(gru_cell_forward(x, hp, p3), gru_cell_loop(x, hp, p3["Wx"], p3["Wh"], p3["b"]), atol=1e-12)


# -- dilated causal convolution ----------------------------------------------


def test_conv_hand_example():
    K = np.array([0.5, 0.25]).reshape(2, 1, 1)
    y = causal_conv_forward(np.array([4.0, 2.0]).reshape(1, 2, 1), K, np.zeros(1), 1)
    assert y[0, -1, 0] == 2.0


@pytest.mark.parametrize("dilation", [1, 2, 4])
def test_conv_matches_loop_oracle(dilation):
    rng = np.random.default_rng(dilation)
    x, f = rng.normal(size=20), rng.normal(size=3)
    y = causal_conv_forward(x.reshape(1, -1, 1), f.reshape(3, 1, 1), np.zeros(1), dilation)[0, :, 0]
    assert np.allclose(y, dilated_conv_loop(x, f, dilation), atol=1e-12)


def test_tcn_identity_filters():
    spec = ModelSpec("tcn", n_filters=1, activation="linear", dropout=0.0)
    K = np.zeros((2, 1, 1))
    K[0] = 1.0
    params = [(K, np.zeros(1))] * spec.n_layers
    x = np.random.default_rng(0).normal(size=30)
    assert np.array_equal(tcn_forward(x, params, activation="linear"), x[:, None])


def _default_tcn_params(seed=0, spec=None):
    spec = spec or ModelSpec("tcn")
    net = Network(spec)
    views = net.init_params(np.random.default_rng(seed)).views()
    return [(views[f"c{i}.K"], views[f"c{i}.b"] + 0.1) for i in range(spec.n_layers)]


def test_tcn_causality_by_perturbation():
    layers = _default_tcn_params()
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 64))
    base = tcn_forward(x, layers)
    for s in rng.integers(1, 64, size=100):
        xp = x.copy()
        xp[0, s] += rng.normal() * 10
        out = tcn_forward(xp, layers)
        assert np.array_equal(out[:, :s], base[:, :s])


def test_tcn_receptive_field_is_eight():
    spec = ModelSpec("tcn")
    assert spec.receptive_field == 8
    layers = _default_tcn_params(1)
    rng = np.random.default_rng(4)
    x = rng.normal(size=(1, 20))
    t = 19
    base = tcn_forward(x, layers)[0, t]
    for s in range(t + 1):
        xp = x.copy()
        xp[0, s] += 1.0
        changed = not np.array_equal(tcn_forward(xp, layers)[0, t], base)
        assert changed == (s > t - 8), s


def test_tcn_infer_ignores_dropout_stream():
    layers = _default_tcn_params(2)
    x = np.random.default_rng(0).normal(size=(3, 10))
    a = tcn_forward(x, layers, "infer", 0.5, rng=np.random.default_rng(1))
    b = tcn_forward(x, layers, "infer", 0.5, rng=np.random.default_rng(2))
    assert np.array_equal(a, b)
    c = tcn_forward(x, layers, "train", 0.5, rng=np.random.default_rng(1))
    assert not np.array_equal(a, c)


def test_tcn_input_errors():
    layers = _default_tcn_params()
    with pytest.raises(ShapeError):
        tcn_forward(np.empty((1, 0)), layers)
    with pytest.raises(Exception):
        tcn_forward(np.ones(5), layers, dropout_mode="eval")


# -- gradients --------------------------------------------------------------


@pytest.mark.parametrize("kind", NEURAL_KINDS)
def test_gradients_match_finite_differences(kind):
    errs = [gradient_error(kind, seed) for seed in range(20)]
    assert max(errs) < 1e-4


@pytest.mark.parametrize("kind", NEURAL_KINDS)
def test_gradient_zero_at_exact_fit(kind):
    net, params, batch = random_instance(kind, 3)
    params.vector[:] = 0.0
    # zero weights: score 0.5 and estimate log 2 everywhere
    batch.yc = np.full(len(batch.yc), 0.5)
    batch.yr = np.full(len(batch.yr), math.log(2.0))
    loss, grad = net.loss_and_grad(params, batch, train=False)
    assert loss == pytest.approx(0.0, abs=1e-15)
    assert np.all(grad == 0.0)


def test_non_finite_forward_names_layer():
    net, params, batch = random_instance("rnn", 0)
    params.vector[0] = np.nan
    with pytest.raises(NumericalError) as info:
        net.loss_and_grad(params, batch)
    assert info.value.layer


def test_loss_decreases_on_periodic_pattern():
    pattern = np.tile([1, 0, 0, 0], 200).astype(float)
    W = 8
    X = np.lib.stride_tricks.sliding_window_view(pattern[:-1], W)
    y = pattern[W:]
    est = RNNPredictor(hidden_sizes=(8,), epochs=3, batch_size=16, seed=0).fit(X, y)
    assert est.loss_curve_[-1] < est.loss_curve_[0]


# -- Adam -------------------------------------------------------------------


def test_adam_first_step():
    cfg = TrainConfig()
    p, m = adam_step(np.zeros(1), np.ones(1), AdamMoments.zeros(1), 1, cfg)
    assert p[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)
    assert p[0] == pytest.approx(adam_scalar([1.0]), rel=1e-12)


def test_adam_matches_scalar_oracle_over_steps():
    cfg = TrainConfig()
    grads = [0.3, -1.2, 2.0, 0.0, 0.7]
    p, mom = np.array([0.5]), AdamMoments.zeros(1)
    for t, g in enumerate(grads, start=1):
        p, mom = adam_step(p, np.array([g]), mom, t, cfg)
    assert p[0] == pytest.approx(adam_scalar(grads, theta=0.5), rel=1e-12)


def test_adam_zero_gradient_and_symmetry():
    cfg = TrainConfig()
    mom = AdamMoments(np.array([0.2, 0.2]), np.array([0.1, 0.1]))
    p0 = np.array([1.0, -1.0])
    p, mom2 = adam_step(p0, np.zeros(2), AdamMoments(np.zeros(2), np.zeros(2)), 1, cfg)
    assert np.array_equal(p, p0)
    _, mom3 = adam_step(p0, np.zeros(2), mom, 3, cfg)
    assert np.all(np.abs(mom3.m) < np.abs(mom.m)) and np.all(mom3.v < mom.v)
    p, _ = adam_step(np.array([0.3, -4.0]), np.array([0.7, 0.7]), AdamMoments.zeros(2), 1, cfg)
    assert p[0] - 0.3 == pytest.approx(p[1] + 4.0, abs=1e-15)


def test_adam_errors():
    cfg = TrainConfig()
    with pytest.raises(NumericalError):
        adam_step(np.zeros(2), np.array([1.0, np.inf]), AdamMoments.zeros(2), 1, cfg)
    with pytest.raises(ConfigurationError):
        adam_step(np.zeros(2), np.zeros(2), AdamMoments.zeros(2), 0, cfg)
    with pytest.raises(ConfigurationError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(epochs=0)


# -- training ---------------------------------------------------------------


def _constant_period_dataset(q=0.5, n_devices=4, n_slots=4000, seed=0, max_samples=None):
    cfg = QuasiPeriodicConfig(jitter_fraction=0.0, activation_prob=1.0, q=q, n_devices=n_devices,
                              n_slots=n_slots, t_min=20, t_max=40)
    return make_dataset(gen_quasiperiodic_trace(cfg, seed=seed), 8, max_samples=max_samples, seed=seed)


SMALL = {
    "rnn": ModelSpec("rnn", hidden_sizes=(8,)),
    "lstm": ModelSpec("lstm", hidden_sizes=(8,)),
    "gru": ModelSpec("gru", hidden_sizes=(8,)),
    "tcn": ModelSpec("tcn", n_filters=8),
    "arima": ModelSpec("arima", arima_order=(1, 0, 0)),
}


@pytest.fixture(scope="module")
def small_dataset():
    return _constant_period_dataset(max_samples=3000)


def test_one_epoch_gives_one_point(small_dataset):
    model = train(SMALL["gru"], TrainConfig(epochs=1, seed=1), small_dataset, time_inference=False)
    assert len(model.loss_curve) == 1 and len(model.val_curve) == 1
    assert model.train_time > 0


def test_training_is_deterministic(small_dataset):
    cfg = TrainConfig(epochs=2, seed=5)
    a = train(SMALL["tcn"], cfg, small_dataset, time_inference=False)
    b = train(SMALL["tcn"], cfg, small_dataset, time_inference=False)
    assert np.array_equal(a.params.vector, b.params.vector)
    c = train(SMALL["tcn"], TrainConfig(epochs=2, seed=6), small_dataset, time_inference=False)
    assert not np.array_equal(a.params.vector, c.params.vector)


def test_best_epoch_is_kept(small_dataset):
    model = train(SMALL["rnn"], TrainConfig(epochs=4, seed=2), small_dataset, time_inference=False)
    est = model.estimator
    val = small_dataset.val
    batch = Batch(val.X_cls, val.y_cls, val.X_reg / est.gap_scale_, val.y_reg / est.gap_scale_)
    kept = est.network_.loss(est.params_, batch)
    assert kept == pytest.approx(min(model.val_curve), rel=1e-12)
    assert est.best_epoch_ == int(np.argmin(model.val_curve)) + 1


@pytest.mark.parametrize("kind", NEURAL_KINDS)
def test_beats_majority_baseline(kind, small_dataset):
    model = train(SMALL[kind], TrainConfig(epochs=10, seed=0), small_dataset, time_inference=False)
    val = small_dataset.val
    majority = float(np.mean(val.y_cls) >= 0.5)
    baseline = np.sqrt(np.mean((majority - val.y_cls) ** 2))
    score = model.estimator.predict_score(val.X_cls)
    assert np.sqrt(np.mean((score - val.y_cls) ** 2)) < baseline


def test_period_100_gap_estimate():
    tr = TrafficTrace(3, 20_000, np.repeat([0, 1, 2], 200),
                      np.concatenate([np.arange(o, 20_000, 100) for o in (5, 40, 71)]), np.ones(600, int))
    ds = make_dataset(tr, 8)
    model = train(ModelSpec("lstm", hidden_sizes=(8,)), TrainConfig(epochs=5, seed=0), ds, time_inference=False)
    window = tr.activity[0, 98:106]  # ends one slot after the arrival at 105
    _, g_hat = predict(model, window, gaps=np.full(8, 100.0))
    assert abs(g_hat - 100) <= 5


def test_predict_output_ranges(small_dataset):
    model = train(SMALL["tcn"], TrainConfig(epochs=1), small_dataset, time_inference=False)
    est = model.estimator
    rng = np.random.default_rng(0)
    X = rng.integers(0, 2, size=(10_000, 8)).astype(float)
    G = rng.uniform(1, 500, size=(10_000, 8))
    s = est.predict_score(X)
    g = est.predict_interarrival(G)
    assert np.all((s >= 0) & (s <= 1)) and np.all(g > 0)
    assert predict(model, X[0]) == predict(model, X[0].copy())
    with pytest.raises(ShapeError):
        predict(model, np.zeros(7))


def test_training_rejects_empty_dataset():
    ds = _constant_period_dataset(n_devices=1, n_slots=400)
    empty = dataclasses.replace(ds.train, X_cls=np.empty((0, 8)), y_cls=np.empty(0))
    ds = dataclasses.replace(ds, train=empty)
    with pytest.raises(ValueError):
        train(SMALL["rnn"], TrainConfig(epochs=1), ds)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_training_error():
    X = np.random.default_rng(0).integers(0, 2, (64, 8)).astype(float)
    y = X[:, -1]
    with pytest.raises(TrainingError) as info:
        RNNPredictor(hidden_sizes=(4,), learning_rate=np.inf, epochs=2, batch_size=8).fit(X, y)
    assert info.value.epoch == 1 and "epoch 1" in str(info.value)


def test_sklearn_protocol():
    est = TCNPredictor(n_filters=4, epochs=1)
    params = est.get_params()
    assert params["n_filters"] == 4 and params["epochs"] == 1
    cl = clone(est).set_params(n_filters=6)
    assert cl.n_filters == 6 and est.n_filters == 4
    for cls in (RNNPredictor, LSTMPredictor, GRUPredictor):
        assert clone(cls(hidden_sizes=(3,))).hidden_sizes == (3,)
    assert isinstance(make_estimator(ModelSpec("arima")), ArimaPredictor)


# -- parameter counts and complexity ----------------------------------------


def test_param_counts():
    assert count_params(ModelSpec("rnn", hidden_sizes=(256,))) == 66_048
    rnn, lstm = ModelSpec("rnn", hidden_sizes=(16,)), ModelSpec("lstm", hidden_sizes=(16,))
    assert count_params(lstm) == 4 * count_params(rnn)
    assert complexity_class(ModelSpec("tcn"))[0] == 512
    assert complexity_class(ModelSpec("rnn", hidden_sizes=(256,)))[0] == 512


@pytest.mark.parametrize("kind", NEURAL_KINDS)
def test_manifest_matches_vector(kind):
    spec = ModelSpec(kind)
    params = Network(spec).init_params(np.random.default_rng(0))
    assert count_params(spec, heads=True) == len(params.vector)


def test_complexity_budget():
    assert complexity_budget(1024, "tcn").n_filters == 64
    assert complexity_budget(512, "rnn").hidden_sizes == (256,)
    assert complexity_budget(1000, "gru", hidden_layers=2).hidden_sizes == (22, 22)
    for kind in NEURAL_KINDS:
        for c in (64, 300, 1024):
            assert complexity_class(complexity_budget(c, kind))[0] <= c
    with pytest.raises(ConfigurationError):
        complexity_budget(1, "lstm")
    with pytest.raises(ConfigurationError):
        complexity_budget(10, "tcn")


# -- ARIMA ------------------------------------------------------------------


def test_arima_ar1_coefficient():
    rng = np.random.default_rng(0)
    x = np.zeros(10_000)
    for t in range(1, len(x)):
        x[t] = 0.8 * x[t - 1] + rng.normal(scale=0.1)
    model = arima_fit(x, (1, 0, 0))
    assert abs(model.ar[0] - 0.8) < 0.05


def test_arima_random_walk_and_constant():
    x = np.cumsum(np.random.default_rng(1).normal(size=200))
    assert arima_forecast(arima_fit(x, (0, 1, 0)), 3).tolist() == [x[-1]] * 3
    c = np.full(50, 7.5)
    assert arima_forecast(arima_fit(c, (0, 0, 0)), 2) == pytest.approx([7.5, 7.5], abs=1e-12)


def test_arima_with_ma_terms_recovers_coefficients():
    rng = np.random.default_rng(2)
    e = rng.normal(size=20_000)
    x = e.copy()
    x[1:] += 0.5 * e[:-1]
    model = arima_fit(x, (0, 0, 1))
    assert abs(model.ma[0] - 0.5) < 0.05


def test_arima_errors_and_warning():
    with pytest.raises(ConfigurationError):
        arima_fit(np.ones(12), (1, 0, 1))
    x = 1.1 ** np.arange(40.0)
    with pytest.warns(RuntimeWarning):
        arima_fit(x, (1, 0, 0))


def test_arima_predictor_pools_devices():
    series = [np.full(30, 50.0), np.full(30, 50.0)]
    est = ArimaPredictor(order=(0, 1, 0)).fit(series)
    assert est.predict_interarrival(np.full((2, 4), 50.0)).tolist() == [50.0, 50.0]
    scores = est.predict_slot_scores([np.array([0, 50, 100])], [0, 0, 0], [150, 149, 125])
    assert scores.tolist() == [1.0, 0.5, 0.0]



@pytest.mark.parametrize("order", [(2, 1, 2), (1, 0, 1), (0, 2, 1), (3, 1, 0)])
def test_forecast_prefixes_matches_sequential_forecasts(order):
    rng = np.random.default_rng(sum(order))
    gaps = rng.gamma(4.0, 10.0, size=120)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        model = arima_fit(gaps, order)
    ends = np.array([order[1] + 1, 5, 17, 60, 120])
    batch = forecast_prefixes(model, gaps, ends, 12)
    for row, end in zip(batch, ends):
        np.testing.assert_allclose(row, arima_forecast(model, 12, history=gaps[:end]), rtol=1e-9, atol=1e-9)


def test_slot_scores_match_per_start_forecasts():
    rng = np.random.default_rng(9)
    starts = np.cumsum(rng.integers(5, 40, size=80))
    est = ArimaPredictor(order=(2, 1, 1), horizon=8).fit([np.diff(starts)])
    slots = np.arange(starts[0] - 3, starts[-1] + 20)
    scores = est.predict_slot_scores([starts], np.zeros(len(slots), int), slots)
    expected = np.zeros(len(slots))
    for i, slot in enumerate(slots):
        k = np.searchsorted(starts, slot, side="left") - 1
        if k >= 0:
            arrivals = est.arrivals_after(starts[:k + 1])
            expected[i] = np.clip(1.0 - np.min(np.abs(slot - arrivals)) / 2.0, 0.0, 1.0)
    np.testing.assert_allclose(scores, expected, atol=1e-9)

# -- files ------------------------------------------------------------------


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_model_file_round_trip(kind, small_dataset, tmp_path):
    model = train(SMALL[kind], TrainConfig(epochs=1, seed=3), small_dataset, time_inference=False)
    path = tmp_path / f"{kind}.mtcm"
    save_model(model, path)
    back = load_model(path)
    assert back.spec == model.spec
    test = small_dataset.test
    if kind == "arima":
        G = np.full((3, 8), 25.0)
        assert np.array_equal(back.estimator.predict_interarrival(G), model.estimator.predict_interarrival(G))
    else:
        assert np.array_equal(back.params.vector, model.params.vector)
        assert np.array_equal(back.estimator.predict_score(test.X_cls), model.estimator.predict_score(test.X_cls))
        assert np.array_equal(back.estimator.predict_interarrival(test.X_reg),
                              model.estimator.predict_interarrival(test.X_reg))


def test_bad_model_file(tmp_path):
    path = tmp_path / "junk.mtcm"
    path.write_bytes(b"not a model")
    with pytest.raises(ConfigurationError):
        load_model(path)


def test_loss_curve_file(small_dataset, tmp_path):
    model = train(SMALL["rnn"], TrainConfig(epochs=3), small_dataset, time_inference=False)
    path = tmp_path / "loss.csv"
    write_loss_curve(model, path)
    assert path.read_text().splitlines()[0] == "epoch,train_loss,val_loss"
    train_loss, val_loss = read_loss_curve(path)
    assert np.allclose(train_loss, model.loss_curve, rtol=0, atol=0)
    assert np.allclose(val_loss, model.val_curve, rtol=0, atol=0)
