"""Scikit-learn style traffic predictors and the shared training loop.

Each neural predictor wraps one :class:`~mtcbench.predictors.network.Network`
with two heads.  ``fit`` takes the activity windows ``X``/``y`` and,
optionally, inter-arrival windows ``G``/``g``; both are trained jointly by
mini-batch Adam on the summed RMSE.  Parameters of the epoch with the lowest
validation loss are kept.
"""
import math
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..exceptions import NumericalError, ShapeError, TrainingError
from .arima import ArimaPredictor
from .network import Batch, Network
from .optim import AdamMoments, TrainConfig, adam_step
from .spec import ModelSpec, count_params, model_size_bytes

__all__ = [
    "RNNPredictor",
    "LSTMPredictor",
    "GRUPredictor",
    "TCNPredictor",
    "ArimaPredictor",
    "TrainedModel",
    "make_estimator",
    "train",
    "predict",
    "measure_inference_time",
]

# decay of the running per-head MSE used to scale minibatch gradients
_AVG = 0.95


def _gap_arrays(G, g, n_features=None):
    if G is None or len(G) == 0:
        return np.empty((0, n_features or 1)), np.empty(0)
    G, g = check_X_y(G, g, y_numeric=True)
    if np.any(G <= 0) or np.any(g <= 0):
        raise ValueError("inter-arrival gaps must be positive")
    return G, g


class _NeuralPredictor(ClassifierMixin, BaseEstimator):
    """Shared fit/predict logic; subclasses fix the backbone kind."""

    kind = None

    def _spec(self):
        raise NotImplementedError

    def _train_config(self):
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            seed=self.seed,
            dtype=self.dtype,
        )

    def fit(self, X, y, G=None, g=None, eval_set=None):
        """Train on activity windows ``X -> y`` and gap windows ``G -> g``.

        ``eval_set`` is ``(X_val, y_val)`` or ``(X_val, y_val, G_val, g_val)``
        and drives best-epoch selection; without it the training loss does.
        """
        X, y = check_X_y(X, y, y_numeric=True)
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("activity targets must be 0/1")
        G, g = _gap_arrays(G, g)
        spec = self._spec()
        cfg = self._train_config()
        self.spec_ = spec
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        # gaps are fed in units of the mean training gap
        self.gap_scale_ = float(np.mean(g)) if len(g) else 1.0
        net = Network(spec, dtype=cfg.dtype)
        self.network_ = net

        val = None
        if eval_set is not None:
            Xv, yv = check_X_y(eval_set[0], eval_set[1], y_numeric=True)
            Gv, gv = _gap_arrays(*(eval_set[2:4] if len(eval_set) > 2 else (None, None)))
            val = Batch(Xv, yv, Gv / self.gap_scale_, gv / self.gap_scale_)

        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
        init_rng, shuffle_rng, drop_rng = rng.spawn(3)
        params = net.init_params(init_rng)
        moments = AdamMoments.zeros(params.count, params.dtype)
        Gs, gs = G / self.gap_scale_, g / self.gap_scale_

        n_c, n_r = len(y), len(g)
        n_steps = max(1, math.ceil(n_c / cfg.batch_size))
        # gap windows are far fewer than activity windows: one pass over them
        # per epoch in full-size batches, spread evenly over the steps
        n_rb = math.ceil(n_r / cfg.batch_size)
        r_bounds = [min(n_r, cfg.batch_size * math.ceil(s * n_rb / n_steps)) for s in range(n_steps + 1)]

        self.loss_curve_, self.validation_curve_ = [], []
        best_loss, best_vec, self.best_epoch_ = np.inf, params.vector.copy(), 1
        step = 0
        # running per-head MSE, so each step follows the gradient of the
        # split-level RMSE rather than that of the batch's own RMSE
        mse_avg = {}
        t0 = time.perf_counter()
        for epoch in range(1, cfg.epochs + 1):
            perm_c = shuffle_rng.permutation(n_c)
            perm_r = shuffle_rng.permutation(n_r)
            sse, counts = {}, {}
            try:
                for s in range(n_steps):
                    ic = perm_c[s * cfg.batch_size:(s + 1) * cfg.batch_size]
                    ir = perm_r[r_bounds[s]:r_bounds[s + 1]]
                    batch = Batch(X[ic], y[ic], Gs[ir], gs[ir])
                    scale = {k: np.sqrt(v) for k, v in mse_avg.items()} or None
                    _, grad, parts = net.loss_and_grad(params, batch, train=True, rng=drop_rng,
                                                          rmse_scale=scale, return_parts=True)
                    for k, r in parts.items():
                        mse_avg[k] = r * r if k not in mse_avg else _AVG * mse_avg[k] + (1 - _AVG) * r * r
                        n_k = len(ic) if k == "cls" else len(ir)
                        sse[k] = sse.get(k, 0.0) + r * r * n_k
                        counts[k] = counts.get(k, 0) + n_k
                    step += 1
                    params.vector, moments = adam_step(params.vector, grad, moments, step, cfg)
                # epoch loss: each head's RMSE over the whole training split
                train_loss = float(sum(np.sqrt(sse[k] / counts[k]) for k in sse))
                val_loss = net.loss(params, val) if val is not None else train_loss
            except NumericalError as exc:
                raise TrainingError(f"training diverged in epoch {epoch}: {exc}", epoch=epoch) from exc
            if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
                raise TrainingError(f"training diverged in epoch {epoch}", epoch=epoch)
            self.loss_curve_.append(train_loss)
            self.validation_curve_.append(val_loss)
            if val_loss < best_loss:
                best_loss, best_vec, self.best_epoch_ = val_loss, params.vector.copy(), epoch
        self.train_time_ = time.perf_counter() - t0
        params.vector = best_vec
        self.params_ = params
        self.n_params_ = params.count
        return self

    def _windows(self, X, width=None):
        check_is_fitted(self, "params_")
        X = check_array(X)
        if width is not None and X.shape[1] != width:
            raise ShapeError(f"expected windows of length {width}, got {X.shape[1]}")
        return X

    def predict_score(self, X):
        """Sigmoid activity score for each window."""
        X = self._windows(X, self.n_features_in_)
        return self.network_.predict(self.params_, X, head="cls")

    def predict_proba(self, X):
        s = self.predict_score(X)
        return np.column_stack([1.0 - s, s])

    def predict(self, X):
        return (self.predict_score(X) >= 0.5).astype(int)

    def predict_interarrival(self, G):
        """Positive estimate of the next inter-arrival gap, in slots."""
        G = self._windows(G)
        if np.any(G <= 0):
            raise ValueError("inter-arrival gaps must be positive")
        return self.network_.predict(self.params_, G / self.gap_scale_, head="reg") * self.gap_scale_


class _RecurrentPredictor(_NeuralPredictor):
    def __init__(
        self,
        hidden_sizes=(256,),
        window=8,
        gap_window=None,
        learning_rate=1e-3,
        epochs=50,
        batch_size=64,
        beta1=0.9,
        beta2=0.999,
        eps=1e-8,
        seed=0,
        dtype="float64",
    ):
        self.hidden_sizes = hidden_sizes
        self.window = window
        self.gap_window = gap_window
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.seed = seed
        self.dtype = dtype

    def _spec(self):
        return ModelSpec(self.kind, hidden_sizes=tuple(self.hidden_sizes), window=self.window, gap_window=self.gap_window)


class RNNPredictor(_RecurrentPredictor):
    kind = "rnn"


class LSTMPredictor(_RecurrentPredictor):
    kind = "lstm"


class GRUPredictor(_RecurrentPredictor):
    kind = "gru"


class TCNPredictor(_NeuralPredictor):
    kind = "tcn"

    def __init__(
        self,
        n_layers=3,
        n_filters=32,
        kernel_size=2,
        dropout=0.05,
        activation="relu",
        window=8,
        gap_window=None,
        learning_rate=1e-3,
        epochs=50,
        batch_size=64,
        beta1=0.9,
        beta2=0.999,
        eps=1e-8,
        seed=0,
        dtype="float64",
    ):
        self.n_layers = n_layers
        self.n_filters = n_filters
        self.kernel_size = kernel_size
        self.dropout = dropout
        self.activation = activation
        self.window = window
        self.gap_window = gap_window
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.seed = seed
        self.dtype = dtype

    def _spec(self):
        return ModelSpec(
            "tcn",
            n_layers=self.n_layers,
            n_filters=self.n_filters,
            kernel_size=self.kernel_size,
            dropout=self.dropout,
            activation=self.activation,
            window=self.window,
            gap_window=self.gap_window,
        )


_ESTIMATORS = {"rnn": RNNPredictor, "lstm": LSTMPredictor, "gru": GRUPredictor, "tcn": TCNPredictor}


def make_estimator(spec, train_config=None):
    """Unfitted estimator for ``spec`` configured from ``train_config``."""
    cfg = TrainConfig() if train_config is None else train_config
    if spec.kind == "arima":
        return ArimaPredictor(order=spec.arima_order)
    common = dict(
        window=spec.window,
        gap_window=spec.gap_window,
        learning_rate=cfg.learning_rate,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.eps,
        seed=cfg.seed,
        dtype=cfg.dtype,
    )
    if spec.kind == "tcn":
        return TCNPredictor(
            n_layers=spec.n_layers,
            n_filters=spec.n_filters,
            kernel_size=spec.kernel_size,
            dropout=spec.dropout,
            activation=spec.activation,
            **common,
        )
    return _ESTIMATORS[spec.kind](hidden_sizes=spec.hidden_sizes, **common)


@dataclass
class TrainedModel:
    spec: ModelSpec
    estimator: object
    loss_curve: list
    val_curve: list
    train_time: float
    infer_time: float = None
    n_params: int = 0
    size_bytes: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def params(self):
        return getattr(self.estimator, "params_", None)

    def predict(self, window, gaps=None):
        return predict(self, window, gaps)


def _gap_series(split):
    return [np.diff(s) for s in split.starts if len(s) >= 2]


def train(spec, train_config, dataset, time_inference=True):
    """Fit one predictor on ``dataset.train`` (validation on ``dataset.val``)."""
    if len(dataset.train.y_cls) == 0:
        raise ValueError("training split is empty")
    if spec.kind == "arima":
        est = ArimaPredictor(order=spec.arima_order)
        series = _gap_series(dataset.train)
        t0 = time.perf_counter()
        est.fit(series)
        elapsed = time.perf_counter() - t0
        model = TrainedModel(spec, est, [], [], elapsed, n_params=count_params(spec), size_bytes=model_size_bytes(spec))
    else:
        est = make_estimator(spec, train_config)
        tr, va = dataset.train, dataset.val
        est.fit(tr.X_cls, tr.y_cls, tr.X_reg, tr.y_reg, eval_set=(va.X_cls, va.y_cls, va.X_reg, va.y_reg))
        model = TrainedModel(
            spec, est, list(est.loss_curve_), list(est.validation_curve_), est.train_time_,
            n_params=est.n_params_, size_bytes=model_size_bytes(spec),
        )
    if time_inference:
        model.infer_time = measure_inference_time(model)
    return model


def predict(model, window, gaps=None):
    """``(activity score, next inter-arrival estimate)`` for one window.

    The estimate comes from ``gaps`` (past inter-arrival gaps) when given,
    otherwise from ``window`` itself.
    """
    est = model.estimator if isinstance(model, TrainedModel) else model
    window = np.asarray(window, dtype=float)
    if window.ndim != 1:
        raise ShapeError("predict takes a single 1-D window")
    if isinstance(est, ArimaPredictor):
        hist = window if gaps is None else np.asarray(gaps, float)
        return float("nan"), float(est.predict_interarrival(hist[None, :])[0])
    check_is_fitted(est, "params_")
    if len(window) != est.n_features_in_:
        raise ShapeError(f"window length {len(window)} != model window {est.n_features_in_}")
    score = float(est.predict_score(window[None, :])[0])
    hist = window if gaps is None else np.asarray(gaps, float)
    g_hat = est.network_.predict(est.params_, hist[None, :] / est.gap_scale_, head="reg")[0]
    return score, float(g_hat * est.gap_scale_)


def measure_inference_time(model, n_calls=1000, warmup=100, rng=0):
    """Median wall-clock seconds of a single-sample prediction."""
    est = model.estimator
    spec = model.spec
    gen = np.random.default_rng(rng)
    if isinstance(est, ArimaPredictor):
        G = gen.uniform(1.0, 10.0, size=(1, spec.gap_window))
        call = lambda: est.predict_interarrival(G)
    else:
        X = gen.integers(0, 2, size=(1, spec.window)).astype(float)
        call = lambda: est.predict_score(X)
    for _ in range(warmup):
        call()
    times = np.empty(n_calls)
    for i in range(n_calls):
        t0 = time.perf_counter()
        call()
        times[i] = time.perf_counter() - t0
    return float(np.median(times))
