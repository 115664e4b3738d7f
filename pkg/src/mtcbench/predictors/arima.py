"""ARIMA(p, d, q) fitted by conditional least squares.

Several independent series (one per device) can be pooled: they share the
coefficients while each keeps its own history.  Residuals start at zero
before the first usable observation of every series, and the MA recursion is
evaluated as an IIR filter.
"""
import itertools
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize, signal
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..exceptions import ConfigurationError


@dataclass(frozen=True)
class ArimaModel:
    order: tuple
    const: float
    ar: np.ndarray
    ma: np.ndarray
    sigma2: float
    n_obs: int
    history: np.ndarray  # last observed series, used when forecasting without new data

    @property
    def n_params(self):
        return len(self.ar) + len(self.ma) + 1

    @property
    def aic(self):
        return self.n_obs * np.log(max(self.sigma2, 1e-300)) + 2 * self.n_params


def _as_series_list(series):
    if isinstance(series, np.ndarray) and series.ndim == 1:
        return [series.astype(float)]
    if isinstance(series, (list, tuple)) and series and np.ndim(series[0]) == 0:
        return [np.asarray(series, dtype=float)]
    return [np.asarray(s, dtype=float) for s in series]


def _residuals(w, const, ar, ma):
    p = len(ar)
    if len(w) <= p:
        return np.empty(0)
    u = w[p:] - const
    for i in range(p):
        u = u - ar[i] * w[p - 1 - i:len(w) - 1 - i]
    if len(ma):
        u = signal.lfilter([1.0], np.r_[1.0, ma], u)
    return u


def _pack(theta, p, q, with_const):
    const = theta[0] if with_const else 0.0
    off = 1 if with_const else 0
    return const, theta[off:off + p], theta[off + p:off + p + q]


def arima_fit(series, order=(2, 1, 2), include_constant=None):
    """Conditional least squares fit; ``series`` is one array or a list of arrays.

    ``include_constant`` defaults to True only for undifferenced models, so
    ``(0, 1, 0)`` is a pure random walk.
    """
    p, d, q = (int(v) for v in order)
    if min(p, d, q) < 0:
        raise ConfigurationError(f"invalid ARIMA order {order}")
    with_const = (d == 0) if include_constant is None else bool(include_constant)
    raw = _as_series_list(series)
    diffed = [np.diff(s, n=d) if d else s for s in raw]
    usable = sum(max(0, len(w) - p) for w in diffed)
    if usable <= q + 10:
        raise ConfigurationError(f"series too short for ARIMA{(p, d, q)}: need length > p+d+q+10")

    # AR-only least squares as the starting point
    rows, target = [], []
    for w in diffed:
        if len(w) <= p:
            continue
        cols = [w[p - 1 - i:len(w) - 1 - i] for i in range(p)]
        if with_const:
            cols = [np.ones(len(w) - p)] + cols
        rows.append(np.column_stack(cols) if cols else np.empty((len(w) - p, 0)))
        target.append(w[p:])
    A, b = np.vstack(rows), np.concatenate(target)
    theta0 = np.linalg.lstsq(A, b, rcond=None)[0] if A.shape[1] else np.empty(0)
    theta0 = np.r_[theta0, np.zeros(q)]

    def resid(theta):
        const, ar, ma = _pack(theta, p, q, with_const)
        return np.concatenate([_residuals(w, const, ar, ma) for w in diffed])

    if q > 0:
        lo = np.r_[np.full(len(theta0) - q, -np.inf), np.full(q, -0.999)]
        hi = np.r_[np.full(len(theta0) - q, np.inf), np.full(q, 0.999)]
        theta = optimize.least_squares(resid, theta0, bounds=(lo, hi), method="trf").x
    else:
        theta = theta0
    const, ar, ma = _pack(theta, p, q, with_const)
    e = resid(theta)
    if p:
        roots = np.roots(np.r_[1.0, -ar][::-1]) if np.any(ar) else np.array([np.inf])
        if np.any(np.abs(roots) <= 1.0):
            warnings.warn("fitted AR polynomial has roots on or inside the unit circle", RuntimeWarning, stacklevel=2)
    return ArimaModel((p, d, q), float(const), np.asarray(ar, float), np.asarray(ma, float),
                      float(np.mean(e**2)), len(e), raw[-1].copy())


def select_order(series, max_p=3, max_d=1, max_q=3):
    """Grid search over orders minimising the conditional AIC."""
    best = None
    for p, d, q in itertools.product(range(max_p + 1), range(max_d + 1), range(max_q + 1)):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                model = arima_fit(series, (p, d, q))
        except ConfigurationError:
            continue
        if best is None or model.aic < best.aic:
            best = model
    if best is None:
        raise ConfigurationError("no ARIMA order could be fitted")
    return best


def _one_step(model, X):
    """Next value for each row of ``X`` (histories in original units)."""
    p, d, q = model.order
    X = np.asarray(X, dtype=float)
    W = np.diff(X, n=d, axis=1) if d else X
    n, T = W.shape
    e = np.zeros((n, T))
    for t in range(p, T):
        pred = model.const + sum(model.ar[i] * W[:, t - 1 - i] for i in range(p))
        pred = pred + sum(model.ma[j] * e[:, t - 1 - j] for j in range(q) if t - 1 - j >= p)
        e[:, t] = W[:, t] - pred
    w_next = np.full(n, model.const)
    for i in range(p):
        if T - 1 - i >= 0:
            w_next += model.ar[i] * W[:, T - 1 - i]
    for j in range(q):
        if T - 1 - j >= p:
            w_next += model.ma[j] * e[:, T - 1 - j]
    # integrate back d times
    for level in range(d, 0, -1):
        base = np.diff(X, n=level - 1, axis=1)[:, -1] if level > 1 else X[:, -1]
        w_next = base + w_next
    return w_next


def arima_forecast(model, horizon=1, history=None):
    """Iterate the recurrence ``horizon`` steps past ``history`` (default: fitted series)."""
    hist = np.asarray(model.history if history is None else history, dtype=float)
    p, d, q = model.order
    if len(hist) < d + 1:
        raise ConfigurationError("history too short to forecast")
    out = []
    # the MA terms of future steps have zero expected innovation, so growing
    # the history with forecasts and re-running the one-step map is exact
    h = hist[None, :]
    for _ in range(int(horizon)):
        nxt = _one_step(model, h)
        out.append(nxt[0])
        h = np.concatenate([h, nxt[:, None]], axis=1)
    return np.array(out)


def _full_residuals(model, W):
    """Conditional residuals of a (differenced) series, zero before index p."""
    p = len(model.ar)
    e = np.zeros(len(W))
    e[p:] = _residuals(W, model.const, model.ar, model.ma)
    return e


def forecast_prefixes(model, series, ends, horizon):
    """Forecasts following each prefix ``series[:end]``, as an ``(len(ends), horizon)`` array.

    Matches ``arima_forecast(model, horizon, history=series[:end])`` row by
    row.  The residuals of a prefix are a prefix of the full series'
    residuals, so they are computed once and every path is iterated jointly.
    """
    p, d, q = model.order
    x = np.asarray(series, dtype=float)
    ends = np.asarray(ends, dtype=int)
    if np.any(ends < d + 1) or np.any(ends > len(x)):
        raise ConfigurationError("every prefix needs at least d+1 observations")
    levels = [np.diff(x, n=k) if k else x for k in range(d + 1)]
    W = levels[d]
    e = _full_residuals(model, W)
    m = ends - d  # prefix lengths at the differenced level

    def gather(arr, idx, min_idx):
        ok = (idx >= min_idx) & (idx >= 0)
        return np.where(ok, arr[np.clip(idx, 0, None)], 0.0)

    # lags, most recent first
    Wl = np.column_stack([gather(W, m - 1 - i, 0) for i in range(p)]) if p else np.zeros((len(m), 0))
    El = np.column_stack([gather(e, m - 1 - j, p) for j in range(q)]) if q else np.zeros((len(m), 0))
    last = [levels[k][ends - k - 1] for k in range(d)]
    out = np.empty((len(m), int(horizon)))
    for h in range(int(horizon)):
        w = model.const + Wl @ model.ar + El @ model.ma
        if p:
            Wl = np.column_stack([w, Wl[:, :-1]])
        if q:
            # future innovations have zero expectation
            El = np.column_stack([np.zeros(len(m)), El[:, :-1]])
        for k in range(d - 1, -1, -1):
            w = last[k] + w
            last[k] = w
        out[:, h] = w
    return out


class ArimaPredictor(RegressorMixin, BaseEstimator):
    """Inter-arrival baseline pooled over per-device gap series.

    ``fit`` takes the series directly.  ``predict_interarrival`` forecasts the
    gap that follows each row of a gap-window matrix, and
    ``predict_slot_scores`` turns forecast arrivals into per-slot scores with
    a triangular kernel of half-width ``smoothing + 1`` slots.
    """

    def __init__(self, order=(2, 1, 2), select=False, smoothing=1, horizon=64):
        self.order = order
        self.select = select
        self.smoothing = smoothing
        self.horizon = horizon

    def fit(self, series, y=None):
        if self.select:
            self.model_ = select_order(series)
        else:
            self.model_ = arima_fit(series, self.order)
        self.order_ = self.model_.order
        fallback = np.concatenate([np.asarray(s, float) for s in _as_series_list(series)])
        self.mean_gap_ = float(np.mean(fallback)) if fallback.size else 1.0
        return self

    def _min_history(self):
        return self.model_.order[1] + 1

    def predict_interarrival(self, G):
        check_is_fitted(self, "model_")
        G = check_array(G, ensure_min_features=self._min_history())
        return np.maximum(_one_step(self.model_, G), 1.0)

    def predict(self, G):
        return self.predict_interarrival(G)

    def arrivals_after(self, starts):
        """Forecast arrival slots following the last of ``starts``."""
        gaps = np.diff(starts)
        if len(gaps) < self._min_history():
            cum = np.arange(1, self.horizon + 1) * self.mean_gap_
        else:
            steps = np.maximum(arima_forecast(self.model_, self.horizon, history=gaps), 1.0)
            cum = np.cumsum(steps)
        return starts[-1] + cum

    def predict_slot_scores(self, starts_by_device, devices, slots):
        """Score in [0, 1] that ``devices[i]`` starts transmitting at ``slots[i]``.

        Only starts strictly before the queried slot are used.
        """
        check_is_fitted(self, "model_")
        devices = np.asarray(devices)
        slots = np.asarray(slots)
        scores = np.zeros(len(slots))
        width = self.smoothing + 1.0
        for dev in np.unique(devices):
            starts = np.asarray(starts_by_device[dev])
            sel = np.flatnonzero(devices == dev)
            # index of latest start before each slot
            k = np.searchsorted(starts, slots[sel], side="left") - 1
            states = np.unique(k[k >= 0])
            if not len(states):
                continue
            arrivals = self._arrival_paths(starts, states)
            rows = sel[k >= 0]
            paths = arrivals[np.searchsorted(states, k[k >= 0])]
            dist = np.min(np.abs(slots[rows, None] - paths), axis=1)
            scores[rows] = np.clip(1.0 - dist / width, 0.0, 1.0)
        return scores

    def _arrival_paths(self, starts, states):
        """``arrivals_after(starts[:s + 1])`` for every ``s`` in ``states``, stacked."""
        gaps = np.diff(starts)
        out = starts[states, None] + np.arange(1, self.horizon + 1) * self.mean_gap_
        long_enough = states >= self._min_history()
        if np.any(long_enough):
            st = states[long_enough]
            steps = np.maximum(forecast_prefixes(self.model_, gaps, st, self.horizon), 1.0)
            out[long_enough] = starts[st, None] + np.cumsum(steps, axis=1)
        return out
