"""Backbone + two scalar heads, the joint RMSE loss, and its exact gradient.

The classification head emits ``sigmoid(w_c . h + b_c)``; the regression
head emits ``softplus(w_r . h + b_r)``.  ``h`` is the backbone feature at
the last time step.  The loss is the sum of the two heads' RMSEs over
their respective samples.
"""
from dataclasses import dataclass

import numpy as np

from ..exceptions import NumericalError, ShapeError
from .layers import RECURRENT_PASSES, sigmoid, softplus, tcn_backward, tcn_forward
from .params import ModelParams
from .spec import RECURRENT_KINDS, manifest


@dataclass
class Batch:
    """Classification windows ``Xc -> yc`` and regression windows ``Xr -> yr``.

    Either half may be empty.  Windows are ``(n, length)`` arrays.
    """

    Xc: np.ndarray
    yc: np.ndarray
    Xr: np.ndarray = None
    yr: np.ndarray = None

    def __post_init__(self):
        if self.Xr is None:
            self.Xr = np.empty((0, 1))
            self.yr = np.empty(0)


def _check_finite(a, layer):
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"non-finite values in {layer}", layer=layer)


def _rmse_grad(pred, target, scale=None):
    """RMSE and its gradient w.r.t. ``pred``; the gradient is 0 at an exact fit.

    With ``scale`` the gradient is ``err / (n * scale)``: the minibatch
    estimate of the gradient of an RMSE whose value is ``scale``.
    """
    err = pred - target
    mse = float(np.mean(err**2))
    rmse = np.sqrt(mse)
    denom = rmse if scale is None else float(scale)
    if denom == 0.0:
        return rmse, np.zeros_like(pred)
    return rmse, err / (len(err) * denom)


class Network:
    """Stateless forward/backward machinery for one :class:`ModelSpec`."""

    def __init__(self, spec, dtype=np.float64):
        if spec.kind not in RECURRENT_KINDS + ("tcn",):
            raise ShapeError(f"{spec.kind!r} is not a neural architecture")
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.manifest = manifest(spec)

    # -- parameters --------------------------------------------------------

    def init_params(self, rng):
        """Weights uniform in +-1/sqrt(fan_in), conv kernels He-uniform; biases zero."""
        params = ModelParams(self.manifest, dtype=self.dtype)
        for name, view in params.views().items():
            tensor = name.split(".")[1]
            if tensor == "b":
                continue
            if tensor == "K":
                # conv kernels see kernel * in_channels inputs per output
                bound = np.sqrt(6.0 / (view.shape[0] * view.shape[1]))
            else:
                bound = 1.0 / np.sqrt(view.shape[0])
            view[...] = rng.uniform(-bound, bound, size=view.shape)
        return params

    def _layers(self, views, grads=None):
        spec = self.spec
        src = views if grads is None else grads
        if spec.kind == "tcn":
            return [(src[f"c{i}.K"], src[f"c{i}.b"]) for i in range(spec.n_layers)]
        return [
            {"Wx": src[f"l{i}.Wx"], "Wh": src[f"l{i}.Wh"], "b": src[f"l{i}.b"]}
            for i in range(len(spec.hidden_sizes))
        ]

    # -- forward / backward ------------------------------------------------

    def _as_sequences(self, X):
        X = np.asarray(X, dtype=self.dtype)
        if X.ndim == 2:
            X = X[:, :, None]
        if X.ndim != 3 or X.shape[2] != self.spec.input_dim:
            raise ShapeError(f"expected (n, time) or (n, time, {self.spec.input_dim}) windows, got {X.shape}")
        if X.shape[1] < 1:
            raise ShapeError("empty input window")
        return X

    def features(self, views, X, train=False, rng=None):
        """Backbone feature at the last time step; returns ``(feat, cache)``."""
        X = self._as_sequences(X)
        spec = self.spec
        if spec.kind == "tcn":
            mode = "train" if train else "infer"
            out, cache = tcn_forward(X, self._layers(views), mode, spec.dropout, spec.activation, rng, return_cache=True)
            _check_finite(out, "tcn")
            return out[:, -1], ("tcn", out.shape, cache)
        fwd, _ = RECURRENT_PASSES[spec.kind]
        caches = []
        h = X
        for i, p in enumerate(self._layers(views)):
            h, cache = fwd(h, p)
            _check_finite(h, f"{spec.kind} layer {i}")
            caches.append(cache)
        return h[:, -1], ("rnn", h.shape, caches)

    def features_backward(self, dfeat, cache, grad_views):
        kind, shape, inner = cache
        dOut = np.zeros(shape, dtype=self.dtype)
        dOut[:, -1] = dfeat
        if kind == "tcn":
            _, layer_grads = tcn_backward(dOut, inner)
            for i, (dK, db) in enumerate(layer_grads):
                _check_finite(dK, f"tcn layer {i} gradient")
                grad_views[f"c{i}.K"] += dK
                grad_views[f"c{i}.b"] += db
            return
        _, bwd = RECURRENT_PASSES[self.spec.kind]
        d = dOut
        for i in range(len(inner) - 1, -1, -1):
            d, g = bwd(d, inner[i])
            for name, value in g.items():
                _check_finite(value, f"{self.spec.kind} layer {i} gradient")
                grad_views[f"l{i}.{name}"] += value

    def heads(self, views, feat):
        zc = feat @ views["cls.w"] + views["cls.b"][0]
        zr = feat @ views["reg.w"] + views["reg.b"][0]
        return zc, zr

    def predict(self, params, X, head="both"):
        """Head outputs for windows ``X``; sigmoid score and softplus estimate."""
        views = params.views()
        feat, _ = self.features(views, X, train=False)
        zc, zr = self.heads(views, feat)
        if head == "cls":
            return sigmoid(zc)
        if head == "reg":
            return softplus(zr)
        return sigmoid(zc), softplus(zr)

    def loss(self, params, batch, train=False, rng=None):
        return self.loss_and_grad(params, batch, train=train, rng=rng, need_grad=False)[0]

    def loss_and_grad(self, params, batch, train=True, rng=None, need_grad=True, rmse_scale=None,
                      return_parts=False):
        """Joint loss ``RMSE(score, yc) + RMSE(estimate, yr)`` and d loss / d params.

        The gradient is a flat vector aligned with ``params.vector``.  By
        default it is exact for this batch; ``rmse_scale`` maps ``"cls"`` and
        ``"reg"`` to RMSE values used in place of the batch's own.
        ``return_parts`` appends a dict of the per-head batch RMSEs.
        """
        views = params.views()
        grad = np.zeros_like(params.vector)
        gviews = params.views(grad)
        parts = [(name, X, y) for name, X, y in (("cls", batch.Xc, batch.yc), ("reg", batch.Xr, batch.yr))
                 if X is not None and len(y)]
        rmses = {}
        if not parts:
            return (0.0, grad, rmses) if return_parts else (0.0, grad)
        # one backbone pass when both window families share a length
        if len(parts) == 2 and np.shape(parts[0][1])[1] == np.shape(parts[1][1])[1]:
            X_all = np.concatenate([np.asarray(parts[0][1], self.dtype), np.asarray(parts[1][1], self.dtype)])
            feat_all, cache = self.features(views, X_all, train=train, rng=rng)
            n0 = len(parts[0][2])
            passes = [(cache, [(parts[0], slice(0, n0)), (parts[1], slice(n0, None))], feat_all)]
        else:
            passes = []
            for part in parts:
                feat, cache = self.features(views, part[1], train=train, rng=rng)
                passes.append((cache, [(part, slice(None))], feat))

        total = 0.0
        for cache, members, feat_all in passes:
            dfeat = np.zeros_like(feat_all)
            for (part, _, y), rows in members:
                feat = feat_all[rows]
                w, b = views[f"{part}.w"], views[f"{part}.b"][0]
                z = feat @ w + b
                y = np.asarray(y, dtype=self.dtype)
                out = sigmoid(z) if part == "cls" else softplus(z)
                scale = None if rmse_scale is None else rmse_scale.get(part)
                rmse, dout = _rmse_grad(out, y, scale)
                if not np.isfinite(rmse):
                    raise NumericalError(f"non-finite loss in {part} head", layer=f"{part} head")
                total += rmse
                rmses[part] = rmse
                if not need_grad:
                    continue
                # d sigmoid = s(1-s); d softplus = sigmoid(z)
                dz = dout * out * (1.0 - out) if part == "cls" else dout * sigmoid(z)
                gviews[f"{part}.w"] += feat.T @ dz
                gviews[f"{part}.b"] += dz.sum()
                dfeat[rows] = np.outer(dz, w)
            if need_grad:
                self.features_backward(dfeat, cache, gviews)
        if return_parts:
            return total, grad, rmses
        return total, grad
