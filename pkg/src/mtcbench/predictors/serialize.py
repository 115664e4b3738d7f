"""Binary model files and loss-curve CSVs.

A model file is ``MAGIC``, a little-endian ``uint32`` format version, a
``uint32`` byte length followed by a UTF-8 ``key=value`` text block holding
the architecture and fitted scalars, a ``uint64`` value count, and the flat
parameter vector as little-endian float64.
"""
import csv
import struct

import numpy as np

from ..exceptions import ConfigurationError
from .arima import ArimaModel, ArimaPredictor
from .estimators import TrainedModel, make_estimator
from .network import Network
from .optim import TrainConfig
from .params import ModelParams
from .spec import ModelSpec, count_params, model_size_bytes

MAGIC = b"MTCBMDL\x00"
FORMAT_VERSION = 1

_TUPLE_KEYS = ("hidden_sizes", "arima_order")
_INT_KEYS = ("n_layers", "n_filters", "kernel_size", "window", "gap_window", "input_dim")


def _spec_fields(spec):
    return {
        "kind": spec.kind,
        "hidden_sizes": ",".join(map(str, spec.hidden_sizes)),
        "n_layers": spec.n_layers,
        "n_filters": spec.n_filters,
        "kernel_size": spec.kernel_size,
        "dropout": repr(float(spec.dropout)),
        "activation": spec.activation,
        "window": spec.window,
        "gap_window": spec.gap_window,
        "input_dim": spec.input_dim,
        "arima_order": ",".join(map(str, spec.arima_order)),
    }


def _parse_spec(meta):
    kw = {"kind": meta["kind"], "activation": meta["activation"], "dropout": float(meta["dropout"])}
    for key in _TUPLE_KEYS:
        kw[key] = tuple(int(v) for v in meta[key].split(",") if v)
    for key in _INT_KEYS:
        kw[key] = int(meta[key])
    return ModelSpec(**kw)


def _estimator_of(model):
    return model.estimator if isinstance(model, TrainedModel) else model


def save_model(model, path):
    """Write a fitted predictor (or :class:`TrainedModel`) to ``path``."""
    est = _estimator_of(model)
    if isinstance(est, ArimaPredictor):
        m = est.model_
        spec = model.spec if isinstance(model, TrainedModel) else ModelSpec("arima", arima_order=m.order)
        meta = _spec_fields(spec)
        meta.update(fitted_order=",".join(map(str, m.order)), sigma2=repr(m.sigma2), n_obs=m.n_obs,
                    mean_gap=repr(est.mean_gap_), smoothing=est.smoothing, horizon=est.horizon,
                    history_len=len(m.history))
        vector = np.r_[m.const, m.ar, m.ma, m.history]
    else:
        if not hasattr(est, "params_"):
            raise ConfigurationError("model is not fitted")
        meta = _spec_fields(est.spec_)
        meta.update(gap_scale=repr(est.gap_scale_), dtype=str(np.dtype(est.dtype)))
        vector = np.asarray(est.params_.vector, dtype=np.float64)
    text = "\n".join(f"{k}={v}" for k, v in meta.items()).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(text)))
        fh.write(text)
        fh.write(struct.pack("<Q", len(vector)))
        fh.write(vector.astype("<f8").tobytes())


def load_model(path):
    """Read a model file back into a fitted :class:`TrainedModel`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise ConfigurationError(f"{path}: not a model file")
    off = len(MAGIC)
    version, n_text = struct.unpack_from("<II", blob, off)
    if version != FORMAT_VERSION:
        raise ConfigurationError(f"{path}: unsupported format version {version}")
    off += 8
    text = blob[off:off + n_text].decode("utf-8")
    off += n_text
    (count,) = struct.unpack_from("<Q", blob, off)
    off += 8
    vector = np.frombuffer(blob, dtype="<f8", count=count, offset=off).astype(np.float64)
    meta = dict(line.split("=", 1) for line in text.splitlines() if line)
    spec = _parse_spec(meta)

    if spec.kind == "arima":
        p, d, q = (int(v) for v in meta["fitted_order"].split(","))
        n_hist = int(meta["history_len"])
        arima = ArimaModel((p, d, q), float(vector[0]), vector[1:1 + p].copy(), vector[1 + p:1 + p + q].copy(),
                           float(meta["sigma2"]), int(meta["n_obs"]), vector[1 + p + q:1 + p + q + n_hist].copy())
        est = ArimaPredictor(order=spec.arima_order, smoothing=int(meta["smoothing"]), horizon=int(meta["horizon"]))
        est.model_, est.order_, est.mean_gap_ = arima, arima.order, float(meta["mean_gap"])
        return TrainedModel(spec, est, [], [], 0.0, n_params=count_params(spec), size_bytes=model_size_bytes(spec))

    dtype = meta["dtype"]
    est = make_estimator(spec, TrainConfig(dtype=dtype))
    net = Network(spec, dtype=dtype)
    params = ModelParams(net.manifest, vector, dtype=dtype)
    est.spec_, est.network_, est.params_ = spec, net, params
    est.classes_ = np.array([0, 1])
    est.n_features_in_ = spec.window
    est.gap_scale_ = float(meta["gap_scale"])
    est.n_params_ = params.count
    return TrainedModel(spec, est, [], [], 0.0, n_params=params.count, size_bytes=model_size_bytes(spec))


def write_loss_curve(model, path):
    """CSV with header ``epoch,train_loss,val_loss``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for i, (tr, va) in enumerate(zip(model.loss_curve, model.val_curve), start=1):
            w.writerow([i, repr(float(tr)), repr(float(va))])


def read_loss_curve(path):
    """``(train_losses, val_losses)`` arrays from a loss-curve CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return (np.array([float(r["train_loss"]) for r in rows]),
            np.array([float(r["val_loss"]) for r in rows]))
