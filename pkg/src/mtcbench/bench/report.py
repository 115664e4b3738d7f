"""Plot-ready tables rendered from an :class:`AggregateReport`.

``metrics.csv`` holds quality metrics, ``costs.csv`` the normalized cost
shares of the neural models (ARIMA's raw costs go to ``costs_arima.csv``),
``roc_<model>.csv`` the pooled ROC curves and ``sweep.csv`` complexity
sweeps.  Every file starts with a ``# seed=...`` comment line.
"""
import csv
import io
import math
from pathlib import Path

import numpy as np

from ..exceptions import ConfigurationError
from ..predictors.spec import NEURAL_KINDS
from .campaign import METRICS

COST_SHARE = ("norm_inference", "norm_training", "norm_size")
RAW_COSTS = ("infer_time", "train_time", "size_bytes")


def _num(v):
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def _header(agg):
    return f"# seed={agg.seed} traffic={agg.traffic} runs={agg.n_runs}/{agg.n_configured}\n"


def _csv(rows, header, comment):
    buf = io.StringIO()
    buf.write(comment)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def metrics_table(agg):
    header = ["model"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")] + ["n_runs"]
    rows = []
    for k in agg.models:
        row = [k]
        for m in METRICS:
            row += [_num(agg.mean[k][m]), _num(agg.std[k][m])]
        rows.append(row + [agg.n_runs])
    return _csv(rows, header, _header(agg))


def cost_shares(agg):
    """Mean per-run shares of the neural models, renormalized to sum to 1."""
    kinds = [k for k in agg.models if k in NEURAL_KINDS]
    shares = np.array([[agg.mean[k][c] for c in COST_SHARE] for k in kinds], dtype=float).reshape(len(kinds), 3)
    if len(kinds) >= 2 and np.all(np.isfinite(shares)):
        shares = shares / shares.sum(axis=0)
    return kinds, shares


def cost_table(agg):
    kinds, shares = cost_shares(agg)
    header = ["model", "inference", "training", "size"] + [f"{c}_mean" for c in RAW_COSTS]
    rows = []
    for k, row in zip(kinds, shares):
        rows.append([k] + [_num(v) for v in row] + [_num(agg.mean[k][c]) for c in RAW_COSTS])
    return _csv(rows, header, _header(agg))


def arima_cost_table(agg):
    header = ["model"] + [f"{c}_{s}" for c in RAW_COSTS for s in ("mean", "std")]
    rows = []
    for k in agg.models:
        if k in NEURAL_KINDS:
            continue
        row = [k]
        for c in RAW_COSTS:
            row += [_num(agg.mean[k][c]), _num(agg.std[k][c])]
        rows.append(row)
    return _csv(rows, header, _header(agg))


def roc_table(agg, kind):
    curve = agg.roc[kind]
    rows = [[_num(x), _num(y)] for x, y in zip(curve.fpr, curve.tpr)]
    return _csv(rows, ["fpr", "tpr"], _header(agg))


def sweep_table(rows, seed):
    out = [[k, c, m, _num(mu), _num(sd)] for k, c, m, mu, sd in rows]
    return _csv(out, ["kind", "C", "metric", "mean", "std"], f"# seed={seed}\n")


def summary_text(agg):
    lines = [f"traffic model: {agg.traffic}", f"master seed: {agg.seed}",
             f"successful runs: {agg.n_runs} of {agg.n_configured}"]
    for run, err in agg.failed:
        lines.append(f"  run {run} failed: {err}")
    lines.append("")
    lines.append("model   " + "".join(f"{m:>18}" for m in METRICS))
    for k in agg.models:
        cells = "".join(f"{agg.mean[k][m]:>10.4f} +-{agg.std[k][m]:.4f}" for m in METRICS)
        lines.append(f"{k:<8}{cells}")
    kinds, shares = cost_shares(agg)
    if kinds:
        lines.append("")
        lines.append("normalized costs (neural models)   inference  training      size")
        for k, row in zip(kinds, shares):
            lines.append(f"  {k:<32}" + "".join(f"{v:>10.3f}" for v in row))
    others = [k for k in agg.models if k not in NEURAL_KINDS]
    for k in others:
        m = agg.mean[k]
        lines.append(f"{k} raw costs: inference {m['infer_time']:.3g} s/sample, "
                     f"training {m['train_time']:.3g} s, size {m['size_bytes']:.0f} bytes")
    return "\n".join(lines) + "\n"


def render(agg, sweep_rows=None):
    """``{file name: text}`` for an aggregate; pure, so re-rendering is identical."""
    if not agg.models:
        raise ConfigurationError("report needs at least one model")
    files = {"metrics.csv": metrics_table(agg), "costs.csv": cost_table(agg),
             "costs_arima.csv": arima_cost_table(agg), "summary.txt": summary_text(agg)}
    for k in agg.models:
        if k in agg.roc:
            files[f"roc_{k}.csv"] = roc_table(agg, k)
    if sweep_rows is not None:
        files["sweep.csv"] = sweep_table(sweep_rows, agg.seed)
    return files


def write_report(agg, out_dir, sweep_rows=None):
    """Write every table into ``out_dir``; returns the written paths."""
    files = render(agg, sweep_rows)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in files.items():
        p = out / name
        p.write_text(text)
        paths.append(p)
    return paths


def write_sweep(rows, path, seed):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(sweep_table(rows, seed))
    return Path(path)
