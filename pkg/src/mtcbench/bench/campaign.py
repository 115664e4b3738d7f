"""Monte Carlo campaigns: one run is deploy -> trace -> dataset -> train -> evaluate.

Every run derives its own seed from the master seed and writes its own
files, so runs are independent of each other and of the worker count.
Aggregates are always recomputed from the run files on disk.
"""
import json
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .._random import derive_int_seed, derive_rng
from ..eval import EvalReport, cost_report, evaluate, roc
from ..exceptions import CampaignError, ConfigurationError, MeasurementError, MTCBenchError
from ..geometry import deploy, write_deployment
from ..predictors.estimators import measure_inference_time, train
from ..predictors.spec import NEURAL_KINDS, complexity_budget
from ..traffic import gen_poisson_trace, gen_quasiperiodic_trace, make_dataset, write_dataset_metadata, write_trace
from .config import format_config

log = logging.getLogger(__name__)

FAILURE_BUDGET = 0.20
METRICS = EvalReport.QUALITY
COSTS = EvalReport.COSTS
RUN_DIR = "runs"


@dataclass
class RunResult:
    run: int
    seed: int
    reports: dict  # kind -> EvalReport
    status: str = "ok"
    error: str = ""
    n_deployed: int = 0

    def to_json(self):
        return {
            "run": self.run,
            "seed": self.seed,
            "status": self.status,
            "error": self.error,
            "n_deployed": self.n_deployed,
            "reports": {k: _jsonable(r.to_dict()) for k, r in self.reports.items()},
        }

    @classmethod
    def from_json(cls, d):
        reports = {}
        for k, r in d.get("reports", {}).items():
            r = {key: (math.nan if v is None else v) for key, v in r.items()}
            reports[k] = EvalReport.from_dict(r)
        return cls(d["run"], d["seed"], reports, d.get("status", "ok"), d.get("error", ""), d.get("n_deployed", 0))


def _jsonable(d):
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


@dataclass
class AggregateReport:
    """Per-model mean and population std of every metric over the successful runs."""

    traffic: str
    seed: int
    models: tuple
    n_configured: int
    runs: tuple
    failed: tuple
    mean: dict
    std: dict
    roc: dict = field(default_factory=dict)

    @property
    def n_runs(self):
        return len(self.runs)


def _run_paths(out_dir, run):
    base = Path(out_dir) / RUN_DIR
    return base / f"run_{run:04d}.json", base / f"run_{run:04d}_scores.csv"


def _trace(config, rng, seed):
    if config.traffic == "quasi":
        return gen_quasiperiodic_trace(config.quasi, rng=rng, seed=seed)
    return gen_poisson_trace(config.poisson, rng=rng, seed=seed)


def _n_devices(config):
    return config.traffic_config.n_devices


def run_once(config, run, out_dir=None, keep_artifacts=False):
    """Execute Monte Carlo run ``run`` and write its record (if ``out_dir``)."""
    seed = derive_int_seed(config.seed, "run", run)
    dep = deploy(config.deployment, rng=derive_rng(seed, "deployment"), seed=seed)
    if dep.n_devices < _n_devices(config):
        raise ConfigurationError(
            f"deployment holds {dep.n_devices} devices, traffic needs {_n_devices(config)}"
        )
    trace = _trace(config, derive_rng(seed, "traffic"), seed)
    dataset = make_dataset(
        trace, config.window, config.split, gap_window=config.gap_window,
        max_samples=config.max_samples, rng=derive_rng(seed, "dataset"), seed=seed,
    )
    dataset.audit()
    reports, scores = {}, {}
    models = {}
    for i, spec in enumerate(config.models):
        tc = config.train.__class__(**{**config.train.__dict__, "seed": derive_int_seed(seed, "train", i)})
        model = train(spec, tc, dataset, time_inference=False)
        if config.time_inference:
            model.infer_time = measure_inference_time(model, n_calls=config.inference_calls,
                                                      warmup=min(100, config.inference_calls))
        rep, s, labels = evaluate(model, dataset.test, return_scores=True)
        reports[spec.kind], scores[spec.kind], models[spec.kind] = rep, s, model
    _normalize_costs(reports, models)
    result = RunResult(run, seed, reports, n_deployed=dep.n_devices)
    if out_dir is not None:
        _write_run(out_dir, result, labels, scores)
        if keep_artifacts:
            art = Path(out_dir) / RUN_DIR / f"run_{run:04d}"
            art.mkdir(parents=True, exist_ok=True)
            write_deployment(dep, art / "deployment.csv")
            write_trace(trace, art / "trace.csv")
            write_dataset_metadata(dataset, art / "dataset.meta")
    return result


def _normalize_costs(reports, models):
    """Normalized cost shares over the neural models of one run."""
    neural = {k: m for k, m in models.items() if k in NEURAL_KINDS}
    if len(neural) < 2:
        return
    try:
        cr = cost_report(neural)
    except MeasurementError:
        return
    for name, row in zip(cr.names, cr.normalized):
        rep = reports[name]
        rep.norm_inference, rep.norm_training, rep.norm_size = (float(v) for v in row)


def _write_run(out_dir, result, labels, scores):
    jpath, spath = _run_paths(out_dir, result.run)
    jpath.parent.mkdir(parents=True, exist_ok=True)
    jpath.write_text(json.dumps(result.to_json(), indent=1, sort_keys=True) + "\n")
    kinds = list(scores)
    lines = [f"# seed={result.seed} run={result.run}", ",".join(["label"] + kinds)]
    cols = [np.asarray(labels).astype(int)] + [np.asarray(scores[k], dtype=float) for k in kinds]
    for row in zip(*cols):
        lines.append(",".join([str(row[0])] + [repr(float(v)) for v in row[1:]]))
    spath.write_text("\n".join(lines) + "\n")


def _write_failure(out_dir, run, seed, exc):
    jpath, spath = _run_paths(out_dir, run)
    jpath.parent.mkdir(parents=True, exist_ok=True)
    rec = RunResult(run, seed, {}, status="failed", error=f"{type(exc).__name__}: {exc}")
    jpath.write_text(json.dumps(rec.to_json(), indent=1, sort_keys=True) + "\n")
    if spath.exists():
        spath.unlink()
    return rec


def _guarded_run(config, run, out_dir):
    try:
        run_once(config, run, out_dir)
        return run, None
    except (MTCBenchError, ValueError, ArithmeticError) as exc:
        log.warning("run %d failed: %s", run, exc)
        log.debug("%s", traceback.format_exc())
        _write_failure(out_dir, run, derive_int_seed(config.seed, "run", run), exc)
        return run, exc


def read_runs(out_dir):
    """All run records under ``out_dir``, ordered by run index."""
    base = Path(out_dir) / RUN_DIR
    records = []
    for p in sorted(base.glob("run_*.json")):
        records.append(RunResult.from_json(json.loads(p.read_text())))
    return sorted(records, key=lambda r: r.run)


def _read_scores(out_dir, run):
    _, spath = _run_paths(out_dir, run)
    if not spath.exists():
        return None
    with open(spath) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]).reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def aggregate_runs(out_dir, config):
    """Reduce the run files of a campaign to an :class:`AggregateReport`."""
    records = [r for r in read_runs(out_dir) if r.run < config.runs]
    ok = [r for r in records if r.status == "ok"]
    failed = tuple((r.run, r.error) for r in records if r.status != "ok")
    kinds = config.model_kinds
    mean, std = {}, {}
    for k in kinds:
        mean[k], std[k] = {}, {}
        for metric in METRICS + COSTS:
            vals = np.array([getattr(r.reports[k], metric) for r in ok if k in r.reports], dtype=float)
            vals = vals[np.isfinite(vals)]
            mean[k][metric] = float(np.mean(vals)) if len(vals) else math.nan
            std[k][metric] = float(np.std(vals)) if len(vals) else math.nan
    curves = {}
    pooled = {k: ([], []) for k in kinds}
    for r in ok:
        s = _read_scores(out_dir, r.run)
        if s is None:
            continue
        for k in kinds:
            if k in s:
                pooled[k][0].append(s[k])
                pooled[k][1].append(s["label"])
    for k, (sc, lab) in pooled.items():
        if not sc:
            continue
        try:
            curves[k] = roc(np.concatenate(sc), np.concatenate(lab).astype(int))
        except MTCBenchError:
            pass
    return AggregateReport(config.traffic, config.seed, kinds, config.runs,
                           tuple(r.run for r in ok), failed, mean, std, curves)


def run_campaign(config, out_dir=None, workers=None):
    """Run every Monte Carlo run of ``config`` and aggregate.

    A failing run is recorded and skipped; more than 20% failures raise
    :class:`CampaignError` after all runs finished.
    """
    out_dir = Path(config.out if out_dir is None else out_dir)
    workers = config.workers if workers is None else int(workers)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / RUN_DIR).mkdir(exist_ok=True)
        (out_dir / "config.ini").write_text(format_config(config))
    except OSError as exc:
        raise ConfigurationError(f"output directory {out_dir} is not writable: {exc}") from exc
    # stale records of a previous, larger campaign must not leak in
    for p in (out_dir / RUN_DIR).glob("run_*"):
        if p.is_file():
            p.unlink()

    runs = range(config.runs)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_guarded_run, [config] * len(runs), runs, [out_dir] * len(runs)))
    else:
        outcomes = [_guarded_run(config, i, out_dir) for i in runs]
    n_failed = sum(exc is not None for _, exc in outcomes)
    if n_failed > FAILURE_BUDGET * config.runs:
        raise CampaignError(f"{n_failed} of {config.runs} runs failed (budget {FAILURE_BUDGET:.0%})")
    return aggregate_runs(out_dir, config)


def sweep_complexity(config, c_values, kinds=None, out_dir=None):
    """One campaign per (kind, C) at matched complexity.

    Returns ``(rows, errors)``: ``rows`` are ``(kind, C, metric, mean, std)``
    in kind, C, metric order with NaN for failed pairs; ``errors`` maps
    failed pairs to their messages.
    """
    out_dir = Path(config.out if out_dir is None else out_dir)
    if kinds is None:
        kinds = tuple(k for k in config.model_kinds if k in NEURAL_KINDS)
    base_specs = {m.kind: m for m in config.models}
    rows, errors, specs = [], {}, {}
    for kind in kinds:
        for c in c_values:
            try:
                spec = complexity_budget(c, kind, hidden_layers=config.sweep_layers, base=base_specs.get(kind))
                specs[(kind, c)] = spec
                sub = config.with_(models=(spec,))
                agg = run_campaign(sub, out_dir / "sweep" / f"{kind}_C{c}")
                for metric in METRICS:
                    rows.append((kind, int(c), metric, agg.mean[kind][metric], agg.std[kind][metric]))
            except (MTCBenchError, ValueError) as exc:
                errors[(kind, c)] = str(exc)
                for metric in METRICS:
                    rows.append((kind, int(c), metric, math.nan, math.nan))
    return rows, errors
