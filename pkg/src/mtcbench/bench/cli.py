"""``mtcbench`` command line: generate, train, evaluate, campaign, sweep, report.

Exit status is 0 on success, 1 when a campaign fails, 2 on configuration
errors.
"""
import argparse
import logging
import sys
from pathlib import Path

from .. import __version__
from .._random import derive_int_seed, derive_rng
from ..eval import EvalReport, evaluate, roc
from ..exceptions import CampaignError, ConfigurationError, MTCBenchError
from ..geometry import deploy, write_deployment
from ..predictors.estimators import measure_inference_time, train
from ..predictors.serialize import load_model, save_model, write_loss_curve
from ..traffic import make_dataset, read_trace, write_dataset_metadata, write_trace
from . import config as config_mod
from .campaign import _trace, aggregate_runs, run_campaign, sweep_complexity
from .config import PROFILES, load_config
from .report import write_report, write_sweep

log = logging.getLogger("mtcbench")

MODEL_SUFFIX = ".mtcm"


def _common(p):
    p.add_argument("--config", help="experiment config file (INI sections, see below)")
    p.add_argument("--seed", type=int, help="master seed, unsigned 64-bit")
    p.add_argument("--out", help="output directory")
    p.add_argument("--profile", choices=tuple(PROFILES), default="desk", help="default scale (default: desk)")
    p.add_argument("--workers", type=int, help="parallel Monte Carlo runs")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    epilog = "config file format:\n" + config_mod.__doc__.split("Sections and keys::", 1)[1]
    parser = argparse.ArgumentParser(
        prog="mtcbench", description="Traffic prediction benchmark for machine-type devices.",
        epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="draw one deployment and trace, write them with dataset metadata",
                       epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    _common(p)
    p.add_argument("--run", type=int, default=0, help="Monte Carlo run index to reproduce (default 0)")

    p = sub.add_parser("train", help="train the configured models on one trace",
                       epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    _common(p)
    p.add_argument("--run", type=int, default=0)
    p.add_argument("--trace", help="trace file to use instead of generating one")

    p = sub.add_parser("evaluate", help="evaluate saved models on the test split",
                       epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    _common(p)
    p.add_argument("--run", type=int, default=0)
    p.add_argument("--trace", help="trace file to use instead of generating one")
    p.add_argument("--models", help="directory of saved models (default: <out>/models)")

    p = sub.add_parser("campaign", help="Monte Carlo campaign with aggregated report",
                       epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    _common(p)

    p = sub.add_parser("sweep", help="campaigns across complexity values",
                       epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    _common(p)
    p.add_argument("--c", dest="c_values", help="comma-separated complexity values (overrides sweep=)")
    p.add_argument("--kinds", help="comma-separated model kinds (default: neural models of the config)")

    p = sub.add_parser("report", help="re-aggregate run files of a campaign directory and render tables",
                       epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    _common(p)
    return parser


def _config(args):
    overrides = {"seed": args.seed, "out": args.out, "workers": args.workers}
    return load_config(args.config, profile=args.profile, overrides=overrides)


def _dataset(config, run, trace_path=None):
    seed = derive_int_seed(config.seed, "run", run)
    if trace_path:
        trace = read_trace(trace_path)
        dep = None
    else:
        dep = deploy(config.deployment, rng=derive_rng(seed, "deployment"), seed=seed)
        trace = _trace(config, derive_rng(seed, "traffic"), seed)
    ds = make_dataset(trace, config.window, config.split, gap_window=config.gap_window,
                      max_samples=config.max_samples, rng=derive_rng(seed, "dataset"), seed=seed)
    ds.audit()
    return seed, dep, trace, ds


def cmd_generate(args, config):
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    _, dep, trace, ds = _dataset(config, args.run)
    write_deployment(dep, out / "deployment.csv")
    write_trace(trace, out / "trace.csv")
    write_dataset_metadata(ds, out / "dataset.meta")
    print(f"wrote {trace.n_activations} activations of {trace.n_devices} devices to {out / 'trace.csv'}")


def cmd_train(args, config):
    out = Path(config.out) / "models"
    out.mkdir(parents=True, exist_ok=True)
    seed, _, _, ds = _dataset(config, args.run, args.trace)
    for i, spec in enumerate(config.models):
        tc = config.train.__class__(**{**config.train.__dict__, "seed": derive_int_seed(seed, "train", i)})
        model = train(spec, tc, ds, time_inference=False)
        save_model(model, out / f"{spec.kind}{MODEL_SUFFIX}")
        if model.loss_curve:
            write_loss_curve(model, out / f"{spec.kind}_loss.csv")
        print(f"{spec.kind}: trained in {model.train_time:.2f} s, {model.n_params} parameters")


def cmd_evaluate(args, config):
    out = Path(config.out)
    model_dir = Path(args.models) if args.models else out / "models"
    seed, _, _, ds = _dataset(config, args.run, args.trace)
    paths = sorted(model_dir.glob(f"*{MODEL_SUFFIX}"))
    if not paths:
        raise ConfigurationError(f"no saved models in {model_dir}")
    rows = [EvalReport.csv_header()]
    for path in paths:
        model = load_model(path)
        if config.time_inference:
            model.infer_time = measure_inference_time(model, n_calls=config.inference_calls,
                                                      warmup=min(100, config.inference_calls))
        rep, scores, labels = evaluate(model, ds.test, return_scores=True)
        kind = model.spec.kind
        (out / f"eval_{kind}.txt").write_text(f"# seed={seed}\n" + rep.to_record())
        rows.append(rep.csv_row())
        try:
            roc(scores, labels).to_csv(out / f"roc_{kind}.csv", header_comment=f"seed={seed}")
        except MTCBenchError:
            pass
        print(f"{kind}: accuracy {rep.accuracy:.4f} tpr {rep.tpr:.4f} tnr {rep.tnr:.4f} R {rep.r_metric:.4f}")
    (out / "eval.csv").write_text(f"# seed={seed}\n" + "\n".join(rows) + "\n")


def cmd_campaign(args, config):
    agg = run_campaign(config)
    write_report(agg, config.out)
    print((Path(config.out) / "summary.txt").read_text(), end="")


def cmd_sweep(args, config):
    c_values = config.sweep
    if args.c_values:
        c_values = tuple(int(v) for v in args.c_values.split(",") if v.strip())
    kinds = tuple(k.strip() for k in args.kinds.split(",")) if args.kinds else None
    rows, errors = sweep_complexity(config, c_values, kinds=kinds)
    path = write_sweep(rows, Path(config.out) / "sweep.csv", config.seed)
    for (kind, c), msg in errors.items():
        print(f"{kind} at C={c} skipped: {msg}", file=sys.stderr)
    print(f"wrote {len(rows)} rows to {path}")


def cmd_report(args, config):
    out = Path(config.out)
    stored = out / "config.ini"
    if args.config is None and stored.exists():
        config = load_config(stored, profile=args.profile, overrides={"seed": args.seed, "out": args.out})
    agg = aggregate_runs(out, config)
    if agg.n_runs == 0:
        raise CampaignError(f"no successful runs under {out}")
    write_report(agg, out)
    print((out / "summary.txt").read_text(), end="")


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "campaign": cmd_campaign,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _config(args)
        COMMANDS[args.command](args, config)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except CampaignError as exc:
        print(f"campaign failed: {exc}", file=sys.stderr)
        return 1
    except (MTCBenchError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
