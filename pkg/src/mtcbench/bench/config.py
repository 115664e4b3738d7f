"""Experiment configuration and its INI-style text format.

Values are resolved in the order: built-in defaults, the selected profile,
the config file, then explicit overrides (command-line flags).

Sections and keys::

    [experiment]  traffic (quasi|poisson), runs, seed, out, split, window,
                  gap_window, max_samples, models, sweep, sweep_layers,
                  time_inference, inference_calls, workers
    [train]       learning_rate, epochs, batch_size, beta1, beta2, eps, dtype
    [deployment]  lambda_m, lambda_e, region_radius
    [poisson]     lambda_t, q, n_devices, n_slots, rate_r
    [quasi]       t_min, t_max, jitter_fraction, activation_prob (p or lo,hi),
                  q, n_devices, n_slots, rate_r
    [rnn] [lstm] [gru]  hidden_sizes (comma list)
    [tcn]         n_layers, n_filters, kernel_size, dropout, activation
    [arima]       order (p,d,q)
"""
import configparser
import math
from dataclasses import dataclass, field, fields, replace

from ..exceptions import ConfigurationError
from ..geometry import DeploymentConfig
from ..predictors.optim import TrainConfig
from ..predictors.spec import ALL_KINDS, ModelSpec
from ..traffic import PoissonTrafficConfig, QuasiPeriodicConfig

TRAFFIC_MODELS = ("quasi", "poisson")
DEFAULT_MODELS = ("rnn", "lstm", "gru", "tcn", "arima")

# profile -> overrides of (experiment fields, train fields)
PROFILES = {
    "desk": dict(runs=10, max_samples=20_000, epochs=10, dtype="float32"),
    "paper": dict(runs=150, max_samples=98_000, epochs=50, dtype="float64"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines a campaign, apart from wall-clock costs."""

    traffic: str = "quasi"
    poisson: PoissonTrafficConfig = field(default_factory=PoissonTrafficConfig)
    quasi: QuasiPeriodicConfig = field(default_factory=QuasiPeriodicConfig)
    deployment: DeploymentConfig = field(default_factory=DeploymentConfig)
    models: tuple = tuple(ModelSpec(k) for k in DEFAULT_MODELS)
    sweep: tuple = ()
    sweep_layers: int = 1
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=10, dtype="float32"))
    runs: int = 10
    seed: int = 0
    out: str = "results"
    split: tuple = (0.70, 0.15, 0.15)
    window: int = 8
    gap_window: int = 8
    max_samples: int = 20_000
    time_inference: bool = True
    inference_calls: int = 1000
    workers: int = 1
    profile: str = "desk"

    def __post_init__(self):
        if self.traffic not in TRAFFIC_MODELS:
            raise ConfigurationError(f"traffic must be one of {TRAFFIC_MODELS}, got {self.traffic!r}")
        if self.runs < 1:
            raise ConfigurationError("runs must be >= 1")
        if len(self.split) != 3 or min(self.split) < 0 or not math.isclose(sum(self.split), 1.0, abs_tol=1e-9):
            raise ConfigurationError(f"split fractions must be three non-negative values summing to 1, got {self.split}")
        if not self.models:
            raise ConfigurationError("at least one model is required")
        kinds = [m.kind for m in self.models]
        if len(set(kinds)) != len(kinds):
            raise ConfigurationError("each model kind may appear once")
        for m in self.models:
            if not isinstance(m, ModelSpec):
                raise ConfigurationError(f"invalid model spec {m!r}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        if self.max_samples is not None and self.max_samples < 1:
            raise ConfigurationError("max_samples must be positive")
        if self.inference_calls < 1 or self.workers < 1:
            raise ConfigurationError("inference_calls and workers must be >= 1")
        if any(int(c) < 1 for c in self.sweep):
            raise ConfigurationError("sweep complexity values must be positive")

    @property
    def traffic_config(self):
        return self.quasi if self.traffic == "quasi" else self.poisson

    @property
    def model_kinds(self):
        return tuple(m.kind for m in self.models)

    def with_(self, **changes):
        return replace(self, **changes)


def _tuple(text, cast=int):
    return tuple(cast(v.strip()) for v in str(text).split(",") if v.strip())


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {text!r}")


def _coerce(value, like, key):
    if isinstance(like, bool):
        return _bool(value)
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        cast = float if like and isinstance(like[0], float) else int
        return _tuple(value, cast)
    if like is None and key in ("periods", "offsets"):
        return _tuple(value)
    return str(value).strip()


def _update(obj, section, name):
    """Copy of dataclass ``obj`` with keys from ``section`` applied."""
    known = {f.name: getattr(obj, f.name) for f in fields(obj)}
    changes = {}
    for key, value in section.items():
        if key not in known:
            raise ConfigurationError(f"unknown key {key!r} in [{name}]")
        if key == "activation_prob":
            vals = _tuple(value, float)
            changes[key] = vals[0] if len(vals) == 1 else vals
        else:
            changes[key] = _coerce(value, known[key], key)
    try:
        return replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"[{name}]: {exc}") from exc


def _model_specs(kinds, parser, window, gap_window):
    specs = []
    for kind in kinds:
        if kind not in ALL_KINDS:
            raise ConfigurationError(f"unknown model kind {kind!r}")
        spec = ModelSpec(kind, window=window, gap_window=gap_window)
        if parser.has_section(kind):
            sec = dict(parser.items(kind))
            if kind == "arima" and "order" in sec:
                sec["arima_order"] = sec.pop("order")
            spec = _update(spec, sec, kind)
        specs.append(spec)
    return tuple(specs)


def parse_config(text="", profile="desk", overrides=None):
    """Build an :class:`ExperimentConfig` from INI text, a profile and overrides."""
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown profile {profile!r}; choose from {tuple(PROFILES)}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text or "")
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse config: {exc}") from exc
    known = {"experiment", "train", "deployment", "poisson", "quasi"} | set(ALL_KINDS)
    for s in parser.sections():
        if s not in known:
            raise ConfigurationError(f"unknown section [{s}]")
    prof = PROFILES[profile]

    exp = dict(parser.items("experiment")) if parser.has_section("experiment") else {}
    exp.update({k: str(v) for k, v in (overrides or {}).items() if v is not None})
    base = ExperimentConfig()
    kw = {"profile": profile, "runs": prof["runs"], "max_samples": prof["max_samples"]}
    models = DEFAULT_MODELS
    for key, value in exp.items():
        if key == "models":
            models = _tuple(value, str)
        elif key in ("split",):
            kw[key] = _tuple(value, float)
        elif key == "sweep":
            kw[key] = _tuple(value, int)
        elif key in ("traffic", "out"):
            kw[key] = str(value).strip()
        elif key in ("time_inference",):
            kw[key] = _bool(value)
        elif key in ("runs", "seed", "window", "gap_window", "max_samples", "inference_calls", "workers", "sweep_layers"):
            kw[key] = int(value)
        else:
            raise ConfigurationError(f"unknown key {key!r} in [experiment]")
    window = kw.get("window", base.window)
    gap_window = kw.get("gap_window", window)
    kw["gap_window"] = gap_window

    train = TrainConfig(epochs=prof["epochs"], dtype=prof["dtype"])
    if parser.has_section("train"):
        train = _update(train, dict(parser.items("train")), "train")
    kw["train"] = train
    for name, default in (("deployment", base.deployment), ("poisson", base.poisson), ("quasi", base.quasi)):
        kw[name] = _update(default, dict(parser.items(name)), name) if parser.has_section(name) else default
    kw["models"] = _model_specs(models, parser, window, gap_window)
    return ExperimentConfig(**kw)


def load_config(path=None, profile="desk", overrides=None):
    text = ""
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, profile, overrides)


def _fmt(v):
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def format_config(config):
    """Canonical text form; parsing it back yields an equal config."""
    lines = ["[experiment]"]
    for key in ("traffic", "runs", "seed", "out", "split", "window", "gap_window", "max_samples",
                "sweep", "sweep_layers", "time_inference", "inference_calls", "workers"):
        lines.append(f"{key} = {_fmt(getattr(config, key))}")
    lines.append(f"models = {','.join(config.model_kinds)}")
    for name in ("train", "deployment", "poisson", "quasi"):
        obj = getattr(config, name)
        lines.append(f"[{name}]")
        for f in fields(obj):
            value = getattr(obj, f.name)
            if value is None:
                continue
            lines.append(f"{f.name} = {_fmt(value)}")
    for spec in config.models:
        lines.append(f"[{spec.kind}]")
        if spec.kind == "arima":
            lines.append(f"order = {_fmt(spec.arima_order)}")
        elif spec.kind == "tcn":
            for key in ("n_layers", "n_filters", "kernel_size", "dropout", "activation"):
                lines.append(f"{key} = {_fmt(getattr(spec, key))}")
        else:
            lines.append(f"hidden_sizes = {_fmt(spec.hidden_sizes)}")
    return "\n".join(lines) + "\n"
