"""Ground-truth activity traces and the supervised datasets built from them.

Two generators are provided:

* :func:`gen_poisson_trace` - event-driven traffic.  Every device runs the
  same two-state (idle/active) chain; an eligible slot starts an activation
  with probability ``activation_probability(lambda_t)`` and the activation
  lasts ``1 + k`` slots with ``k`` geometric.
* :func:`gen_quasiperiodic_trace` - per-device transfer interval ``T_j``,
  phase ``kappa_j`` and Bernoulli-gated transmission opportunities with
  bounded multiplicative jitter.

Traces are stored sparsely as (device, start, duration) runs.  The dense
boolean activity matrix is derived on demand.
"""
import io
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from ._random import as_generator
from .exceptions import ConfigurationError
from .geometry import activation_probability

__all__ = [
    "PoissonTrafficConfig",
    "QuasiPeriodicConfig",
    "TrafficTrace",
    "Split",
    "SupervisedDataset",
    "sample_burst_duration",
    "gen_poisson_trace",
    "gen_quasiperiodic_trace",
    "split_boundaries",
    "make_dataset",
    "empirical_activation_frequency",
    "write_trace",
    "read_trace",
    "write_dataset_metadata",
    "read_dataset_metadata",
]

TTI_MS = 1


def _check_q(q):
    if not 0.0 <= q < 1.0:
        raise ConfigurationError(f"burst parameter q must lie in [0, 1), got {q}")


@dataclass(frozen=True)
class PoissonTrafficConfig:
    lambda_t: float = 0.05
    q: float = 0.7
    n_devices: int = 20
    n_slots: int = 20000
    rate_r: int = 1

    def __post_init__(self):
        _check_q(self.q)
        if self.lambda_t < 0:
            raise ConfigurationError("lambda_t must be non-negative")
        if self.n_devices < 1 or self.n_slots < 1:
            raise ConfigurationError("n_devices and n_slots must be >= 1")
        if self.rate_r < 1:
            raise ConfigurationError("rate_r must be >= 1")

    @property
    def activation_prob(self):
        return activation_probability(self.lambda_t)


@dataclass(frozen=True)
class QuasiPeriodicConfig:
    """Quasi-periodic reporting.

    ``activation_prob`` is either one probability shared by every device or
    a ``(low, high)`` range sampled uniformly per device.  ``periods`` and
    ``offsets`` optionally pin ``T_j`` and ``kappa_j`` (in slots) instead of
    sampling them.
    """

    t_min: float = 50.0
    t_max: float = 1000.0
    jitter_fraction: float = 0.05
    activation_prob: object = (0.5, 1.0)
    q: float = 0.7
    n_devices: int = 20
    n_slots: int = 20000
    rate_r: int = 1
    periods: tuple = None
    offsets: tuple = None

    def __post_init__(self):
        _check_q(self.q)
        if not 0 < self.t_min <= self.t_max:
            raise ConfigurationError("need 0 < t_min <= t_max")
        if not 0.0 <= self.jitter_fraction < 1.0:
            raise ConfigurationError("jitter_fraction must lie in [0, 1)")
        lo, hi = self.activation_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ConfigurationError("activation probabilities must lie in [0, 1]")
        if self.n_devices < 1 or self.n_slots < 1:
            raise ConfigurationError("n_devices and n_slots must be >= 1")
        for name in ("periods", "offsets"):
            value = getattr(self, name)
            if value is not None and len(value) != self.n_devices:
                raise ConfigurationError(f"{name} needs one entry per device")
        if self.periods is not None and min(self.periods) < 1:
            raise ConfigurationError("periods must be >= 1 slot")

    @property
    def activation_range(self):
        p = self.activation_prob
        if np.ndim(p) == 0:
            return float(p), float(p)
        lo, hi = p
        return float(lo), float(hi)


@dataclass(frozen=True, eq=False)
class TrafficTrace:
    """Device x slot activity record with a 1 ms slot.

    ``device``, ``start`` and ``duration`` describe activations, sorted by
    device then start.  Durations may run past ``n_slots``; the dense view
    clips them.
    """

    n_devices: int
    n_slots: int
    device: np.ndarray
    start: np.ndarray
    duration: np.ndarray
    model: str = "unknown"
    seed: int = None
    rate_r: int = 1
    tti_ms: int = TTI_MS

    def __post_init__(self):
        arrays = []
        for name in ("device", "start", "duration"):
            a = np.array(getattr(self, name), dtype=np.int64).reshape(-1)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
            arrays.append(a)
        device, start, duration = arrays
        if not (len(device) == len(start) == len(duration)):
            raise ConfigurationError("activation arrays differ in length")
        if len(device):
            if device.min() < 0 or device.max() >= self.n_devices:
                raise ConfigurationError("device id out of range")
            if start.min() < 0 or start.max() >= self.n_slots:
                raise ConfigurationError("activation start outside the trace")
            if duration.min() < 1:
                raise ConfigurationError("every activation lasts at least one slot")
        order = np.lexsort((start, device))
        if np.any(order != np.arange(len(order))):
            for name, a in zip(("device", "start", "duration"), arrays):
                b = a[order]
                b.setflags(write=False)
                object.__setattr__(self, name, b)

    @cached_property
    def activity(self):
        act = np.zeros((self.n_devices, self.n_slots), dtype=bool)
        # difference array: +1 at start, -1 one past the clipped end
        diff = np.zeros((self.n_devices, self.n_slots + 1), dtype=np.int32)
        ends = np.minimum(self.start + self.duration, self.n_slots)
        np.add.at(diff, (self.device, self.start), 1)
        np.add.at(diff, (self.device, ends), -1)
        np.greater(np.cumsum(diff[:, :-1], axis=1), 0, out=act)
        act.setflags(write=False)
        return act

    @property
    def packet_counts(self):
        return self.activity.astype(np.int64) * self.rate_r

    def starts_of(self, device):
        """Sorted, de-duplicated activation starts of one device."""
        return np.unique(self.start[self.device == device])

    @property
    def n_activations(self):
        return len(self.start)

    def __eq__(self, other):
        if not isinstance(other, TrafficTrace):
            return NotImplemented
        return (
            self.n_devices == other.n_devices
            and self.n_slots == other.n_slots
            and np.array_equal(self.device, other.device)
            and np.array_equal(self.start, other.start)
            and np.array_equal(self.duration, other.duration)
        )

    __hash__ = None


def sample_burst_duration(q, rng=None, size=None):
    """Extra active slots ``k`` with ``P(k) = (1 - q) * q**k``, ``k = 0, 1, ...``."""
    _check_q(q)
    rng = as_generator(rng)
    # numpy's geometric counts trials, i.e. failures + 1
    k = rng.geometric(1.0 - q, size=size) - 1
    return int(k) if size is None else k.astype(np.int64)


def _poisson_device(p_a, q, n_slots, rng):
    if p_a <= 0.0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    cycle = (1.0 - p_a) / p_a + 1.0 / (1.0 - q)
    chunk = int(n_slots / cycle) + 32
    starts, durs = [], []
    cursor = 0
    while cursor < n_slots:
        idle = rng.geometric(p_a, size=chunk) - 1
        dur = rng.geometric(1.0 - q, size=chunk)
        step = idle + dur
        ends = cursor + np.cumsum(step)
        s = ends - dur
        keep = s < n_slots
        starts.append(s[keep])
        durs.append(dur[keep])
        cursor = int(ends[-1])
    return np.concatenate(starts).astype(np.int64), np.concatenate(durs).astype(np.int64)


def gen_poisson_trace(config, rng=None, seed=None):
    """Event-driven trace from the two-state chain.

    All devices start idle.  Each slot that is not inside an ongoing
    activation is an independent trial that starts a new activation with
    probability ``P_A``; activations last ``1 + k`` slots.
    """
    rng = as_generator(seed if rng is None else rng)
    p_a = activation_probability(config.lambda_t)
    devices, starts, durs = [], [], []
    for j, child in enumerate(rng.spawn(config.n_devices)):
        s, d = _poisson_device(p_a, config.q, config.n_slots, child)
        devices.append(np.full(len(s), j, np.int64))
        starts.append(s)
        durs.append(d)
    return TrafficTrace(
        config.n_devices,
        config.n_slots,
        np.concatenate(devices),
        np.concatenate(starts),
        np.concatenate(durs),
        model="poisson",
        seed=seed,
        rate_r=config.rate_r,
    )


def _quasi_device(j, config, rng):
    if config.periods is not None:
        period = int(config.periods[j])
    else:
        # ms to slots at a 1 ms TTI
        period = max(1, int(round(rng.uniform(config.t_min, config.t_max) / TTI_MS)))
    if config.offsets is not None:
        offset = int(config.offsets[j])
    else:
        offset = int(rng.integers(0, period))
    lo, hi = config.activation_range
    p_j = lo if lo == hi else float(rng.uniform(lo, hi))

    expected_burst = 1.0 / (1.0 - config.q)
    if expected_burst >= period:
        warnings.warn(
            f"device {j}: period {period} slots is not longer than the mean "
            f"burst of {expected_burst:.1f} slots; opportunities will overlap",
            RuntimeWarning,
            stacklevel=3,
        )

    beta = config.jitter_fraction
    n_opp = max(0, -(-(config.n_slots - offset) // period)) + 1
    m = np.arange(n_opp, dtype=np.int64)
    u = rng.uniform(-beta, beta, size=n_opp) if beta > 0 else np.zeros(n_opp)
    gate = rng.random(n_opp) < p_j
    k = rng.geometric(1.0 - config.q, size=n_opp) - 1
    # truncation toward zero keeps every shift within +-beta*T
    shift = np.trunc(u * period).astype(np.int64)
    start = np.maximum(offset + m * period + shift, 0)
    keep = gate & (start < config.n_slots)
    start, dur = start[keep], 1 + k[keep]
    order = np.argsort(start, kind="stable")
    return start[order], dur[order], period, offset, p_j


def gen_quasiperiodic_trace(config, rng=None, seed=None, return_params=False):
    """Quasi-periodic trace.

    Opportunity ``m`` of device ``j`` starts at
    ``kappa_j + (m - 1) * T_j + trunc(u_m * T_j)`` with
    ``u_m ~ U[-beta, beta]`` drawn per opportunity, and is realised when a
    Bernoulli(``P_{A_j}``) gate fires.  Opportunities past the end of the
    trace are dropped.

    With ``return_params`` the per-device ``(T_j, kappa_j, P_{A_j})`` are
    returned alongside the trace.
    """
    rng = as_generator(seed if rng is None else rng)
    devices, starts, durs, params = [], [], [], []
    for j, child in enumerate(rng.spawn(config.n_devices)):
        s, d, period, offset, p_j = _quasi_device(j, config, child)
        devices.append(np.full(len(s), j, np.int64))
        starts.append(s)
        durs.append(d)
        params.append((period, offset, p_j))
    trace = TrafficTrace(
        config.n_devices,
        config.n_slots,
        np.concatenate(devices),
        np.concatenate(starts),
        np.concatenate(durs),
        model="quasi",
        seed=seed,
        rate_r=config.rate_r,
    )
    return (trace, params) if return_params else trace


def empirical_activation_frequency(trace):
    """Fraction of eligible (not mid-activation) slots that start an activation."""
    clipped = np.minimum(trace.duration, trace.n_slots - trace.start)
    eligible = trace.n_devices * trace.n_slots - int(np.sum(clipped - 1))
    return trace.n_activations / eligible


# --------------------------------------------------------------------------
# supervised datasets


@dataclass(frozen=True)
class Split:
    """Samples of one chronological split.

    Classification: ``X_cls[i]`` holds the ``W`` activity bits before slot
    ``cls_slot[i]`` of device ``cls_device[i]``; ``y_cls[i]`` is the bit at
    that slot.  Regression: ``X_reg[i]`` holds consecutive inter-arrival gaps
    and ``y_reg[i]`` the following gap, which ends at ``reg_slot[i]``;
    ``reg_first_slot[i]`` is the first activation start the window uses.
    ``starts[d]`` lists device ``d``'s activation starts inside the split.
    """

    name: str
    lo: int
    hi: int
    X_cls: np.ndarray
    y_cls: np.ndarray
    cls_device: np.ndarray
    cls_slot: np.ndarray
    X_reg: np.ndarray
    y_reg: np.ndarray
    reg_device: np.ndarray
    reg_slot: np.ndarray
    reg_first_slot: np.ndarray
    starts: tuple = ()

    @property
    def n_samples(self):
        return len(self.y_cls) + len(self.y_reg)


@dataclass(frozen=True)
class SupervisedDataset:
    window_w: int
    gap_window: int
    boundaries: tuple
    n_slots: int
    fractions: tuple
    train: Split
    val: Split
    test: Split
    seed: int = None
    excluded_devices: tuple = field(default_factory=tuple)

    @property
    def splits(self):
        return (self.train, self.val, self.test)

    @property
    def n_samples(self):
        return sum(s.n_samples for s in self.splits)

    def audit(self):
        """Raise AssertionError unless every window sits inside its split's time range."""
        for s in self.splits:
            if len(s.cls_slot):
                assert np.all(s.cls_slot - self.window_w >= s.lo), s.name
                assert np.all(s.cls_slot < s.hi), s.name
            if len(s.reg_slot):
                assert np.all(s.reg_first_slot >= s.lo), s.name
                assert np.all(s.reg_slot < s.hi), s.name
                assert np.all(s.reg_first_slot < s.reg_slot), s.name
        return True


def split_boundaries(n_slots, fractions=(0.70, 0.15, 0.15)):
    """Chronological boundaries ``floor(f1*n)`` and ``floor((f1+f2)*n)``."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) <= 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(f"split fractions must be three positive values summing to 1, got {fractions}")
    # small guard against representation error such as 0.7*100 = 70.00000000000001
    b1 = math.floor(fractions[0] * n_slots + 1e-9)
    b2 = math.floor((fractions[0] + fractions[1]) * n_slots + 1e-9)
    return b1, b2


def _cls_pairs(n_devices, lo, hi, window_w):
    targets = np.arange(lo + window_w, hi, dtype=np.int64)
    dev = np.repeat(np.arange(n_devices, dtype=np.int64), len(targets))
    return dev, np.tile(targets, n_devices)


def _reg_samples(starts_by_device, lo, hi, gap_window):
    X, y, dev, slot, first = [], [], [], [], []
    for d, starts in enumerate(starts_by_device):
        seg = starts[(starts >= lo) & (starts < hi)]
        gaps = np.diff(seg)
        n = len(gaps) - gap_window
        if n <= 0:
            continue
        idx = np.arange(n)[:, None] + np.arange(gap_window)[None, :]
        X.append(gaps[idx])
        y.append(gaps[gap_window:])
        dev.append(np.full(n, d, np.int64))
        slot.append(seg[gap_window + 1:])
        first.append(seg[:n])
    if not X:
        return (np.empty((0, gap_window)), np.empty(0), np.empty(0, np.int64),
                np.empty(0, np.int64), np.empty(0, np.int64))
    return (np.concatenate(X).astype(float), np.concatenate(y).astype(float),
            np.concatenate(dev), np.concatenate(slot), np.concatenate(first))


def _thin_reg(r, k, gen):
    pick = np.sort(gen.choice(len(r[1]), size=min(k, len(r[1])), replace=False))
    return tuple(a[pick] for a in r)


def make_dataset(trace, window_w=8, split=(0.70, 0.15, 0.15), gap_window=None, max_samples=None, rng=None, seed=None):
    """Chronological train/val/test datasets from one trace.

    The time axis is cut first, then each segment is windowed on its own, so
    no window crosses a boundary.  Two sample families are produced per
    device: next-slot activity from the last ``window_w`` bits, and the next
    inter-arrival gap (between activation starts) from the last
    ``gap_window`` gaps.

    ``max_samples`` caps the aggregate sample count.  When the dense sample
    set is larger, regression windows are thinned to at most a quarter of
    the budget and classification windows fill the rest; both are drawn
    uniformly at random within each split (``rng``/``seed`` drives the draw).
    """
    window_w = int(window_w)
    gap_window = window_w if gap_window is None else int(gap_window)
    if window_w < 1 or gap_window < 1:
        raise ConfigurationError("window lengths must be >= 1")
    b1, b2 = split_boundaries(trace.n_slots, split)
    ranges = ((0, b1), (b1, b2), (b2, trace.n_slots))
    if min(hi - lo for lo, hi in ranges) <= window_w:
        raise ConfigurationError(
            f"trace of {trace.n_slots} slots is too short for window {window_w} in every split"
        )

    starts_by_device = [trace.starts_of(d) for d in range(trace.n_devices)]
    excluded = tuple(d for d, s in enumerate(starts_by_device) if len(s) < 2)
    if excluded:
        warnings.warn(
            f"{len(excluded)} device(s) have fewer than 2 activations and give no regression samples",
            RuntimeWarning,
            stacklevel=2,
        )

    reg = [_reg_samples(starts_by_device, lo, hi, gap_window) for lo, hi in ranges]
    pairs = [_cls_pairs(trace.n_devices, lo, hi, window_w) for lo, hi in ranges]
    n_cls = sum(len(p[0]) for p in pairs)
    n_reg = sum(len(r[1]) for r in reg)
    if max_samples is not None and n_cls + n_reg > max_samples:
        gen = as_generator(seed if rng is None else rng)
        # regression windows may take at most a quarter of the budget
        reg_budget = min(n_reg, int(max_samples) // 4)
        if reg_budget < n_reg:
            reg = [_thin_reg(r, max(1, int(len(r[1]) * reg_budget / n_reg)), gen) for r in reg]
            n_reg = sum(len(r[1]) for r in reg)
        cls_budget = max(int(max_samples) - n_reg, 3)
        thinned = []
        for dev, slot in pairs:
            k = min(len(dev), max(1, int(len(dev) * cls_budget / n_cls)))
            pick = np.sort(gen.choice(len(dev), size=k, replace=False))
            thinned.append((dev[pick], slot[pick]))
        pairs = thinned

    act = trace.activity
    offsets = np.arange(-window_w, 0)
    split_objs = []
    for name, (lo, hi), (dev, slot), r in zip(("train", "val", "test"), ranges, pairs, reg):
        X = act[dev[:, None], slot[:, None] + offsets[None, :]].astype(float)
        y = act[dev, slot].astype(float)
        starts = tuple(s[(s >= lo) & (s < hi)] for s in starts_by_device)
        split_objs.append(Split(name, lo, hi, X, y, dev, slot, *r, starts=starts))
    return SupervisedDataset(
        window_w, gap_window, (b1, b2), trace.n_slots, tuple(split), *split_objs,
        seed=seed, excluded_devices=excluded,
    )


# --------------------------------------------------------------------------
# file formats


def write_trace(trace, path):
    """Sparse trace file: one header line then ``device_id,start_slot,duration_slots`` rows."""
    lines = [f"{trace.n_devices},{trace.n_slots},{trace.tti_ms},{trace.model},{trace.seed}"]
    lines.extend(f"{d},{s},{n}" for d, s, n in zip(trace.device, trace.start, trace.duration))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if len(header) != 5:
            raise ConfigurationError(f"{path}: malformed trace header")
        n_devices, n_slots, tti_ms = (int(v) for v in header[:3])
        seed = None if header[4] == "None" else int(header[4])
        body = fh.read()
    rows = np.loadtxt(io.StringIO(body), delimiter=",", dtype=np.int64, ndmin=2) if body.strip() else np.empty((0, 3))
    if rows.size == 0:
        rows = np.empty((0, 3), np.int64)
    return TrafficTrace(n_devices, n_slots, rows[:, 0], rows[:, 1], rows[:, 2],
                        model=header[3], seed=seed, tti_ms=tti_ms)


def write_dataset_metadata(dataset, path):
    meta = {
        "window_w": dataset.window_w,
        "gap_window": dataset.gap_window,
        "n_slots": dataset.n_slots,
        "fractions": ",".join(repr(f) for f in dataset.fractions),
        "train_range": f"0,{dataset.boundaries[0]}",
        "val_range": f"{dataset.boundaries[0]},{dataset.boundaries[1]}",
        "test_range": f"{dataset.boundaries[1]},{dataset.n_slots}",
        "seed": dataset.seed,
    }
    for s in dataset.splits:
        meta[f"{s.name}_cls_samples"] = len(s.y_cls)
        meta[f"{s.name}_reg_samples"] = len(s.y_reg)
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in meta.items()))


def read_dataset_metadata(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        if line and not line.startswith("#"):
            k, v = line.split("=", 1)
            out[k] = v
    return out
