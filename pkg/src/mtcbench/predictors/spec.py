"""Architecture descriptors, parameter manifests and complexity arithmetic."""
import math
from dataclasses import dataclass, replace

from ..exceptions import ConfigurationError

RECURRENT_KINDS = ("rnn", "lstm", "gru")
NEURAL_KINDS = RECURRENT_KINDS + ("tcn",)
ALL_KINDS = NEURAL_KINDS + ("arima",)

# affine maps per recurrent cell: plain tanh, (i, f, o, g), (z, r, n)
GATES = {"rnn": 1, "lstm": 4, "gru": 3}

FLOAT_BYTES = 4


@dataclass(frozen=True)
class ModelSpec:
    """One predictor architecture.

    Recurrent kinds use ``hidden_sizes``; the TCN uses ``n_layers``,
    ``n_filters``, ``kernel_size`` and ``dropout`` with dilation ``2**i`` at
    layer ``i``.  ``window`` is the input length in slots and ``gap_window``
    the number of past inter-arrival gaps fed to the regression head.
    """

    kind: str
    hidden_sizes: tuple = (256,)
    n_layers: int = 3
    n_filters: int = 32
    kernel_size: int = 2
    dropout: float = 0.05
    activation: str = "relu"
    window: int = 8
    gap_window: int = None
    input_dim: int = 1
    arima_order: tuple = (2, 1, 2)

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ConfigurationError(f"unknown model kind {self.kind!r}")
        object.__setattr__(self, "hidden_sizes", tuple(int(n) for n in self.hidden_sizes))
        object.__setattr__(self, "arima_order", tuple(int(v) for v in self.arima_order))
        if self.gap_window is None:
            object.__setattr__(self, "gap_window", self.window)
        if self.window < 1 or self.gap_window < 1:
            raise ConfigurationError("window lengths must be >= 1")
        if self.kind in RECURRENT_KINDS and (not self.hidden_sizes or min(self.hidden_sizes) < 1):
            raise ConfigurationError("recurrent widths must be >= 1")
        if self.kind == "tcn":
            if self.n_layers < 1 or self.n_filters < 1 or self.kernel_size < 1:
                raise ConfigurationError("tcn layers, filters and kernel size must be >= 1")
            if not 0.0 <= self.dropout < 1.0:
                raise ConfigurationError("dropout must lie in [0, 1)")
            if self.activation not in ("relu", "linear"):
                raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def dilations(self):
        return tuple(2**i for i in range(self.n_layers))

    @property
    def receptive_field(self):
        """``1 + (z - 1) * sum(2**i)``; 8 for three layers of width-2 kernels."""
        return 1 + (self.kernel_size - 1) * sum(self.dilations)

    @property
    def feature_dim(self):
        if self.kind == "tcn":
            return self.n_filters
        return self.hidden_sizes[-1]

    def with_(self, **changes):
        return replace(self, **changes)


def backbone_manifest(spec):
    """Ordered ``(name, shape)`` list of the backbone's trainable tensors."""
    out = []
    if spec.kind in RECURRENT_KINDS:
        g = GATES[spec.kind]
        d_in = spec.input_dim
        for i, h in enumerate(spec.hidden_sizes):
            out += [(f"l{i}.Wx", (d_in, g * h)), (f"l{i}.Wh", (h, g * h)), (f"l{i}.b", (g * h,))]
            d_in = h
    elif spec.kind == "tcn":
        c_in = spec.input_dim
        for i in range(spec.n_layers):
            out += [(f"c{i}.K", (spec.kernel_size, c_in, spec.n_filters)), (f"c{i}.b", (spec.n_filters,))]
            c_in = spec.n_filters
    else:
        raise ConfigurationError("ARIMA has no neural parameter manifest")
    return out


def head_manifest(spec):
    f = spec.feature_dim
    return [("cls.w", (f,)), ("cls.b", (1,)), ("reg.w", (f,)), ("reg.b", (1,))]


def manifest(spec):
    return backbone_manifest(spec) + head_manifest(spec)


def _size(shape):
    return math.prod(shape)


def count_params(spec, heads=False):
    """Trainable parameters of the backbone; ``heads=True`` adds both output heads."""
    if spec.kind == "arima":
        p, _, q = spec.arima_order
        return p + q + 1
    items = manifest(spec) if heads else backbone_manifest(spec)
    return sum(_size(shape) for _, shape in items)


def complexity_class(spec):
    """Symbolic complexity value and its big-O descriptor.

    Recurrent kinds: ``2 * n_1 * ... * n_h``.  TCN: ``z * omega * r``.
    """
    if spec.kind in RECURRENT_KINDS:
        value = 2 * math.prod(spec.hidden_sizes)
        label = "O(2*" + "*".join(f"n{i + 1}" for i in range(len(spec.hidden_sizes))) + ")"
    elif spec.kind == "tcn":
        value = spec.kernel_size * spec.n_filters * spec.receptive_field
        label = "O(z*omega*r)"
    else:
        p, d, q = spec.arima_order
        value = p + d + q
        label = "O(p+d+q)"
    return value, label


def complexity_budget(target_c, kind, hidden_layers=1, base=None):
    """Largest spec of ``kind`` whose complexity value does not exceed ``target_c``.

    Recurrent kinds get ``hidden_layers`` equal widths; the TCN varies the
    filter count.  Other fields come from ``base`` (defaults otherwise).
    """
    base = ModelSpec(kind) if base is None else base.with_(kind=kind)
    if kind in RECURRENT_KINDS:
        if hidden_layers < 1:
            raise ConfigurationError("hidden_layers must be >= 1")
        n = int((target_c / 2) ** (1.0 / hidden_layers)) + 1
        while n >= 1 and 2 * n**hidden_layers > target_c:
            n -= 1
        if n < 1:
            raise ConfigurationError(f"complexity {target_c} is below the minimum {2} for {kind}")
        return base.with_(hidden_sizes=(n,) * hidden_layers)
    if kind == "tcn":
        per_filter = base.kernel_size * base.receptive_field
        omega = int(target_c // per_filter)
        if omega < 1:
            raise ConfigurationError(f"complexity {target_c} is below the minimum {per_filter} for tcn")
        return base.with_(n_filters=omega)
    raise ConfigurationError(f"complexity budget undefined for {kind!r}")


def workspace_floats(spec):
    """Activations held during one inference step.

    The TCN keeps every layer's outputs over the receptive field; recurrent
    kinds keep one state vector per layer (two for the LSTM cell state).
    """
    if spec.kind == "tcn":
        return spec.n_layers * spec.n_filters * spec.receptive_field
    if spec.kind in RECURRENT_KINDS:
        return (2 if spec.kind == "lstm" else 1) * sum(spec.hidden_sizes)
    return spec.gap_window + sum(spec.arima_order)


def model_size_bytes(spec):
    """(all parameters + inference workspace) at 4 bytes per value."""
    return FLOAT_BYTES * (count_params(spec, heads=spec.kind != "arima") + workspace_floats(spec))
