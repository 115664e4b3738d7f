"""Spatial layer: planar Poisson deployments and event influence.

Devices (MTDs) and event epicenters are homogeneous Poisson point processes
on a disk centred on the coordinator.  The per-slot activation probability
uses the closed form obtained by integrating the influence function over
an unbounded plane, so the disk radius only affects where devices are drawn.
"""
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate

from ._random import as_generator
from .exceptions import ConfigurationError, DomainError

__all__ = [
    "Point2D",
    "DeploymentConfig",
    "Deployment",
    "sample_ppp",
    "influence",
    "activation_probability",
    "deploy",
    "write_deployment",
    "read_deployment",
]


@dataclass(frozen=True)
class Point2D:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise DomainError(f"non-finite coordinates ({self.x}, {self.y})")

    def distance(self, other):
        return math.hypot(self.x - other.x, self.y - other.y)

    def norm(self):
        return math.hypot(self.x, self.y)


ORIGIN = Point2D(0.0, 0.0)


@dataclass(frozen=True)
class DeploymentConfig:
    """Densities are per square metre; the region is a disk at the origin."""

    lambda_m: float = 0.1
    lambda_e: float = 0.01
    region_radius: float = 50.0

    def __post_init__(self):
        if self.lambda_m < 0 or self.lambda_e < 0:
            raise ConfigurationError("densities must be non-negative")
        if not self.region_radius > 0:
            raise ConfigurationError("region_radius must be positive")


@dataclass(frozen=True)
class Deployment:
    mtd_positions: tuple
    epicenter_positions: tuple
    config: DeploymentConfig = field(default_factory=DeploymentConfig)
    seed: int = None
    coordinator: Point2D = ORIGIN

    def __post_init__(self):
        if self.coordinator != ORIGIN:
            raise ConfigurationError("the coordinator sits at the origin")
        limit = self.config.region_radius * (1 + 1e-12)
        for p in self.mtd_positions + self.epicenter_positions:
            if p.norm() > limit:
                raise ConfigurationError(f"point {p} outside the deployment disk")

    @property
    def n_devices(self):
        return len(self.mtd_positions)

    def device_distances(self):
        """Matrix of distances, shape (n_epicenters, n_devices)."""
        if not self.mtd_positions or not self.epicenter_positions:
            return np.zeros((len(self.epicenter_positions), len(self.mtd_positions)))
        m = np.array([(p.x, p.y) for p in self.mtd_positions])
        e = np.array([(p.x, p.y) for p in self.epicenter_positions])
        return np.hypot(e[:, None, 0] - m[None, :, 0], e[:, None, 1] - m[None, :, 1])


def _ppp_coordinates(density, region_radius, rng):
    if density < 0:
        raise ConfigurationError(f"density must be non-negative, got {density}")
    if not region_radius > 0:
        raise ConfigurationError(f"region_radius must be positive, got {region_radius}")
    rng = as_generator(rng)
    n = rng.poisson(density * math.pi * region_radius**2)
    # sqrt of a uniform radius fraction gives uniform area density
    r = region_radius * np.sqrt(rng.random(n))
    theta = 2.0 * math.pi * rng.random(n)
    return r * np.cos(theta), r * np.sin(theta)


def sample_ppp(density, region_radius, rng=None):
    """Homogeneous PPP on the disk of ``region_radius`` centred at the origin.

    The number of points is Poisson with mean ``density * pi * radius**2``
    and each point is placed independently and uniformly on the disk.
    """
    xs, ys = _ppp_coordinates(density, region_radius, rng)
    return [Point2D(float(x), float(y)) for x, y in zip(xs, ys)]


def influence(d):
    """Probability that an event at distance ``d`` triggers a device: exp(-d)."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0) or np.any(np.isnan(d)):
        raise DomainError("distance must be non-negative")
    out = np.exp(-d)
    return float(out) if out.ndim == 0 else out


# integral of the influence function over [0, inf); 1 for exp(-d)
_INFLUENCE_INTEGRAL = integrate.quad(lambda d: influence(d), 0.0, np.inf)[0]


def activation_probability(lambda_t):
    """Per-slot probability that an idle device becomes active.

    ``1 - exp(-2*pi*lambda_t * I)`` with ``I`` the integral of the influence
    function over ``[0, inf)``.
    """
    if lambda_t < 0 or math.isnan(lambda_t):
        raise DomainError(f"lambda_t must be non-negative, got {lambda_t}")
    return -math.expm1(-2.0 * math.pi * lambda_t * _INFLUENCE_INTEGRAL)


def deploy(config, rng=None, seed=None):
    """Draw one deployment of devices and epicenters.

    ``seed`` is only recorded on the result; pass the stream as ``rng``.
    If ``rng`` is None a Generator is built from ``seed``.
    """
    rng = as_generator(seed if rng is None else rng)
    mtds = sample_ppp(config.lambda_m, config.region_radius, rng)
    epis = sample_ppp(config.lambda_e, config.region_radius, rng)
    return Deployment(tuple(mtds), tuple(epis), config=config, seed=seed)


def write_deployment(deployment, path):
    cfg = deployment.config
    lines = [
        f"# lambda_m={cfg.lambda_m!r},lambda_e={cfg.lambda_e!r},"
        f"region_radius={cfg.region_radius!r},seed={deployment.seed}",
        "kind,id,x,y",
    ]
    for kind, points in (("mtd", deployment.mtd_positions), ("epicenter", deployment.epicenter_positions)):
        for i, p in enumerate(points):
            lines.append(f"{kind},{i},{p.x!r},{p.y!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_deployment(path):
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("#"):
        raise ConfigurationError(f"{path}: missing deployment header")
    meta = dict(item.split("=", 1) for item in text[0][1:].strip().split(","))
    seed = None if meta.get("seed", "None") == "None" else int(meta["seed"])
    cfg = DeploymentConfig(float(meta["lambda_m"]), float(meta["lambda_e"]), float(meta["region_radius"]))
    mtds, epis = [], []
    for row in text[2:]:
        kind, _, x, y = row.split(",")
        (mtds if kind == "mtd" else epis).append(Point2D(float(x), float(y)))
    return Deployment(tuple(mtds), tuple(epis), config=cfg, seed=seed)
