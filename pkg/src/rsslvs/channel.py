"""Log-distance pathloss RSS model with log-normal shadowing (all in dB)."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .scenario import D_MIN

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ChannelParams:
    """Reference RSS ``p_d0`` (dBm) at ``d0`` (m), pathloss exponent, noise std (dB)."""

    p_d0: float = -40.0
    d0: float = 1.0
    gamma: float = 2.5
    sigma_t: float = 4.0

    def __post_init__(self):
        for name in ("p_d0", "d0", "gamma", "sigma_t"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not self.d0 > 0:
            raise ValueError("d0 must be positive")
        if not self.sigma_t > 0:
            raise ValueError("sigma_t must be positive")

    def replace(self, **kw) -> "ChannelParams":
        return ChannelParams(**{**asdict(self), **kw})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict, key: str = "channel") -> "ChannelParams":
        if not isinstance(d, dict):
            raise ConfigError(key, "expected an object")
        kw = {}
        for name in ("p_d0", "d0", "gamma", "sigma_t"):
            if name in d:
                v = d[name]
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(f"{key}.{name}", "expected a number")
                kw[name] = float(v)
        unknown = set(d) - {"p_d0", "d0", "gamma", "sigma_t"}
        if unknown:
            raise ConfigError(f"{key}.{sorted(unknown)[0]}", "unknown key")
        try:
            return cls(**kw)
        except ValueError as exc:
            # messages start with the offending field name
            field = str(exc).split()[0]
            raise ConfigError(f"{key}.{field}", str(exc)) from None


def rsu_distances(source, rsus) -> np.ndarray:
    """Euclidean distances, shape ``source.shape[:-1] + (N,)``."""
    src = np.asarray(source, dtype=float)
    r = np.asarray(rsus, dtype=float).reshape(-1, 2)
    diff = src[..., None, :] - r
    return np.hypot(diff[..., 0], diff[..., 1])


def mean_rss(params: ChannelParams, source, rsus) -> np.ndarray:
    """Mean RSS at each RSU for a transmitter at ``source``.

    ``source`` may be a single location or any array of locations with a
    trailing axis of 2; the result carries one trailing entry per RSU.

    Raises
    ------
    ValueError
        If the source sits closer than ``D_MIN`` to any RSU.
    """
    d = rsu_distances(source, rsus)
    if np.any(d < D_MIN):
        raise ValueError(f"source within {D_MIN} m of an RSU; pathloss undefined")
    return params.p_d0 - 10.0 * params.gamma * np.log10(d / params.d0)


def draw_noise(shape, sigma_t: float, rng: np.random.Generator, kind: str = "gaussian", dof: float = 3.0) -> np.ndarray:
    """Zero-mean shadowing in dB with standard deviation ``sigma_t``.

    ``student_t`` rescales a t-variate so its variance matches ``sigma_t**2``
    (needs dof > 2); it exists to build model-mismatch experiments.
    """
    if kind == "gaussian":
        return sigma_t * rng.standard_normal(shape)
    if kind == "student_t":
        if dof <= 2:
            raise ValueError("student_t noise needs dof > 2 for finite variance")
        return sigma_t * math.sqrt((dof - 2.0) / dof) * rng.standard_t(dof, shape)
    raise ValueError(f"unknown noise kind {kind!r}")


def draw_observation(params: ChannelParams, truth_loc, rsus, rng: np.random.Generator, **noise) -> np.ndarray:
    mu = mean_rss(params, truth_loc, rsus)
    return mu + draw_noise(mu.shape, params.sigma_t, rng, **noise)


def draw_observations(params: ChannelParams, truth_locs, rsus, rng: np.random.Generator, **noise) -> np.ndarray:
    """One RSS vector per row of ``truth_locs`` (n, 2) -> (n, N)."""
    return draw_observation(params, np.asarray(truth_locs, dtype=float).reshape(-1, 2), rsus, rng, **noise)


def log_likelihood(obs, mean, sigma_t: float) -> float | np.ndarray:
    """Log-density of ``obs`` under N(mean, sigma_t^2 I).

    Broadcasts over leading axes; the last axis is the RSU axis.
    """
    obs = np.asarray(obs, dtype=float)
    mean = np.asarray(mean, dtype=float)
    if obs.shape[-1] != mean.shape[-1]:
        raise ValueError(f"length mismatch: {obs.shape[-1]} observations vs {mean.shape[-1]} means")
    n = obs.shape[-1]
    q = np.sum((obs - mean) ** 2, axis=-1)
    return -0.5 * n * LOG_2PI - n * math.log(sigma_t) - q / (2.0 * sigma_t**2)


@dataclass(frozen=True)
class FitResult:
    gamma: float
    p_d0: float
    sigma_t: float

    def params(self, d0: float) -> ChannelParams:
        return ChannelParams(p_d0=self.p_d0, d0=d0, gamma=self.gamma, sigma_t=self.sigma_t)


def fit_gamma(distances: Sequence[float], rss: Sequence[float], d0: float = 1.0) -> FitResult:
    """OLS of RSS on ``-10 log10(d/d0)``: slope is gamma, intercept is p_d0.

    The residual standard deviation (``n - 2`` degrees of freedom, zero for
    two points) is returned as the shadowing estimate.
    """
    d = np.asarray(distances, dtype=float)
    y = np.asarray(rss, dtype=float)
    if d.shape != y.shape or d.ndim != 1:
        raise ValueError("distances and rss must be 1-D and equally long")
    if d.size < 2:
        raise ValueError("need at least two samples")
    if np.any(d < D_MIN):
        raise ValueError(f"distances below {D_MIN} m are not usable")
    x = -10.0 * np.log10(d / d0)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise ValueError("singular fit: all distances are equal")
    gamma = float(xc @ (y - y.mean())) / sxx
    p_d0 = float(y.mean() - gamma * x.mean())
    resid = y - (p_d0 + gamma * x)
    dof = d.size - 2
    sigma = math.sqrt(float(resid @ resid) / dof) if dof > 0 else 0.0
    return FitResult(gamma=gamma, p_d0=p_d0, sigma_t=sigma)


def read_fit_csv(text: str) -> tuple[np.ndarray, np.ndarray]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows or not {"distance", "rss"} <= set(rows[0]):
        raise ValueError("fit input must be CSV with header distance,rss")
    return (np.array([float(r["distance"]) for r in rows]), np.array([float(r["rss"]) for r in rows]))
