"""Monte Carlo comparison of the LRT and neural verifiers."""
from __future__ import annotations

import csv
import functools
import io
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import lrt, neural
from .adversary import generate_optimized_dataset
from .channel import ChannelParams, draw_observations
from .errors import ConfigError
from .lrt import DetectionStats, LrtVerifier
from .scenario import H0, H1, Scenario, as_arrays, default_scenario, generate_dataset

RANDOM, OPTIMIZED = "random", "optimized"
ATTACK_MODES = (RANDOM, OPTIMIZED)
CURVE_HEADER = ("r", "attack_mode", "train_size", "alpha", "beta", "total_error")
BASELINE_SIZE = -1


def binomial_se(xi: float, n: int) -> float:
    return math.sqrt(xi * (1.0 - xi) / n)


def moving_average(values, window: int = 5) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.size < window:
        raise ValueError(f"need at least {window} values")
    return np.convolve(v, np.ones(window) / window, mode="valid")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario = field(default_factory=default_scenario)
    channel_params: ChannelParams = field(default_factory=ChannelParams)
    verifier_params: ChannelParams = field(default_factory=ChannelParams)
    r_values: tuple[float, ...] = (50.0, 75.0, 100.0)
    attack_modes: tuple[str, ...] = (RANDOM,)
    n_total: int = 2000
    train_fraction: float = 0.8
    learning_curve_sizes: tuple[int, ...] = tuple(range(10, 501, 10))
    seeds: tuple[int, ...] = (1,)
    noise: str = "gaussian"
    noise_dof: float = 3.0
    policy: str = lrt.ORACLE
    threshold: float = 1.0
    thresholds: tuple[float, ...] = tuple(lrt.log_grid())
    train: neural.TrainConfig = field(default_factory=neural.TrainConfig)

    def __post_init__(self):
        if self.n_total <= 0 or self.n_total % 2:
            raise ConfigError("experiment.n_total", "must be a positive even count")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("experiment.train_fraction", "must lie in (0, 1)")
        if not self.r_values:
            raise ConfigError("experiment.r_values", "must be non-empty")
        for i, r in enumerate(self.r_values):
            if not r > 0:
                raise ConfigError(f"experiment.r_values[{i}]", "must be positive")
        for i, m in enumerate(self.attack_modes):
            if m not in ATTACK_MODES:
                raise ConfigError(f"experiment.attack_modes[{i}]", f"expected one of {ATTACK_MODES}")
        if not self.attack_modes:
            raise ConfigError("experiment.attack_modes", "must be non-empty")
        if not self.seeds:
            raise ConfigError("experiment.seeds", "must be non-empty")
        n_train = self.n_train
        if not self.learning_curve_sizes:
            raise ConfigError("experiment.learning_curve_sizes", "must be non-empty")
        for i, m in enumerate(self.learning_curve_sizes):
            if not 10 <= m <= n_train:
                raise ConfigError(f"experiment.learning_curve_sizes[{i}]", f"must lie in [10, {n_train}]")
        if self.noise not in ("gaussian", "student_t"):
            raise ConfigError("noise.kind", "expected 'gaussian' or 'student_t'")
        if self.noise == "student_t" and not self.noise_dof > 2:
            raise ConfigError("noise.dof", "must exceed 2")
        if self.policy not in lrt.POLICIES:
            raise ConfigError("verifier.policy", f"expected one of {lrt.POLICIES}")
        if not self.threshold > 0:
            raise ConfigError("verifier.threshold", "must be positive")
        for i, t in enumerate(self.thresholds):
            if not t > 0:
                raise ConfigError(f"verifier.thresholds[{i}]", "must be positive")

    @property
    def n_test_per_class(self) -> int:
        return int(round((1.0 - self.train_fraction) * self.n_total / 2))

    @property
    def n_train(self) -> int:
        return self.n_total - 2 * self.n_test_per_class

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "channel": self.channel_params.to_dict(),
            "verifier": {
                "params": self.verifier_params.to_dict(),
                "policy": self.policy,
                "threshold": self.threshold,
                "thresholds": list(self.thresholds),
            },
            "noise": {"kind": self.noise, "dof": self.noise_dof},
            "experiment": {
                "r_values": list(self.r_values),
                "attack_modes": list(self.attack_modes),
                "n_total": self.n_total,
                "train_fraction": self.train_fraction,
                "learning_curve_sizes": list(self.learning_curve_sizes),
                "seeds": list(self.seeds),
            },
            "train": self.train.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        """Build from the JSON config layout; errors name the offending key path."""
        if not isinstance(d, dict):
            raise ConfigError("<root>", "expected an object")
        known = {"scenario", "channel", "verifier", "noise", "experiment", "train"}
        for k in d:
            if k not in known:
                raise ConfigError(k, "unknown key")
        scenario = Scenario.from_dict(d.get("scenario", {}))
        channel = ChannelParams.from_dict(d.get("channel", {}))

        ver = _section(d, "verifier")
        vparams = channel
        if "params" in ver:
            merged = {**channel.to_dict(), **_section(ver, "params", "verifier.params")}
            vparams = ChannelParams.from_dict(merged, "verifier.params")
        scale = _number(ver, "gamma_scale", 1.0, "verifier")
        vparams = vparams.replace(gamma=vparams.gamma * scale)

        noise = _section(d, "noise")
        exp = _section(d, "experiment")
        kw = dict(
            scenario=scenario,
            channel_params=channel,
            verifier_params=vparams,
            policy=ver.get("policy", lrt.ORACLE),
            threshold=_number(ver, "threshold", 1.0, "verifier"),
            noise=noise.get("kind", "gaussian"),
            noise_dof=_number(noise, "dof", 3.0, "noise"),
        )
        if "thresholds" in ver:
            kw["thresholds"] = tuple(_numbers(ver, "thresholds", "verifier"))
        for name in ("r_values", "learning_curve_sizes", "seeds"):
            if name in exp:
                vals = _numbers(exp, name, "experiment")
                if name != "r_values":
                    for i, v in enumerate(vals):
                        if v != int(v):
                            raise ConfigError(f"experiment.{name}[{i}]", "expected an integer")
                    vals = [int(v) for v in vals]
                kw[name] = tuple(vals)
        if "attack_modes" in exp:
            modes = exp["attack_modes"]
            if not isinstance(modes, list):
                raise ConfigError("experiment.attack_modes", "expected an array")
            kw["attack_modes"] = tuple(modes)
        if "n_total" in exp:
            n = exp["n_total"]
            if isinstance(n, bool) or not isinstance(n, int):
                raise ConfigError("experiment.n_total", "expected an integer")
            kw["n_total"] = n
        if "train_fraction" in exp:
            kw["train_fraction"] = _number(exp, "train_fraction", 0.8, "experiment")

        tr = _section(d, "train")
        fields = neural.TrainConfig.__dataclass_fields__
        for k in tr:
            if k not in fields:
                raise ConfigError(f"train.{k}", "unknown key")
        try:
            kw["train"] = neural.TrainConfig(**tr)
        except (TypeError, ValueError) as exc:
            raise ConfigError("train", str(exc)) from None
        return cls(**kw)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seeds=(int(seed),))


def _section(d: dict, key: str, path: str | None = None) -> dict:
    v = d.get(key, {})
    if not isinstance(v, dict):
        raise ConfigError(path or key, "expected an object")
    return v


def _number(d: dict, key: str, default: float, prefix: str) -> float:
    v = d.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{prefix}.{key}", "expected a number")
    return float(v)


def _numbers(d: dict, key: str, prefix: str) -> list[float]:
    v = d[key]
    if not isinstance(v, list):
        raise ConfigError(f"{prefix}.{key}", "expected an array")
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ConfigError(f"{prefix}.{key}[{i}]", "expected a number")
    return [float(x) for x in v]


@dataclass
class CellResult:
    r: float
    attack_mode: str
    seed: int
    lrt_stats: DetectionStats
    lrt_best_threshold: float
    lrt_best_stats: DetectionStats
    ml_curve: list[tuple[int, DetectionStats]]
    lrt_test_hash: str
    ml_test_hashes: list[str]

    @property
    def ml_final(self) -> DetectionStats:
        return self.ml_curve[-1][1]

    @property
    def n_test(self) -> int:
        return self.lrt_stats.n

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "attack_mode": self.attack_mode,
            "seed": self.seed,
            "lrt": self.lrt_stats.to_dict(),
            "lrt_best": {"ell": self.lrt_best_threshold, **self.lrt_best_stats.to_dict()},
            "ml_curve": [{"train_size": m, **st.to_dict()} for m, st in self.ml_curve],
            "test_hash": self.lrt_test_hash,
        }


@dataclass
class ComparisonResult:
    config: ExperimentConfig
    cells: list[CellResult]

    def cell(self, r: float, attack_mode: str = RANDOM, seed: int | None = None) -> CellResult:
        for c in self.cells:
            if c.r == r and c.attack_mode == attack_mode and (seed is None or c.seed == seed):
                return c
        raise KeyError((r, attack_mode, seed))

    def to_dict(self) -> dict:
        from . import SCHEMA_VERSION, __version__

        return {
            "version": __version__,
            "schema_version": SCHEMA_VERSION,
            "config": self.config.to_dict(),
            "cells": [c.to_dict() for c in self.cells],
        }


def _cell_key(seed: int, r: float, attack_mode: str) -> tuple[int, int, int]:
    return (int(seed), int(round(r * 1000)), ATTACK_MODES.index(attack_mode))


@functools.lru_cache(maxsize=32)
def _dataset(scenario: Scenario, params: ChannelParams, n: int, attack_mode: str, key: tuple) -> tuple:
    # cached: optimized-attack generation dominates runtime and is shared across noise settings
    rng = np.random.default_rng([*key, 0])
    if attack_mode == OPTIMIZED:
        return tuple(generate_optimized_dataset(scenario, params, n, rng))
    return tuple(generate_dataset(scenario, n, rng))


def split_indices(labels, n_test_per_class: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Stratified split. Test indices come back sorted; the training order
    alternates classes so every prefix stays balanced."""
    labels = np.asarray(labels)
    h0 = np.flatnonzero(labels == H0)
    h1 = np.flatnonzero(labels == H1)
    h0, h1 = h0[rng.permutation(h0.size)], h1[rng.permutation(h1.size)]
    test = np.sort(np.concatenate([h0[:n_test_per_class], h1[:n_test_per_class]]))
    a, b = h0[n_test_per_class:], h1[n_test_per_class:]
    k = min(a.size, b.size)
    train = np.empty(2 * k, dtype=int)
    train[0::2], train[1::2] = a[:k], b[:k]
    train = np.concatenate([train, a[k:], b[k:]])
    return train, test


def run_cell(config: ExperimentConfig, r: float, attack_mode: str, seed: int) -> CellResult:
    key = _cell_key(seed, r, attack_mode)
    scenario = config.scenario.with_r(r)
    samples = list(_dataset(scenario, config.channel_params, config.n_total, attack_mode, key))
    true, claim, labels = as_arrays(samples)
    obs = draw_observations(
        config.channel_params, true, scenario.rsus, np.random.default_rng([*key, 1]), kind=config.noise, dof=config.noise_dof
    )
    train_idx, test_idx = split_indices(labels, config.n_test_per_class, np.random.default_rng([*key, 2]))
    misc = np.random.default_rng([*key, 3]).integers(0, 2**31, size=2)

    test_samples = [samples[i] for i in test_idx]
    obs_te, claim_te, lab_te = obs[test_idx], claim[test_idx], labels[test_idx]
    lrt_hash = neural.array_digest(obs_te, claim_te, lab_te)
    verifier = LrtVerifier(config.verifier_params, scenario, config.threshold, config.policy, int(misc[0]))
    score = lrt.scores(verifier, test_samples, obs_te)
    lrt_stats = DetectionStats.from_decisions(lab_te, lrt.decide_from_score(score, verifier.log_threshold), scenario.priors)
    best_ell, best_stats = lrt.best_threshold(lrt.sweep_scores(score, lab_te, config.thresholds, scenario.priors))

    x_raw = neural.raw_features(scenario, obs, claim)
    x_te = x_raw[test_idx]
    n = scenario.n_rsus
    curve, hashes = [], []
    train_cfg = replace(config.train, rng_seed=int(misc[1]))
    for m in config.learning_curve_sizes:
        idx = train_idx[:m]
        model, _ = neural.train(x_raw[idx], labels[idx], train_cfg)
        hashes.append(neural.array_digest(x_te[:, :n], x_te[:, n : n + 2], lab_te))
        if hashes[-1] != lrt_hash:
            raise RuntimeError("ML and LRT test sets diverged")
        decisions, _ = neural.classify(model, model.standardizer.apply(x_te))
        curve.append((int(m), DetectionStats.from_decisions(lab_te, decisions, scenario.priors)))
    return CellResult(r, attack_mode, seed, lrt_stats, best_ell, best_stats, curve, lrt_hash, hashes)


def run_comparison(config: ExperimentConfig) -> ComparisonResult:
    """Every (seed, attack mode, r) cell; each is deterministic in its own seed."""
    cells = [
        run_cell(config, float(r), mode, int(seed))
        for seed in config.seeds
        for mode in config.attack_modes
        for r in config.r_values
    ]
    return ComparisonResult(config, cells)


def learning_curve(result: ComparisonResult) -> str:
    """CSV of ML test error per training size, plus LRT baseline rows (train_size = -1)."""
    multi_seed = len(result.config.seeds) > 1
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_HEADER + (("seed",) if multi_seed else ()))
    for c in result.cells:
        tail = [c.seed] if multi_seed else []
        w.writerow([repr(c.r), c.attack_mode, BASELINE_SIZE, repr(c.lrt_stats.alpha), repr(c.lrt_stats.beta), repr(c.lrt_stats.total_error)] + tail)
        for m, st in c.ml_curve:
            w.writerow([repr(c.r), c.attack_mode, m, repr(st.alpha), repr(st.beta), repr(st.total_error)] + tail)
    return buf.getvalue()
