"""Likelihood-ratio verifier and detection statistics."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .adversary import mean_gap_sq
from .channel import ChannelParams, mean_rss
from .scenario import H0, H1, GroundTruthSample, Location, Scenario, as_arrays, displace, sample_spoofed_claim

D0, D1 = 0, 1

ORACLE = "oracle"
WORST_CASE = "worst_case"
POLICIES = (ORACLE, WORST_CASE)

STATS_HEADER = ("ell", "alpha", "beta", "total_error", "n_h0", "n_h1")


@dataclass(frozen=True)
class DetectionStats:
    """Confusion counts plus priors; rates are derived, never stored."""

    n_h0: int
    n_h1: int
    false_positives: int
    true_detections: int
    prior_h0: float = 0.5
    prior_h1: float = 0.5

    @property
    def alpha(self) -> float:
        return self.false_positives / self.n_h0

    @property
    def beta(self) -> float:
        return self.true_detections / self.n_h1

    @property
    def total_error(self) -> float:
        return self.prior_h0 * self.alpha + self.prior_h1 * (1.0 - self.beta)

    @property
    def n(self) -> int:
        return self.n_h0 + self.n_h1

    @classmethod
    def from_decisions(cls, labels, decisions, priors=(0.5, 0.5)) -> "DetectionStats":
        labels = np.asarray(labels)
        decisions = np.asarray(decisions)
        n_h0 = int(np.sum(labels == H0))
        n_h1 = int(np.sum(labels == H1))
        if n_h0 == 0 or n_h1 == 0:
            raise ValueError("dataset must contain both H0 and H1 samples")
        fp = int(np.sum((labels == H0) & (decisions == D1)))
        td = int(np.sum((labels == H1) & (decisions == D1)))
        return cls(n_h0, n_h1, fp, td, float(priors[0]), float(priors[1]))

    def merge(self, other: "DetectionStats") -> "DetectionStats":
        if (self.prior_h0, self.prior_h1) != (other.prior_h0, other.prior_h1):
            raise ValueError("cannot merge stats with different priors")
        return DetectionStats(
            self.n_h0 + other.n_h0,
            self.n_h1 + other.n_h1,
            self.false_positives + other.false_positives,
            self.true_detections + other.true_detections,
            self.prior_h0,
            self.prior_h1,
        )

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "total_error": self.total_error,
            "n_h0": self.n_h0,
            "n_h1": self.n_h1,
            "false_positives": self.false_positives,
            "true_detections": self.true_detections,
            "priors": [self.prior_h0, self.prior_h1],
        }


@dataclass(frozen=True)
class LrtVerifier:
    """Threshold test on the Gaussian log-likelihood ratio.

    ``policy`` picks the H1 true-location candidate that fixes ``v``:

    * ``oracle`` uses the sample's real true location for malicious samples
      and, for legitimate ones, a decoy drawn like a random spoof around the
      claim (seeded by ``decoy_seed``), so both classes see the same geometry.
    * ``worst_case`` uses the location at distance ``r`` from the claim whose
      mean RSS is closest to the claim's; it needs no ground truth.
    """

    params: ChannelParams
    scenario: Scenario
    threshold: float = 1.0
    policy: str = ORACLE
    decoy_seed: int = 0

    def __post_init__(self):
        if not (self.threshold > 0 and math.isfinite(math.log(self.threshold))):
            raise ValueError("threshold must be positive with a finite log")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")

    @property
    def log_threshold(self) -> float:
        return math.log(self.threshold)


def log_likelihood_ratio(verifier: LrtVerifier, obs, claimed, h1_true_candidate) -> float | np.ndarray:
    """ln p(y|H1) - ln p(y|H0); broadcasts over leading axes."""
    rsus = verifier.scenario.rsus
    u = mean_rss(verifier.params, claimed, rsus)
    v = mean_rss(verifier.params, h1_true_candidate, rsus)
    obs = np.asarray(obs, dtype=float)
    if obs.shape[-1] != u.shape[-1]:
        raise ValueError(f"observation has {obs.shape[-1]} entries, expected {u.shape[-1]}")
    num = np.sum((obs - u) ** 2, axis=-1) - np.sum((obs - v) ** 2, axis=-1)
    return num / (2.0 * verifier.params.sigma_t**2)


def decide_from_score(score, log_threshold: float):
    # ">=" sends ties to D1
    return np.where(np.asarray(score) >= log_threshold, D1, D0)


def decide(verifier: LrtVerifier, obs, claimed, h1_true_candidate) -> int:
    score = log_likelihood_ratio(verifier, obs, claimed, h1_true_candidate)
    return int(decide_from_score(score, verifier.log_threshold))


def worst_case_candidates(params: ChannelParams, rsus, claims, r: float, steps: int = 360) -> np.ndarray:
    """Per claim, the point on its radius-``r`` circle (1-degree scan) minimising the mean gap."""
    claims = np.asarray(claims, dtype=float).reshape(-1, 2)
    out = np.empty_like(claims)
    ang = np.deg2rad(np.arange(steps) * (360.0 / steps))
    for i, c in enumerate(claims):
        origin = Location(float(c[0]), float(c[1]))
        ring = np.array([displace(origin, a, r, r) for a in ang])
        gap = mean_gap_sq(params, rsus, c, ring)
        k = np.lexsort((ring[:, 1], ring[:, 0], gap))[0]
        if not np.isfinite(gap[k]):
            raise ValueError(f"no usable worst-case candidate around {tuple(c)}")
        out[i] = ring[k]
    return out


def h1_candidates(verifier: LrtVerifier, samples: Sequence[GroundTruthSample]) -> np.ndarray:
    true, claim, labels = as_arrays(samples)
    if verifier.policy == WORST_CASE:
        return worst_case_candidates(verifier.params, verifier.scenario.rsus, claim, verifier.scenario.r)
    rng = np.random.default_rng(verifier.decoy_seed)
    out = true.copy()
    for i in np.flatnonzero(labels == H0):
        out[i] = sample_spoofed_claim(verifier.scenario, Location(*claim[i]), rng)
    return out


def scores(verifier: LrtVerifier, samples: Sequence[GroundTruthSample], observations, candidates=None) -> np.ndarray:
    """Log-ratio per sample, computed once so thresholds can be swept cheaply."""
    _, claim, _ = as_arrays(samples)
    cand = h1_candidates(verifier, samples) if candidates is None else np.asarray(candidates, dtype=float)
    return log_likelihood_ratio(verifier, np.asarray(observations, dtype=float), claim, cand)


def evaluate(verifier: LrtVerifier, samples, observations, candidates=None) -> DetectionStats:
    if len(samples) == 0:
        raise ValueError("empty dataset")
    s = scores(verifier, samples, observations, candidates)
    labels = np.array([x.label for x in samples])
    return DetectionStats.from_decisions(labels, decide_from_score(s, verifier.log_threshold), verifier.scenario.priors)


def sweep_scores(score, labels, thresholds, priors=(0.5, 0.5)) -> list[tuple[float, DetectionStats]]:
    if len(thresholds) == 0:
        raise ValueError("thresholds must be non-empty")
    out = []
    for ell in thresholds:
        if not ell > 0:
            raise ValueError(f"threshold must be positive, got {ell}")
        log_ell = math.log(ell) if math.isfinite(ell) else math.inf
        out.append((float(ell), DetectionStats.from_decisions(labels, decide_from_score(score, log_ell), priors)))
    return out


def sweep_threshold(verifier: LrtVerifier, samples, observations, thresholds, candidates=None):
    """DetectionStats for each threshold, from one pass of score computation."""
    s = scores(verifier, samples, observations, candidates)
    labels = np.array([x.label for x in samples])
    return sweep_scores(s, labels, thresholds, verifier.scenario.priors)


def best_threshold(sweep) -> tuple[float, DetectionStats]:
    return min(sweep, key=lambda item: (item[1].total_error, item[0]))


def log_grid(lo: float = 1e-3, hi: float = 1e3, n: int = 121) -> list[float]:
    return list(np.logspace(math.log10(lo), math.log10(hi), n))


def stats_csv(rows: Sequence[tuple[float, DetectionStats]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STATS_HEADER)
    for ell, st in rows:
        w.writerow([repr(ell), repr(st.alpha), repr(st.beta), repr(st.total_error), st.n_h0, st.n_h1])
    return buf.getvalue()
