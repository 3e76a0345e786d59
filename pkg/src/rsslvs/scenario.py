"""Verification geometry: RSU layout, vehicle placement and spoofed claims."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, InfeasibleError

H0 = 0  # legitimate: claim == truth
H1 = 1  # malicious: claim displaced by >= r

# Pathloss diverges at the antenna; sources closer than this to an RSU are rejected.
D_MIN = 1.0

DATASET_HEADER = ("label", "true_x", "true_y", "claim_x", "claim_y")


class Location(NamedTuple):
    """Planar position in meters."""

    x: float
    y: float


class GroundTruthSample(NamedTuple):
    true_loc: Location
    claimed_loc: Location
    label: int


def distance(a: Sequence[float], b: Sequence[float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


@dataclass(frozen=True)
class Scenario:
    """RSU deployment plus the attack model parameters.

    ``spoof_spread`` controls the displacement of random spoofed claims,
    drawn uniformly from ``[r, r + spoof_spread]``; zero puts every claim
    exactly at distance ``r``.
    """

    rsus: tuple[Location, ...]
    area: tuple[Location, Location]
    tx_range: float = 300.0
    r: float = 50.0
    prior_h0: float = 0.5
    prior_h1: float = 0.5
    spoof_spread: float = 50.0

    def __post_init__(self):
        object.__setattr__(self, "rsus", tuple(Location(float(x), float(y)) for x, y in self.rsus))
        lo, hi = self.area
        object.__setattr__(self, "area", (Location(float(lo[0]), float(lo[1])), Location(float(hi[0]), float(hi[1]))))
        lo, hi = self.area
        if len(self.rsus) < 1:
            raise ValueError("at least one RSU is required")
        coords = [lo.x, lo.y, hi.x, hi.y, self.tx_range, self.r, self.spoof_spread]
        coords += [c for p in self.rsus for c in p]
        if not all(math.isfinite(c) for c in coords):
            raise ValueError("scenario values must be finite")
        if lo.x > hi.x or lo.y > hi.y:
            raise ValueError("area min corner must not exceed max corner")
        if not self.r > 0:
            raise ValueError(f"r must be positive, got {self.r}")
        if not self.tx_range > 0:
            raise ValueError(f"tx_range must be positive, got {self.tx_range}")
        if self.spoof_spread < 0:
            raise ValueError("spoof_spread must be non-negative")
        for p in (self.prior_h0, self.prior_h1):
            if not 0.0 <= p <= 1.0:
                raise ValueError("priors must lie in [0, 1]")
        if abs(self.prior_h0 + self.prior_h1 - 1.0) > 1e-12:
            raise ValueError("priors must sum to 1")
        for p in self.rsus:
            if not self.contains(p):
                raise ValueError(f"RSU {tuple(p)} lies outside the area")
        if len(set(self.rsus)) != len(self.rsus):
            raise ValueError("RSU positions must be pairwise distinct")

    @property
    def n_rsus(self) -> int:
        return len(self.rsus)

    @property
    def rsu_array(self) -> np.ndarray:
        return np.array(self.rsus, dtype=float)

    @property
    def priors(self) -> tuple[float, float]:
        return (self.prior_h0, self.prior_h1)

    def contains(self, p: Sequence[float]) -> bool:
        lo, hi = self.area
        return lo.x <= p[0] <= hi.x and lo.y <= p[1] <= hi.y

    def covered(self, p: Sequence[float]) -> bool:
        """Within tx_range of at least one RSU."""
        return any(distance(p, q) <= self.tx_range for q in self.rsus)

    def clear_of_rsus(self, p: Sequence[float]) -> bool:
        return all(distance(p, q) >= D_MIN for q in self.rsus)

    def with_r(self, r: float) -> "Scenario":
        return Scenario(self.rsus, self.area, self.tx_range, r, self.prior_h0, self.prior_h1, self.spoof_spread)

    def to_dict(self) -> dict:
        lo, hi = self.area
        return {
            "rsus": [[p.x, p.y] for p in self.rsus],
            "area": [[lo.x, lo.y], [hi.x, hi.y]],
            "tx_range": self.tx_range,
            "r": self.r,
            "priors": [self.prior_h0, self.prior_h1],
            "spoof_spread": self.spoof_spread,
        }

    @classmethod
    def from_dict(cls, d: dict, key: str = "scenario") -> "Scenario":
        base = default_scenario()
        if not isinstance(d, dict):
            raise ConfigError(key, "expected an object")
        try:
            rsus = [Location(*map(float, p)) for p in d.get("rsus", base.rsus)]
        except (TypeError, ValueError):
            raise ConfigError(f"{key}.rsus", "expected an array of [x, y] pairs") from None
        try:
            lo, hi = d.get("area", base.area)
            area = (Location(*map(float, lo)), Location(*map(float, hi)))
        except (TypeError, ValueError):
            raise ConfigError(f"{key}.area", "expected [[xmin, ymin], [xmax, ymax]]") from None
        try:
            p0, p1 = (float(p) for p in d.get("priors", base.priors))
        except (TypeError, ValueError):
            raise ConfigError(f"{key}.priors", "expected [p0, p1]") from None
        scalars = {}
        for name in ("tx_range", "r", "spoof_spread"):
            v = d.get(name, getattr(base, name))
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{key}.{name}", "expected a number")
            scalars[name] = float(v)
        try:
            return cls(rsus=tuple(rsus), area=area, prior_h0=p0, prior_h1=p1, **scalars)
        except ValueError as exc:
            raise ConfigError(key, str(exc)) from None


def default_scenario(
    rsus: Iterable[Sequence[float]] = ((0.0, 0.0), (150.0, 0.0), (75.0, 150.0)),
    **overrides,
) -> Scenario:
    """150 x 150 m area, RSU-1 at the origin, three RSUs, equal priors."""
    kw = dict(area=(Location(0.0, 0.0), Location(150.0, 150.0)), tx_range=300.0, r=50.0)
    kw.update(overrides)
    return Scenario(rsus=tuple(Location(*p) for p in rsus), **kw)


def sample_true_location(scenario: Scenario, rng: np.random.Generator) -> Location:
    lo, hi = scenario.area
    x = lo.x if lo.x == hi.x else float(rng.uniform(lo.x, hi.x))
    y = lo.y if lo.y == hi.y else float(rng.uniform(lo.y, hi.y))
    return Location(x, y)


def displace(origin: Location, angle: float, dist: float, r: float) -> Location:
    # Round-off can leave the realised displacement a hair under r; grow until it is not.
    ca, sa = math.cos(angle), math.sin(angle)
    while True:
        claim = Location(origin.x + dist * ca, origin.y + dist * sa)
        got = distance(claim, origin)
        if got >= r:
            return claim
        dist += (r - got) + r * 1e-15


def sample_spoofed_claim(
    scenario: Scenario,
    true_loc: Location,
    rng: np.random.Generator,
    max_tries: int = 10_000,
) -> Location:
    """Random claim at displacement >= r, inside coverage and clear of every RSU."""
    r, r_max = scenario.r, scenario.r + scenario.spoof_spread
    if all(distance(true_loc, q) + scenario.tx_range < r for q in scenario.rsus):
        raise InfeasibleError(f"no covered point lies {r} m from {tuple(true_loc)}")
    for _ in range(max_tries):
        angle = rng.uniform(0.0, 2.0 * math.pi)
        dist = r if r_max == r else rng.uniform(r, r_max)
        claim = displace(true_loc, angle, dist, r)
        if scenario.covered(claim) and scenario.clear_of_rsus(claim):
            return claim
    raise InfeasibleError(f"could not place a covered claim {r}-{r_max} m from {tuple(true_loc)}")


def _sample_clear_location(scenario: Scenario, rng: np.random.Generator, max_tries: int = 10_000) -> Location:
    for _ in range(max_tries):
        p = sample_true_location(scenario, rng)
        if scenario.clear_of_rsus(p):
            return p
    raise InfeasibleError("area has no point clear of the RSUs")


def balanced_dataset(scenario: Scenario, n_samples: int, rng: np.random.Generator, make_claim) -> list[GroundTruthSample]:
    if n_samples <= 0 or n_samples % 2:
        raise ValueError(f"n_samples must be a positive even count, got {n_samples}")
    n_h0 = int(round(n_samples * scenario.prior_h0))
    truths = [_sample_clear_location(scenario, rng) for _ in range(n_samples)]
    samples = [GroundTruthSample(t, t, H0) for t in truths[:n_h0]]
    samples += [GroundTruthSample(t, make_claim(t), H1) for t in truths[n_h0:]]
    order = rng.permutation(n_samples)
    return [samples[i] for i in order]


def generate_dataset(scenario: Scenario, n_samples: int, rng: np.random.Generator) -> list[GroundTruthSample]:
    """Shuffled labelled set with H0/H1 counts set by the priors (n/2 each by default)."""
    return balanced_dataset(scenario, n_samples, rng, lambda t: sample_spoofed_claim(scenario, t, rng))


def as_arrays(samples: Sequence[GroundTruthSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(true (n,2), claimed (n,2), labels (n,)) views of a dataset."""
    true = np.array([s.true_loc for s in samples], dtype=float).reshape(-1, 2)
    claim = np.array([s.claimed_loc for s in samples], dtype=float).reshape(-1, 2)
    labels = np.array([s.label for s in samples], dtype=int)
    return true, claim, labels


def dataset_to_csv(samples: Sequence[GroundTruthSample]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DATASET_HEADER)
    for s in samples:
        w.writerow([s.label, repr(s.true_loc.x), repr(s.true_loc.y), repr(s.claimed_loc.x), repr(s.claimed_loc.y)])
    return buf.getvalue()


def dataset_from_csv(text: str) -> list[GroundTruthSample]:
    rows = csv.DictReader(io.StringIO(text))
    if tuple(rows.fieldnames or ()) [:5] != DATASET_HEADER:
        raise ValueError(f"dataset header must start with {','.join(DATASET_HEADER)}")
    out = []
    for row in rows:
        t = Location(float(row["true_x"]), float(row["true_y"]))
        c = Location(float(row["claim_x"]), float(row["claim_y"]))
        out.append(GroundTruthSample(t, c, int(row["label"])))
    return out
