"""KL-optimal spoofing: pick the claim whose H0 observation law is closest to the truth's."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .channel import ChannelParams, mean_rss, rsu_distances
from .errors import InfeasibleError
from .scenario import (
    D_MIN,
    H1,
    GroundTruthSample,
    Location,
    Scenario,
    balanced_dataset,
    displace,
    distance,
)

GRID_STEP = 5.0
CIRCLE_STEPS = 360
N_REFINE_STARTS = 3


def kl_divergence(params: ChannelParams, rsus, true_loc, claimed_loc) -> float:
    """D(f(y|H1) || f(y|H0)) in nats for isotropic Gaussians sharing sigma_t."""
    v = mean_rss(params, true_loc, rsus)
    u = mean_rss(params, claimed_loc, rsus)
    return float(np.sum((v - u) ** 2) / (2.0 * params.sigma_t**2))


def mean_gap_sq(params: ChannelParams, rsus, true_loc, claims) -> np.ndarray:
    """||v(true) - u(claim)||^2 for many claims; inf where a claim is within D_MIN of an RSU."""
    d = rsu_distances(claims, rsus)
    bad = np.any(d < D_MIN, axis=-1)
    u = params.p_d0 - 10.0 * params.gamma * np.log10(np.maximum(d, D_MIN) / params.d0)
    v = mean_rss(params, true_loc, rsus)
    gap = np.sum((u - v) ** 2, axis=-1)
    return np.where(bad, np.inf, gap)


@dataclass(frozen=True)
class AttackConstraints:
    """Feasible set for the attacker's claim.

    The claim must sit at least ``r`` from the true location, within
    ``tx_range`` of some RSU, clear of every RSU by ``D_MIN``, and inside
    ``search_region`` (``(xmin, ymin, xmax, ymax)``).
    """

    r: float
    tx_range: float
    search_region: tuple[float, float, float, float]

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("r must be positive")
        if not self.tx_range > 0:
            raise ValueError("tx_range must be positive")
        x0, y0, x1, y1 = self.search_region
        if not (x1 > x0 and y1 > y0):
            raise ValueError("search_region must be non-degenerate")

    @classmethod
    def from_scenario(cls, scenario: Scenario, margin: float | None = None) -> "AttackConstraints":
        """Search the area inflated by ``r + spoof_spread`` unless a margin is given."""
        m = scenario.r + scenario.spoof_spread if margin is None else margin
        lo, hi = scenario.area
        return cls(scenario.r, scenario.tx_range, (lo.x - m, lo.y - m, hi.x + m, hi.y + m))


def _feasible_mask(points: np.ndarray, true_loc, rsus, c: AttackConstraints) -> np.ndarray:
    x0, y0, x1, y1 = c.search_region
    d_rsu = rsu_distances(points, rsus)
    disp = np.hypot(points[..., 0] - true_loc[0], points[..., 1] - true_loc[1])
    return (
        (disp >= c.r)
        & np.any(d_rsu <= c.tx_range, axis=-1)
        & np.all(d_rsu >= D_MIN, axis=-1)
        & (points[..., 0] >= x0) & (points[..., 0] <= x1)
        & (points[..., 1] >= y0) & (points[..., 1] <= y1)
    )


def _feasible(p, true_loc, rsus, c: AttackConstraints) -> bool:
    return bool(_feasible_mask(np.asarray(p, dtype=float)[None, :], true_loc, rsus, c)[0])


def feasible_grid(true_loc, rsus, c: AttackConstraints, step: float) -> np.ndarray:
    """Feasible points of a ``step``-spaced lattice anchored at the search-region corner."""
    x0, y0, x1, y1 = c.search_region
    xs = x0 + step * np.arange(int(math.floor((x1 - x0) / step + 1e-9)) + 1)
    ys = y0 + step * np.arange(int(math.floor((y1 - y0) / step + 1e-9)) + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    return pts[_feasible_mask(pts, true_loc, rsus, c)]


def _best(points: np.ndarray, values: np.ndarray) -> int:
    # min value; ties broken by smallest x then y
    order = np.lexsort((points[:, 1], points[:, 0], values))
    return int(order[0])


def _project(p: np.ndarray, true_loc, c: AttackConstraints) -> np.ndarray:
    """Clip to the search region, then push radially out to the r circle if inside it."""
    x0, y0, x1, y1 = c.search_region
    q = np.array([min(max(p[0], x0), x1), min(max(p[1], y0), y1)])
    t = Location(float(true_loc[0]), float(true_loc[1]))
    dist = distance(q, t)
    if dist < c.r:
        angle = math.atan2(q[1] - t.y, q[0] - t.x) if dist > 0 else 0.0
        q = np.array(displace(t, angle, c.r, c.r))
    return q


def optimize_claim(
    params: ChannelParams,
    rsus,
    true_loc,
    constraints: AttackConstraints,
    grid_step: float = GRID_STEP,
) -> tuple[Location, float]:
    """Minimise the KL divergence over feasible claims.

    A ``grid_step`` lattice and a 1-degree scan of the ``r`` circle seed
    Nelder-Mead runs on the projected objective; the best feasible point
    seen anywhere wins. The objective is the squared mean gap, so the
    argmin does not depend on ``sigma_t``.

    Returns
    -------
    claim, divergence
        The claimed location and its divergence in nats.
    """
    t = np.asarray(true_loc, dtype=float)
    rsus = np.asarray(rsus, dtype=float).reshape(-1, 2)
    grid = feasible_grid(t, rsus, constraints, grid_step)
    ang = np.deg2rad(np.arange(CIRCLE_STEPS, dtype=float))
    circle = np.array([displace(Location(*t), a, constraints.r, constraints.r) for a in ang])
    circle = circle[_feasible_mask(circle, t, rsus, constraints)]
    cand = np.concatenate([grid, circle]) if grid.size else circle
    if cand.size == 0:
        raise InfeasibleError(f"no feasible claim for true location {tuple(t)} at r={constraints.r}")
    vals = mean_gap_sq(params, rsus, t, cand)

    order = np.lexsort((cand[:, 1], cand[:, 0], vals))
    starts = [cand[order[0]]]
    for i in order[1:]:
        if len(starts) >= N_REFINE_STARTS:
            break
        if all(np.hypot(*(cand[i] - s)) > 2 * grid_step for s in starts):
            starts.append(cand[i])

    v = mean_rss(params, t, rsus).tolist()
    rsu_list = rsus.tolist()
    k_log = 10.0 * params.gamma

    def gap(q) -> float:
        # scalar fast path of mean_gap_sq with the feasibility test folded in
        covered, acc = False, 0.0
        for (rx, ry), vi in zip(rsu_list, v):
            d = math.hypot(q[0] - rx, q[1] - ry)
            if d < D_MIN:
                return math.inf
            covered = covered or d <= constraints.tx_range
            acc += (params.p_d0 - k_log * math.log10(d / params.d0) - vi) ** 2
        if not covered or math.hypot(q[0] - t[0], q[1] - t[1]) < constraints.r:
            return math.inf
        return acc

    def objective(p):
        return gap(_project(p, t, constraints))

    pts, fs = [cand[order[0]]], [vals[order[0]]]
    for s in starts:
        res = minimize(
            objective, s, method="Nelder-Mead",
            options={"xatol": 1e-7, "fatol": 1e-12, "maxiter": 1000, "initial_simplex": s + grid_step / 2 * np.array([[0, 0], [1, 0], [0, 1]])},
        )
        q = _project(res.x, t, constraints)
        if _feasible(q, t, rsus, constraints):
            pts.append(q)
            fs.append(gap(q))
    pts, fs = np.array(pts), np.array(fs)
    k = _best(pts, fs)
    claim = Location(float(pts[k, 0]), float(pts[k, 1]))
    return claim, kl_divergence(params, rsus, t, claim)


def generate_optimized_dataset(
    scenario: Scenario,
    params: ChannelParams,
    n_samples: int,
    rng: np.random.Generator,
    constraints: AttackConstraints | None = None,
) -> list[GroundTruthSample]:
    """Like ``generate_dataset`` but every H1 claim is the KL-optimal one."""
    c = constraints or AttackConstraints.from_scenario(scenario)
    return balanced_dataset(scenario, n_samples, rng, lambda t: optimize_claim(params, scenario.rsus, t, c)[0])


def attack_rows(samples, params: ChannelParams, rsus) -> list[tuple[float, float, float, float, float]]:
    """(true_x, true_y, claim_x, claim_y, kl) for each malicious sample."""
    return [
        (s.true_loc.x, s.true_loc.y, s.claimed_loc.x, s.claimed_loc.y, kl_divergence(params, rsus, s.true_loc, s.claimed_loc))
        for s in samples
        if s.label == H1
    ]
