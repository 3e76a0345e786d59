import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rsslvs import ConfigError, InfeasibleError, Location, Scenario, default_scenario
from rsslvs.scenario import (
    H0,
    H1,
    D_MIN,
    dataset_from_csv,
    dataset_to_csv,
    distance,
    generate_dataset,
    sample_spoofed_claim,
    sample_true_location,
)


def test_default_scenario_layout():
    sc = default_scenario()
    assert sc.rsus[0] == (0.0, 0.0)
    assert sc.area == ((0.0, 0.0), (150.0, 150.0))
    assert sc.n_rsus == 3
    assert sc.prior_h0 == sc.prior_h1 == 0.5
    assert sc.tx_range == 300.0


@pytest.mark.parametrize(
    "kw, match",
    [
        (dict(r=0.0), "r must be positive"),
        (dict(tx_range=-1.0), "tx_range"),
        (dict(prior_h0=0.7, prior_h1=0.4), "sum to 1"),
        (dict(prior_h0=1.2, prior_h1=-0.2), r"\[0, 1\]"),
    ],
)
def test_scenario_rejects_invalid(kw, match):
    with pytest.raises(ValueError, match=match):
        default_scenario(**kw)


def test_scenario_rejects_bad_rsus():
    with pytest.raises(ValueError, match="outside"):
        default_scenario(rsus=[(0, 0), (200, 0)])
    with pytest.raises(ValueError, match="distinct"):
        default_scenario(rsus=[(0, 0), (0, 0)])


def test_true_location_deterministic(scenario):
    a = sample_true_location(scenario, np.random.default_rng(7))
    b = sample_true_location(scenario, np.random.default_rng(7))
    assert a == b


def test_true_location_uniform_mean(scenario):
    rng = np.random.default_rng(3)
    pts = np.array([sample_true_location(scenario, rng) for _ in range(10_000)])
    assert np.all(np.abs(pts.mean(axis=0) - 75.0) < 5.0)
    assert pts.min() >= 0.0 and pts.max() <= 150.0


def test_true_location_degenerate_area():
    sc = Scenario(rsus=((10.0, 10.0),), area=((10.0, 10.0), (10.0, 10.0)))
    rng = np.random.default_rng(0)
    assert all(sample_true_location(sc, rng) == (10.0, 10.0) for _ in range(5))


def test_spoofed_claims_respect_r(scenario):
    rng = np.random.default_rng(11)
    true = [sample_true_location(scenario, rng) for _ in range(1000)]
    claims = [sample_spoofed_claim(scenario, t, rng) for t in true]
    disp = np.array([distance(c, t) for c, t in zip(claims, true)])
    assert disp.min() >= scenario.r
    assert disp.max() <= scenario.r + scenario.spoof_spread + 1e-9
    assert all(scenario.covered(c) and scenario.clear_of_rsus(c) for c in claims)


def test_spoofed_claims_exactly_at_r():
    sc = default_scenario(r=75.0, spoof_spread=0.0)
    rng = np.random.default_rng(2)
    for _ in range(500):
        t = sample_true_location(sc, rng)
        d = distance(sample_spoofed_claim(sc, t, rng), t)
        assert 75.0 <= d < 75.0 + 1e-9


def test_spoofed_claim_infeasible():
    sc = default_scenario(tx_range=5.0, r=1000.0)
    with pytest.raises(InfeasibleError):
        sample_spoofed_claim(sc, Location(75.0, 75.0), np.random.default_rng(0))


def test_dataset_balance_and_labels(scenario):
    ds = generate_dataset(scenario, 1000, np.random.default_rng(5))
    labels = [s.label for s in ds]
    assert labels.count(H0) == 500 and labels.count(H1) == 500
    for s in ds:
        if s.label == H0:
            assert s.claimed_loc is s.true_loc or s.claimed_loc == s.true_loc
            assert np.array(s.claimed_loc).tobytes() == np.array(s.true_loc).tobytes()
        else:
            assert distance(s.claimed_loc, s.true_loc) >= scenario.r
        assert scenario.clear_of_rsus(s.true_loc)


def test_minimal_dataset(scenario):
    ds = generate_dataset(scenario, 2, np.random.default_rng(1))
    assert sorted(s.label for s in ds) == [H0, H1]


@pytest.mark.parametrize("n", [0, 3, 999])
def test_dataset_rejects_odd_or_empty(scenario, n):
    with pytest.raises(ValueError):
        generate_dataset(scenario, n, np.random.default_rng(0))


def test_dataset_seed_reproducible(scenario):
    a = dataset_to_csv(generate_dataset(scenario, 200, np.random.default_rng(9)))
    b = dataset_to_csv(generate_dataset(scenario, 200, np.random.default_rng(9)))
    assert a == b
    assert a.splitlines()[0] == "label,true_x,true_y,claim_x,claim_y"


def test_dataset_csv_round_trip(scenario):
    ds = generate_dataset(scenario, 50, np.random.default_rng(4))
    assert dataset_from_csv(dataset_to_csv(ds)) == ds


@settings(max_examples=25, deadline=None)
@given(r=st.floats(1.0, 150.0), spread=st.sampled_from([0.0, 10.0, 50.0]), seed=st.integers(0, 2**32 - 1))
def test_h1_displacement_property(r, spread, seed):
    sc = default_scenario(r=r, spoof_spread=spread)
    for s in generate_dataset(sc, 40, np.random.default_rng(seed)):
        if s.label == H1:
            assert math.hypot(s.claimed_loc.x - s.true_loc.x, s.claimed_loc.y - s.true_loc.y) >= r
        else:
            assert s.claimed_loc == s.true_loc


def test_scenario_json_round_trip(scenario):
    assert Scenario.from_dict(scenario.to_dict()) == scenario


@pytest.mark.parametrize(
    "d, key",
    [
        ({"rsus": "nope"}, "scenario.rsus"),
        ({"area": [1, 2, 3]}, "scenario.area"),
        ({"r": "far"}, "scenario.r"),
        ({"priors": [0.5]}, "scenario.priors"),
    ],
)
def test_scenario_config_errors_name_key(d, key):
    with pytest.raises(ConfigError) as exc:
        Scenario.from_dict(d)
    assert exc.value.key == key


def test_d_min_is_one_meter():
    assert D_MIN == 1.0
