import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from difftune.nn import ConfigError
from difftune.preferences import (CorruptionSpec, PreferencePair, bt_sample,
                                  corrupt, load_preferences, pair_cartesian,
                                  save_preferences)


def test_cartesian_20x20_is_400():
    pairs = pair_cartesian([f"w{i}" for i in range(20)], [f"l{i}" for i in range(20)])
    assert len(pairs) == 400
    assert all(p.observed_winner_is_first and not p.corrupted for p in pairs)


def test_cartesian_empty_winners():
    assert pair_cartesian([], ["l0", "l1"]) == []


def test_cartesian_2x3_distinct_combinations():
    pairs = pair_cartesian(["w0", "w1"], ["l0", "l1", "l2"])
    assert len(pairs) == 6
    assert len({(p.winner_id, p.loser_id) for p in pairs}) == 6


def test_corrupt_rate_zero_is_identity():
    pairs = pair_cartesian(["w0", "w1"], ["l0", "l1"])
    assert corrupt(pairs, CorruptionSpec(0.0, 5)) == pairs


def test_corrupt_rate_one_flips_everything():
    pairs = pair_cartesian(["w0", "w1"], ["l0", "l1"])
    out = corrupt(pairs, CorruptionSpec(1.0, 5))
    assert all(not p.observed_winner_is_first and p.corrupted for p in out)


def test_corrupt_exact_count_and_seed_stability():
    pairs = pair_cartesian([f"w{i}" for i in range(20)], [f"l{i}" for i in range(20)])
    a = corrupt(pairs, CorruptionSpec(0.3, 11))
    b = corrupt(pairs, CorruptionSpec(0.3, 11))
    assert sum(p.corrupted for p in a) == 120
    assert a == b
    c = corrupt(pairs, CorruptionSpec(0.3, 12))
    assert c != a  # a different seed picks a different subset


def test_corrupt_uniformity_chi_squared():
    # 1000 seeds x exactly 120 flips over 400 positions; goodness of fit
    # must not reject uniformity at the 1% level.
    pairs = pair_cartesian([f"w{i}" for i in range(20)], [f"l{i}" for i in range(20)])
    n_seeds = 1000
    counts = np.zeros(len(pairs))
    for seed in range(n_seeds):
        flipped = corrupt(pairs, CorruptionSpec(0.3, seed))
        counts += [p.corrupted for p in flipped]
    expected = n_seeds * 0.3
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    cutoff = stats.chi2.ppf(0.99, df=len(pairs) - 1)
    assert chi2 < cutoff


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 40), st.floats(0.0, 1.0), st.integers(0, 2 ** 31 - 1))
def test_corrupt_is_involution(n, rate, seed):
    pairs = pair_cartesian([f"w{i}" for i in range(n)], ["l0"])
    spec = CorruptionSpec(rate, seed)
    assert corrupt(corrupt(pairs, spec), spec) == pairs


def test_corruption_spec_validates_rate():
    with pytest.raises(ConfigError):
        CorruptionSpec(1.5, 0)


def test_bt_sample_symmetric_utilities():
    rng = np.random.default_rng(0)
    draws = [bt_sample(1.0, 1.0, 0.5, rng) for _ in range(20_000)]
    rate = np.mean(draws)
    assert abs(rate - 0.5) < 3 * np.sqrt(0.25 / 20_000)


def test_bt_sample_log3_gap_gives_three_quarters():
    # sigmoid(ln 3) = 3/4 analytically.
    rng = np.random.default_rng(1)
    gap = np.log(3.0)
    n = 100_000
    rate = np.mean([bt_sample(gap, 0.0, 1.0, rng) for _ in range(n)])
    assert abs(rate - 0.75) < 3 * np.sqrt(0.75 * 0.25 / n)


def test_bt_sample_monte_carlo_matches_sigmoid():
    rng = np.random.default_rng(2)
    u_w, u_l, alpha = 0.9, 0.2, 0.4
    p = 1.0 / (1.0 + np.exp(-(u_w - u_l) / alpha))
    n = 100_000
    rate = np.mean([bt_sample(u_w, u_l, alpha, rng) for _ in range(n)])
    assert abs(rate - p) < 3 * np.sqrt(p * (1 - p) / n)


def test_bt_sample_requires_positive_alpha():
    with pytest.raises(ConfigError):
        bt_sample(1.0, 0.0, 0.0, np.random.default_rng(0))


def test_preference_file_round_trip(tmp_path):
    pairs = corrupt(pair_cartesian(["w0", "w1"], ["l0", "l1"]),
                    CorruptionSpec(0.5, 3))
    path = tmp_path / "prefs.json"
    save_preferences(path, pairs, "trajectories.json")
    loaded, ref = load_preferences(path)
    assert loaded == pairs
    assert ref == "trajectories.json"


def test_preference_file_rejects_unknown_format(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "nope", "version": 1, "pairs": []}')
    with pytest.raises(ConfigError):
        load_preferences(path)
