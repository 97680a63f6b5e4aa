"""Tests for the discrete inner-maximization set."""

from dataclasses import replace
from itertools import combinations

import numpy as np
import pytest

from fnbo.discrete import (
    ABLATION_PRESETS,
    DiscreteSetConfig,
    batch_thompson,
    build_set,
    deduplicate,
    greedy_select,
    independent_thompson,
    local_points,
    subset_value,
    thompson_pool,
)
from fnbo.errors import ConfigError, EmptySet


class TestDiscreteSetConfig:
    def test_defaults_are_valid(self):
        DiscreteSetConfig().validate()

    @pytest.mark.parametrize("overrides", [
        {"M": 0},
        {"N_T": -1},
        {"r": 0.0},
        {"N_T": 600},
        {"thompson_mode": "greedy"},
        {"preset": "nothing"},
    ])
    def test_invalid(self, overrides):
        with pytest.raises(ConfigError):
            replace(DiscreteSetConfig(), **overrides).validate()

    def test_every_preset_is_valid(self):
        for name in ABLATION_PRESETS:
            DiscreteSetConfig().with_preset(name).validate()

    def test_preset_values(self):
        cfg = DiscreteSetConfig().with_preset("local+maximizer")
        assert cfg.include_thompson is False
        assert cfg.N_L == 20
        assert cfg.preset == "local+maximizer"

    def test_explicit_keys_win_over_preset(self):
        cfg = DiscreteSetConfig.from_dict({"preset": "thompson", "N_T": 7})
        assert cfg.N_T == 7
        assert cfg.include_local is False

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            DiscreteSetConfig.from_dict({"bogus": 1})

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            DiscreteSetConfig().with_preset("everything")


class TestGreedySelect:
    values = np.array([
        [3.0, 0.0, 2.0],
        [0.0, 3.0, 2.0],
    ])

    def test_greedy_is_not_optimal(self):
        chosen = greedy_select(self.values, 2)
        assert chosen == [2, 0]
        assert subset_value(self.values, chosen) == pytest.approx(2.5)
        assert subset_value(self.values, [0, 1]) == pytest.approx(3.0)

    def test_ties_go_to_lowest_index(self):
        assert greedy_select(np.ones((3, 4)), 2) == [0, 1]

    def test_count_larger_than_pool(self):
        assert sorted(greedy_select(self.values, 10)) == [0, 1, 2]

    def test_value_is_monotone(self):
        rng = np.random.default_rng(0)
        values = rng.normal(size=(5, 30))
        chosen = greedy_select(values, 6)
        scores = [subset_value(values, chosen[: i + 1]) for i in range(6)]
        assert all(b >= a for a, b in zip(scores, scores[1:]))


class TestThompson:
    def test_pool_contents(self, chain_posterior):
        x_star = np.array([0.5, 0.5])
        pool = thompson_pool(chain_posterior, 32, seed=0, x_star=x_star)
        assert pool.shape == (32 + 1 + 6, 2)
        np.testing.assert_array_equal(pool[32], x_star)
        np.testing.assert_array_equal(pool[33:], chain_posterior.evaluated_inputs)

    def test_batch_points_come_from_pool(self, chain_posterior, quick_discrete):
        points = batch_thompson(chain_posterior, quick_discrete, seed=4, x_star=np.array([0.5, 0.5]))
        assert points.shape == (3, 2)
        assert np.all((points >= 0) & (points <= 1))
        again = batch_thompson(chain_posterior, quick_discrete, seed=4, x_star=np.array([0.5, 0.5]))
        np.testing.assert_array_equal(points, again)

    def test_independent_one_point_per_realization(self, chain_posterior, quick_discrete):
        points = independent_thompson(chain_posterior, quick_discrete, seed=1, restarts=1, max_evals=20)
        assert points.shape == (quick_discrete.M, 2)
        assert np.all((points >= 0) & (points <= 1))


class TestLocalPoints:
    def test_inside_ball_and_domain(self, chain_spec):
        cfg = DiscreteSetConfig(N_L=50, r=0.1)
        x_star = np.array([0.5, 0.5])
        points = local_points(x_star, chain_spec, cfg, seed=0)
        assert points.shape == (50, 2)
        assert np.all(np.linalg.norm(points - x_star, axis=1) <= 0.1 + 1e-12)

    def test_corner_recommendation(self, chain_spec):
        cfg = DiscreteSetConfig(N_L=20, r=0.2)
        points = local_points(np.array([1.0, 0.0]), chain_spec, cfg, seed=3)
        assert points.shape == (20, 2)
        assert np.all((points >= 0) & (points <= 1))

    def test_none_requested(self, chain_spec):
        assert local_points([0.5, 0.5], chain_spec, DiscreteSetConfig(N_L=0), seed=0).shape == (0, 2)


class TestBuildSet:
    def test_recommendation_first(self, chain_posterior, quick_discrete):
        x_star = np.array([0.25, 0.75])
        points = build_set(chain_posterior, quick_discrete, x_star, seed=0)
        np.testing.assert_array_equal(points[0], x_star)
        assert 2 <= points.shape[0] <= 1 + quick_discrete.N_T + quick_discrete.N_L

    def test_no_duplicates(self, chain_posterior, quick_discrete):
        points = build_set(chain_posterior, quick_discrete, np.array([0.25, 0.75]), seed=0)
        assert deduplicate(points).shape == points.shape

    def test_thompson_only(self, chain_posterior, quick_discrete):
        cfg = replace(quick_discrete, include_local=False, include_maximizer=False)
        points = build_set(chain_posterior, cfg, np.array([0.25, 0.75]), seed=0)
        assert 1 <= points.shape[0] <= cfg.N_T

    def test_everything_disabled(self, chain_posterior):
        cfg = DiscreteSetConfig(include_local=False, include_maximizer=False, include_thompson=False)
        with pytest.raises(EmptySet):
            build_set(chain_posterior, cfg, np.array([0.5, 0.5]), seed=0)


def test_deduplicate_keeps_first_occurrence():
    points = np.array([[0.1, 0.2], [0.3, 0.4], [0.1, 0.2 + 1e-12]])
    np.testing.assert_array_equal(deduplicate(points), points[:2])


class TestGreedyAgainstBruteForce:
    def test_approximation_guarantee(self):
        rng = np.random.default_rng(0)
        exact = 0
        for _ in range(100):
            pool = int(rng.integers(2, 13))
            M = int(rng.integers(1, 6))
            count = int(rng.integers(1, min(4, pool) + 1))
            values = rng.normal(size=(M, pool))
            greedy = subset_value(values, greedy_select(values, count))
            best = max(subset_value(values, c) for c in combinations(range(pool), count))
            # the objective is monotone submodular up to a shift by its smallest value
            floor = values.min(axis=1).mean()
            assert greedy - floor >= (1 - 1 / np.e) * (best - floor) - 1e-12
            exact += np.isclose(greedy, best)
        assert exact >= 60
