import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moelab.errors import ConfigError, InputError, ParameterError
from moelab.gating import (LayerAccumulator, RegimeLabel, aggregate_layer_stats,
                           classify_regime, entropy, suggest_parameters,
                           top_k_mass, validate_scores)
from oracles import nearest_rank_oracle


def prob_vectors(min_n=1, max_n=12):
    return (st.lists(st.floats(1e-6, 1.0), min_size=min_n, max_size=max_n)
            .map(lambda xs: np.array(xs) / np.sum(xs)))


class TestValidateScores:
    def test_accepts_and_renormalizes_small_drift(self):
        s = validate_scores([0.5, 0.5 + 5e-4])
        assert abs(s.sum() - 1.0) <= 1e-9

    def test_rejects_large_drift(self):
        with pytest.raises(InputError):
            validate_scores([0.5, 0.6])

    def test_rejects_negative_nonfinite_zero(self):
        with pytest.raises(InputError):
            validate_scores([0.5, -0.5])
        with pytest.raises(InputError):
            validate_scores([0.5, float("nan")])
        with pytest.raises(InputError):
            validate_scores([0.0, 0.0])


class TestTopKMass:
    def test_basic(self):
        assert top_k_mass([0.5, 0.3, 0.1, 0.1], 2) == pytest.approx(0.8)

    def test_uniform(self):
        assert top_k_mass([1 / 8] * 8, 2) == pytest.approx(0.25)

    def test_single_max(self):
        assert top_k_mass([0.05, 0.95], 1) == pytest.approx(0.95)

    def test_k_out_of_range(self):
        with pytest.raises(ParameterError):
            top_k_mass([0.5, 0.5], 3)
        with pytest.raises(ParameterError):
            top_k_mass([0.5, 0.5], 0)

    @given(prob_vectors(min_n=2, max_n=10))
    def test_bounds_and_monotone_in_k(self, s):
        n = len(s)
        masses = [top_k_mass(s, k) for k in range(1, n + 1)]
        for k, m in enumerate(masses, start=1):
            assert k / n - 1e-9 <= m <= 1.0 + 1e-9
        assert all(a <= b + 1e-12 for a, b in zip(masses, masses[1:]))
        assert masses[-1] == pytest.approx(1.0)


class TestEntropy:
    def test_uniform_is_log_n(self):
        assert entropy([1 / 8] * 8) == pytest.approx(math.log(8))

    def test_one_hot_is_zero(self):
        assert entropy([0, 0, 1, 0]) == 0.0

    def test_two_atoms(self):
        assert entropy([0.5, 0.5, 0, 0]) == pytest.approx(math.log(2))

    @given(prob_vectors(min_n=2, max_n=10), st.randoms(use_true_random=False))
    def test_permutation_invariant(self, s, rnd):
        perm = list(range(len(s)))
        rnd.shuffle(perm)
        assert entropy(s[perm]) == pytest.approx(entropy(s), abs=1e-12)

    @given(prob_vectors(min_n=1, max_n=10))
    def test_range(self, s):
        h = entropy(s)
        assert -1e-12 <= h <= math.log(len(s)) + 1e-9

    def test_normalized(self):
        assert entropy([1 / 8] * 8, normalized=True) == pytest.approx(1.0)
        assert entropy([0.5, 0.5, 0, 0], normalized=True) == \
            pytest.approx(0.5)  # ln2 / ln4
        assert entropy([1.0], normalized=True) == 0.0


class TestClassifyRegime:
    def test_single_head(self):
        assert classify_regime([0.9, 0.05, 0.05], 0.6, 0.8) is RegimeLabel.SINGLE_HEAD

    def test_plateau(self):
        assert classify_regime([0.4, 0.38, 0.22], 0.6, 0.8) is RegimeLabel.PLATEAU

    def test_smooth(self):
        assert classify_regime([0.4, 0.2, 0.2, 0.2], 0.6, 0.8) is RegimeLabel.SMOOTH

    def test_single_expert_vector(self):
        assert classify_regime([1.0], 0.6, 0.8) is RegimeLabel.SINGLE_HEAD

    @given(prob_vectors(min_n=2, max_n=8),
           st.floats(1.5, 10.0))
    def test_scale_invariant(self, s, factor):
        scaled = validate_scores(np.asarray(s) * factor, renorm_tol=np.inf)
        assert classify_regime(scaled) is classify_regime(s)


class TestAggregateLayerStats:
    def test_mean_mk(self):
        tokens = [(0, [0.5, 0.3, 0.15, 0.05]),   # M2 = 0.8
                  (0, [0.35, 0.25, 0.2, 0.2])]   # M2 = 0.6
        (st0,) = aggregate_layer_stats(tokens, k=2)
        assert st0.mean_Mk == pytest.approx(0.7)
        assert st0.token_count == 2

    def test_one_hot_stream(self):
        tokens = [(1, np.eye(4)[i % 4]) for i in range(10)]
        (st1,) = aggregate_layer_stats(tokens, k=1)
        assert st1.entropy_p50 == 0.0
        assert st1.regime_fractions == (1.0, 0.0, 0.0)

    def test_empty_stream(self):
        assert aggregate_layer_stats([], k=2) == []

    def test_dirichlet_fractions_match_recount(self):
        rng = np.random.default_rng(5)
        tokens = [(i % 3, rng.dirichlet([0.5] * 6)) for i in range(1000)]
        stats = aggregate_layer_stats(tokens, k=2)
        # independent second pass
        for st_ in stats:
            members = [s for (l, s) in tokens if l == st_.layer_index]
            counts = {r: 0 for r in RegimeLabel}
            for s in members:
                counts[classify_regime(s)] += 1
            total = len(members)
            expect = (counts[RegimeLabel.SINGLE_HEAD] / total,
                      counts[RegimeLabel.PLATEAU] / total,
                      counts[RegimeLabel.SMOOTH] / total)
            assert st_.regime_fractions == pytest.approx(expect, abs=1e-12)
            assert sum(st_.regime_fractions) == pytest.approx(1.0, abs=1e-9)
            assert st_.token_count == total

    @given(st.lists(prob_vectors(min_n=4, max_n=4), min_size=1, max_size=40),
           st.lists(prob_vectors(min_n=4, max_n=4), min_size=1, max_size=40))
    @settings(max_examples=25, deadline=None)
    def test_merge_equals_concatenation(self, part_a, part_b):
        acc_a, acc_b, acc_all = (LayerAccumulator() for _ in range(3))
        for s in part_a:
            acc_a.add(s, 2, 0.6, 0.8)
            acc_all.add(s, 2, 0.6, 0.8)
        for s in part_b:
            acc_b.add(s, 2, 0.6, 0.8)
            acc_all.add(s, 2, 0.6, 0.8)
        merged = acc_a.merge(acc_b).finalize(0)
        direct = acc_all.finalize(0)
        assert merged.token_count == direct.token_count
        assert merged.mean_Mk == pytest.approx(direct.mean_Mk, rel=1e-12)
        assert merged.entropy_p25 == direct.entropy_p25
        assert merged.entropy_p50 == direct.entropy_p50
        assert merged.entropy_p75 == direct.entropy_p75
        assert merged.regime_fractions == pytest.approx(direct.regime_fractions)


class TestSuggestParameters:
    def _stats(self, layer_masses):
        tokens = []
        for layer, mass in enumerate(layer_masses):
            # four-expert vector with M_1 == mass (valid for mass >= 0.25)
            rest = (1.0 - mass) / 3.0
            tokens.extend((layer, [mass, rest, rest, rest]) for _ in range(4))
        return aggregate_layer_stats(tokens, k=1)

    def test_constant_mass(self):
        stats = self._stats([0.95] * 6)
        bands = suggest_parameters(stats, [(0, 2), (3, 5)], 0.5, k=1, c=2)
        for band in bands.bands:
            assert band.params.eps_high == pytest.approx(0.95)
            assert band.params.t_fix == 0.6

    def test_uniform_scores(self):
        # k/n mass everywhere: suggested cutoff sits at k/n
        stats = self._stats([0.5] * 3)
        bands = suggest_parameters(stats, [(0, 2)], 0.5, k=1, c=2)
        assert bands.bands[0].params.eps_high == pytest.approx(0.5)

    def test_two_band_quantiles_match_sort_oracle(self):
        rng = np.random.default_rng(11)
        low = list(0.3 + 0.1 * rng.random(7))
        high = list(0.8 + 0.1 * rng.random(5))
        stats = self._stats(low + high)
        rate = 0.3
        bands = suggest_parameters(stats, [(0, 6), (7, 11)], rate, k=1, c=2)
        by_layer = {s.layer_index: s.mean_Mk for s in stats}
        want_low = nearest_rank_oracle([by_layer[i] for i in range(7)], rate)
        want_high = nearest_rank_oracle([by_layer[i] for i in range(7, 12)], rate)
        assert bands.bands[0].params.eps_high == pytest.approx(want_low)
        assert bands.bands[1].params.eps_high == pytest.approx(want_high)
        # the two cutoffs straddle the two mass levels
        assert bands.bands[0].params.eps_high < 0.5 < bands.bands[1].params.eps_high

    def test_band_without_layers_is_an_error(self):
        stats = self._stats([0.9, 0.9])
        with pytest.raises(ConfigError):
            suggest_parameters(stats, [(0, 1), (2, 3)], 0.5, k=1, c=2)

    def test_rate_out_of_range(self):
        stats = self._stats([0.9])
        with pytest.raises(ParameterError):
            suggest_parameters(stats, [(0, 0)], 1.0, k=1, c=2)
