import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from batchbandit.allocation import (
    AllocationPolicy,
    AllocationSource,
    PolicyKind,
    assign_batch,
    hybrid_select,
    prob_optimal,
    ts_select,
    uniform_select,
)
from batchbandit.errors import ValidationError
from batchbandit.posterior import BetaParams

B = BetaParams


class TestPolicy:
    def test_constructors(self):
        assert AllocationPolicy.uniform().kind is PolicyKind.UNIFORM
        h = AllocationPolicy.hybrid()
        assert (h.epsilon, h.share_uniform_data) == (0.5, True)

    @pytest.mark.parametrize("eps", [0.0, 1.0, -0.1, None])
    def test_hybrid_epsilon_range(self, eps):
        with pytest.raises(ValidationError):
            AllocationPolicy(PolicyKind.HYBRID, eps, True)

    def test_epsilon_only_for_hybrid(self):
        with pytest.raises(ValidationError):
            AllocationPolicy(PolicyKind.THOMPSON, 0.5, None)
        with pytest.raises(ValidationError):
            AllocationPolicy(PolicyKind.UNIFORM, None, True)

    def test_round_trip(self):
        for p in (AllocationPolicy.uniform(), AllocationPolicy.thompson(), AllocationPolicy.hybrid(0.3, False)):
            assert AllocationPolicy.from_dict(p.to_dict()) == p

    def test_visible_sources(self):
        U, T = AllocationSource.UNIFORM, AllocationSource.TS
        assert AllocationPolicy.hybrid(0.5, True).visible_sources() == {U, T}
        assert AllocationPolicy.hybrid(0.5, False).visible_sources() == {T}
        assert AllocationPolicy.thompson().visible_sources() == {T}
        assert AllocationPolicy.uniform().visible_sources() == {U}


class TestUniformSelect:
    def test_frequencies(self, rng):
        arms = np.array([uniform_select(4, rng) for _ in range(100_000)])
        freq = np.bincount(arms, minlength=4) / len(arms)
        assert np.all(np.abs(freq - 0.25) < 0.01)

    def test_deterministic(self):
        assert uniform_select(2, np.random.default_rng(3)) == uniform_select(2, np.random.default_rng(3))

    def test_one_arm(self, rng):
        with pytest.raises(ValidationError):
            uniform_select(1, rng)


class TestTSSelect:
    def test_dominant_arm(self, rng):
        # X ~ Beta(1e6, 1) and Y ~ Beta(1, 1e6) straddle 0.5 except with prob <= 2 * 0.5**1e6
        assert 1 - 2 * 0.5**1e6 > 0.9999
        picks = [ts_select([B(1e6, 1), B(1, 1e6)], rng) for _ in range(10_000)]
        assert np.mean(np.array(picks) == 0) > 0.999

    def test_identical_posteriors(self, rng):
        post = [B(1, 1)] * 4
        picks = np.array([ts_select(post, rng) for _ in range(100_000)])
        freq = np.bincount(picks, minlength=4) / len(picks)
        assert np.all(np.abs(freq - 0.25) < 0.01)

    def test_five_sixths(self, five_sixths):
        rng = np.random.default_rng(11)
        # the vectorised batch path consumes the stream exactly like repeated ts_select
        picks = assign_batch([B(2, 1), B(1, 2)], AllocationPolicy.thompson(), 1_000_000, rng)
        share = np.mean([a == 0 for a, _ in picks])
        assert share == pytest.approx(five_sixths, abs=0.003)

    def test_tie_goes_to_lowest_index(self):
        class Constant:
            def beta(self, a, b, size=None):
                return np.full(np.shape(a), 0.5)

        assert ts_select([B(1, 1)] * 3, Constant()) == 0


class TestHybridSelect:
    def test_split(self, rng):
        sources = [hybrid_select([B(1, 1)] * 4, 0.5, rng)[1] for _ in range(10_000)]
        frac = np.mean([s is AllocationSource.UNIFORM for s in sources])
        assert abs(frac - 0.5) <= 0.015

    def test_small_epsilon(self, rng):
        sources = [hybrid_select([B(1, 1)] * 4, 0.001, rng)[1] for _ in range(10_000)]
        assert np.mean([s is AllocationSource.UNIFORM for s in sources]) < 0.01

    def test_symmetric_arms(self, rng):
        arms = np.array([hybrid_select([B(3, 3)] * 4, 0.5, rng)[0] for _ in range(100_000)])
        freq = np.bincount(arms, minlength=4) / len(arms)
        assert np.all(np.abs(freq - 0.25) < 0.01)

    def test_coin_drawn_first(self):
        post = [B(2, 5), B(5, 2), B(1, 1)]
        got = hybrid_select(post, 0.5, np.random.default_rng(99))
        rng = np.random.default_rng(99)
        if rng.random() < 0.5:
            expected = (int(rng.integers(3)), AllocationSource.UNIFORM)
        else:
            expected = (int(np.argmax(rng.beta([2, 5, 1], [5, 2, 1]))), AllocationSource.TS)
        assert got == expected

    @pytest.mark.parametrize("eps", [0, 1, 1.5])
    def test_epsilon_bounds(self, rng, eps):
        with pytest.raises(ValidationError):
            hybrid_select([B(1, 1)] * 2, eps, rng)


class TestProbOptimal:
    def test_symmetric_four(self):
        pa = prob_optimal([B(1, 1)] * 4, 1_000_000, np.random.default_rng(1))
        assert np.all(np.abs(pa - 0.25) < 0.005)

    def test_five_sixths(self, five_sixths):
        pa = prob_optimal([B(2, 1), B(1, 2)], 1_000_000, np.random.default_rng(2))
        assert pa[0] == pytest.approx(five_sixths, abs=0.003)
        assert pa[1] == pytest.approx(1 - five_sixths, abs=0.003)

    def test_symmetric_two(self):
        pa = prob_optimal([B(1, 1)] * 2, 1_000_000, np.random.default_rng(3))
        assert np.all(np.abs(pa - 0.5) < 0.005)

    def test_zero_draws(self, rng):
        with pytest.raises(ValidationError):
            prob_optimal([B(1, 1)] * 2, 0, rng)

    def test_deterministic(self):
        post = [B(3, 7), B(7, 3), B(1, 1)]
        a = prob_optimal(post, 50_000, np.random.default_rng(5))
        b = prob_optimal(post, 50_000, np.random.default_rng(5))
        assert np.array_equal(a, b)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.floats(0.5, 50), st.floats(0.5, 50)), min_size=2, max_size=6), st.integers(1, 5000))
    def test_sums_to_one(self, params, draws):
        pa = prob_optimal([B(a, b) for a, b in params], draws, np.random.default_rng(0))
        assert np.all((pa >= 0) & (pa <= 1))
        assert abs(pa.sum() - 1) < 1e-9

    @pytest.mark.parametrize("base,bump", [((2, 3), 1), ((5, 5), 3), ((1, 4), 2)])
    def test_monotone_in_alpha(self, base, bump):
        others = [B(3, 3), B(4, 6)]
        before = prob_optimal([B(*base)] + others, 1_000_000, np.random.default_rng(8))[0]
        after = prob_optimal([B(base[0] + bump, base[1])] + others, 1_000_000, np.random.default_rng(9))[0]
        assert after >= before - 0.005

    def test_probability_matching(self):
        post = [B(3, 7), B(7, 3), B(1, 1), B(5, 5)]
        rng = np.random.default_rng(12)
        picks = np.array([ts_select(post, rng) for _ in range(100_000)])
        freq = np.bincount(picks, minlength=4) / len(picks)
        pa = prob_optimal(post, 1_000_000, np.random.default_rng(13))
        assert np.all(np.abs(freq - pa) <= 0.01)


class TestAssignBatch:
    def test_empty(self, rng):
        assert assign_batch([B(1, 1)] * 4, AllocationPolicy.thompson(), 0, rng) == []

    def test_uniform_counts(self, rng):
        out = assign_batch([B(1, 1)] * 4, AllocationPolicy.uniform(), 400, rng)
        counts = np.bincount([a for a, _ in out], minlength=4)
        assert np.all(np.abs(counts - 100) <= 30)
        assert {s for _, s in out} == {AllocationSource.UNIFORM}

    def test_ts_share(self, five_sixths, rng):
        out = assign_batch([B(2, 1), B(1, 2)], AllocationPolicy.thompson(), 100_000, rng)
        assert np.mean([a == 0 for a, _ in out]) == pytest.approx(five_sixths, abs=0.01)
        assert {s for _, s in out} == {AllocationSource.TS}

    def test_matches_scalar_calls(self):
        post = [B(2, 5), B(5, 2), B(3, 3), B(1, 1)]
        for policy in (AllocationPolicy.uniform(), AllocationPolicy.thompson(), AllocationPolicy.hybrid(0.5, True)):
            batch = assign_batch(post, policy, 200, np.random.default_rng(4))
            rng = np.random.default_rng(4)
            if policy.kind is PolicyKind.UNIFORM:
                scalar = [(uniform_select(4, rng), AllocationSource.UNIFORM) for _ in range(200)]
            elif policy.kind is PolicyKind.THOMPSON:
                scalar = [(ts_select(post, rng), AllocationSource.TS) for _ in range(200)]
            else:
                scalar = [hybrid_select(post, 0.5, rng) for _ in range(200)]
            assert batch == scalar

    def test_deterministic_and_frozen(self):
        post = [B(2, 5), B(5, 2), B(3, 3)]
        copy = list(post)
        a = assign_batch(post, AllocationPolicy.hybrid(), 500, np.random.default_rng(21))
        b = assign_batch(post, AllocationPolicy.hybrid(), 500, np.random.default_rng(21))
        assert a == b
        assert post == copy

    def test_negative_n(self, rng):
        with pytest.raises(ValidationError):
            assign_batch([B(1, 1)] * 2, AllocationPolicy.uniform(), -1, rng)
