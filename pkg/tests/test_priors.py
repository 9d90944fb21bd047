"""Closed-form NUV update rules, spec validation and the M-level expansion."""

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from nuvmpc.priors import (
    ContractError,
    NuvKind,
    NuvSpec,
    Posterior,
    PriorParams,
    apply_rule,
    box_rule,
    expand_m_level,
    initial_params,
    rule_arrays,
    update,
    update_basic,
    update_binarizing_am,
    update_binarizing_em,
    update_box,
    update_half_space,
)

finite = st.floats(-50, 50, allow_nan=False)
positive = st.floats(1e-3, 50, allow_nan=False)


class TestSpecValidation:
    def test_box_needs_ordered_bounds(self):
        with pytest.raises(ContractError):
            NuvSpec(NuvKind.BOX, a=1.0, b=1.0)

    def test_binarizing_needs_ordered_levels(self):
        with pytest.raises(ContractError):
            NuvSpec(NuvKind.BINARIZING_EM, a=2.0, b=0.0)

    @pytest.mark.parametrize("kind", [NuvKind.L1, NuvKind.BOX, NuvKind.HALF_SPACE_LOWER])
    def test_gamma_positive(self, kind):
        with pytest.raises(ContractError):
            NuvSpec(kind, gamma=0.0, a=-1.0, b=1.0)

    def test_lp_exponent_range(self):
        with pytest.raises(ContractError):
            NuvSpec(NuvKind.LP, p=2.5)

    def test_kind_from_string(self):
        assert NuvSpec("Box", a=-1, b=1).kind is NuvKind.BOX

    def test_dict_round_trip(self):
        s = NuvSpec(NuvKind.HALF_SPACE_UPPER, gamma=3.0, a=0.25)
        assert NuvSpec.from_dict(s.to_dict()) == s

    def test_variance_kinds(self):
        assert NuvSpec(NuvKind.PLAIN).needs_variance
        assert NuvSpec(NuvKind.BINARIZING_EM).needs_variance
        assert not NuvSpec(NuvKind.BINARIZING_AM).needs_variance
        assert not NuvSpec(NuvKind.BOX, a=0, b=1).needs_variance


class TestBasicRules:
    def test_l1_variance_is_abs_over_gamma(self):
        p = update_basic(NuvSpec(NuvKind.L1, gamma=2.0), Posterior(-3.0, 0.7))
        assert p == PriorParams(0.0, 1.5)

    def test_lp_variance(self):
        p = update_basic(NuvSpec(NuvKind.LP, gamma=2.0, p=1.5), Posterior(4.0, 0.0))
        np.testing.assert_allclose(p.fwd_variance, 4.0 ** 0.5 / 3.0)

    def test_lp_with_p1_matches_l1(self):
        a = update_basic(NuvSpec(NuvKind.LP, gamma=0.5, p=1.0), Posterior(0.8))
        b = update_basic(NuvSpec(NuvKind.L1, gamma=0.5), Posterior(0.8))
        np.testing.assert_allclose(a, b)

    def test_huber_floor(self):
        spec = NuvSpec(NuvKind.HUBER, gamma=1.0, r2=0.5)
        assert update_basic(spec, Posterior(0.1)).fwd_variance == 0.5
        assert update_basic(spec, Posterior(2.0)).fwd_variance == 2.0

    def test_plain_nuv_is_em_update(self):
        p = update_basic(NuvSpec(NuvKind.PLAIN), Posterior(1.5, 0.25))
        assert p == PriorParams(0.0, 2.5)

    def test_smoothed_plain_without_posterior_variance(self):
        spec = NuvSpec(NuvKind.SMOOTHED_PLAIN, r2=0.1, use_posterior_variance=False)
        assert update_basic(spec, Posterior(0.5, 10.0)).fwd_variance == pytest.approx(0.25)

    def test_basic_rejects_composite(self):
        with pytest.raises(ContractError):
            update_basic(NuvSpec(NuvKind.BOX, a=0, b=1), Posterior(0.0))

    def test_zero_mean_is_clamped(self):
        p = update_basic(NuvSpec(NuvKind.L1), Posterior(0.0))
        assert p.fwd_variance > 0


class TestBoxRule:
    def test_symmetric_midpoint(self):
        # equal distances: the forward mean is the midpoint, variance |m-a| / (2 gamma)
        p = update_box(NuvSpec(NuvKind.BOX, gamma=1.0, a=-1.0, b=1.0), 0.0)
        np.testing.assert_allclose(p, (0.0, 0.5))

    def test_weights_toward_nearer_bound(self):
        p = update_box(NuvSpec(NuvKind.BOX, gamma=1.0, a=0.0, b=1.0), 0.9)
        assert p.fwd_mean > 0.5

    @given(m=finite, a=finite, width=positive, gamma=positive)
    def test_mean_inside_box(self, m, a, width, gamma):
        b = a + width
        mean, var = box_rule(m, a, b, gamma)
        assert a - 1e-9 <= mean <= b + 1e-9
        assert var > 0

    @given(m=finite, a=finite, width=positive, gamma=positive)
    def test_matches_parallel_combination(self, m, a, width, gamma):
        # two Gaussians N(a, |m-a|/gamma) and N(b, |m-b|/gamma) combined in parallel
        b = a + width
        assume(min(abs(m - a), abs(m - b)) > 1e-6)
        sa = abs(m - a) / gamma
        sb = abs(m - b) / gamma
        v = 1 / (1 / sa + 1 / sb)
        mean, var = box_rule(m, a, b, gamma)
        np.testing.assert_allclose([mean, var], [v * (a / sa + b / sb), v], rtol=1e-9, atol=1e-12)

    def test_at_bound_is_clamped(self):
        mean, var = box_rule(0.0, 0.0, 1.0, 1.0)
        assert np.isfinite(mean) and var > 0
        assert mean == pytest.approx(0.0, abs=1e-6)

    def test_wrong_kind(self):
        with pytest.raises(ContractError):
            update_box(NuvSpec(NuvKind.L1), 0.0)


class TestHalfSpaceRule:
    def test_feasible_point_keeps_mean(self):
        p = update_half_space(NuvSpec(NuvKind.HALF_SPACE_LOWER, gamma=2.0, a=1.0), 3.0)
        np.testing.assert_allclose(p, (3.0, 1.0))

    def test_infeasible_point_is_mirrored(self):
        p = update_half_space(NuvSpec(NuvKind.HALF_SPACE_LOWER, gamma=1.0, a=1.0), 0.0)
        np.testing.assert_allclose(p, (2.0, 1.0))

    def test_upper_side(self):
        p = update_half_space(NuvSpec(NuvKind.HALF_SPACE_UPPER, gamma=1.0, a=1.0), 0.0)
        np.testing.assert_allclose(p, (0.0, 1.0))
        p = update_half_space(NuvSpec(NuvKind.HALF_SPACE_UPPER, gamma=1.0, a=1.0), 3.0)
        np.testing.assert_allclose(p, (-1.0, 2.0))

    @given(m=finite, a=finite, gamma=positive)
    def test_mean_on_feasible_side(self, m, a, gamma):
        p = update_half_space(NuvSpec(NuvKind.HALF_SPACE_LOWER, gamma=gamma, a=a), m)
        assert p.fwd_mean >= a

    def test_wrong_kind(self):
        with pytest.raises(ContractError):
            update_half_space(NuvSpec(NuvKind.BOX, a=0, b=1), 0.0)


class TestBinarizingRules:
    def test_am_is_em_with_zero_variance(self):
        em = update_binarizing_em(NuvSpec(NuvKind.BINARIZING_EM), Posterior(0.3, 0.0))
        am = update_binarizing_am(NuvSpec(NuvKind.BINARIZING_AM), 0.3)
        np.testing.assert_allclose(em, am)

    def test_em_variances(self):
        # sa = V + (m-a)^2 = 0.1 + 0.09, sb = 0.1 + 0.49
        em = update_binarizing_em(NuvSpec(NuvKind.BINARIZING_EM), Posterior(0.3, 0.1))
        sa, sb = 0.19, 0.59
        v = 1 / (1 / sa + 1 / sb)
        np.testing.assert_allclose(em, (v * (1 / sb), v))

    def test_midpoint_is_fixed(self):
        p = update_binarizing_am(NuvSpec(NuvKind.BINARIZING_AM, a=-2.0, b=4.0), 1.0)
        assert p.fwd_mean == pytest.approx(1.0)

    @given(m=finite, v=st.floats(0, 10), a=finite, width=positive)
    def test_mean_between_levels(self, m, v, a, width):
        mean, var = rule_arrays(NuvKind.BINARIZING_EM, m, v, a=a, b=a + width)
        assert a - 1e-9 <= mean <= a + width + 1e-9
        assert var > 0

    def test_at_level_is_clamped(self):
        p = update_binarizing_am(NuvSpec(NuvKind.BINARIZING_AM), 1.0)
        assert p.fwd_mean == pytest.approx(1.0, abs=1e-6)
        assert np.isfinite(p.fwd_variance)


class TestDispatch:
    @pytest.mark.parametrize("spec", [
        NuvSpec(NuvKind.L1, gamma=2.0),
        NuvSpec(NuvKind.PLAIN),
        NuvSpec(NuvKind.BOX, gamma=2.0, a=-1.0, b=0.5),
        NuvSpec(NuvKind.HALF_SPACE_UPPER, gamma=0.3, a=0.2),
        NuvSpec(NuvKind.BINARIZING_EM, a=-1.0, b=1.0),
    ])
    def test_vectorized_matches_scalar(self, spec):
        rng = np.random.default_rng(3)
        m = rng.normal(size=20) * 2
        v = rng.uniform(0, 1, size=20)
        mean, var = apply_rule(spec, m, v)
        for i in range(20):
            p = update(spec, Posterior(m[i], v[i]))
            np.testing.assert_allclose([mean[i], var[i]], p, rtol=1e-14)

    def test_non_finite_posterior(self):
        with pytest.raises(ContractError):
            update(NuvSpec(NuvKind.L1), Posterior(np.nan, 0.0))

    def test_initial_params(self):
        assert initial_params(NuvSpec(NuvKind.BINARIZING_EM, a=0, b=2)) == PriorParams(1.0, 1.0)
        assert initial_params(NuvSpec(NuvKind.BOX, a=0, b=2)) == PriorParams(0.0, 1.0)


class TestMLevelExpansion:
    def test_three_levels(self):
        ex = expand_m_level([-1, 0, 1])
        assert ex.coeffs == (1.0, 1.0)
        assert ex.offset == -1.0
        np.testing.assert_allclose(ex.combine(np.array([[0, 0], [1, 0], [1, 1]])), [-1, 0, 1])

    def test_every_binary_pattern_hits_a_level(self):
        ex = expand_m_level([0, 2, 4, 6, 8])
        for bits in np.ndindex(*(2,) * ex.n_binaries):
            assert ex.combine(np.array(bits, float)) in ex.levels

    def test_power_of_two(self):
        ex = expand_m_level([0, 1, 2, 3], equal_coeffs=False)
        assert ex.coeffs == (1.0, 2.0)
        values = sorted({float(ex.combine(np.array(b, float))) for b in np.ndindex(2, 2)})
        assert values == [0, 1, 2, 3]

    def test_power_of_two_needs_2j_levels(self):
        with pytest.raises(ContractError):
            expand_m_level([0, 1, 2], equal_coeffs=False)

    def test_symmetry_breaking(self):
        ex = expand_m_level([-1, 0, 1])
        v = [p.fwd_variance for p in ex.initial_params()]
        assert v[0] != v[1]

    @pytest.mark.parametrize("levels", [[0], [0, 0, 1], [0, 1, 3]])
    def test_invalid_levels(self, levels):
        with pytest.raises(ContractError):
            expand_m_level(levels)

    @settings(max_examples=30)
    @given(start=st.floats(-5, 5), step=st.floats(0.1, 3), m=st.integers(2, 7))
    def test_levels_reconstructed(self, start, step, m):
        lv = start + step * np.arange(m)
        ex = expand_m_level(lv)
        for j in range(m):
            bits = np.zeros(ex.n_binaries)
            bits[:j] = 1
            assert ex.combine(bits) == pytest.approx(lv[j], abs=1e-9)
