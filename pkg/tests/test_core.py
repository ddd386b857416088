from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catlab.core import (
    QUERY,
    ExtendedReal,
    InvariantViolation,
    ProdVsAdd,
    RegretReport,
    StepRecord,
    check_prod_vs_add,
    clean_payoffs,
    diameter,
    regret_additive,
    regret_multiplicative,
)


def naive_log_ratio(mentor, agent) -> float:
    """Oracle: log of a ratio of exact rational products."""
    num = Fraction(1)
    den = Fraction(1)
    for m, a in zip(mentor, agent):
        num *= Fraction(m)
        den *= Fraction(a)
    return math.log(num) - math.log(den)


class TestRegretAdditive:
    @pytest.mark.parametrize(
        "mentor,agent,expected",
        [([1, 1], [1, 0.5], 0.5), ([1, 1, 1], [1, 1, 1], 0.0), ([0.9, 0.8], [0.95, 0.8], -0.05)],
    )
    def test_examples(self, mentor, agent, expected):
        assert regret_additive(mentor, agent) == pytest.approx(expected, abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            regret_additive([1, 1], [1])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            regret_additive([], [])

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            regret_additive([1.1], [1.0])

    def test_slack_clamped(self):
        assert regret_additive([1 + 1e-13], [1.0]) == 0.0
        assert clean_payoffs([-5e-13])[0] == 0.0


class TestRegretMultiplicative:
    def test_log_two(self):
        assert float(regret_multiplicative([1, 1], [1, 0.5])) == pytest.approx(math.log(2), rel=1e-12)

    def test_zero_payoff_is_inf(self):
        r = regret_multiplicative([1], [0])
        assert r.is_inf and str(r) == "inf"

    def test_identity(self):
        assert float(regret_multiplicative([0.9, 0.9], [0.9, 0.9])) == 0.0

    def test_mentor_nonpositive(self):
        with pytest.raises(InvariantViolation):
            regret_multiplicative([0.0, 1.0], [0.5, 0.5])

    def test_no_underflow_long_series(self):
        m = np.full(1_000_000, 0.5)
        a = np.full(1_000_000, 0.25)
        assert float(regret_multiplicative(m, a)) == pytest.approx(1_000_000 * math.log(2), rel=1e-9)

    def test_matches_rational_oracle(self):
        rng = np.random.default_rng(3)
        m = rng.uniform(0.5, 1, 30).round(3)
        a = rng.uniform(0.1, 1, 30).round(3)
        assert float(regret_multiplicative(m, a)) == pytest.approx(naive_log_ratio(m, a), abs=1e-10)


class TestExtendedReal:
    def test_inf_absorbs(self):
        assert (ExtendedReal.inf() + 3.0).is_inf
        assert (ExtendedReal.of(1.0) + ExtendedReal.inf()).is_inf

    def test_order(self):
        assert ExtendedReal.of(5.0) < ExtendedReal.inf()
        assert ExtendedReal.of(1.0) <= 1.0

    @pytest.mark.parametrize("text", ["inf", "0.5", "-2.25"])
    def test_round_trip(self, text):
        assert str(ExtendedReal.parse(text)) == text

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            ExtendedReal.of(float("nan"))


class TestProdVsAdd:
    def test_example(self):
        assert check_prod_vs_add([1, 1], [1, 0.5]) == ProdVsAdd(True, True)

    def test_equal_series(self):
        assert check_prod_vs_add([0.4, 0.7], [0.4, 0.7]) == ProdVsAdd(True, True)

    def test_zero_agent_payoff(self):
        assert check_prod_vs_add([1, 1], [1, 0]) == ProdVsAdd(True, None)

    def test_second_needs_domination(self):
        # without domination the scaled-additive side can fail
        m, a = [0.5, 0.5], [1.0, 0.1]
        assert float(regret_multiplicative(m, a)) > regret_additive(m, a) / 0.1
        assert check_prod_vs_add(m, a) == ProdVsAdd(None, None)


class TestRegretReport:
    def test_cumulative_prefixes(self):
        r = RegretReport.from_series([1, 1, 1, 1], [1, 0.5, 1, 0.75], [True, False, False, True])
        assert r.cumulative_additive[-1] == r.additive == 0.75
        assert list(r.cumulative_queries) == [1, 1, 1, 2]
        assert r.query_count == 2 and r.T == 4

    def test_flag_length(self):
        with pytest.raises(ValueError):
            RegretReport.from_series([1, 1], [1, 1], [True])

    @given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1), st.booleans()), min_size=1, max_size=50))
    def test_queries_monotone(self, rows):
        m = [max(r[0], 1e-3) for r in rows]
        a = [r[1] for r in rows]
        rep = RegretReport.from_series(m, a, [r[2] for r in rows])
        assert 0 <= rep.query_count <= rep.T
        assert np.all(np.diff(rep.cumulative_queries) >= 0)
        assert rep.multiplicative.is_inf == any(x == 0 for x in a)


class TestStepRecord:
    def test_query_step_scores_mentor(self):
        with pytest.raises(InvariantViolation):
            StepRecord(1, np.array([0.1]), QUERY, True, 1, 0.5, 1.0)

    def test_mentor_action_iff_queried(self):
        with pytest.raises(InvariantViolation):
            StepRecord(1, np.array([0.1]), 0, False, 1, 0.5, 1.0)
        StepRecord(1, np.array([0.1]), QUERY, True, 1, 1.0, 1.0)


class TestDiameter:
    def test_1d(self):
        assert diameter([0.2, 0.9, 0.5]) == pytest.approx(0.7)

    def test_nd_against_bruteforce(self):
        pts = np.random.default_rng(0).random((60, 3))
        brute = max(np.linalg.norm(p - q) for p in pts for q in pts)
        assert diameter(pts) == pytest.approx(brute)

    def test_single(self):
        assert diameter([[0.3, 0.3]]) == 0.0


@settings(max_examples=300)
@given(st.lists(st.tuples(st.floats(1e-3, 1), st.floats(1e-3, 1)), min_size=1, max_size=40))
def test_prod_vs_add_sandwich(pairs):
    m = [max(x, y) for x, y in pairs]
    a = [min(x, y) for x, y in pairs]
    res = check_prod_vs_add(m, a)
    assert res.additive_le_mul is True
    assert res.mul_le_scaled_additive is True
