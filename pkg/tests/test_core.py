import pytest
from hypothesis import given, strategies as st

from diffsum.core import (
    AcceptOutcome,
    AuditParams,
    Continue,
    FullCountComplete,
    RecommendCutover,
    TallySnapshot,
    choose_c,
    decimal_digits,
    decision_from_dict,
    decision_to_dict,
    evaluate,
    expected_stop_size,
    max_error_rate,
    plurality_winner,
    reduce_to_pair,
    stop_condition,
)


def digits_by_division(n):
    # independent oracle: count repeated integer divisions by ten
    d = 0
    while n:
        n //= 10
        d += 1
    return d


class TestDecimalDigits:
    def test_examples(self):
        assert decimal_digits(50_000) == 5
        assert decimal_digits(9) == 1
        assert decimal_digits(10) == 2

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            decimal_digits(0)
        with pytest.raises(ValueError):
            decimal_digits(-3)

    def test_sweep_against_division_oracle(self):
        for n in range(1, 100_001):
            assert decimal_digits(n) == digits_by_division(n)

    def test_decade_boundaries(self):
        for k in range(1, 19):
            assert decimal_digits(10**k - 1) == k
            assert decimal_digits(10**k) == k + 1

    @given(st.integers(min_value=1, max_value=10**24))
    def test_matches_division_oracle(self, n):
        assert decimal_digits(n) == digits_by_division(n)


class TestChooseC:
    def test_examples(self):
        assert choose_c(50_000, 2) == 7
        assert choose_c(999, 0) == 3
        assert choose_c(1_000_000, 4) == 11

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            choose_c(0, 2)
        with pytest.raises(ValueError):
            choose_c(100, -1)


def test_max_error_rate_table():
    assert max_error_rate(0) == 0.22
    assert max_error_rate(1) == 0.15
    assert max_error_rate(2) == 0.10
    assert max_error_rate(3) == 0.06
    assert max_error_rate(4) == 0.04


def test_max_error_rate_refuses_extrapolation():
    for delta in (-1, 5, 100):
        with pytest.raises(ValueError):
            max_error_rate(delta)


class TestStopCondition:
    def test_examples(self):
        assert stop_condition(20, 4, 7)  # 256 > 168
        assert not stop_condition(13, 11, 7)  # 4 <= 168
        assert not stop_condition(5, 5, 1)

    def test_strict_inequality_at_boundary(self):
        # (6-0)^2 == 6*(6+0): equality is not enough
        assert not stop_condition(6, 0, 6)
        assert stop_condition(7, 0, 6)

    def test_exact_at_large_counts(self):
        # values where float arithmetic would round: 10^9-scale counts
        a, b = 10**9 + 1, 10**9
        assert not stop_condition(a, b, 1)
        big = 10**12
        assert stop_condition(2 * big, big, 1) == (big * big > 3 * big)

    def test_rejects_negative_counts(self):
        with pytest.raises(ValueError):
            stop_condition(-1, 0, 7)
        with pytest.raises(ValueError):
            stop_condition(0, -1, 7)

    @given(st.integers(0, 10**6), st.integers(0, 10**6), st.integers(1, 50))
    def test_tie_never_stops(self, k, _b, c):
        assert not stop_condition(k, k, c)

    @given(st.integers(0, 10**6), st.integers(0, 10**6), st.integers(2, 50))
    def test_monotone_in_threshold(self, a, b, c):
        if stop_condition(a, b, c):
            for smaller in range(1, c):
                assert stop_condition(a, b, smaller)

    @given(
        st.integers(0, 10**5), st.integers(0, 10**5),
        st.integers(1, 20), st.integers(1, 50),
    )
    def test_scaling_preserves_acceptance(self, a, b, c, k):
        if stop_condition(a, b, c):
            assert stop_condition(k * a, k * b, c)


class TestExpectedStopSize:
    def test_paper_arithmetic_is_exact(self):
        assert expected_stop_size(7, 0.20) == 175.0
        assert expected_stop_size(5, 0.20) == 125.0
        assert expected_stop_size(1, 1.0) == 1.0

    def test_rejects_degenerate_margin(self):
        with pytest.raises(ValueError):
            expected_stop_size(7, 0.0)
        with pytest.raises(ValueError):
            expected_stop_size(7, -0.2)

    @given(st.integers(1, 20), st.floats(0.01, 1.0))
    def test_formula_identity(self, c, m):
        assert expected_stop_size(c, m) * m * m == pytest.approx(c, rel=1e-12)


class TestReduceToPair:
    def test_two_candidates(self):
        assert reduce_to_pair({"A": 20, "B": 4}) == (20, 4, "A")

    def test_tie_at_top_forces_equal_pair(self):
        assert reduce_to_pair({"A": 10, "B": 10, "C": 3}) == (10, 10, "A")

    def test_strongest_loser(self):
        assert reduce_to_pair({"A": 5, "B": 9, "C": 7}) == (9, 7, "B")

    def test_declared_order_breaks_ties(self):
        # first-listed candidate wins the label when counts tie
        assert reduce_to_pair({"B": 10, "A": 10})[2] == "B"

    def test_needs_two_candidates(self):
        with pytest.raises(ValueError):
            reduce_to_pair({"A": 5})


def test_plurality_winner():
    assert plurality_winner({"A": 3, "B": 2}) == "A"
    assert plurality_winner({"A": 2, "B": 2}) is None
    assert plurality_winner({"A": 1, "B": 5, "C": 5}) is None


class TestAuditParams:
    def test_c_derivation(self):
        p = AuditParams(n=50_000, candidates=("A", "B"), delta=2)
        assert p.d == 5
        assert p.threshold_c == 7
        assert p.risk_bound == 0.10

    def test_explicit_c_overrides(self):
        p = AuditParams(n=50_000, candidates=("A", "B"), c=5)
        assert p.threshold_c == 5
        assert p.risk_bound is None

    def test_cutover_threshold(self):
        assert AuditParams(n=20_000, candidates=("A", "B"), delta=2).cutover_threshold() == 800
        assert AuditParams(n=50_000, candidates=("A", "B"), delta=2).cutover_threshold() == 2000
        # fractional products round up, tiny electorates floor at one ballot
        tiny = AuditParams(n=10, candidates=("A", "B"), delta=0, initial_sample_size=2)
        assert tiny.cutover_threshold() == 1

    def test_validation(self):
        with pytest.raises(ValueError):
            AuditParams(n=0, candidates=("A", "B"), delta=2)
        with pytest.raises(ValueError):
            AuditParams(n=10, candidates=("A",), delta=2)
        with pytest.raises(ValueError):
            AuditParams(n=10, candidates=("A", "A"), delta=2)
        with pytest.raises(ValueError):
            AuditParams(n=10, candidates=("A", "B"))  # neither delta nor c
        with pytest.raises(ValueError):
            AuditParams(n=10, candidates=("A", "B"), delta=9)
        with pytest.raises(ValueError):
            AuditParams(n=10, candidates=("A", "B"), delta=2, initial_sample_size=11)
        with pytest.raises(ValueError):
            AuditParams(n=10, candidates=("A", "B"), delta=2, cutover_fraction=0.0)

    def test_dict_roundtrip(self):
        p = AuditParams(n=123, candidates=("X", "Y", "Z"), delta=3, initial_sample_size=7)
        assert AuditParams.from_dict(p.to_dict()) == p


class TestTallySnapshot:
    def test_counts_cannot_exceed_drawn(self):
        with pytest.raises(ValueError):
            TallySnapshot(counts={"A": 5, "B": 5}, total_drawn=9)

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            TallySnapshot(counts={"A": -1}, total_drawn=4)

    def test_invalid_ballots_live_in_the_gap(self):
        t = TallySnapshot(counts={"A": 3, "B": 2}, total_drawn=7)
        assert t.total_drawn - sum(t.counts.values()) == 2


class TestEvaluate:
    PARAMS = AuditParams(n=50_000, candidates=("A", "B"), delta=2)

    def test_accepts_convincing_lead(self):
        t = TallySnapshot(counts={"A": 20, "B": 4}, total_drawn=24)
        assert evaluate(t, self.PARAMS) == AcceptOutcome(winner="A")

    def test_full_count_tie(self):
        p = AuditParams(n=24, candidates=("A", "B"), delta=2, c=7)
        t = TallySnapshot(counts={"A": 12, "B": 12}, total_drawn=24)
        assert evaluate(t, p) == FullCountComplete(winner=None)

    def test_cutover_recommendation(self):
        p = AuditParams(n=20_000, candidates=("A", "B"), c=7)
        t = TallySnapshot(counts={"A": 510, "B": 490}, total_drawn=1000)
        assert isinstance(evaluate(t, p), RecommendCutover)

    def test_continue_otherwise(self):
        t = TallySnapshot(counts={"A": 13, "B": 11}, total_drawn=24)
        assert evaluate(t, self.PARAMS) == Continue()

    def test_full_count_outranks_acceptance(self):
        # a sample that satisfies the stop rule but exhausts the electorate
        # is reported as the completed count, not as a sampling decision
        p = AuditParams(n=24, candidates=("A", "B"), delta=2, c=7)
        t = TallySnapshot(counts={"A": 24, "B": 0}, total_drawn=24)
        assert evaluate(t, p) == FullCountComplete(winner="A")

    def test_acceptance_outranks_cutover(self):
        p = AuditParams(n=100, candidates=("A", "B"), c=2)
        # past the 4% threshold (4 ballots) and convincingly decided
        t = TallySnapshot(counts={"A": 9, "B": 1}, total_drawn=10)
        assert evaluate(t, p) == AcceptOutcome(winner="A")

    def test_rejects_overdrawn_tally(self):
        t = TallySnapshot(counts={"A": 3}, total_drawn=30)
        p = AuditParams(n=20, candidates=("A", "B"), delta=1, initial_sample_size=5)
        with pytest.raises(ValueError):
            evaluate(t, p)

    def test_rejects_unknown_candidates(self):
        t = TallySnapshot(counts={"Z": 3}, total_drawn=3)
        with pytest.raises(ValueError):
            evaluate(t, self.PARAMS)

    @given(
        st.integers(0, 200), st.integers(0, 200), st.integers(0, 30),
        st.integers(1, 12),
    )
    def test_acceptance_implies_lead(self, a, b, inv, c):
        n = 100_000
        total = a + b + inv
        if total > n:
            return
        p = AuditParams(n=n, candidates=("A", "B"), c=c)
        decision = evaluate(TallySnapshot(counts={"A": a, "B": b}, total_drawn=total), p)
        if isinstance(decision, AcceptOutcome):
            hi, lo, w = reduce_to_pair({"A": a, "B": b})
            assert hi > lo and w == decision.winner


def test_decision_serialization_roundtrip():
    for d in (
        Continue(),
        AcceptOutcome(winner="A"),
        RecommendCutover(reason="economics"),
        FullCountComplete(winner="B"),
        FullCountComplete(winner=None),
    ):
        assert decision_from_dict(decision_to_dict(d)) == d
    with pytest.raises(ValueError):
        decision_from_dict({"kind": "nonsense"})
