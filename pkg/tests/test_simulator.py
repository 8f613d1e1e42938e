import json
import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from diffsum.core import AcceptOutcome, FullCountComplete, RecommendCutover
from diffsum.simulator import (
    BravoRule,
    DeltaTableRow,
    DiffSumRule,
    SimulationConfig,
    delta_table_csv,
    exhaustive_error_oracle,
    reproduce_delta_table,
    run_simulation,
    run_trial,
    wilson_interval,
)
from diffsum.sampling import Geometric, PerBallot


class TestRules:
    def test_diffsum_rule_needs_exactly_one_parameter(self):
        with pytest.raises(ValueError):
            DiffSumRule()
        with pytest.raises(ValueError):
            DiffSumRule(c=7, delta=2)
        assert DiffSumRule(delta=2).resolve_c(50_000) == 7
        assert DiffSumRule(c=5).resolve_c(50_000) == 5

    def test_bravo_rule_domain(self):
        with pytest.raises(ValueError):
            BravoRule(alpha=0.0, reported_winner_share=0.6)
        with pytest.raises(ValueError):
            BravoRule(alpha=0.1, reported_winner_share=0.5)


class TestConfig:
    def test_requires_one_truth_form(self):
        with pytest.raises(ValueError):
            SimulationConfig(n=10, rule=DiffSumRule(c=1))
        with pytest.raises(ValueError):
            SimulationConfig(
                n=10, rule=DiffSumRule(c=1), margin=0.2, counts=(("A", 6), ("B", 4))
            )

    def test_odd_tie_rejected(self):
        with pytest.raises(ValueError):
            SimulationConfig(n=11, rule=DiffSumRule(c=1), margin=0.0, initial_sample_size=1)

    def test_counts_must_sum_to_n(self):
        with pytest.raises(ValueError):
            SimulationConfig(
                n=10, rule=DiffSumRule(c=1), counts=(("A", 5), ("B", 4)),
                initial_sample_size=1,
            )

    def test_trials_positive(self):
        with pytest.raises(ValueError):
            SimulationConfig(n=10, rule=DiffSumRule(c=1), margin=0.0, trials=0)

    def test_reported_winner_defaults_to_first(self):
        cfg = SimulationConfig(
            n=10, rule=DiffSumRule(c=1), counts=(("X", 4), ("Y", 6)),
            initial_sample_size=1,
        )
        assert cfg.resolved_reported_winner == "X"

    def test_dict_roundtrip(self):
        for cfg in (
            SimulationConfig(n=100, rule=DiffSumRule(delta=1), margin=0.3, trials=7,
                             master_seed=99, schedule=Geometric(2.0)),
            SimulationConfig(n=10, rule=BravoRule(alpha=0.2, reported_winner_share=0.7),
                             counts=(("A", 4), ("B", 6)), reported_winner="A",
                             initial_sample_size=1, cutover_enabled=True),
        ):
            assert SimulationConfig.from_dict(cfg.to_dict()) == cfg

    def test_from_dict_via_json(self):
        cfg = SimulationConfig(n=50, rule=DiffSumRule(c=3), margin=0.1, trials=3)
        assert SimulationConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


class TestRunTrial:
    def test_unanimous_small_electorate_accepts_at_initial_sample(self):
        # 24 of 24 for A: (24-0)^2 = 576 > 7*24 = 168 at the initial check
        cfg = SimulationConfig(n=24, rule=DiffSumRule(c=7), margin=1.0, trials=1)
        outcome = run_trial(cfg, 0)
        assert outcome.stopped_at == 24
        assert outcome.decision == AcceptOutcome(winner="A")
        assert not outcome.wrong_acceptance

    def test_tie_that_never_accepts_exhausts_to_full_count(self):
        cfg = SimulationConfig(
            n=10, rule=DiffSumRule(c=30), margin=0.0, trials=1, initial_sample_size=1
        )
        for i in range(20):
            outcome = run_trial(cfg, i)
            assert outcome.stopped_at == 10
            assert outcome.decision == FullCountComplete(winner=None)
            assert not outcome.wrong_acceptance

    def test_deterministic_in_config_and_index(self):
        cfg = SimulationConfig(n=1000, rule=DiffSumRule(delta=0), margin=0.1,
                               trials=1, master_seed=77)
        assert run_trial(cfg, 5) == run_trial(cfg, 5)
        with pytest.raises(ValueError):
            run_trial(cfg, -1)

    def test_acceptance_on_tie_is_wrong(self):
        # c=1 on a tie accepts often; every such acceptance must be flagged
        cfg = SimulationConfig(n=8, rule=DiffSumRule(c=1), margin=0.0,
                               trials=1, initial_sample_size=1, master_seed=3)
        saw_wrong = False
        for i in range(200):
            outcome = run_trial(cfg, i)
            if isinstance(outcome.decision, AcceptOutcome):
                assert outcome.wrong_acceptance
                saw_wrong = True
        assert saw_wrong

    def test_schedule_controls_check_points(self):
        # unanimous electorate, c=2: per-ballot first passes at s=3 (9 > 6)
        # but geometric-from-1 only checks 1, 2, 4 and must stop at 4
        per_ballot = SimulationConfig(n=16, rule=DiffSumRule(c=2), margin=1.0,
                                      trials=1, initial_sample_size=1)
        geometric = SimulationConfig(n=16, rule=DiffSumRule(c=2), margin=1.0,
                                     trials=1, initial_sample_size=1,
                                     schedule=Geometric(2.0))
        assert run_trial(per_ballot, 0).stopped_at == 3
        assert run_trial(geometric, 0).stopped_at == 4

    def test_cutover_terminates_trial_when_enabled(self):
        # tie with a huge c never accepts; 4% of 1000 is 40
        cfg = SimulationConfig(n=1000, rule=DiffSumRule(c=10_000), margin=0.0,
                               trials=1, cutover_enabled=True)
        outcome = run_trial(cfg, 0)
        assert outcome.stopped_at == 40
        assert isinstance(outcome.decision, RecommendCutover)
        assert not outcome.wrong_acceptance

    def test_cutover_disabled_by_default(self):
        cfg = SimulationConfig(n=1000, rule=DiffSumRule(c=10_000), margin=0.0, trials=1)
        assert run_trial(cfg, 0).decision == FullCountComplete(winner=None)

    def test_bravo_trial_runs(self):
        cfg = SimulationConfig(n=200, rule=BravoRule(alpha=0.1, reported_winner_share=0.9),
                               margin=0.8, trials=1, initial_sample_size=1)
        outcome = run_trial(cfg, 1)
        assert outcome.decision == AcceptOutcome(winner="A")
        assert outcome.stopped_at < 50


class TestWilson:
    def test_against_statsmodels(self):
        sm = pytest.importorskip("statsmodels.stats.proportion")
        for k, n in [(0, 100), (1, 100), (5, 100), (50, 100), (99, 100),
                     (100, 100), (4, 10_000), (123, 10_000)]:
            lo, hi = wilson_interval(k, n)
            want_lo, want_hi = sm.proportion_confint(k, n, alpha=0.05, method="wilson")
            assert lo == pytest.approx(want_lo, abs=1e-12)
            assert hi == pytest.approx(want_hi, abs=1e-12)

    def test_contains_point_estimate(self):
        for k, n in [(0, 10), (3, 10), (10, 10), (7, 500)]:
            lo, hi = wilson_interval(k, n)
            assert lo <= k / n <= hi


class TestOracle:
    def test_two_ballot_tie_never_errs_at_c1(self):
        assert exhaustive_error_oracle(2, DiffSumRule(c=1), margin=0.0) == 0

    def test_unanimous_has_no_wrong_winner(self):
        assert exhaustive_error_oracle(8, DiffSumRule(c=2), margin=1.0) == 0

    def test_known_small_tie_value(self):
        # n=4 tie, c=1, per-ballot from 1 ballot: enumerate by hand.
        # Sequences of AABB in some order (6 of them, prob 1/6 each).
        # A first: at s=1 (1,0): 1 > 1 fails; s=2 AA: 4 > 2 accepts (wrong).
        # By symmetry B-first sequences accept B wrongly the same way;
        # ABxx/BAxx reach (1,1) then (2,1): 1 > 3 fails, then full count.
        # Wrong sequences: AABB, BBAA -> 2/6, but only acceptance of the
        # *reported* winner (A) counts... AABB only if auditing A: 1/6.
        assert exhaustive_error_oracle(4, DiffSumRule(c=1), margin=0.0) == Fraction(1, 6)

    def test_refuses_large_n(self):
        with pytest.raises(ValueError):
            exhaustive_error_oracle(13, DiffSumRule(c=1), margin=0.0)

    def test_needs_exactly_one_truth(self):
        with pytest.raises(ValueError):
            exhaustive_error_oracle(4, DiffSumRule(c=1))

    def test_monte_carlo_agrees_on_diffsum_cell(self):
        exact = exhaustive_error_oracle(6, DiffSumRule(c=1), margin=0.0)
        cfg = SimulationConfig(n=6, rule=DiffSumRule(c=1), margin=0.0,
                               trials=20_000, master_seed=5, initial_sample_size=1)
        report = run_simulation(cfg)
        p = float(exact)
        sigma = math.sqrt(p * (1 - p) / cfg.trials)
        assert abs(report.wrong_acceptance_rate - p) <= 3 * sigma

    def test_monte_carlo_agrees_on_bravo_cell(self):
        rule = BravoRule(alpha=0.3, reported_winner_share=0.7)
        exact = exhaustive_error_oracle(8, rule, margin=0.0)
        assert 0 < exact < 1
        cfg = SimulationConfig(n=8, rule=rule, margin=0.0, trials=30_000,
                               master_seed=6, initial_sample_size=1)
        report = run_simulation(cfg)
        p = float(exact)
        sigma = math.sqrt(p * (1 - p) / cfg.trials)
        assert abs(report.wrong_acceptance_rate - p) <= 3 * sigma


class TestRunSimulation:
    def test_report_shape_and_invariants(self):
        cfg = SimulationConfig(n=100, rule=DiffSumRule(c=2), margin=0.5,
                               trials=500, master_seed=1, initial_sample_size=4)
        rep = run_simulation(cfg)
        assert rep.trials == 500
        assert 0.0 <= rep.wrong_acceptance_rate <= 1.0
        assert rep.ci_low <= rep.wrong_acceptance_rate <= rep.ci_high
        assert rep.mean_stopped_at <= rep.max_stopped_at
        assert rep.duration_seconds is not None and rep.duration_seconds > 0
        assert len(rep.stopped_at_samples) == 500

    def test_canonical_json_excludes_timing(self):
        cfg = SimulationConfig(n=50, rule=DiffSumRule(c=2), margin=0.2,
                               trials=50, master_seed=1, initial_sample_size=4)
        body = json.loads(run_simulation(cfg).to_json())
        assert "duration_seconds" not in body
        assert "stopped_at_samples" not in body
        timed = json.loads(run_simulation(cfg).to_json(include_timing=True))
        assert "duration_seconds" in timed

    def test_workers_do_not_change_the_report(self):
        cfg = SimulationConfig(n=500, rule=DiffSumRule(delta=0), margin=0.0,
                               trials=400, master_seed=21)
        solo = run_simulation(cfg, workers=1).to_json()
        multi = run_simulation(cfg, workers=4).to_json()
        assert solo == multi

    def test_same_seed_same_bytes(self):
        cfg = SimulationConfig(n=300, rule=DiffSumRule(delta=1), margin=0.1,
                               trials=200, master_seed=8)
        assert run_simulation(cfg).to_json() == run_simulation(cfg).to_json()

    def test_csv_row_has_documented_columns(self):
        cfg = SimulationConfig(n=64, rule=BravoRule(alpha=0.2, reported_winner_share=0.6),
                               margin=0.5, trials=20, master_seed=2, initial_sample_size=2)
        rep = run_simulation(cfg)
        header = rep.CSV_HEADER.split(",")
        row = rep.csv_row().split(",")
        assert header == ["n", "rule", "params", "trials", "rate", "ci_low",
                          "ci_high", "mean_size", "median", "p90", "full_count_rate"]
        assert len(row) == len(header)
        assert row[0] == "64" and row[1] == "bravo"

    def test_full_count_rate_counts_exhaustion(self):
        cfg = SimulationConfig(n=10, rule=DiffSumRule(c=50), margin=0.0,
                               trials=50, master_seed=3, initial_sample_size=1)
        assert run_simulation(cfg).full_count_rate == 1.0

    def test_wrongly_reported_outcome_is_caught_by_escalation(self):
        """Auditing a loser as the reported winner must (almost) always
        escalate to a full count rather than accept — the risk-limiting
        behavior, at a reversed 0.20 margin."""
        cfg = SimulationConfig(
            n=20_000, rule=DiffSumRule(c=5),
            counts=(("A", 8_000), ("B", 12_000)), reported_winner="A",
            trials=400, master_seed=13,
        )
        rep = run_simulation(cfg, workers=4)
        assert rep.wrong_acceptance_rate <= 0.02
        assert rep.full_count_rate >= 0.98


class TestDeltaTable:
    def test_small_run_shape_and_reproducibility(self):
        rows = reproduce_delta_table(trials=60, master_seed=4)
        again = reproduce_delta_table(trials=60, master_seed=4)
        assert rows == again
        assert [r.delta for r in rows] == [0, 1, 2, 3, 4]
        assert [r.c for r in rows] == [5, 6, 7, 8, 9]
        assert all(r.n == 10_000 for r in rows)
        csv_text = delta_table_csv(rows)
        lines = csv_text.strip().splitlines()
        assert lines[0].startswith("n,delta,c,trials,rate")
        assert len(lines) == 6

    def test_verdict_logic(self):
        base = dict(n=100, delta=2, c=7, trials=10_000)
        passing = DeltaTableRow(**base, wrong_acceptance_rate=0.09,
                                ci_low=0.08, ci_high=0.10, bound=0.10)
        failing = DeltaTableRow(**base, wrong_acceptance_rate=0.30,
                                ci_low=0.28, ci_high=0.32, bound=0.10)
        unclear = DeltaTableRow(n=100, delta=2, c=7, trials=30,
                                wrong_acceptance_rate=0.30,
                                ci_low=0.05, ci_high=0.45, bound=0.10)
        assert passing.verdict == "pass" and passing.within_bound
        assert failing.verdict == "fail"
        assert unclear.verdict == "inconclusive"
