"""Figure rendering for simulation reports and error-rate tables.

Pure presentation: everything drawn here is read off an already-computed
report.  Uses the Agg backend so figures render in headless environments.
"""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .simulator import DeltaTableRow, DiffSumRule, SimulationReport


def _rule_label(report: SimulationReport) -> str:
    rule = report.config.rule
    if isinstance(rule, DiffSumRule):
        return f"DiffSum c={rule.resolve_c(report.config.n)}"
    return f"BRAVO alpha={rule.alpha}, p_w={rule.reported_winner_share}"


def render_stop_size_histogram(report: SimulationReport, path: str) -> str:
    """Histogram of per-trial stop sizes with mean/median/p90 markers."""
    fig, ax = plt.subplots(figsize=(8, 5))
    samples = report.stopped_at_samples
    if samples:
        ax.hist(samples, bins=60, color="#4878a8", edgecolor="white", linewidth=0.3)
    for value, label, style in [
        (report.mean_stopped_at, f"mean {report.mean_stopped_at:.1f}", "-"),
        (report.median_stopped_at, f"median {report.median_stopped_at:.0f}", "--"),
        (report.p90_stopped_at, f"p90 {report.p90_stopped_at:.0f}", ":"),
    ]:
        ax.axvline(value, color="#c44e52", linestyle=style, linewidth=1.2, label=label)
    ax.set_xlabel("sample size at termination")
    ax.set_ylabel("trials")
    ax.set_title(
        f"{_rule_label(report)}, n={report.config.n}, "
        f"{report.trials} trials — stop sizes"
    )
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_delta_table_chart(rows: Sequence[DeltaTableRow], path: str) -> str:
    """Measured wrong-acceptance rate per delta against the published bound."""
    fig, ax = plt.subplots(figsize=(8, 5))
    xs = list(range(len(rows)))
    rates = [r.wrong_acceptance_rate for r in rows]
    err_lo = [r.wrong_acceptance_rate - r.ci_low for r in rows]
    err_hi = [r.ci_high - r.wrong_acceptance_rate for r in rows]
    ax.bar(xs, rates, color="#4878a8", label="measured rate (95% CI)")
    ax.errorbar(xs, rates, yerr=[err_lo, err_hi], fmt="none", ecolor="#333333", capsize=4)
    ax.plot(xs, [r.bound for r in rows], "v", color="#c44e52", markersize=9,
            label="worst-case bound")
    ax.set_xticks(xs)
    ax.set_xticklabels([f"δ={r.delta}\nc={r.c}" for r in rows])
    ax.set_ylabel("wrong-acceptance rate (tie electorate)")
    ax.set_title(f"Tie-electorate error rates, {rows[0].trials} trials per cell")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
