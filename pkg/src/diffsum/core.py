"""Core decision logic for DiffSum ballot-polling audits.

A DiffSum audit samples paper ballots without replacement and stops as soon
as the sample winner's lead is convincing: with a votes for the leader and b
for the strongest loser, the audit accepts the outcome when

    a > b   and   (a - b)**2 > c * (a + b)

where c is a small integer chosen from the electorate size.  Everything in
this module is a pure function of its arguments; the stop condition itself
is exact integer arithmetic, so no rounding can ever flip a decision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

INITIAL_SAMPLE_SIZE = 24
CUTOVER_FRACTION = 0.04

# Empirical worst-case (tie electorate) chance of accepting a wrong outcome,
# indexed by the error-control increment delta used in c = d + delta.
MAX_ERROR_RATE: dict[int, float] = {0: 0.22, 1: 0.15, 2: 0.10, 3: 0.06, 4: 0.04}


def decimal_digits(n: int) -> int:
    """Number of decimal digits of a positive integer."""
    if n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    return len(str(n))


def choose_c(n: int, delta: int) -> int:
    """Threshold constant for an electorate of n ballots: digits(n) + delta."""
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    return decimal_digits(n) + delta


def max_error_rate(delta: int) -> float:
    """Worst-case wrong-acceptance rate for delta in 0..4.

    Values outside the table are refused rather than extrapolated.
    """
    try:
        return MAX_ERROR_RATE[delta]
    except KeyError:
        raise ValueError(f"delta must be in 0..4, got {delta}") from None


def stop_condition(a: int, b: int, c: int) -> bool:
    """True when the sample justifies stopping: a > b and (a-b)^2 > c*(a+b).

    a is the sample leader's count, b the strongest loser's.  Exact integer
    arithmetic throughout.
    """
    if a < 0 or b < 0:
        raise ValueError("counts must be nonnegative")
    return a > b and (a - b) ** 2 > c * (a + b)


def expected_stop_size(c: int, margin: float) -> float:
    """Estimated sample size at which the audit stops, c / margin^2.

    The estimate comes from the expected lead in a sample of size s being
    s*margin, so the stop condition is first expected to hold near
    s = c / margin^2.  Diverges at margin 0, which is rejected.
    """
    if margin <= 0:
        raise ValueError(f"margin must be positive, got {margin}")
    # (1/m)**2 rather than m*m so exactly-representable margins like 0.20
    # and 0.25 produce exact quotients (7 / 0.2**2 rounds to 174.999...97).
    return c * (1.0 / margin) ** 2


@dataclass(frozen=True)
class AuditParams:
    """Full configuration of one DiffSum audit.

    c defaults to decimal_digits(n) + delta; passing c explicitly overrides
    that derivation (used for simulation grids).  candidates is the declared
    order, which also breaks ties when reducing a multi-candidate sample.
    """

    n: int
    candidates: tuple[str, ...]
    delta: int | None = None
    c: int | None = None
    initial_sample_size: int = INITIAL_SAMPLE_SIZE
    cutover_fraction: float = CUTOVER_FRACTION

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")
        if len(self.candidates) < 2:
            raise ValueError("at least two candidates are required")
        if len(set(self.candidates)) != len(self.candidates):
            raise ValueError("candidate identifiers must be unique")
        if self.c is None:
            if self.delta is None:
                raise ValueError("either delta or an explicit c is required")
            if not 0 <= self.delta <= 4:
                raise ValueError(f"delta must be in 0..4, got {self.delta}")
        elif self.c < 1:
            raise ValueError(f"c must be positive, got {self.c}")
        if not 1 <= self.initial_sample_size <= self.n:
            raise ValueError(
                f"initial sample size must be in 1..{self.n}, "
                f"got {self.initial_sample_size}"
            )
        if not 0 < self.cutover_fraction <= 1:
            raise ValueError(
                f"cutover fraction must be in (0, 1], got {self.cutover_fraction}"
            )

    @property
    def d(self) -> int:
        return decimal_digits(self.n)

    @property
    def threshold_c(self) -> int:
        """The c actually in force: the override if given, else d + delta."""
        if self.c is not None:
            return self.c
        return choose_c(self.n, self.delta)  # type: ignore[arg-type]

    @property
    def risk_bound(self) -> float | None:
        """Empirical worst-case error rate, when delta is on the table."""
        if self.delta is not None and self.delta in MAX_ERROR_RATE:
            return MAX_ERROR_RATE[self.delta]
        return None

    def cutover_threshold(self) -> int:
        """Smallest sample size at which a full hand count is recommended."""
        # guard against binary representation pushing e.g. 0.04*20000
        # fractionally above the intended 800
        return math.ceil(self.cutover_fraction * self.n - 1e-9)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "candidates": list(self.candidates),
            "delta": self.delta,
            "c": self.c,
            "initial_sample_size": self.initial_sample_size,
            "cutover_fraction": self.cutover_fraction,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> AuditParams:
        return cls(
            n=data["n"],
            candidates=tuple(data["candidates"]),
            delta=data.get("delta"),
            c=data.get("c"),
            initial_sample_size=data.get("initial_sample_size", INITIAL_SAMPLE_SIZE),
            cutover_fraction=data.get("cutover_fraction", CUTOVER_FRACTION),
        )


@dataclass(frozen=True)
class TallySnapshot:
    """Per-candidate counts in the sample so far.

    total_drawn counts every ballot drawn, including invalid ballots and
    ballots for candidates outside the contest; those appear in no
    candidate count.
    """

    counts: Mapping[str, int]
    total_drawn: int

    def __post_init__(self) -> None:
        if any(v < 0 for v in self.counts.values()):
            raise ValueError("candidate counts must be nonnegative")
        if sum(self.counts.values()) > self.total_drawn:
            raise ValueError("candidate counts exceed total ballots drawn")


# -- decisions ---------------------------------------------------------------


@dataclass(frozen=True)
class Continue:
    pass


@dataclass(frozen=True)
class AcceptOutcome:
    winner: str


@dataclass(frozen=True)
class RecommendCutover:
    reason: str


@dataclass(frozen=True)
class FullCountComplete:
    winner: str | None  # None means the full count ended in a tie

    @property
    def is_tie(self) -> bool:
        return self.winner is None


Decision = Continue | AcceptOutcome | RecommendCutover | FullCountComplete


def decision_to_dict(decision: Decision) -> dict:
    """JSON-friendly encoding shared by event logs, reports and the API."""
    match decision:
        case Continue():
            return {"kind": "continue"}
        case AcceptOutcome(winner=w):
            return {"kind": "accept", "winner": w}
        case RecommendCutover(reason=r):
            return {"kind": "cutover", "reason": r}
        case FullCountComplete(winner=w):
            return {"kind": "full_count", "winner": w}
    raise TypeError(f"not a Decision: {decision!r}")


def decision_from_dict(data: Mapping) -> Decision:
    kind = data.get("kind")
    if kind == "continue":
        return Continue()
    if kind == "accept":
        return AcceptOutcome(winner=data["winner"])
    if kind == "cutover":
        return RecommendCutover(reason=data.get("reason", ""))
    if kind == "full_count":
        return FullCountComplete(winner=data.get("winner"))
    raise ValueError(f"unknown decision kind: {kind!r}")


# -- evaluation --------------------------------------------------------------


def reduce_to_pair(counts: Mapping[str, int]) -> tuple[int, int, str]:
    """Reduce a multi-candidate tally to (leader count, strongest loser count,
    leader).

    The strongest loser is the non-leading candidate with the most sample
    votes.  When several candidates share the maximum, the one listed first
    wins the label and b equals a, so the stop condition necessarily fails.
    Mapping order is significant: pass counts in declared candidate order.
    """
    if len(counts) < 2:
        raise ValueError("at least two candidates are required")
    ordered = list(counts.items())
    a_cand, a = max(ordered, key=lambda kv: kv[1])
    b = max(v for k, v in ordered if k != a_cand)
    return a, b, a_cand


def plurality_winner(counts: Mapping[str, int]) -> str | None:
    """Unique plurality winner of a completed count, or None on a tie."""
    a, b, winner = reduce_to_pair(counts)
    return winner if a > b else None


def evaluate(tally: TallySnapshot, params: AuditParams) -> Decision:
    """Apply the audit decision rule to the sample so far.

    Checks run in a fixed priority order: a finished full count beats
    acceptance, which beats the cutover recommendation; otherwise the audit
    continues.  The cutover recommendation is advisory -- sampling past it
    is allowed and remains sound, it just stops being economical.
    """
    if tally.total_drawn > params.n:
        raise ValueError(
            f"tally has {tally.total_drawn} ballots drawn but the electorate "
            f"holds only {params.n}"
        )
    unknown = set(tally.counts) - set(params.candidates)
    if unknown:
        raise ValueError(f"tally names unknown candidates: {sorted(unknown)}")

    counts = {cand: tally.counts.get(cand, 0) for cand in params.candidates}
    if tally.total_drawn == params.n:
        return FullCountComplete(winner=plurality_winner(counts))
    a, b, winner = reduce_to_pair(counts)
    if stop_condition(a, b, params.threshold_c):
        return AcceptOutcome(winner=winner)
    if tally.total_drawn >= params.cutover_threshold():
        return RecommendCutover(
            reason=(
                f"sample of {tally.total_drawn} has reached "
                f"{params.cutover_fraction:.0%} of {params.n} ballots; "
                "a full hand count is likely more economical"
            )
        )
    return Continue()
