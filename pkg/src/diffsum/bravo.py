"""BRAVO ballot-polling baseline (Wald SPRT), used for comparisons.

This is the standard two-candidate sequential probability ratio test: each
winner ballot multiplies the likelihood ratio by 2*p_w, each loser ballot by
2*(1-p_w), and the audit accepts once the ratio reaches 1/alpha.  We keep the
statistic in the natural-log domain so long trials cannot overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

from .core import AcceptOutcome, Continue, Decision

BallotClass = Literal["winner", "loser", "other"]


@dataclass(frozen=True)
class BravoParams:
    """Risk limit and the reported winner's share of the two-candidate vote.

    reported_winner names the candidate the acceptance decision is issued
    for; the test itself only needs the share.
    """

    alpha: float
    reported_winner_share: float
    reported_winner: str = "A"

    def __post_init__(self) -> None:
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0.5 < self.reported_winner_share < 1:
            raise ValueError(
                "reported winner share must be in (0.5, 1), got "
                f"{self.reported_winner_share}"
            )

    @property
    def winner_increment(self) -> float:
        return math.log(2.0 * self.reported_winner_share)

    @property
    def loser_increment(self) -> float:
        return math.log(2.0 * (1.0 - self.reported_winner_share))

    @property
    def accept_threshold(self) -> float:
        return math.log(1.0 / self.alpha)


@dataclass(frozen=True)
class BravoState:
    log_statistic: float = 0.0
    ballots_seen: int = 0


def bravo_update(state: BravoState, ballot_for: BallotClass, params: BravoParams) -> BravoState:
    """Consume one ballot.  Ballots outside the pair count toward
    ballots_seen but leave the statistic alone."""
    if ballot_for == "winner":
        step = params.winner_increment
    elif ballot_for == "loser":
        step = params.loser_increment
    elif ballot_for == "other":
        step = 0.0
    else:
        raise ValueError(f"ballot_for must be winner/loser/other, got {ballot_for!r}")
    return BravoState(state.log_statistic + step, state.ballots_seen + 1)


def bravo_decision(state: BravoState, params: BravoParams) -> Decision:
    """Accept the reported winner once the log statistic reaches ln(1/alpha)."""
    if state.log_statistic >= params.accept_threshold:
        return AcceptOutcome(winner=params.reported_winner)
    return Continue()


def bravo_expected_size(alpha: float, margin: float) -> float:
    """Rule-of-thumb expected sample size, 2*ln(1/alpha) / margin^2."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if margin <= 0:
        raise ValueError(f"margin must be positive, got {margin}")
    return 2.0 * math.log(1.0 / alpha) * (1.0 / margin) ** 2
