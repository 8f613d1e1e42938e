"""Reproducible sampling without replacement, manifests, and escalation.

The random-draw contract is the load-bearing piece here.  Each audit or
simulation trial owns a SeededRng — a (seed, stream_id) pair feeding a
Philox4x64 counter-based generator — and its draw order is the *fixed*
random permutation of the manifest induced by that pair: rank every ballot
by its raw 64-bit Philox word and read the ballots off in rank order.
Drawing k ballots reveals the first k ranks, so enlarging a sample can
never redraw or reorder what was already drawn (prefix-consistency), and
any two streams are independent without coordination.

Philox is chosen because numpy guarantees the bit stream of a BitGenerator
never changes across releases or platforms, and because keyed streams make
(seed, trial_index) substreams trivial.  The permutation is recovered with
a stable argsort, whose output is mathematically unique, so identical
(seed, stream_id) gives an identical draw sequence everywhere.  This
algorithm is part of the package's compatibility contract: changing it
would silently re-randomize replayed audits, so don't.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

_UINT64 = 2**64

INVALID_LABEL = "invalid"


@dataclass(frozen=True)
class SeededRng:
    """A named substream of the package-wide random contract."""

    seed: int
    stream_id: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.seed < _UINT64:
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")
        if not 0 <= self.stream_id < _UINT64:
            raise ValueError(f"stream_id must fit in 64 bits, got {self.stream_id}")

    def raw_words(self, count: int) -> np.ndarray:
        """First `count` raw 64-bit words of this stream, counter starting at 0."""
        bitgen = np.random.Philox(key=np.array([self.seed, self.stream_id], dtype=np.uint64))
        return bitgen.random_raw(count)

    def permutation(self, n: int) -> np.ndarray:
        """The fixed permutation of range(n) this stream induces."""
        return rank_order(self.raw_words(n))

    def substream(self, stream_id: int) -> SeededRng:
        return SeededRng(self.seed, stream_id)


def rank_order(words: np.ndarray) -> np.ndarray:
    """Indices of `words` in increasing order; stable, hence unique."""
    return np.argsort(words, kind="stable")


def rank_order_prefix(words: np.ndarray, k: int) -> np.ndarray:
    """First k entries of rank_order(words) without sorting the whole array.

    Partitions the k smallest words to the front, then orders just that
    window.  A tie straddling the window boundary could make the windowed
    answer ambiguous, so that (astronomically rare with 64-bit words) case
    falls back to the full stable sort.  Worth having: simulation trials
    usually stop after a tiny prefix of a large electorate.
    """
    n = len(words)
    if k >= n:
        return rank_order(words)
    if k == 0:
        return np.empty(0, dtype=np.intp)
    part = np.argpartition(words, k)
    window, rest = part[:k], part[k:]
    if words[window].max() == words[rest].min():
        return rank_order(words)[:k]
    order = np.argsort(words[window], kind="stable")
    prefix = window[order]
    # stable sort breaks ties by original index; argpartition does not,
    # so re-apply the index tie-break inside the window
    w = words[prefix]
    dup = w[1:] == w[:-1]
    if dup.any():
        prefix = prefix[np.lexsort((prefix, w))]
    return prefix


@dataclass(frozen=True)
class BallotManifest:
    """Ordered list of (ballot_id, label) rows.

    label is a candidate id, "invalid", or None when the truth is unknown
    (live audits, where humans interpret each ballot as it is retrieved).
    """

    entries: tuple[tuple[str, str | None], ...]

    def __post_init__(self) -> None:
        if len(self.entries) < 1:
            raise ValueError("manifest must contain at least one ballot")
        ids = [bid for bid, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("ballot ids must be unique")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ballot_ids(self) -> tuple[str, ...]:
        return tuple(bid for bid, _ in self.entries)

    def label_of(self, ballot_id: str) -> str | None:
        try:
            return dict(self.entries)[ballot_id]
        except KeyError:
            raise KeyError(f"unknown ballot id: {ballot_id}") from None

    def label_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for _, label in self.entries:
            if label is not None:
                counts[label] = counts.get(label, 0) + 1
        return counts

    def to_csv(self) -> str:
        """Render as `ballot_id,label` CSV, empty label for unknown, LF endings."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["ballot_id", "label"])
        for bid, label in self.entries:
            writer.writerow([bid, "" if label is None else label])
        return buf.getvalue()

    def digest(self) -> str:
        """sha256 of the canonical CSV rendering, for tamper evidence."""
        return hashlib.sha256(self.to_csv().encode("utf-8")).hexdigest()

    @classmethod
    def from_csv(cls, text: str) -> BallotManifest:
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["ballot_id", "label"]:
            raise ValueError("manifest CSV must start with header: ballot_id,label")
        entries = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) > 2:
                raise ValueError(f"manifest line {lineno}: expected 2 columns, got {len(row)}")
            bid = row[0].strip()
            if not bid:
                raise ValueError(f"manifest line {lineno}: empty ballot_id")
            label = row[1].strip() if len(row) == 2 else ""
            entries.append((bid, label or None))
        return cls(entries=tuple(entries))

    @classmethod
    def from_csv_path(cls, path: str) -> BallotManifest:
        with open(path, encoding="utf-8", newline="") as fh:
            return cls.from_csv(fh.read())

    @classmethod
    def unlabeled(cls, ballot_ids: Iterable[str]) -> BallotManifest:
        return cls(entries=tuple((bid, None) for bid in ballot_ids))


def draw_without_replacement(manifest: BallotManifest, k: int, rng: SeededRng) -> list[str]:
    """First k ballot ids of the manifest permutation fixed by rng.

    draw(k1) is a prefix of draw(k2) whenever k1 <= k2 with the same rng.
    """
    n = len(manifest)
    if not 0 <= k <= n:
        raise ValueError(f"k must be in 0..{n}, got {k}")
    words = rng.raw_words(n)
    idx = rank_order_prefix(words, k)
    ids = manifest.ballot_ids
    return [ids[i] for i in idx]


# -- escalation schedules ----------------------------------------------------


@dataclass(frozen=True)
class PerBallot:
    """Grow the sample one ballot at a time (checks the rule most often)."""


@dataclass(frozen=True)
class FixedStep:
    step: int

    def __post_init__(self) -> None:
        if self.step < 1:
            raise ValueError(f"step must be a positive integer, got {self.step}")


@dataclass(frozen=True)
class Geometric:
    factor: float

    def __post_init__(self) -> None:
        if not self.factor > 1:
            raise ValueError(f"factor must exceed 1, got {self.factor}")


EscalationSchedule = PerBallot | FixedStep | Geometric


def next_sample_size(schedule: EscalationSchedule, current: int, n: int) -> int:
    """Sample size after one escalation: strictly larger, capped at n."""
    if current >= n:
        raise ValueError(f"sample of {current} cannot grow beyond electorate of {n}")
    if isinstance(schedule, PerBallot):
        return current + 1
    if isinstance(schedule, FixedStep):
        return min(current + schedule.step, n)
    if isinstance(schedule, Geometric):
        return min(max(current + 1, math.ceil(current * schedule.factor)), n)
    raise TypeError(f"not an escalation schedule: {schedule!r}")


def schedule_to_dict(schedule: EscalationSchedule) -> dict:
    if isinstance(schedule, PerBallot):
        return {"kind": "per-ballot"}
    if isinstance(schedule, FixedStep):
        return {"kind": "fixed", "step": schedule.step}
    if isinstance(schedule, Geometric):
        return {"kind": "geometric", "factor": schedule.factor}
    raise TypeError(f"not an escalation schedule: {schedule!r}")


def schedule_from_dict(data: Mapping) -> EscalationSchedule:
    kind = data.get("kind")
    if kind == "per-ballot":
        return PerBallot()
    if kind == "fixed":
        return FixedStep(step=int(data["step"]))
    if kind == "geometric":
        return Geometric(factor=float(data["factor"]))
    raise ValueError(f"unknown schedule kind: {kind!r}")


def parse_schedule(text: str) -> EscalationSchedule:
    """Parse CLI shorthand: per-ballot | fixed:<step> | geometric:<factor>."""
    name, _, arg = text.partition(":")
    if name == "per-ballot":
        return PerBallot()
    if name == "fixed":
        return FixedStep(step=int(arg))
    if name == "geometric":
        return Geometric(factor=float(arg))
    raise ValueError(
        f"unknown schedule {text!r}; expected per-ballot, fixed:<step>, or geometric:<factor>"
    )


# -- synthetic electorates ---------------------------------------------------


def synthetic_population(
    n: int,
    margin: float | None = None,
    counts: Mapping[str, int] | None = None,
) -> BallotManifest:
    """Two-candidate electorate at a given margin, or arbitrary explicit counts.

    Margin form: candidate A receives round(n*(1+margin)/2) ballots, B the
    rest.  An exact tie (margin 0) needs even n; odd n is refused rather
    than silently handing A the extra ballot.
    """
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    if (margin is None) == (counts is None):
        raise ValueError("exactly one of margin or counts is required")
    if margin is not None:
        if not 0 <= margin <= 1:
            raise ValueError(f"margin must be in [0, 1], got {margin}")
        if margin == 0 and n % 2:
            raise ValueError("an exact tie requires an even electorate size")
        winner = math.floor(n * (1 + margin) / 2 + 0.5)
        counts = {"A": winner, "B": n - winner}
    if sum(counts.values()) != n:
        raise ValueError(f"counts sum to {sum(counts.values())}, expected n={n}")
    if any(v < 0 for v in counts.values()):
        raise ValueError("counts must be nonnegative")
    width = len(str(n))
    entries: list[tuple[str, str | None]] = []
    i = 1
    for label, count in counts.items():
        for _ in range(count):
            entries.append((f"b{i:0{width}d}", label))
            i += 1
    return BallotManifest(entries=tuple(entries))
