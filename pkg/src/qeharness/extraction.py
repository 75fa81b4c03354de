"""Pull a DA score out of free-form model output, or classify the failure.

The numeral grammar and the candidate-selection rules below are the concrete
extraction contract for the whole harness; the SFT export renders its targets
to match this grammar exactly, and the test suite pins the behavior with a
golden table. Changing anything here is a replication-affecting decision.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .gateway import ModelOutput, PromptRef, TRANSPORT_OK

__all__ = [
    "REASON_NO_NUMERIC_MATCH", "REASON_OUT_OF_RANGE", "REASON_TRANSPORT_FAILED",
    "REASON_AMBIGUOUS", "EXCLUSION_REASONS", "Outcome", "ExtractionResult",
    "ExclusionLedger", "extract_score", "extract_batch",
    "UNTRUSTWORTHY_EXCLUSION_SHARE",
]

REASON_NO_NUMERIC_MATCH = "NoNumericMatch"
REASON_OUT_OF_RANGE = "OutOfRange"
REASON_TRANSPORT_FAILED = "TransportFailed"
REASON_AMBIGUOUS = "Ambiguous"
EXCLUSION_REASONS = (REASON_NO_NUMERIC_MATCH, REASON_OUT_OF_RANGE,
                     REASON_TRANSPORT_FAILED, REASON_AMBIGUOUS)

# A numeral is 1-3 integer digits with an optional 1-2 digit fraction,
# bounded by non-digit context. The extra lookarounds keep fragments of
# malformed decimals (12.345) from surfacing as numerals of their own.
_NUMERAL = re.compile(r"(?<!\d)(?<!\d\.)\d{1,3}(?:\.\d{1,2})?(?!\d)(?!\.\d)")

# Labels that bind the nearest following numeral when they occur within
# 12 characters before it.
_LABEL = re.compile(r"\b(?:score|rating|quality|da)\b", re.IGNORECASE)
_LABEL_WINDOW = 12

# Scale idioms. A numeral directly followed by "to 100" is the low bound of
# a range mention ("from 0 to 100"); the 100 directly after "out of", "to",
# or "/" is the scale constant itself. A numeral *preceding* "out of 100"
# or "/100" is the answer ("72.5 out of 100" scores 72.5).
_RANGE_BOUND_AFTER = re.compile(r"\s*to\s+100\b", re.IGNORECASE)
_SCALE_CONST_BEFORE = re.compile(r"(?:\bout\s+of|\bto|/)\s*$", re.IGNORECASE)


@dataclass(frozen=True)
class _Candidate:
    value: float
    start: int          # char offset of the numeral (minus sign excluded)
    end: int
    negative: bool
    labeled: bool
    scale_mention: bool


def _candidates(text: str) -> list[_Candidate]:
    found = []
    for m in _NUMERAL.finditer(text):
        start, end = m.span()
        value = float(m.group())
        # a minus directly before the numeral negates it unless it is an
        # infix dash between digits ("0-100")
        negative = (start > 0 and text[start - 1] == "-"
                    and (start < 2 or not text[start - 2].isdigit()))
        window = text[max(0, start - _LABEL_WINDOW):start]
        labeled = bool(_LABEL.search(window))
        scale_mention = bool(
            (value == 100.0 and _SCALE_CONST_BEFORE.search(text[:start]))
            or _RANGE_BOUND_AFTER.match(text, end)
        )
        found.append(_Candidate(value, start, end, negative, labeled,
                                scale_mention))
    return found


@dataclass(frozen=True)
class Outcome:
    """Either a score in [0, 100] or an exclusion reason, never both.

    span is the (byte offset, byte length) of the numeral that produced a
    score, for audit; exclusions carry no span.
    """

    score: float | None
    reason: str | None = None
    span: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if (self.score is None) == (self.reason is None):
            raise ValueError("exactly one of score/reason must be set")
        if self.score is not None and not (0.0 <= self.score <= 100.0):
            raise ValueError(f"score {self.score} outside [0, 100]")


def _byte_span(text: str, start: int, end: int) -> tuple[int, int]:
    return (len(text[:start].encode("utf-8")),
            len(text[start:end].encode("utf-8")))


def extract_score(raw_text: str) -> Outcome:
    """Total function from any string to an Outcome.

    Selection order: (a) the first numeral carrying a nearby label wins,
    in or out of range; (b) otherwise the first non-negative in-range
    numeral that is not a scale mention; (c) if the only in-range numerals
    are scale mentions the output is ambiguous; numerals that are all out
    of range (or negative) are out-of-range; no numerals at all is a
    no-match.
    """
    cands = _candidates(raw_text)
    if not cands:
        return Outcome(None, REASON_NO_NUMERIC_MATCH)

    for c in cands:
        if c.labeled and not c.scale_mention:
            if c.negative or c.value > 100.0:
                return Outcome(None, REASON_OUT_OF_RANGE)
            return Outcome(c.value, span=_byte_span(raw_text, c.start, c.end))

    in_range = [c for c in cands if not c.negative and c.value <= 100.0]
    for c in in_range:
        if not c.scale_mention:
            return Outcome(c.value, span=_byte_span(raw_text, c.start, c.end))
    if in_range:
        return Outcome(None, REASON_AMBIGUOUS)
    return Outcome(None, REASON_OUT_OF_RANGE)


@dataclass(frozen=True)
class ExtractionResult:
    prompt_ref: PromptRef
    score: float | None
    reason: str | None = None
    span: tuple[int, int] | None = None

    def to_dict(self) -> dict:
        return {
            "prompt_ref": self.prompt_ref.to_dict(),
            "score": self.score,
            "reason": self.reason,
            "span": list(self.span) if self.span else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractionResult":
        return cls(prompt_ref=PromptRef.from_dict(d["prompt_ref"]),
                   score=d["score"], reason=d["reason"],
                   span=tuple(d["span"]) if d.get("span") else None)


# A run whose exclusions exceed this share of all inferences is flagged as
# untrustworthy in reports and tables.
UNTRUSTWORTHY_EXCLUSION_SHARE = 0.10


@dataclass(frozen=True)
class ExclusionLedger:
    """Exclusion accounting for one (pair, template, model) run."""

    pair: str
    template: str
    model: str
    total: int
    excluded_count: int
    reasons: dict

    @property
    def flagged_untrustworthy(self) -> bool:
        return self.excluded_count > UNTRUSTWORTHY_EXCLUSION_SHARE * self.total

    def to_dict(self) -> dict:
        return {
            "pair": self.pair,
            "template": self.template,
            "model": self.model,
            "total": self.total,
            "excluded_count": self.excluded_count,
            "reasons": dict(sorted(self.reasons.items())),
            "flagged_untrustworthy": self.flagged_untrustworthy,
        }


def extract_batch(outputs: list[ModelOutput], *, model: str = "",
                  ) -> tuple[list[ExtractionResult], ExclusionLedger]:
    """One result per output, plus the run's exclusion ledger.

    Transport failures become TransportFailed exclusions without touching
    the (empty) generated text.
    """
    results = []
    reasons: dict[str, int] = {}
    for out in outputs:
        if out.transport_status != TRANSPORT_OK:
            outcome = Outcome(None, REASON_TRANSPORT_FAILED)
        else:
            outcome = extract_score(out.raw_text)
        if outcome.reason is not None:
            reasons[outcome.reason] = reasons.get(outcome.reason, 0) + 1
        results.append(ExtractionResult(out.prompt_ref, outcome.score,
                                        outcome.reason, outcome.span))

    first = outputs[0].prompt_ref if outputs else None
    ledger = ExclusionLedger(
        pair=first.pair if first else "",
        template=first.template if first else "",
        model=model,
        total=len(outputs),
        excluded_count=sum(reasons.values()),
        reasons=reasons,
    )
    return results, ledger
