"""DA-annotated QE corpora: loading, validation, score bins, histograms.

The canonical on-disk form is tab-separated UTF-8 with a header row. Column
names vary between dataset releases, so every load goes through a ColumnMap
(defaults: original / translation / mean). Scores are the raw 0-100 DA means;
z-normalized columns, when present, are ignored.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import FileUnreadable, MissingColumn, RowParseError, ScoreOutOfRange

log = logging.getLogger(__name__)

__all__ = [
    "LangPair", "Split", "Segment", "Corpus", "ScoreBin", "SCORE_BINS",
    "ColumnMap", "LoadDiagnostic", "load_corpus", "bin_of", "histogram",
    "write_corpus_tsv", "CorpusEntry", "load_corpus_manifest", "load_corpora",
    "EXPECTED_SPLIT_SIZES", "split_size_warnings",
]


@dataclass(frozen=True, order=True)
class LangPair:
    """A translation direction, e.g. en-gu."""

    source_lang: str
    target_lang: str

    def __post_init__(self) -> None:
        for code in (self.source_lang, self.target_lang):
            if not (2 <= len(code) <= 3 and code.isascii() and code.isalpha()
                    and code == code.lower()):
                raise ValueError(f"bad language code: {code!r}")

    def __str__(self) -> str:
        return f"{self.source_lang}-{self.target_lang}"

    @classmethod
    def parse(cls, text: str) -> "LangPair":
        src, sep, tgt = text.strip().lower().partition("-")
        if not sep:
            raise ValueError(f"expected 'src-tgt', got {text!r}")
        return cls(src, tgt)


class Split(Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class Segment:
    """One QE instance: a source sentence, its machine translation, and the
    mean direct-assessment score assigned by human annotators."""

    id: int
    source: str
    translation: str
    da_mean: float
    pair: LangPair
    split: Split

    def __post_init__(self) -> None:
        if not (0.0 <= self.da_mean <= 100.0):
            raise ValueError(f"da_mean {self.da_mean} outside [0, 100]")
        if not self.source.strip() or not self.translation.strip():
            raise ValueError("source and translation must be non-empty")


@dataclass(frozen=True)
class Corpus:
    pair: LangPair
    train: tuple[Segment, ...]
    test: tuple[Segment, ...]

    def segments(self, split: Split) -> tuple[Segment, ...]:
        return self.train if split is Split.TRAIN else self.test


class ScoreBin(Enum):
    """The five DA score ranges used both for in-context example selection
    and for the guideline clauses of the range-annotated prompt."""

    B0_30 = ("0-30", 0.0, 30.0)
    B31_50 = ("31-50", 30.0, 50.0)
    B51_70 = ("51-70", 50.0, 70.0)
    B71_90 = ("71-90", 70.0, 90.0)
    B91_100 = ("91-100", 90.0, 100.0)

    def __init__(self, label: str, lo: float, hi: float):
        self.label = label
        self.lo = lo
        self.hi = hi

    @property
    def index(self) -> int:
        return list(ScoreBin).index(self)


SCORE_BINS: tuple[ScoreBin, ...] = tuple(ScoreBin)


def bin_of(score: float) -> ScoreBin:
    """Map a score in [0, 100] to its bin.

    Boundaries are closed on the upper end -- [0,30], (30,50], (50,70],
    (70,90], (90,100] -- so 30.0 lands in the bin labeled 0-30 while 30.5
    lands in 31-50.
    """
    if not (0.0 <= score <= 100.0):
        raise ScoreOutOfRange(f"score {score} outside [0, 100]")
    for b in SCORE_BINS:
        if score <= b.hi:
            return b
    return ScoreBin.B91_100  # unreachable for valid input


def histogram(segments: list[Segment] | tuple[Segment, ...]) -> dict[ScoreBin, int]:
    """Count of segments per score bin; bins absent from the data map to 0."""
    counts = {b: 0 for b in SCORE_BINS}
    for seg in segments:
        counts[bin_of(seg.da_mean)] += 1
    return counts


# -- loading ----------------------------------------------------------------

@dataclass(frozen=True)
class ColumnMap:
    """Names of the source / translation / mean-score columns in a TSV file."""

    source: str = "original"
    translation: str = "translation"
    score: str = "mean"

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnMap":
        return cls(**{k: v for k, v in d.items()
                      if k in ("source", "translation", "score")})


@dataclass(frozen=True)
class LoadDiagnostic:
    """A row that failed to yield a Segment, with its 1-based data-row index
    (the header row is not counted)."""

    row: int
    reason: str


def load_corpus(path: str | Path, pair: LangPair, split: Split,
                column_map: ColumnMap | None = None, *,
                strict: bool = False,
                diagnostics: list[LoadDiagnostic] | None = None) -> list[Segment]:
    """Load segments from a TSV file in file order.

    Every row either yields a Segment or is reported: in lenient mode (the
    default) failures are appended to `diagnostics` and skipped; in strict
    mode the first failure raises RowParseError. Segment ids are the 1-based
    data-row indices, so they stay stable when other rows fail to parse.
    """
    column_map = column_map or ColumnMap()
    path = Path(path)
    try:
        fh = path.open("r", encoding="utf-8", newline="")
    except OSError as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc

    with fh:
        reader = csv.DictReader(fh, dialect="excel-tab")
        header = reader.fieldnames or []
        for col in (column_map.source, column_map.translation, column_map.score):
            if col not in header:
                raise MissingColumn(col)

        segments: list[Segment] = []
        for row_idx, row in enumerate(reader, start=1):
            reason = None
            source = (row.get(column_map.source) or "").strip()
            translation = (row.get(column_map.translation) or "").strip()
            raw_score = (row.get(column_map.score) or "").strip()
            score = None
            if not source:
                reason = "EmptySource"
            elif not translation:
                reason = "EmptyTranslation"
            else:
                try:
                    score = float(raw_score)
                except ValueError:
                    reason = "BadNumber"
                else:
                    if not (0.0 <= score <= 100.0):
                        reason = "OutOfRange"

            if reason is not None:
                if strict:
                    raise RowParseError(row_idx, reason)
                if diagnostics is not None:
                    diagnostics.append(LoadDiagnostic(row_idx, reason))
                continue

            segments.append(Segment(id=row_idx, source=source,
                                    translation=translation, da_mean=score,
                                    pair=pair, split=split))
    return segments


def write_corpus_tsv(segments: list[Segment] | tuple[Segment, ...],
                     path: str | Path,
                     column_map: ColumnMap | None = None) -> None:
    """Serialize segments back to the canonical TSV form.

    Scores are written with repr() so a reload reproduces the exact float.
    """
    column_map = column_map or ColumnMap()
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, dialect="excel-tab")
        writer.writerow([column_map.source, column_map.translation, column_map.score])
        for seg in segments:
            writer.writerow([seg.source, seg.translation, repr(seg.da_mean)])


# -- corpus manifest ---------------------------------------------------------

@dataclass(frozen=True)
class CorpusEntry:
    """One record of the corpus manifest: where a pair's splits live."""

    pair: LangPair
    train_path: Path
    test_path: Path
    column_map: ColumnMap = field(default_factory=ColumnMap)


def load_corpus_manifest(path: str | Path) -> list[CorpusEntry]:
    """Parse a line-oriented manifest: one JSON record per line with fields
    pair / train / test and an optional columns map. Relative paths resolve
    against the manifest's directory."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc

    entries = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RowParseError(lineno, f"bad manifest record: {exc}") from exc
        for key in ("pair", "train", "test"):
            if key not in rec:
                raise MissingColumn(key)
        entries.append(CorpusEntry(
            pair=LangPair.parse(rec["pair"]),
            train_path=(path.parent / rec["train"]).resolve(),
            test_path=(path.parent / rec["test"]).resolve(),
            column_map=ColumnMap.from_dict(rec.get("columns", {})),
        ))
    return entries


def load_corpora(manifest_path: str | Path, *, strict: bool = False,
                 diagnostics: list[LoadDiagnostic] | None = None) -> list[Corpus]:
    corpora = []
    for entry in load_corpus_manifest(manifest_path):
        train = load_corpus(entry.train_path, entry.pair, Split.TRAIN,
                            entry.column_map, strict=strict, diagnostics=diagnostics)
        test = load_corpus(entry.test_path, entry.pair, Split.TEST,
                           entry.column_map, strict=strict, diagnostics=diagnostics)
        corpus = Corpus(entry.pair, tuple(train), tuple(test))
        for warning in split_size_warnings(corpus):
            log.info("%s", warning)  # advisory only; ingest prints them
        corpora.append(corpus)
    return corpora


# Published split sizes for the eight pairs; mismatches are advisory only,
# since later dataset revisions may legitimately differ.
EXPECTED_SPLIT_SIZES: dict[str, tuple[int, int]] = {
    "en-gu": (7000, 1000),
    "en-hi": (7000, 1000),
    "en-mr": (26000, 699),
    "en-ta": (7000, 1000),
    "en-te": (7000, 1000),
    "et-en": (7000, 1000),
    "ne-en": (7000, 1000),
    "si-en": (7000, 1000),
}


def split_size_warnings(corpus: Corpus) -> list[str]:
    expected = EXPECTED_SPLIT_SIZES.get(str(corpus.pair))
    if expected is None:
        return []
    warnings = []
    for name, got, want in (("train", len(corpus.train), expected[0]),
                            ("test", len(corpus.test), expected[1])):
        if got != want:
            warnings.append(f"{corpus.pair} {name} split has {got} segments, "
                            f"expected {want}")
    return warnings
