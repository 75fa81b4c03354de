"""Tokenizer fertility analysis: subword token counts vs whitespace words.

Word counts split the concatenated source and translation on Unicode
whitespace with no punctuation stripping, the only language-neutral choice;
that convention is stamped into every export. Tokenizers are consumed as
local serialized definition files through a small embedded engine (word
level, greedy BPE merges, or unigram Viterbi), so measurement never touches
the network and is deterministic per definition. BOS/EOS and other special
tokens never enter the counts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .corpus import Corpus, Segment
from .errors import FileUnreadable, SampleTooLarge, TokenizerDefinitionError
from .seeding import seeded_sample

__all__ = [
    "WORD_COUNT_CONVENTION", "KIND_WORD_LEVEL", "KIND_BPE", "KIND_UNIGRAM",
    "TokenizerHandle", "load_tokenizer", "FertilityRecord", "MeasureFailure",
    "FertilitySummary", "sample_sentences", "measure", "summarize",
    "write_summary_tsv", "write_records_jsonl", "write_plot_data_tsv",
    "word_count",
]

WORD_COUNT_CONVENTION = "whitespace-split source+translation, no punctuation stripping"

KIND_WORD_LEVEL = "word_level"
KIND_BPE = "bpe"
KIND_UNIGRAM = "unigram"

_WORD_BOUNDARY_MARK = "▁"  # prefix marking word starts in unigram pieces


def word_count(source: str, translation: str) -> int:
    """Maximal non-whitespace runs in the joined text."""
    return len(f"{source} {translation}".split())


class _WordLevel:
    kind = KIND_WORD_LEVEL

    def tokenize(self, text: str) -> list[str]:
        return text.split()


class _Bpe:
    """Greedy byte-pair merging over whitespace words.

    Each word starts as its character sequence; the lowest-ranked applicable
    merge is applied repeatedly until none remains.
    """

    kind = KIND_BPE

    def __init__(self, merges: list[tuple[str, str]]):
        if not merges:
            raise TokenizerDefinitionError("bpe definition has no merges")
        self._rank = {tuple(m): i for i, m in enumerate(merges)}

    def _merge_word(self, word: str) -> list[str]:
        symbols = list(word)
        while len(symbols) > 1:
            best = None
            best_rank = None
            for i in range(len(symbols) - 1):
                rank = self._rank.get((symbols[i], symbols[i + 1]))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best, best_rank = i, rank
            if best is None:
                break
            symbols[best:best + 2] = [symbols[best] + symbols[best + 1]]
        return symbols

    def tokenize(self, text: str) -> list[str]:
        tokens: list[str] = []
        for word in text.split():
            tokens.extend(self._merge_word(word))
        return tokens


class _Unigram:
    """Viterbi segmentation under a unigram piece model.

    Words are prefixed with the conventional word-boundary mark before
    lookup; characters no piece covers fall back to single-character tokens
    at a fixed penalty below the worst piece score.
    """

    kind = KIND_UNIGRAM

    def __init__(self, pieces: dict[str, float]):
        if not pieces:
            raise TokenizerDefinitionError("unigram definition has no pieces")
        self._pieces = pieces
        self._max_len = max(len(p) for p in pieces)
        self._unk_logprob = min(pieces.values()) - 10.0

    def _segment_word(self, word: str) -> list[str]:
        text = _WORD_BOUNDARY_MARK + word
        n = len(text)
        best = [-math.inf] * (n + 1)
        back = [0] * (n + 1)
        best[0] = 0.0
        for end in range(1, n + 1):
            for start in range(max(0, end - self._max_len), end):
                piece = text[start:end]
                logprob = self._pieces.get(piece)
                if logprob is None:
                    if end - start > 1:
                        continue
                    logprob = self._unk_logprob
                score = best[start] + logprob
                if score > best[end]:
                    best[end] = score
                    back[end] = start
        tokens = []
        pos = n
        while pos > 0:
            tokens.append(text[back[pos]:pos])
            pos = back[pos]
        tokens.reverse()
        return tokens

    def tokenize(self, text: str) -> list[str]:
        tokens: list[str] = []
        for word in text.split():
            tokens.extend(self._segment_word(word))
        return tokens


@dataclass(frozen=True)
class TokenizerHandle:
    """A loaded, validated tokenizer ready for concurrent measurement."""

    name: str
    definition_path: Path
    kind: str
    engine: object

    def token_count(self, text: str) -> int:
        return len(self.engine.tokenize(text))


def load_tokenizer(name: str, definition_path: str | Path) -> TokenizerHandle:
    """Load a serialized definition and sanity-check it on "hello".

    Definition files are JSON with a "kind" field and, depending on kind,
    "merges" (pairs, rank order) or "pieces" ([piece, logprob] entries).
    A "special_tokens" list, if present, is ignored: specials never count.
    """
    definition_path = Path(definition_path)
    try:
        spec = json.loads(definition_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise FileUnreadable(f"cannot read {definition_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise TokenizerDefinitionError(
            f"{definition_path} is not valid JSON: {exc}") from exc

    kind = spec.get("kind")
    if kind == KIND_WORD_LEVEL:
        engine = _WordLevel()
    elif kind == KIND_BPE:
        engine = _Bpe([tuple(m) for m in spec.get("merges", [])])
    elif kind == KIND_UNIGRAM:
        engine = _Unigram({p: float(lp) for p, lp in spec.get("pieces", [])})
    else:
        raise TokenizerDefinitionError(
            f"{definition_path}: unknown tokenizer kind {kind!r}")

    if len(engine.tokenize("hello")) < 1:
        raise TokenizerDefinitionError(
            f"{definition_path}: definition fails the round-trip check")
    return TokenizerHandle(name=name, definition_path=definition_path,
                           kind=kind, engine=engine)


@dataclass(frozen=True)
class FertilityRecord:
    pair: str
    sentence_id: int
    word_count: int
    token_counts: dict  # tokenizer name -> int
    fertility: dict     # tokenizer name -> tokens / words

    def to_dict(self) -> dict:
        return {
            "pair": self.pair,
            "sentence_id": self.sentence_id,
            "word_count": self.word_count,
            "token_counts": dict(sorted(self.token_counts.items())),
            "fertility": dict(sorted(self.fertility.items())),
        }


@dataclass(frozen=True)
class MeasureFailure:
    tokenizer: str
    segment_id: int
    error: str


def sample_sentences(corpus: Corpus, k: int = 100, seed: int = 0) -> list[Segment]:
    """Seeded uniform sample without replacement from the test split."""
    test = corpus.test
    if k > len(test):
        raise SampleTooLarge(f"asked for {k} of {len(test)} test segments")
    return seeded_sample(test, k, seed, str(corpus.pair), "fertility-sample",
                         key=lambda s: s.id)


def measure(segments: list[Segment], tokenizers: list[TokenizerHandle],
            ) -> tuple[list[FertilityRecord], list[MeasureFailure]]:
    """One record per segment over the joined source+translation text.

    A tokenizer crash costs only its own cell: the failure is recorded and
    the remaining tokenizers still contribute.
    """
    records = []
    failures = []
    for seg in segments:
        text = f"{seg.source} {seg.translation}"
        words = word_count(seg.source, seg.translation)
        counts: dict[str, int] = {}
        ratios: dict[str, float] = {}
        for tok in tokenizers:
            try:
                n_tokens = tok.token_count(text)
            except Exception as exc:  # per-cell isolation
                failures.append(MeasureFailure(tok.name, seg.id, str(exc)))
                continue
            counts[tok.name] = n_tokens
            ratios[tok.name] = n_tokens / words
        records.append(FertilityRecord(pair=str(seg.pair), sentence_id=seg.id,
                                       word_count=words, token_counts=counts,
                                       fertility=ratios))
    return records, failures


@dataclass(frozen=True)
class FertilitySummary:
    pair: str
    tokenizer: str
    n_sentences: int
    mean_words: float
    mean_tokens: float
    mean_fertility: float
    median_fertility: float


def _median(values: list[float]) -> float:
    ordered = sorted(values)
    n = len(ordered)
    mid = n // 2
    if n % 2:
        return ordered[mid]
    return (ordered[mid - 1] + ordered[mid]) / 2.0


def summarize(records: list[FertilityRecord]) -> list[FertilitySummary]:
    """Per (pair, tokenizer) means and medians, ordered by pair then name."""
    groups: dict[tuple[str, str], list[FertilityRecord]] = {}
    for rec in records:
        for name in rec.token_counts:
            groups.setdefault((rec.pair, name), []).append(rec)

    summaries = []
    for (pair, name) in sorted(groups):
        rows = groups[(pair, name)]
        fertilities = [r.fertility[name] for r in rows]
        summaries.append(FertilitySummary(
            pair=pair, tokenizer=name, n_sentences=len(rows),
            mean_words=sum(r.word_count for r in rows) / len(rows),
            mean_tokens=sum(r.token_counts[name] for r in rows) / len(rows),
            mean_fertility=sum(fertilities) / len(fertilities),
            median_fertility=_median(fertilities),
        ))
    return summaries


def write_summary_tsv(summaries: list[FertilitySummary], path: str | Path) -> None:
    lines = ["# word counting: " + WORD_COUNT_CONVENTION,
             "pair\ttokenizer\tn\tmean_words\tmean_tokens\tmean_fertility\tmedian_fertility"]
    for s in summaries:
        lines.append(f"{s.pair}\t{s.tokenizer}\t{s.n_sentences}"
                     f"\t{s.mean_words:.3f}\t{s.mean_tokens:.3f}"
                     f"\t{s.mean_fertility:.4f}\t{s.median_fertility:.4f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_records_jsonl(records: list[FertilityRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


def write_plot_data_tsv(summaries: list[FertilitySummary], path: str | Path) -> None:
    """Per-pair series of mean counts: the word baseline plus one bar per
    tokenizer, matching a model-name x token-count bar layout."""
    lines = ["pair\tseries\tmean_count"]
    seen_pairs = []
    for s in summaries:
        if s.pair not in seen_pairs:
            seen_pairs.append(s.pair)
            lines.append(f"{s.pair}\twords\t{s.mean_words:.3f}")
        lines.append(f"{s.pair}\t{s.tokenizer}\t{s.mean_tokens:.3f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
