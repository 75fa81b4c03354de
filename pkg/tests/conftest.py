from __future__ import annotations

import json
from pathlib import Path

import pytest

from qeharness.corpus import ColumnMap, Corpus, LangPair, Segment, Split
from qeharness.prompts import load_templates
from qeharness.seeding import stable_hash


def synthetic_segments(pair: str = "en-gu", n: int = 100,
                       split: Split = Split.TEST, seed: int = 1,
                       ) -> list[Segment]:
    """Deterministic segments with DA means on the 0.5 grid.

    The 0.5 grid keeps float arithmetic exact through the mock echo round
    trip, so identity tests can assert exact equality. Scores spread over
    the whole 0-100 range, populating every bin for n of a few dozen up.
    """
    pair_obj = LangPair.parse(pair)
    segments = []
    for i in range(1, n + 1):
        score = (stable_hash(seed, pair, split.value, i) % 201) / 2.0
        segments.append(Segment(
            id=i,
            source=f"source sentence number {i} for {pair}",
            translation=f"translated sentence number {i} of {pair}",
            da_mean=score,
            pair=pair_obj,
            split=split,
        ))
    return segments


def synthetic_corpus(pair: str = "en-gu", n_train: int = 200,
                     n_test: int = 100, seed: int = 1) -> Corpus:
    return Corpus(
        pair=LangPair.parse(pair),
        train=tuple(synthetic_segments(pair, n_train, Split.TRAIN, seed)),
        test=tuple(synthetic_segments(pair, n_test, Split.TEST, seed + 1)),
    )


def write_tsv(path: Path, segments, column_map: ColumnMap | None = None) -> Path:
    column_map = column_map or ColumnMap()
    lines = ["\t".join([column_map.source, column_map.translation,
                        column_map.score])]
    for seg in segments:
        lines.append(f"{seg.source}\t{seg.translation}\t{seg.da_mean!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_corpus_manifest(base: Path, corpora: list[Corpus]) -> Path:
    """Write the train/test TSVs plus a JSONL manifest referencing them."""
    base.mkdir(parents=True, exist_ok=True)
    records = []
    for corpus in corpora:
        pair = str(corpus.pair)
        train = write_tsv(base / f"{pair}.train.tsv", corpus.train)
        test = write_tsv(base / f"{pair}.test.tsv", corpus.test)
        records.append(json.dumps({"pair": pair, "train": train.name,
                                   "test": test.name}))
    manifest = base / "corpora.jsonl"
    manifest.write_text("\n".join(records) + "\n", encoding="utf-8")
    return manifest


@pytest.fixture(scope="session")
def templates():
    return load_templates()
