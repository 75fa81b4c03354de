"""Instruction-tuning dataset export from train splits.

Records pair a fully rendered range-guideline prompt with the gold answer
"Score: {value}" at one decimal, which the extraction grammar parses back
verbatim. Two arrangements: pooled multilingual (one file, all pairs) and
per-pair (one file each). Only the data is produced here; the adapter
hyperparameters ride along as a provenance memo and are never executed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .corpus import Corpus
from .errors import EmptyTrainSplit
from .prompts import PromptTemplate, TemplateId, render_zero_shot
from .seeding import seeded_order

__all__ = [
    "SftMode", "SftConfig", "SftRecord", "HYPERPARAMETER_MEMO",
    "build_records", "export",
]

# Fixed adapter settings recorded for provenance with every export.
HYPERPARAMETER_MEMO = {
    "lora_rank": 64,
    "quantization": "4-bit",
    "precision": "fp16",
}


class SftMode(Enum):
    UMT = "umt"  # unified multilingual: all pairs pooled in one file
    ILT = "ilt"  # independent language-pair: one file per pair


@dataclass(frozen=True)
class SftConfig:
    mode: SftMode
    shuffle_seed: int = 0
    pair: str | None = None  # restrict ILT export to one pair
    hyperparameter_memo: dict = field(
        default_factory=lambda: dict(HYPERPARAMETER_MEMO))


@dataclass(frozen=True)
class SftRecord:
    instruction: str
    output: str
    meta: dict  # pair, segment_id, template_version

    def to_dict(self) -> dict:
        return {"instruction": self.instruction, "output": self.output,
                "meta": self.meta}


def build_records(corpus: Corpus, template: PromptTemplate) -> list[SftRecord]:
    """Render every train segment into an instruction/answer record."""
    if template.id is not TemplateId.AG:
        raise ValueError("instruction records use the range-guideline template")
    if not corpus.train:
        raise EmptyTrainSplit(str(corpus.pair))
    records = []
    for seg in corpus.train:
        prompt = render_zero_shot(template, seg)
        records.append(SftRecord(
            instruction=prompt.text,
            output=f"Score: {seg.da_mean:.1f}",
            meta={"pair": str(corpus.pair), "segment_id": seg.id,
                  "template_version": template.version},
        ))
    return records


def _write_jsonl_atomic(dicts: list[dict], path: Path) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        for d in dicts:
            fh.write(json.dumps(d, sort_keys=True) + "\n")
    os.replace(tmp, path)


def _shuffled(records: list[SftRecord], seed: int) -> list[SftRecord]:
    return seeded_order(records, seed, "sft-shuffle",
                        key=lambda r: (r.meta["pair"], r.meta["segment_id"]))


def export(corpora: list[Corpus], config: SftConfig, out_dir: str | Path,
           template: PromptTemplate, record_adapter=None) -> dict:
    """Write the dataset files and return the export manifest.

    Pooled mode writes sft_umt.jsonl; per-pair mode writes one
    sft_ilt_{pair}.jsonl per corpus. Files land atomically (temp + rename)
    and are byte-identical for a fixed shuffle seed. The manifest records
    per-pair counts and the hyperparameter memo, and is written alongside.

    record_adapter, when given, maps each record dict to the line actually
    written, for consumers whose fine-tuning framework wants different
    field names.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if config.mode is SftMode.ILT and config.pair is not None:
        corpora = [c for c in corpora if str(c.pair) == config.pair]
        if not corpora:
            raise EmptyTrainSplit(config.pair)
    if not corpora:
        raise EmptyTrainSplit("*")

    per_pair = {str(c.pair): build_records(c, template) for c in corpora}
    counts = {pair: len(records) for pair, records in per_pair.items()}
    files: dict[str, str] = {}

    def lines(records: list[SftRecord]) -> list[dict]:
        dicts = (r.to_dict() for r in _shuffled(records, config.shuffle_seed))
        return [record_adapter(d) if record_adapter else d for d in dicts]

    if config.mode is SftMode.UMT:
        pooled = [rec for records in per_pair.values() for rec in records]
        name = "sft_umt.jsonl"
        _write_jsonl_atomic(lines(pooled), out_dir / name)
        files["umt"] = name
    else:
        for pair, records in sorted(per_pair.items()):
            name = f"sft_ilt_{pair}.jsonl"
            _write_jsonl_atomic(lines(records), out_dir / name)
            files[pair] = name

    manifest = {
        "mode": config.mode.value,
        "shuffle_seed": config.shuffle_seed,
        "template_version": template.version,
        "counts": dict(sorted(counts.items())),
        "total_records": sum(counts.values()),
        "files": files,
        "hyperparameter_memo": config.hyperparameter_memo,
    }
    (out_dir / "sft_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest
