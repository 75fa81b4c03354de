"""End-to-end experiment orchestration and result-table rendering.

A run is fully determined by its manifest (up to endpoint nondeterminism):
corpora, templates, seeds, inference settings, and optional mock policy.
Artifacts land in one directory per run under names that encode template
version, seed, and model, which is what makes resuming cheap. Wall-clock
timestamps appear only in the run log, never in artifacts, so mock-backed
runs are byte-identical end to end.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from .corpus import Corpus, load_corpora
from .errors import EndpointMissing, ManifestError, HarnessError
from .extraction import ExclusionLedger, ExtractionResult, extract_batch
from .gateway import (EchoScore, Fail, Fixed, Garbage, HttpBackend,
                      InferenceConfig, ModelOutput, MockBackend, complete_batch,
                      gold_map)
from .metrics import CorrelationReport, Significance, evaluate
from .prompts import (ICL_TEMPLATES, IclConfig, TemplateId, ZERO_SHOT_TEMPLATES,
                      load_templates, render_icl, render_zero_shot,
                      select_icl_exemplars)

__all__ = [
    "ERROR_TAXONOMY", "RunManifest", "RunResult", "run", "build_mock_policy",
    "ResultTable", "TableCell", "build_result_table", "render_table",
    "render_detailed_table", "worst_deviations", "write_worst_tsv",
    "PAIR_ORDER",
]

# Error-annotation vocabulary shipped for the manual labeling of worst
# deviations; the harness never assigns these labels itself.
ERROR_TAXONOMY = (
    "Incorrect term",
    "Use of Entity",
    "Syntactic error",
    "Long-text",
    "Missing information",
    "Incomplete sentence",
    "Use of abbreviation",
    "Transliteration",
)

# Presentation order for the studied pairs; English-target pairs last.
PAIR_ORDER = ("en-gu", "en-hi", "en-mr", "en-ta", "en-te",
              "et-en", "ne-en", "si-en")


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to reproduce a run; serialized alongside outputs."""

    corpora_manifest: str
    templates: tuple[TemplateId, ...]
    out_dir: str
    seed: int = 0
    icl_seed: int | None = None       # defaults to seed
    pairs: tuple[str, ...] | None = None
    inference: dict = field(default_factory=dict)
    mock: dict | None = None
    template_dir: str | None = None
    resume: bool = False

    def effective_icl_seed(self) -> int:
        return self.seed if self.icl_seed is None else self.icl_seed

    def to_dict(self) -> dict:
        return {
            "corpora_manifest": self.corpora_manifest,
            "templates": [t.value for t in self.templates],
            "out_dir": self.out_dir,
            "seed": self.seed,
            "icl_seed": self.icl_seed,
            "pairs": list(self.pairs) if self.pairs else None,
            "inference": dict(sorted(self.inference.items())),
            "mock": self.mock,
            "template_dir": self.template_dir,
            "resume": self.resume,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        try:
            templates = tuple(TemplateId(t) for t in d["templates"])
        except (KeyError, ValueError) as exc:
            raise ManifestError(f"bad templates field: {exc}") from exc
        if "corpora_manifest" not in d or "out_dir" not in d:
            raise ManifestError("manifest needs corpora_manifest and out_dir")
        return cls(
            corpora_manifest=d["corpora_manifest"],
            templates=templates,
            out_dir=d["out_dir"],
            seed=d.get("seed", 0),
            icl_seed=d.get("icl_seed"),
            pairs=tuple(d["pairs"]) if d.get("pairs") else None,
            inference=d.get("inference", {}),
            mock=d.get("mock"),
            template_dir=d.get("template_dir"),
            resume=d.get("resume", False),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "RunManifest":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise ManifestError(f"cannot read run manifest {path}: {exc}") from exc


def build_mock_policy(spec: dict):
    """Construct a mock policy from its manifest encoding."""
    kind = spec.get("policy")
    if kind == "echo-score":
        offset = spec.get("offset")
        if offset is None:
            return EchoScore()
        return EchoScore(transform=lambda g: round(g + offset, 1))
    if kind == "fixed":
        return Fixed(spec.get("text", ""))
    if kind == "garbage":
        return Garbage(float(spec.get("p", 0.0)))
    if kind == "fail":
        return Fail(segment_ids=frozenset(spec.get("segment_ids", [])))
    raise ManifestError(f"unknown mock policy {kind!r}")


@dataclass
class RunResult:
    run_dir: Path
    reports: list[CorrelationReport]
    ledgers: list[ExclusionLedger]
    inference_calls: int
    errors: dict  # (pair, template) -> error string


def _jsonl(path: Path, dicts) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for d in dicts:
            fh.write(json.dumps(d, sort_keys=True) + "\n")


def _context_default(template_id: TemplateId) -> int:
    return 4096 if template_id in ICL_TEMPLATES else 1024


def run(manifest: RunManifest, backend=None) -> RunResult:
    """Execute the manifest: render, infer, extract, evaluate, persist.

    Manifest and corpus problems fail fast; per-item inference failures are
    recorded in the outputs and ledger without aborting. With resume on,
    prompts that already have persisted outputs are not dispatched again.
    """
    out = Path(manifest.out_dir)
    for sub in ("prompts", "outputs", "extractions", "reports"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    templates = load_templates(manifest.template_dir)
    corpora = load_corpora(manifest.corpora_manifest)
    if manifest.pairs:
        wanted = set(manifest.pairs)
        corpora = [c for c in corpora if str(c.pair) in wanted]

    base_cfg = InferenceConfig(**manifest.inference)
    if backend is None:
        if manifest.mock is not None:
            gold = {}
            for corpus in corpora:
                gold.update(gold_map(corpus.test))
            backend = MockBackend(build_mock_policy(manifest.mock), gold=gold,
                                  seed=manifest.seed)
        elif base_cfg.endpoint_url:
            backend = HttpBackend(base_cfg)
        else:
            raise EndpointMissing(
                "manifest has neither an endpoint_url nor a mock policy")

    (out / "manifest.json").write_text(
        json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")

    log_path = out / "log.txt"
    reports: list[CorrelationReport] = []
    ledgers: list[ExclusionLedger] = []
    errors: dict = {}
    dispatched_total = 0

    with log_path.open("a", encoding="utf-8") as run_log:
        def log(msg: str) -> None:
            run_log.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {msg}\n")

        log(f"run start: {len(corpora)} pairs, "
            f"{len(manifest.templates)} templates")
        for corpus in corpora:
            for tid in manifest.templates:
                dispatched, report, ledger, error = _run_combo(
                    manifest, corpus, tid, templates[tid], base_cfg, backend,
                    out, log)
                dispatched_total += dispatched
                ledgers.append(ledger)
                if report is not None:
                    reports.append(report)
                if error is not None:
                    errors[(str(corpus.pair), tid.value)] = error
        log(f"run end: {dispatched_total} prompts dispatched")

    summary = {
        "reports": [r.to_dict() for r in reports],
        "ledgers": [ledger.to_dict() for ledger in ledgers],
        "errors": {f"{pair}/{tid}": msg
                   for (pair, tid), msg in sorted(errors.items())},
        "inference_calls": dispatched_total,
    }
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return RunResult(run_dir=out, reports=reports, ledgers=ledgers,
                     inference_calls=dispatched_total, errors=errors)


def _run_combo(manifest: RunManifest, corpus: Corpus, tid: TemplateId,
               template, base_cfg: InferenceConfig, backend, out: Path, log):
    pair = str(corpus.pair)
    seed = manifest.seed
    cfg = base_cfg
    if "max_context_tokens" not in manifest.inference:
        cfg = replace(cfg, max_context_tokens=_context_default(tid))

    if tid in ZERO_SHOT_TEMPLATES:
        prompts = [render_zero_shot(template, seg, seed) for seg in corpus.test]
    else:
        exemplars = select_icl_exemplars(list(corpus.train),
                                         IclConfig.for_template(tid),
                                         manifest.effective_icl_seed())
        prompts = [render_icl(template, exemplars, seg, seed)
                   for seg in corpus.test]

    stem = f"{pair}__{tid.value}__{_safe(cfg.model_name)}__seed{seed}"
    prompts_path = out / "prompts" / f"{pair}__{tid.value}__v{template.version}__seed{seed}.jsonl"
    outputs_path = out / "outputs" / f"{stem}.jsonl"
    extractions_path = out / "extractions" / f"{stem}.jsonl"
    report_path = out / "reports" / f"{stem}.json"

    _jsonl(prompts_path, (p.to_dict() for p in prompts))

    persisted: dict[int, ModelOutput] = {}
    if manifest.resume and outputs_path.exists():
        for line in outputs_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                output = ModelOutput.from_dict(json.loads(line))
                persisted[output.prompt_ref.segment_id] = output

    todo = [p for p in prompts if p.target_segment_id not in persisted]
    fresh = complete_batch(cfg, todo, backend)
    by_segment = dict(persisted)
    for output in fresh:
        by_segment[output.prompt_ref.segment_id] = output
    outputs = [by_segment[p.target_segment_id] for p in prompts]
    _jsonl(outputs_path, (o.to_dict() for o in outputs))
    log(f"{pair}/{tid.value}: {len(todo)} dispatched, "
        f"{len(persisted)} resumed")

    results, ledger = extract_batch(outputs, model=cfg.model_name)
    _jsonl(extractions_path, (r.to_dict() for r in results))

    gold_by_id = {seg.id: seg.da_mean for seg in corpus.test}
    report = None
    error = None
    try:
        report = evaluate(gold_by_id, results, pair=pair, template=tid.value,
                          model=cfg.model_name)
        doc = {"report": report.to_dict(), "ledger": ledger.to_dict()}
    except HarnessError as exc:
        error = f"{type(exc).__name__}: {exc}"
        doc = {"report": None, "ledger": ledger.to_dict(), "error": error}
        log(f"{pair}/{tid.value}: evaluation failed: {error}")
    report_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                           encoding="utf-8")
    return len(todo), report, ledger, error


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-._" else "_" for c in name)


# -- result tables -------------------------------------------------------------

_METRIC_ATTR = {"r": "pearson_r", "rho": "spearman_rho", "tau": "kendall_tau"}

# plain/TSV marker glyphs; the markup renderer uses real styling instead
_GLYPH_ZERO_SHOT_BEST = "*"
_GLYPH_ICL_BEST = "^"
_GLYPH_OVERALL_BEST = "#"
_GLYPH_INSIGNIFICANT = "†"  # dagger


@dataclass(frozen=True)
class TableCell:
    value: float
    zero_shot_best: bool = False
    icl_best: bool = False
    overall_best: bool = False
    insignificant: bool = False


@dataclass
class ResultTable:
    metric: str
    pairs: list[str]
    templates: list[str]
    models: list[str]
    cells: dict  # (pair, template, model) -> TableCell


def _pair_sort_key(pair: str):
    if pair in PAIR_ORDER:
        return (0, PAIR_ORDER.index(pair))
    return (1, pair)


def build_result_table(reports: list[CorrelationReport],
                       metric: str = "rho") -> ResultTable:
    """Assemble cells and markers for one coefficient.

    Markers come from the table's own values: per pair, the best zero-shot
    cell, the best ICL cell, and the best cell overall (ties go to the
    first cell in template-then-model order, so each pair gets exactly one
    of each marker). Insignificance marks every cell with p > 0.05.
    """
    if metric not in _METRIC_ATTR:
        raise ValueError(f"metric must be one of {sorted(_METRIC_ATTR)}")
    attr = _METRIC_ATTR[metric]

    pairs = sorted({r.pair for r in reports}, key=_pair_sort_key)
    template_order = [t.value for t in TemplateId]
    templates = sorted({r.template for r in reports},
                       key=template_order.index)
    models = sorted({r.model for r in reports})

    values: dict = {}
    insig: dict = {}
    for r in reports:
        values[(r.pair, r.template, r.model)] = getattr(r, attr)
        insig[(r.pair, r.template, r.model)] = r.significance is Significance.NS

    zero_shot = {t.value for t in ZERO_SHOT_TEMPLATES}
    icl = {t.value for t in ICL_TEMPLATES}
    cells: dict = {}
    for pair in pairs:
        keys = [(pair, t, m) for t in templates for m in models
                if (pair, t, m) in values]
        zs_keys = [k for k in keys if k[1] in zero_shot]
        icl_keys = [k for k in keys if k[1] in icl]
        best_overall = max(keys, key=lambda k: values[k]) if keys else None
        best_zs = max(zs_keys, key=lambda k: values[k]) if zs_keys else None
        best_icl = max(icl_keys, key=lambda k: values[k]) if icl_keys else None
        # max() returns the first maximal key in iteration order
        for k in keys:
            cells[k] = TableCell(
                value=values[k],
                zero_shot_best=(k == best_zs),
                icl_best=(k == best_icl),
                overall_best=(k == best_overall),
                insignificant=insig[k],
            )
    return ResultTable(metric=metric, pairs=pairs, templates=templates,
                       models=models, cells=cells)


def _cell_text(cell: TableCell | None, markup: bool) -> str:
    if cell is None:
        return "—"
    text = f"{cell.value:.3f}"
    if markup:
        if cell.overall_best:
            text = f"**{text}**"
        if cell.icl_best:
            text = f"<u>{text}</u>"
        if cell.zero_shot_best:
            text += "\\*"
        if cell.insignificant:
            text += _GLYPH_INSIGNIFICANT
        return text
    if cell.zero_shot_best:
        text += _GLYPH_ZERO_SHOT_BEST
    if cell.icl_best:
        text += _GLYPH_ICL_BEST
    if cell.overall_best:
        text += _GLYPH_OVERALL_BEST
    if cell.insignificant:
        text += _GLYPH_INSIGNIFICANT
    return text


_LEGEND = ("markers: * best zero-shot | ^ best ICL | # best overall | "
           "† p > 0.05")


def render_table(reports: list[CorrelationReport], metric: str = "rho",
                 fmt: str = "plain") -> str:
    """Render the per-pair result grid in plain text, TSV, or markup."""
    table = build_result_table(reports, metric)
    rows = []
    for pair in table.pairs:
        for template in table.templates:
            row_cells = [table.cells.get((pair, template, m))
                         for m in table.models]
            if all(c is None for c in row_cells):
                continue
            rows.append((pair, template, row_cells))

    header = ["pair", "template"] + table.models
    if fmt == "tsv":
        lines = ["\t".join(header)]
        for pair, template, row_cells in rows:
            lines.append("\t".join(
                [pair, template] + [_cell_text(c, markup=False)
                                    for c in row_cells]))
        return "\n".join(lines) + "\n"
    if fmt == "markdown":
        lines = [f"**metric: {table.metric}** ({_LEGEND})", "",
                 "| " + " | ".join(header) + " |",
                 "|" + "|".join("---" for _ in header) + "|"]
        for pair, template, row_cells in rows:
            lines.append("| " + " | ".join(
                [pair, template] + [_cell_text(c, markup=True)
                                    for c in row_cells]) + " |")
        return "\n".join(lines) + "\n"
    if fmt != "plain":
        raise ValueError(f"unknown table format {fmt!r}")

    body = [[pair, template] + [_cell_text(c, markup=False)
                                for c in row_cells]
            for pair, template, row_cells in rows]
    widths = [max(len(line[i]) for line in [header] + body)
              for i in range(len(header))]
    lines = [f"metric: {table.metric}    {_LEGEND}"]
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for line in body:
        lines.append("  ".join(v.ljust(w) for v, w in zip(line, widths)))
    return "\n".join(line.rstrip() for line in lines) + "\n"


def render_detailed_table(reports: list[CorrelationReport],
                          fmt: str = "plain") -> str:
    """All three coefficients plus the exclusion column per model.

    The exclusion count is flagged with * when more than 10% of a run's
    inferences were dropped, marking the row as untrustworthy.
    """
    pairs = sorted({r.pair for r in reports}, key=_pair_sort_key)
    template_order = [t.value for t in TemplateId]
    templates = sorted({r.template for r in reports}, key=template_order.index)
    models = sorted({r.model for r in reports})
    by_key = {(r.pair, r.template, r.model): r for r in reports}

    header = ["pair", "template"]
    for model in models:
        header += [f"{model}:r", f"{model}:rho", f"{model}:tau", f"{model}:E"]

    body = []
    for pair in pairs:
        for template in templates:
            row = [pair, template]
            any_cell = False
            for model in models:
                r = by_key.get((pair, template, model))
                if r is None:
                    row += ["—"] * 4
                    continue
                any_cell = True
                total = r.n_used + r.n_excluded
                flagged = r.n_excluded > 0.10 * total
                row += [f"{r.pearson_r:.3f}", f"{r.spearman_rho:.3f}",
                        f"{r.kendall_tau:.3f}",
                        f"{r.n_excluded}{'*' if flagged else ''}"]
            if any_cell:
                body.append(row)

    if fmt == "tsv":
        return "\n".join("\t".join(row) for row in [header] + body) + "\n"
    if fmt == "markdown":
        lines = ["| " + " | ".join(header) + " |",
                 "|" + "|".join("---" for _ in header) + "|"]
        lines += ["| " + " | ".join(row) + " |" for row in body]
        return "\n".join(lines) + "\n"
    widths = [max(len(row[i]) for row in [header] + body)
              for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths))
              for row in body]
    return "\n".join(line.rstrip() for line in lines) + "\n"


# -- worst-deviation export ----------------------------------------------------

def worst_deviations(corpus: Corpus, results: list[ExtractionResult],
                     k: int) -> list[dict]:
    """The k scored rows with the largest |prediction - gold|, for manual
    error labeling."""
    by_id = {seg.id: seg for seg in corpus.test}
    rows = []
    for res in results:
        if res.score is None:
            continue
        seg = by_id.get(res.prompt_ref.segment_id)
        if seg is None:
            continue
        rows.append({
            "pair": str(seg.pair),
            "segment_id": seg.id,
            "source": seg.source,
            "translation": seg.translation,
            "gold": seg.da_mean,
            "pred": res.score,
            "abs_dev": abs(res.score - seg.da_mean),
        })
    rows.sort(key=lambda r: (-r["abs_dev"], r["segment_id"]))
    return rows[:k]


def write_worst_tsv(rows: list[dict], path: str | Path) -> None:
    lines = ["# error_label vocabulary: " + "; ".join(ERROR_TAXONOMY),
             "pair\tsegment_id\tsource\ttranslation\tgold\tpred\tabs_dev\terror_label"]
    for r in rows:
        lines.append(f"{r['pair']}\t{r['segment_id']}\t{r['source']}"
                     f"\t{r['translation']}\t{r['gold']}\t{r['pred']}"
                     f"\t{r['abs_dev']:.2f}\t")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
