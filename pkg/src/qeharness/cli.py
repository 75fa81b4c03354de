"""Command-line entry point; the sole user-facing surface of the harness."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .corpus import SCORE_BINS, histogram, load_corpora, split_size_warnings
from .errors import HarnessError, ManifestError
from .extraction import ExtractionResult, extract_batch
from .fertility import (load_tokenizer, measure, sample_sentences, summarize,
                        write_plot_data_tsv, write_records_jsonl,
                        write_summary_tsv)
from .gateway import ModelOutput
from .metrics import CorrelationReport, evaluate
from .pipeline import (RunManifest, render_detailed_table, render_table, run,
                       worst_deviations, write_worst_tsv)
from .prompts import (IclConfig, TemplateId, ZERO_SHOT_TEMPLATES,
                      load_templates, render_icl, render_zero_shot,
                      select_icl_exemplars)
from .sft_export import SftConfig, SftMode, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qeharness",
        description="Reference-less MT quality-estimation harness")
    parser.add_argument("--version", action="version", version=__version__)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="seed for all deterministic choices (default 0; "
                             "for run, the manifest seed)")
    common.add_argument("--manifest", type=Path,
                        help="corpus manifest (run: the run manifest)")
    common.add_argument("--out", type=Path, help="output file or directory")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common],
                       help="validate corpora and print score histograms")
    p.add_argument("--strict", action="store_true",
                   help="abort on the first malformed row")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("render", parents=[common],
                       help="dump rendered prompts as JSONL")
    p.add_argument("--template", required=True,
                   choices=[t.value for t in TemplateId])
    p.add_argument("--pairs", nargs="*", help="restrict to these pairs")
    p.add_argument("--template-dir", type=Path)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("run", parents=[common],
                       help="execute a full experiment from a run manifest")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--mock", help="mock policy, e.g. echo-score, "
                                  "fixed:TEXT, garbage:0.1, fail:3,5")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("extract", parents=[common],
                       help="extract scores from persisted raw outputs")
    p.add_argument("--outputs", type=Path, required=True)
    p.add_argument("--model", default="")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("score", parents=[common],
                       help="correlation report from extraction results")
    p.add_argument("--extractions", type=Path, required=True)
    p.add_argument("--pair", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--model", default="")
    p.add_argument("--dump-worst", type=int, metavar="K",
                   help="also write the K largest |pred-gold| rows for "
                        "manual error labeling")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("table", parents=[common],
                       help="render result tables from a finished run")
    p.add_argument("--run-dir", type=Path, required=True)
    p.add_argument("--metric", choices=["r", "rho", "tau"], default="rho")
    p.add_argument("--style", choices=["plain", "tsv", "markdown"],
                   default="plain")
    p.add_argument("--detailed", action="store_true",
                   help="all coefficients plus the exclusion column")
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("fertility", parents=[common],
                       help="token-count fertility analysis over test samples")
    p.add_argument("--tokenizers", type=Path, required=True,
                   help="JSONL manifest: {name, definition} per line")
    p.add_argument("-k", "--sample-size", type=int, default=100)
    p.set_defaults(func=cmd_fertility)

    p = sub.add_parser("export-sft", parents=[common],
                       help="build instruction-tuning datasets from train splits")
    p.add_argument("--mode", choices=[m.value for m in SftMode], required=True)
    p.add_argument("--pair", help="restrict per-pair export to one pair")
    p.add_argument("--template-dir", type=Path)
    p.set_defaults(func=cmd_export_sft)

    return parser


def _require_manifest(args) -> Path:
    if args.manifest is None:
        raise ManifestError("--manifest is required for this command")
    return args.manifest


def cmd_ingest(args) -> int:
    diagnostics = []
    corpora = load_corpora(_require_manifest(args), strict=args.strict,
                           diagnostics=diagnostics)
    for corpus in corpora:
        print(f"{corpus.pair}: train={len(corpus.train)} "
              f"test={len(corpus.test)}")
        for split_name, segments in (("train", corpus.train),
                                     ("test", corpus.test)):
            counts = histogram(segments)
            bins = "  ".join(f"{b.label}:{counts[b]}" for b in SCORE_BINS)
            print(f"  {split_name:5s} {bins}")
        for warning in split_size_warnings(corpus):
            print(f"  warning: {warning}")
    if diagnostics:
        print(f"{len(diagnostics)} malformed rows skipped")
        for d in diagnostics[:20]:
            print(f"  row {d.row}: {d.reason}")
    return 0


def cmd_render(args) -> int:
    seed = args.seed or 0
    corpora = load_corpora(_require_manifest(args))
    if args.pairs:
        wanted = set(args.pairs)
        corpora = [c for c in corpora if str(c.pair) in wanted]
    templates = load_templates(args.template_dir)
    tid = TemplateId(args.template)
    template = templates[tid]

    lines = []
    for corpus in corpora:
        if tid in ZERO_SHOT_TEMPLATES:
            prompts = [render_zero_shot(template, seg, seed)
                       for seg in corpus.test]
        else:
            exemplars = select_icl_exemplars(list(corpus.train),
                                             IclConfig.for_template(tid),
                                             seed)
            prompts = [render_icl(template, exemplars, seg, seed)
                       for seg in corpus.test]
        lines.extend(json.dumps(p.to_dict(), sort_keys=True) for p in prompts)

    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        args.out.write_text(text, encoding="utf-8")
        print(f"wrote {len(lines)} prompts to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _parse_mock_arg(text: str) -> dict:
    kind, _, rest = text.partition(":")
    if kind == "echo-score":
        return ({"policy": "echo-score", "offset": float(rest)} if rest
                else {"policy": "echo-score"})
    if kind == "fixed":
        return {"policy": "fixed", "text": rest}
    if kind == "garbage":
        return {"policy": "garbage", "p": float(rest or "0.1")}
    if kind == "fail":
        ids = [int(v) for v in rest.split(",") if v]
        return {"policy": "fail", "segment_ids": ids}
    raise ManifestError(f"unknown mock policy {text!r}")


def cmd_run(args) -> int:
    manifest = RunManifest.from_json(_require_manifest(args))
    updates = {}
    if args.out:
        updates["out_dir"] = str(args.out)
    if args.resume:
        updates["resume"] = True
    if args.mock:
        updates["mock"] = _parse_mock_arg(args.mock)
    if args.seed is not None:
        updates["seed"] = args.seed
    if updates:
        manifest = RunManifest.from_dict({**manifest.to_dict(), **updates})

    result = run(manifest)
    print(f"run dir: {result.run_dir}")
    print(f"inference calls: {result.inference_calls}")
    for report in result.reports:
        flag = " (untrustworthy)" if report.n_excluded > 0.10 * (
            report.n_used + report.n_excluded) else ""
        print(f"{report.pair}/{report.template}/{report.model}: "
              f"r={report.pearson_r:.3f} rho={report.spearman_rho:.3f} "
              f"tau={report.kendall_tau:.3f} E={report.n_excluded}{flag} "
              f"[{report.significance.value}]")
    for (pair, template), msg in sorted(result.errors.items()):
        print(f"{pair}/{template}: not evaluated: {msg}")
    return 0


def cmd_extract(args) -> int:
    outputs = []
    for line in args.outputs.read_text(encoding="utf-8").splitlines():
        if line.strip():
            outputs.append(ModelOutput.from_dict(json.loads(line)))
    results, ledger = extract_batch(outputs, model=args.model)

    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        with (args.out / "extractions.jsonl").open("w", encoding="utf-8") as fh:
            for res in results:
                fh.write(json.dumps(res.to_dict(), sort_keys=True) + "\n")
        (args.out / "ledger.json").write_text(
            json.dumps(ledger.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
    print(f"total={ledger.total} excluded={ledger.excluded_count} "
          f"untrustworthy={ledger.flagged_untrustworthy}")
    return 0


def _load_extractions(path: Path) -> list[ExtractionResult]:
    results = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            results.append(ExtractionResult.from_dict(json.loads(line)))
    return results


def cmd_score(args) -> int:
    corpora = load_corpora(_require_manifest(args))
    matching = [c for c in corpora if str(c.pair) == args.pair]
    if not matching:
        raise ManifestError(f"pair {args.pair} not in the corpus manifest")
    corpus = matching[0]
    results = _load_extractions(args.extractions)

    gold_by_id = {seg.id: seg.da_mean for seg in corpus.test}
    report = evaluate(gold_by_id, results, pair=args.pair,
                      template=args.template, model=args.model)
    print(f"n={report.n_used} E={report.n_excluded} "
          f"r={report.pearson_r:.3f} rho={report.spearman_rho:.3f} "
          f"tau={report.kendall_tau:.3f} p={report.p_value:.4g} "
          f"[{report.significance.value}]")

    out_dir = args.out or Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    if args.dump_worst:
        rows = worst_deviations(corpus, results, args.dump_worst)
        worst_path = out_dir / f"worst_{args.dump_worst}.tsv"
        write_worst_tsv(rows, worst_path)
        print(f"wrote {len(rows)} rows to {worst_path}")
    return 0


def cmd_table(args) -> int:
    summary_path = args.run_dir / "summary.json"
    if not summary_path.is_file():
        raise ManifestError(f"no summary.json under {args.run_dir}")
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    reports = [CorrelationReport.from_dict(d) for d in summary["reports"]]
    if not reports:
        raise ManifestError("run produced no reports to tabulate")

    if args.detailed:
        text = render_detailed_table(reports, fmt=args.style)
    else:
        text = render_table(reports, metric=args.metric, fmt=args.style)
    if args.out:
        args.out.write_text(text, encoding="utf-8")
        print(f"wrote table to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_fertility(args) -> int:
    corpora = load_corpora(_require_manifest(args))
    tokenizers = []
    for line in args.tokenizers.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        spec = json.loads(line)
        definition = (args.tokenizers.parent / spec["definition"]).resolve()
        tokenizers.append(load_tokenizer(spec["name"], definition))

    records = []
    failures = []
    for corpus in corpora:
        sampled = sample_sentences(corpus, k=args.sample_size,
                                   seed=args.seed or 0)
        recs, fails = measure(sampled, tokenizers)
        records.extend(recs)
        failures.extend(fails)

    summaries = summarize(records)
    for s in summaries:
        print(f"{s.pair} {s.tokenizer}: mean_words={s.mean_words:.1f} "
              f"mean_tokens={s.mean_tokens:.1f} "
              f"fertility={s.mean_fertility:.3f} "
              f"(median {s.median_fertility:.3f})")
    for f in failures:
        print(f"tokenizer failure: {f.tokenizer} on segment "
              f"{f.segment_id}: {f.error}")

    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        write_summary_tsv(summaries, args.out / "fertility_summary.tsv")
        write_records_jsonl(records, args.out / "fertility_records.jsonl")
        write_plot_data_tsv(summaries, args.out / "fertility_plot_data.tsv")
        print(f"wrote fertility exports to {args.out}")
    return 0


def cmd_export_sft(args) -> int:
    corpora = load_corpora(_require_manifest(args))
    templates = load_templates(args.template_dir)
    config = SftConfig(mode=SftMode(args.mode), shuffle_seed=args.seed or 0,
                       pair=args.pair)
    out_dir = args.out or Path("sft_export")
    manifest = export(corpora, config, out_dir, templates[TemplateId.AG])
    for pair, count in sorted(manifest["counts"].items()):
        print(f"{pair}: {count} records")
    print(f"total: {manifest['total_records']} records in {out_dir}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except HarnessError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
