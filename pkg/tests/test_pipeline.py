from __future__ import annotations

import json
from pathlib import Path

import pytest

from qeharness.errors import (EndpointMissing, ManifestError, TemplateMissing)
from qeharness.extraction import ExtractionResult
from qeharness.gateway import EchoScore, Fixed, Garbage, Fail, PromptRef
from qeharness.metrics import CorrelationReport, Significance, significance_of
from qeharness.pipeline import (ERROR_TAXONOMY, RunManifest, build_mock_policy,
                                build_result_table, render_detailed_table,
                                render_table, run, worst_deviations,
                                write_worst_tsv)

from conftest import synthetic_corpus, write_corpus_manifest


def _run_manifest(tmp_path, pairs_sizes=None, *, templates=("ag",),
                  mock={"policy": "echo-score"}, out_name="run",
                  **extra) -> RunManifest:
    pairs_sizes = pairs_sizes or {"en-gu": (40, 25)}
    corpora = [synthetic_corpus(p, n_train=tr, n_test=te)
               for p, (tr, te) in pairs_sizes.items()]
    manifest_path = write_corpus_manifest(tmp_path / "data", corpora)
    doc = {
        "corpora_manifest": str(manifest_path),
        "templates": list(templates),
        "out_dir": str(tmp_path / out_name),
        "seed": 7,
        "inference": {"model_name": "mock-model", "max_in_flight": 4,
                      "retry_backoff_base": 0.0},
        "mock": mock,
    }
    doc.update(extra)
    return RunManifest.from_dict(doc)


# -- manifest ---------------------------------------------------------------------

def test_manifest_round_trip(tmp_path):
    manifest = _run_manifest(tmp_path)
    assert RunManifest.from_dict(manifest.to_dict()) == manifest


def test_manifest_from_json(tmp_path):
    manifest = _run_manifest(tmp_path)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(manifest.to_dict()), encoding="utf-8")
    assert RunManifest.from_json(path) == manifest


def test_manifest_rejects_unknown_template(tmp_path):
    with pytest.raises(ManifestError):
        RunManifest.from_dict({"corpora_manifest": "x", "out_dir": "y",
                               "templates": ["nope"]})


def test_manifest_file_missing():
    with pytest.raises(ManifestError):
        RunManifest.from_json("/nonexistent/run.json")


def test_mock_policy_parsing():
    assert isinstance(build_mock_policy({"policy": "echo-score"}), EchoScore)
    offset = build_mock_policy({"policy": "echo-score", "offset": 5.0})
    assert offset.transform(10.0) == 15.0
    assert build_mock_policy({"policy": "fixed", "text": "hi"}) == Fixed("hi")
    assert build_mock_policy({"policy": "garbage", "p": 0.25}) == Garbage(0.25)
    fail = build_mock_policy({"policy": "fail", "segment_ids": [3, 5]})
    assert isinstance(fail, Fail)
    assert fail.segment_ids == frozenset({3, 5})
    with pytest.raises(ManifestError):
        build_mock_policy({"policy": "wat"})


# -- run ---------------------------------------------------------------------------

def test_run_identity_mock_end_to_end(tmp_path):
    manifest = _run_manifest(tmp_path)
    result = run(manifest)

    assert result.errors == {}
    assert result.inference_calls == 25
    assert len(result.reports) == 1
    report = result.reports[0]
    assert report.pearson_r == 1.0
    assert report.spearman_rho == 1.0
    assert report.kendall_tau == 1.0
    assert report.n_excluded == 0

    out = Path(manifest.out_dir)
    assert (out / "manifest.json").is_file()
    assert (out / "summary.json").is_file()
    prompts = list((out / "prompts").glob("*.jsonl"))
    outputs = list((out / "outputs").glob("*.jsonl"))
    assert len(prompts) == 1 and len(outputs) == 1
    assert len(outputs[0].read_text().splitlines()) == 25


def test_run_resume_skips_persisted_outputs(tmp_path):
    manifest = _run_manifest(tmp_path)
    first = run(manifest)
    assert first.inference_calls == 25

    resumed = RunManifest.from_dict({**manifest.to_dict(), "resume": True})
    second = run(resumed)
    assert second.inference_calls == 0
    assert second.reports[0] == first.reports[0]


def test_run_without_resume_redispatches(tmp_path):
    manifest = _run_manifest(tmp_path)
    run(manifest)
    again = run(manifest)
    assert again.inference_calls == 25


def test_run_byte_identical_across_runs(tmp_path):
    manifest_a = _run_manifest(tmp_path, out_name="a",
                               templates=("ag", "ag_icl5"))
    manifest_b = RunManifest.from_dict({**manifest_a.to_dict(),
                                        "out_dir": str(tmp_path / "b")})
    run(manifest_a)
    run(manifest_b)

    files_a = sorted(p for p in Path(manifest_a.out_dir).rglob("*")
                     if p.is_file() and p.name != "log.txt"
                     and p.name != "manifest.json")
    files_b = sorted(p for p in Path(manifest_b.out_dir).rglob("*")
                     if p.is_file() and p.name != "log.txt"
                     and p.name != "manifest.json")
    assert [p.name for p in files_a] == [p.name for p in files_b]
    for pa, pb in zip(files_a, files_b):
        assert pa.read_bytes() == pb.read_bytes(), pa.name


def test_run_pairs_filter(tmp_path):
    manifest = _run_manifest(tmp_path, {"en-gu": (40, 10), "si-en": (40, 10)},
                             pairs=["si-en"])
    result = run(manifest)
    assert [r.pair for r in result.reports] == ["si-en"]
    assert result.inference_calls == 10


def test_run_icl_template_uses_train_exemplars(tmp_path):
    manifest = _run_manifest(tmp_path, {"en-gu": (100, 10)},
                             templates=("ag_icl5",))
    result = run(manifest)
    assert result.reports[0].spearman_rho == 1.0
    prompts_file = next((Path(manifest.out_dir) / "prompts").glob("*.jsonl"))
    first_prompt = json.loads(prompts_file.read_text().splitlines()[0])
    # five exemplar scores precede the unscored target
    assert first_prompt["text"].count("Score:") == 6


def test_run_garbage_mock_fills_ledger(tmp_path):
    manifest = _run_manifest(tmp_path, {"en-gu": (40, 200)},
                             mock={"policy": "garbage", "p": 0.2})
    result = run(manifest)
    report = result.reports[0]
    assert report.n_excluded > 0
    assert report.n_used + report.n_excluded == 200
    assert report.spearman_rho == pytest.approx(1.0, abs=1e-12)
    ledger = result.ledgers[0]
    assert ledger.excluded_count == report.n_excluded


def test_run_fail_fast_on_missing_templates(tmp_path):
    manifest = _run_manifest(tmp_path,
                             template_dir=str(tmp_path / "no-templates"))
    with pytest.raises(TemplateMissing):
        run(manifest)


def test_run_requires_endpoint_or_mock(tmp_path):
    manifest = _run_manifest(tmp_path, mock=None)
    with pytest.raises(EndpointMissing):
        run(manifest)


def test_run_all_garbage_records_error_not_crash(tmp_path):
    manifest = _run_manifest(tmp_path, {"en-gu": (40, 20)},
                             mock={"policy": "fixed", "text": "no score"})
    result = run(manifest)
    assert result.reports == []
    assert ("en-gu", "ag") in result.errors
    assert "TooFewPairs" in result.errors[("en-gu", "ag")]
    summary = json.loads((Path(manifest.out_dir) / "summary.json").read_text())
    assert summary["errors"]


# -- result tables ------------------------------------------------------------------

def _report(pair, template, model, rho, p, r=None, tau=None, n_excluded=0):
    return CorrelationReport(
        pair=pair, template=template, model=model,
        n_used=100 - n_excluded, n_excluded=n_excluded,
        pearson_r=r if r is not None else rho,
        spearman_rho=rho,
        kendall_tau=tau if tau is not None else rho,
        t_stat=1.0, p_value=p, significance=significance_of(p))


SYNTH_REPORTS = [
    _report("en-gu", "gemba", "alpha", 0.100, 0.001),
    _report("en-gu", "gemba", "beta", 0.240, 0.02),
    _report("en-gu", "ag", "alpha", 0.150, 0.20),
    _report("en-gu", "ag", "beta", 0.200, 0.01),
    _report("en-gu", "ag_icl5", "alpha", 0.260, 0.004),
    _report("en-gu", "ag_icl5", "beta", 0.180, 0.03),
    _report("et-en", "gemba", "alpha", 0.300, 0.0001),
    _report("et-en", "gemba", "beta", 0.550, 0.0001),
    _report("et-en", "ag", "alpha", 0.610, 0.0001),
    _report("et-en", "ag", "beta", 0.420, 0.0001),
    _report("et-en", "ag_icl5", "alpha", 0.580, 0.0001),
    _report("et-en", "ag_icl5", "beta", 0.560, 0.06),
]

GOLDEN_PLAIN_TABLE = """\
metric: rho    markers: * best zero-shot | ^ best ICL | # best overall | † p > 0.05
pair   template  alpha    beta
en-gu  gemba     0.100    0.240*
en-gu  ag        0.150†   0.200
en-gu  ag_icl5   0.260^#  0.180
et-en  gemba     0.300    0.550
et-en  ag        0.610*#  0.420
et-en  ag_icl5   0.580^   0.560†
"""


def test_render_table_matches_golden():
    assert render_table(SYNTH_REPORTS, metric="rho",
                        fmt="plain") == GOLDEN_PLAIN_TABLE


def test_table_marker_soundness():
    table = build_result_table(SYNTH_REPORTS, metric="rho")
    for pair in table.pairs:
        cells = [table.cells[k] for k in table.cells if k[0] == pair]
        assert sum(c.overall_best for c in cells) == 1
        assert sum(c.zero_shot_best for c in cells) == 1
        assert sum(c.icl_best for c in cells) == 1
    for key, cell in table.cells.items():
        report = next(r for r in SYNTH_REPORTS
                      if (r.pair, r.template, r.model) == key)
        assert cell.insignificant == (report.significance is Significance.NS)
        assert cell.insignificant == (report.p_value > 0.05)


def test_table_tie_breaks_to_single_marker():
    reports = [
        _report("en-gu", "gemba", "alpha", 0.5, 0.001),
        _report("en-gu", "gemba", "beta", 0.5, 0.001),
        _report("en-gu", "te", "alpha", 0.5, 0.001),
    ]
    table = build_result_table(reports, metric="rho")
    cells = list(table.cells.values())
    assert sum(c.overall_best for c in cells) == 1
    assert sum(c.zero_shot_best for c in cells) == 1
    # the first cell in template-then-model order wins
    assert table.cells[("en-gu", "gemba", "alpha")].overall_best


def test_table_dagger_iff_not_significant():
    report = _report("en-gu", "ag", "alpha", 0.3, 0.20)
    text = render_table([report], metric="rho", fmt="plain")
    assert "0.300*#†" in text


def test_table_missing_cells_render_dash():
    reports = [_report("en-gu", "gemba", "alpha", 0.1, 0.01),
               _report("en-gu", "ag", "beta", 0.2, 0.01)]
    text = render_table(reports, metric="rho", fmt="plain")
    assert "—" in text


def test_table_tsv_and_markdown_formats():
    tsv = render_table(SYNTH_REPORTS, metric="rho", fmt="tsv")
    lines = tsv.splitlines()
    assert lines[0] == "pair\ttemplate\talpha\tbeta"
    assert lines[5] == "et-en\tag\t0.610*#\t0.420"

    markdown = render_table(SYNTH_REPORTS, metric="rho", fmt="markdown")
    assert "| en-gu | ag_icl5 | <u>**0.260**</u> | 0.180 |" in markdown
    assert "**0.610**\\*" in markdown
    assert "0.560†" in markdown


def test_table_metric_selection():
    reports = [_report("en-gu", "ag", "alpha", rho=0.2, p=0.01, r=0.9,
                       tau=0.1)]
    assert "0.900" in render_table(reports, metric="r", fmt="plain")
    assert "0.100" in render_table(reports, metric="tau", fmt="plain")
    with pytest.raises(ValueError):
        render_table(reports, metric="sigma")


def test_detailed_table_has_all_coefficients_and_exclusions():
    reports = [
        _report("en-ta", "gemba", "alpha", 0.22, 0.001, r=0.35, tau=0.18,
                n_excluded=6),
        _report("en-ta", "te", "alpha", 0.02, 0.3, r=0.01, tau=0.01,
                n_excluded=14),
    ]
    text = render_detailed_table(reports, fmt="tsv")
    lines = text.splitlines()
    assert lines[0] == "pair\ttemplate\talpha:r\talpha:rho\talpha:tau\talpha:E"
    assert lines[1] == "en-ta\tgemba\t0.350\t0.220\t0.180\t6"
    # 14 excluded of 100 total is over the tolerated drop share
    assert lines[2] == "en-ta\tte\t0.010\t0.020\t0.010\t14*"


# -- worst deviations ---------------------------------------------------------------

def _extraction(pair, seg_id, score):
    return ExtractionResult(PromptRef(pair, seg_id, "ag", 0), score)


def test_worst_deviation_rows_sorted_and_schema(tmp_path):
    corpus = synthetic_corpus("en-ta", n_train=5, n_test=10)
    results = []
    for i, seg in enumerate(corpus.test):
        pred = min(100.0, seg.da_mean + (10.0 if i % 2 else 1.0))
        results.append(_extraction("en-ta", seg.id, pred))
    rows = worst_deviations(corpus, results, k=3)
    assert len(rows) == 3
    assert rows[0]["abs_dev"] >= rows[1]["abs_dev"] >= rows[2]["abs_dev"]

    out = tmp_path / "worst.tsv"
    write_worst_tsv(rows, out)
    text = out.read_text()
    for label in ERROR_TAXONOMY:
        assert label in text  # vocabulary shipped in the header
    header = text.splitlines()[1]
    assert header.split("\t") == ["pair", "segment_id", "source",
                                  "translation", "gold", "pred", "abs_dev",
                                  "error_label"]


def test_error_taxonomy_is_fixed():
    assert ERROR_TAXONOMY == (
        "Incorrect term", "Use of Entity", "Syntactic error", "Long-text",
        "Missing information", "Incomplete sentence", "Use of abbreviation",
        "Transliteration")
