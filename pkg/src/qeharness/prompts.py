"""Prompt materialization: three zero-shot families plus the ICL variant.

Template wording lives in external versioned text files (see templates/),
never in code, so it can be audited and swapped without a release. Rendering
is pure and deterministic: the same (template version, seed, corpus) always
produces byte-identical prompts.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path

from .corpus import ScoreBin, SCORE_BINS, Segment, Split, bin_of
from .errors import (EmptyBin, ExemplarCountMismatch, ExemplarLeakage,
                     PlaceholderUnresolved, TemplateInvalid, TemplateMissing)
from .seeding import rank_key

log = logging.getLogger(__name__)

__all__ = [
    "TemplateId", "ZERO_SHOT_TEMPLATES", "ICL_TEMPLATES", "ICL_EXEMPLAR_COUNTS",
    "IclConfig", "PromptTemplate", "IclExemplar", "RenderedPrompt",
    "LANGUAGE_NAMES", "language_name", "load_templates",
    "render_zero_shot", "select_icl_exemplars", "render_icl",
]


class TemplateId(Enum):
    GEMBA = "gemba"
    TE = "te"
    AG = "ag"
    AG_ICL3 = "ag_icl3"
    AG_ICL5 = "ag_icl5"
    AG_ICL7 = "ag_icl7"


ZERO_SHOT_TEMPLATES = (TemplateId.GEMBA, TemplateId.TE, TemplateId.AG)
ICL_TEMPLATES = (TemplateId.AG_ICL3, TemplateId.AG_ICL5, TemplateId.AG_ICL7)
ICL_EXEMPLAR_COUNTS = {TemplateId.AG_ICL3: 3, TemplateId.AG_ICL5: 5,
                       TemplateId.AG_ICL7: 7}

# Range-guideline templates must spell out all five score ranges.
AG_FAMILY = (TemplateId.AG, TemplateId.AG_ICL3, TemplateId.AG_ICL5,
             TemplateId.AG_ICL7)

_TARGET_PLACEHOLDERS = ("source_lang", "target_lang", "source_text",
                        "translation_text")


class IclConfig(Enum):
    ICL3 = 3
    ICL5 = 5
    ICL7 = 7

    @classmethod
    def for_template(cls, template_id: TemplateId) -> "IclConfig":
        return cls(ICL_EXEMPLAR_COUNTS[template_id])


# Built-in names for the eight studied pairs plus the high-resource
# comparison languages used by the fertility analysis.
LANGUAGE_NAMES = {
    "en": "English",
    "gu": "Gujarati",
    "hi": "Hindi",
    "mr": "Marathi",
    "ta": "Tamil",
    "te": "Telugu",
    "et": "Estonian",
    "ne": "Nepali",
    "si": "Sinhala",
    "de": "German",
    "zh": "Chinese",
    "ro": "Romanian",
}


def language_name(code: str) -> str:
    return LANGUAGE_NAMES.get(code, code)


@dataclass(frozen=True)
class PromptTemplate:
    id: TemplateId
    body: str
    version: str

    def required_placeholders(self) -> tuple[str, ...]:
        if self.id in ICL_TEMPLATES:
            return _TARGET_PLACEHOLDERS + ("examples",)
        return _TARGET_PLACEHOLDERS

    def validate(self) -> None:
        for name in self.required_placeholders():
            count = self.body.count("{%s}" % name)
            if count != 1:
                raise PlaceholderUnresolved(
                    f"template {self.id.value}: placeholder {{{name}}} occurs "
                    f"{count} times, expected exactly once")
        if self.id in AG_FAMILY:
            for b in SCORE_BINS:
                if b.label not in self.body:
                    raise TemplateInvalid(
                        f"template {self.id.value}: missing guideline clause "
                        f"for score range {b.label}")


def _default_template_dir() -> Path:
    return Path(resources.files("qeharness") / "templates")


def load_templates(directory: str | Path | None = None,
                   ) -> dict[TemplateId, PromptTemplate]:
    """Read the template manifest and every template body, validated.

    The manifest maps template id to file and version; several ids may share
    one file (the ICL variants differ only in exemplar count).
    """
    directory = Path(directory) if directory else _default_template_dir()
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise TemplateMissing(f"no template manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))

    templates = {}
    for tid in TemplateId:
        entry = manifest.get(tid.value)
        if entry is None:
            raise TemplateMissing(f"manifest has no entry for {tid.value}")
        body_path = directory / entry["file"]
        if not body_path.is_file():
            raise TemplateMissing(f"template file missing: {body_path}")
        template = PromptTemplate(id=tid,
                                  body=body_path.read_text(encoding="utf-8"),
                                  version=entry["version"])
        template.validate()
        templates[tid] = template
    return templates


@dataclass(frozen=True)
class IclExemplar:
    """A scored train-split example shown inside an ICL prompt."""

    segment: Segment
    bin: ScoreBin

    def __post_init__(self) -> None:
        if self.segment.split is not Split.TRAIN:
            raise ExemplarLeakage(
                f"segment {self.segment.id} of {self.segment.pair} is from the "
                f"{self.segment.split.value} split; exemplars must be train")


@dataclass(frozen=True)
class RenderedPrompt:
    template: TemplateId
    text: str
    exemplars: tuple[IclExemplar, ...]
    target_segment_id: int
    pair: str
    seed: int

    def __post_init__(self) -> None:
        expected = ICL_EXEMPLAR_COUNTS.get(self.template, 0)
        if len(self.exemplars) != expected:
            raise ExemplarCountMismatch(
                f"{self.template.value} carries {len(self.exemplars)} "
                f"exemplars, expected {expected}")

    def to_dict(self) -> dict:
        return {
            "pair": self.pair,
            "segment_id": self.target_segment_id,
            "template": self.template.value,
            "seed": self.seed,
            "text": self.text,
        }


def _substitute(body: str, values: dict[str, str]) -> str:
    text = body
    for name, value in values.items():
        text = text.replace("{%s}" % name, value, 1)
    for name in values:
        if "{%s}" % name in text:
            raise PlaceholderUnresolved(
                f"placeholder {{{name}}} survived substitution")
    return text


def render_zero_shot(template: PromptTemplate, segment: Segment,
                     seed: int = 0) -> RenderedPrompt:
    """Materialize a zero-shot prompt for one segment."""
    if template.id not in ZERO_SHOT_TEMPLATES:
        raise ValueError(f"{template.id.value} is not a zero-shot template")
    text = _substitute(template.body, {
        "source_lang": language_name(segment.pair.source_lang),
        "target_lang": language_name(segment.pair.target_lang),
        "source_text": segment.source,
        "translation_text": segment.translation,
    })
    return RenderedPrompt(template=template.id, text=text, exemplars=(),
                          target_segment_id=segment.id,
                          pair=str(segment.pair), seed=seed)


_ICL3_BINS = (ScoreBin.B0_30, ScoreBin.B71_90, ScoreBin.B91_100)


def select_icl_exemplars(train: list[Segment] | tuple[Segment, ...],
                         config: IclConfig, seed: int, *,
                         fallback: bool = True) -> list[IclExemplar]:
    """Pick scored exemplars from the five DA score bins.

    ICL5 takes one exemplar per bin; ICL3 drops the 31-50 and 51-70 bins;
    ICL7 is the ICL5 set plus one extra distinct exemplar from the lowest
    and one from the highest non-empty bin. Within a bin the pick is uniform
    under a hash keyed by (seed, pair, bin, segment id), so results are
    reproducible across platforms and insensitive to input ordering.

    An unfillable bin raises EmptyBin, unless fallback is on, in which case
    the nearest non-empty bin substitutes and a warning is logged. Returned
    exemplars are ordered ascending by bin, then by score and id.
    """
    if not train:
        raise EmptyBin("any")
    for seg in train:
        if seg.split is not Split.TRAIN:
            raise ExemplarLeakage(
                f"segment {seg.id} is from the {seg.split.value} split")

    pair = str(train[0].pair)
    by_bin: dict[ScoreBin, list[Segment]] = {b: [] for b in SCORE_BINS}
    for seg in train:
        by_bin[bin_of(seg.da_mean)].append(seg)

    used: set[int] = set()

    def pick(target: ScoreBin) -> IclExemplar:
        candidates = [s for s in by_bin[target] if s.id not in used]
        actual = target
        if not candidates:
            if not fallback:
                raise EmptyBin(target.label)
            actual = _nearest_populated(by_bin, target, used)
            candidates = [s for s in by_bin[actual] if s.id not in used]
            log.warning("bin %s has no unused exemplar for %s; substituting "
                        "from %s", target.label, pair, actual.label)
        chosen = min(candidates,
                     key=lambda s: rank_key(seed, pair, target.label, s.id))
        used.add(chosen.id)
        return IclExemplar(chosen, actual)

    base_bins = _ICL3_BINS if config is IclConfig.ICL3 else SCORE_BINS
    exemplars = [pick(b) for b in base_bins]

    if config is IclConfig.ICL7:
        populated = [b for b in SCORE_BINS if by_bin[b]]
        exemplars.append(pick(populated[0]))    # extra from lowest range
        exemplars.append(pick(populated[-1]))   # extra from highest range

    exemplars.sort(key=lambda e: (e.bin.index, e.segment.da_mean,
                                  e.segment.id))
    return exemplars


def _nearest_populated(by_bin: dict[ScoreBin, list[Segment]],
                       target: ScoreBin, used: set[int]) -> ScoreBin:
    candidates = [b for b in SCORE_BINS
                  if any(s.id not in used for s in by_bin[b])]
    if not candidates:
        raise EmptyBin(target.label)
    # closest bin wins; ties resolve toward the lower range
    return min(candidates, key=lambda b: (abs(b.index - target.index), b.index))


_EXEMPLAR_BLOCK = ('Source text: "{source}"\n'
                   'Translation: "{translation}"\n'
                   "Score: {score:.1f}")


def render_icl(template: PromptTemplate, exemplars: list[IclExemplar],
               segment: Segment, seed: int = 0) -> RenderedPrompt:
    """Materialize an ICL prompt: scored exemplars, then the unscored target.

    Exemplars render in bin-ascending order with their gold score at one
    decimal, matching the extraction grammar.
    """
    if template.id not in ICL_TEMPLATES:
        raise ValueError(f"{template.id.value} is not an ICL template")
    expected = ICL_EXEMPLAR_COUNTS[template.id]
    if len(exemplars) != expected:
        raise ExemplarCountMismatch(
            f"{template.id.value} needs {expected} exemplars, "
            f"got {len(exemplars)}")

    ordered = sorted(exemplars, key=lambda e: (e.bin.index,
                                               e.segment.da_mean,
                                               e.segment.id))
    block = "\n\n".join(
        _EXEMPLAR_BLOCK.format(source=e.segment.source,
                               translation=e.segment.translation,
                               score=e.segment.da_mean)
        for e in ordered)

    text = _substitute(template.body, {
        "source_lang": language_name(segment.pair.source_lang),
        "target_lang": language_name(segment.pair.target_lang),
        "examples": block,
        "source_text": segment.source,
        "translation_text": segment.translation,
    })
    return RenderedPrompt(template=template.id, text=text,
                          exemplars=tuple(ordered),
                          target_segment_id=segment.id,
                          pair=str(segment.pair), seed=seed)
