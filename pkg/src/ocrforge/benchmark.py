"""Benchmark loading, answer scoring, error classification, and reports.

The dataset format is JSONL, one sample per line:
    {"id", "image", "task", "question", "answers": [..], "lang"}
with four task categories (recognition, scene, document, kie). Scoring is
binary per sample: exact match after normalization against any acceptable
answer. Incorrect predictions are classified into a small error taxonomy
(refusal, spacing-only, near-miss-spelling, other) so that runs can also
be reported with Korean word-spacing errors forgiven."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .images import MissingImageError, load_image, png_base64
from .metrics import EXACT_NFC, NormProfile, edit_distance, normalize
from .pipeline import BackendUnavailableError, run_ocr
from .prompting import (
    DEFAULT_TEMPLATE,
    MissingOcrError,
    PromptTemplate,
    build_prompt,
    render_messages,
    render_text,
)
from .vlm import ContentRefusedError, ExhaustedError, VlmClient

TASKS = ("recognition", "scene", "document", "kie")
LANGUAGES = ("ko", "en", "mixed")
ERROR_CATEGORIES = ("none", "spacing-only", "near-miss-spelling", "refusal", "other")

DEFAULT_REFUSAL_LEXICON = (
    "i cannot",
    "i can't",
    "cannot determine",
    "cannot answer",
    "can't answer",
    "unable to determine",
    "unable to answer",
    "not enough information",
    "unanswerable",
    "i'm sorry",
    "i am sorry",
    "죄송",
    "알 수 없",
    "답할 수 없",
    "대답할 수 없",
    "확인할 수 없",
    "정보가 없",
)


class SchemaError(ValueError):
    def __init__(self, line: int, reason: str):
        self.line = line
        super().__init__(f"line {line}: {reason}")


class DuplicateIdError(ValueError):
    def __init__(self, sample_id: str):
        self.sample_id = sample_id
        super().__init__(f"duplicate sample id {sample_id!r}")


@dataclass(frozen=True)
class BenchSample:
    id: str
    image_path: str
    task: str
    question: str
    answers: tuple[str, ...]
    language: str = "mixed"


@dataclass(frozen=True)
class Verdict:
    sample_id: str
    correct: bool
    prediction: str
    matched_answer: str | None = None
    error_category: str = "none"

    def __post_init__(self):
        if self.error_category not in ERROR_CATEGORIES:
            raise ValueError(f"unknown error category {self.error_category!r}")
        if self.correct and self.error_category != "none":
            raise ValueError("a correct verdict carries no error category")

    def to_dict(self) -> dict:
        return {
            "id": self.sample_id,
            "correct": self.correct,
            "matched_answer": self.matched_answer,
            "error_category": self.error_category,
            "prediction": self.prediction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        return cls(
            sample_id=d["id"],
            correct=bool(d["correct"]),
            prediction=d["prediction"],
            matched_answer=d.get("matched_answer"),
            error_category=d.get("error_category", "none"),
        )


@dataclass(frozen=True)
class ScoringPolicy:
    """Which normalization governs comparisons and how strict the match is.

    strict: normalized prediction must equal a normalized answer.
    relaxed: as strict, after removing all whitespace from both sides.
    contains: a normalized answer may appear as a substring (flagged in the
    manifest; strict is the defensible default)."""

    profile: NormProfile = EXACT_NFC
    rule: str = "strict"
    refusal_lexicon: tuple[str, ...] = DEFAULT_REFUSAL_LEXICON

    def __post_init__(self):
        if self.rule not in ("strict", "relaxed", "contains"):
            raise ValueError(f"unknown match rule {self.rule!r}")

    def to_manifest(self) -> dict:
        return {"profile": self.profile.name, "rule": self.rule}


DEFAULT_POLICY = ScoringPolicy()


def load_benchmark(path, images_root=None, check_images: bool = True) -> list[BenchSample]:
    """Load and validate a benchmark JSONL file. Image paths resolve
    against images_root (default: the dataset file's directory)."""
    path = Path(path)
    root = Path(images_root) if images_root is not None else path.parent
    samples: list[BenchSample] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(ln, f"not valid JSON: {e}") from None
            if not isinstance(rec, dict):
                raise SchemaError(ln, "sample must be a JSON object")
            for key in ("id", "image", "task", "question", "answers"):
                if key not in rec:
                    raise SchemaError(ln, f"missing field {key!r}")
            if rec["task"] not in TASKS:
                raise SchemaError(ln, f"task must be one of {TASKS}, got {rec['task']!r}")
            answers = rec["answers"]
            if (
                not isinstance(answers, list)
                or not answers
                or not all(isinstance(a, str) for a in answers)
            ):
                raise SchemaError(ln, "answers must be a non-empty list of strings")
            lang = rec.get("lang", "mixed")
            if lang not in LANGUAGES:
                raise SchemaError(ln, f"lang must be one of {LANGUAGES}, got {lang!r}")
            sid = str(rec["id"])
            if sid in seen:
                raise DuplicateIdError(sid)
            seen.add(sid)
            image_path = str(root / rec["image"])
            if check_images and not os.path.isfile(image_path):
                raise MissingImageError(f"{image_path} (sample {sid})")
            samples.append(
                BenchSample(
                    id=sid,
                    image_path=image_path,
                    task=rec["task"],
                    question=str(rec["question"]),
                    answers=tuple(answers),
                    language=lang,
                )
            )
    return samples


def task_counts(samples) -> dict[str, int]:
    counts = {task: 0 for task in TASKS}
    for s in samples:
        counts[s.task] += 1
    return counts


def _strip_ws(text: str) -> str:
    return "".join(c for c in text if not c.isspace())


def score_sample(prediction: str, sample: BenchSample,
                 policy: ScoringPolicy = DEFAULT_POLICY) -> Verdict:
    """Binary scoring of one prediction against the sample's answer list."""
    npred = normalize(prediction, policy.profile)
    matched = None
    for answer in sample.answers:
        nans = normalize(answer, policy.profile)
        if npred == nans:
            matched = answer
            break
        if policy.rule == "relaxed" and _strip_ws(npred) == _strip_ws(nans):
            matched = answer
            break
        if policy.rule == "contains" and nans and nans in npred:
            matched = answer
            break
    if matched is not None:
        return Verdict(sample_id=sample.id, correct=True, prediction=prediction,
                       matched_answer=matched)
    category = classify_error(prediction, sample, policy.profile, policy.refusal_lexicon)
    return Verdict(sample_id=sample.id, correct=False, prediction=prediction,
                   error_category=category)


def classify_error(prediction: str, sample: BenchSample,
                   profile: NormProfile = EXACT_NFC,
                   refusal_lexicon=DEFAULT_REFUSAL_LEXICON) -> str:
    """Assign an error category to an incorrect prediction.

    Order matters: refusals are detected first (they often contain answer
    words), then pure word-spacing mismatches, then near-miss spellings
    within an edit-distance budget of 20% of the answer length."""
    folded = normalize(prediction, EXACT_NFC).casefold()
    for phrase in refusal_lexicon:
        if phrase.casefold() in folded:
            return "refusal"
    npred = normalize(prediction, profile)
    for answer in sample.answers:
        nans = normalize(answer, profile)
        if _strip_ws(npred) == _strip_ws(nans):
            return "spacing-only"
    for answer in sample.answers:
        nans = normalize(answer, profile)
        budget = max(1, math.ceil(0.2 * len(nans)))
        if edit_distance(npred, nans) <= budget:
            return "near-miss-spelling"
    return "other"


@dataclass
class RunReport:
    """Aggregated scoring outcome: per-task and total correct counts, plus
    spacing-only error counts so the whitespace-forgiven view can be
    reported alongside the strict one."""

    task_counts: dict[str, int]
    task_correct: dict[str, int]
    task_spacing_only: dict[str, int] = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        for d in (self.task_counts, self.task_correct, self.task_spacing_only):
            unknown = set(d) - set(TASKS)
            if unknown:
                raise ValueError(f"unknown tasks in report: {sorted(unknown)}")
        self.task_counts = {t: int(self.task_counts.get(t, 0)) for t in TASKS}
        self.task_correct = {t: int(self.task_correct.get(t, 0)) for t in TASKS}
        self.task_spacing_only = {t: int(self.task_spacing_only.get(t, 0)) for t in TASKS}
        for t in TASKS:
            if self.task_correct[t] > self.task_counts[t]:
                raise ValueError(f"task {t}: correct exceeds sample count")
            if self.task_correct[t] + self.task_spacing_only[t] > self.task_counts[t]:
                raise ValueError(f"task {t}: forgiven count exceeds sample count")

    @property
    def total_samples(self) -> int:
        return sum(self.task_counts.values())

    @property
    def total_correct(self) -> int:
        return sum(self.task_correct.values())

    def forgiven_correct(self, task: str) -> int:
        return self.task_correct[task] + self.task_spacing_only[task]

    @property
    def total_forgiven(self) -> int:
        return sum(self.forgiven_correct(t) for t in TASKS)

    def to_dict(self) -> dict:
        return {
            "tasks": {
                t: {
                    "samples": self.task_counts[t],
                    "correct": self.task_correct[t],
                    "spacing_only": self.task_spacing_only[t],
                    "forgiven": self.forgiven_correct(t),
                }
                for t in TASKS
            },
            "total": {
                "samples": self.total_samples,
                "correct": self.total_correct,
                "forgiven": self.total_forgiven,
            },
            "manifest": self.manifest,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        tasks = d["tasks"]
        return cls(
            task_counts={t: tasks[t]["samples"] for t in tasks},
            task_correct={t: tasks[t]["correct"] for t in tasks},
            task_spacing_only={t: tasks[t].get("spacing_only", 0) for t in tasks},
            manifest=d.get("manifest", {}),
        )


def build_report(verdicts, samples, manifest: dict | None = None) -> RunReport:
    """Aggregate verdicts against their samples into a RunReport."""
    task_by_id = {s.id: s.task for s in samples}
    counts = task_counts(samples)
    correct = {t: 0 for t in TASKS}
    spacing = {t: 0 for t in TASKS}
    for v in verdicts:
        task = task_by_id[v.sample_id]
        if v.correct:
            correct[task] += 1
        elif v.error_category == "spacing-only":
            spacing[task] += 1
    return RunReport(
        task_counts=counts,
        task_correct=correct,
        task_spacing_only=spacing,
        manifest=dict(manifest or {}),
    )


def rescore_spacing(verdicts, samples, manifest: dict | None = None) -> RunReport:
    """Recompute a report from stored verdicts so the spacing-forgiven
    counts (strict correct + spacing-only errors) are available per task
    and in the total."""
    manifest = dict(manifest or {})
    manifest["spacing_rescored"] = True
    return build_report(verdicts, samples, manifest)


def emit_report(report: RunReport, fmt: str = "text-table") -> str:
    """Render a report. json round-trips losslessly; text-table is the
    one-row-per-run layout with forgiven counts in parentheses whenever
    spacing-only errors were recorded."""
    if fmt == "json":
        return json.dumps(report.to_dict(), ensure_ascii=False, indent=2) + "\n"
    if fmt == "csv":
        lines = ["task,samples,correct,spacing_only,forgiven"]
        for t in TASKS:
            lines.append(
                f"{t},{report.task_counts[t]},{report.task_correct[t]},"
                f"{report.task_spacing_only[t]},{report.forgiven_correct(t)}"
            )
        lines.append(
            f"total,{report.total_samples},{report.total_correct},"
            f"{sum(report.task_spacing_only.values())},{report.total_forgiven}"
        )
        return "\n".join(lines) + "\n"
    if fmt != "text-table":
        raise ValueError(f"unknown report format {fmt!r}")

    def cell(correct, forgiven, total):
        shown = f"{correct}({forgiven})" if forgiven != correct else str(correct)
        return f"{shown}/{total}"

    headers = [*TASKS, "total"]
    cells = [
        cell(report.task_correct[t], report.forgiven_correct(t), report.task_counts[t])
        for t in TASKS
    ]
    cells.append(cell(report.total_correct, report.total_forgiven, report.total_samples))
    widths = [max(len(h), len(c)) for h, c in zip(headers, cells)]
    title = ""
    model = report.manifest.get("endpoint", {}).get("model_id") or report.manifest.get("model_id")
    mode = report.manifest.get("mode")
    if model or mode:
        title = f"# {model or 'run'} / {mode or '-'}\n"
    head = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
    row = "  ".join(c.rjust(w) for c, w in zip(cells, widths))
    return f"{title}{head}\n{row}\n"


def read_verdicts_jsonl(path) -> list[Verdict]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(Verdict.from_dict(json.loads(line)))
    return out


# ---------------------------------------------------------------------------
# Run orchestration


@dataclass
class SampleOutcome:
    sample: BenchSample
    prediction: str
    latency_ms: float
    prompt_text: str
    verdict: Verdict
    ocr_text: str = ""
    doc_dict: dict | None = None


def _evaluate_sample(sample: BenchSample, mode: str, client: VlmClient,
                     recognizer, boxes_source, template: PromptTemplate,
                     policy: ScoringPolicy, crop_mode: str) -> SampleOutcome:
    doc = None
    ocr_text = ""
    image = load_image(sample.image_path)
    if mode == "ocr":
        boxes = boxes_source(sample)
        doc = run_ocr(image, boxes, recognizer, image_id=sample.id, crop_mode=crop_mode)
        ocr_text = "\n".join(doc.texts())
    spec = build_prompt(sample.question, mode, doc, template)
    messages = render_messages(spec, {"png_base64": png_base64(image)})

    try:
        record = client.complete(messages)
        prediction, latency_ms = record.text, record.latency_ms
        verdict = score_sample(prediction, sample, policy)
    except ContentRefusedError as e:
        prediction = e.text or "[refused by endpoint]"
        latency_ms = 0.0
        verdict = Verdict(sample_id=sample.id, correct=False,
                          prediction=prediction, error_category="refusal")
    return SampleOutcome(
        sample=sample,
        prediction=prediction,
        latency_ms=latency_ms,
        prompt_text=render_text(spec),
        verdict=verdict,
        ocr_text=ocr_text,
        doc_dict=doc.to_dict() if doc is not None else None,
    )


def run_benchmark(samples, *, mode: str, client: VlmClient,
                  recognizer=None, boxes_source=None,
                  template: PromptTemplate = DEFAULT_TEMPLATE,
                  policy: ScoringPolicy = DEFAULT_POLICY,
                  crop_mode: str = "rectify",
                  run_dir=None, workers: int = 4,
                  extra_manifest: dict | None = None) -> RunReport:
    """Evaluate every sample in the given prompt mode and aggregate.

    OCR mode requires a recognizer backend plus a boxes_source callable
    (sample -> list of TextBox). Outcomes are always persisted and
    aggregated in sample-id order, so worker concurrency never changes any
    output byte. On a backend or endpoint failure the outcomes gathered so
    far are persisted before the error is re-raised with the sample id."""
    mode = mode.lower()
    if mode not in ("base", "ocr"):
        raise ValueError(f"mode must be 'base' or 'ocr', got {mode!r}")
    if mode == "ocr" and (recognizer is None or boxes_source is None):
        raise MissingOcrError(
            "ocr mode needs a recognizer backend and a boxes source; "
            "run in base mode or configure both"
        )

    manifest = {
        "toolkit_version": __version__,
        "mode": mode,
        "endpoint": client.endpoint.to_manifest(),
        "prompt": template.to_dict(),
        "scoring": policy.to_manifest(),
        "crop_mode": crop_mode,
        "order_policy": "reading-order-v1",
        "workers": workers,
        "samples": len(samples),
    }
    manifest.update(extra_manifest or {})

    outcomes: dict[str, SampleOutcome] = {}
    failure: Exception | None = None
    failed_id: str | None = None

    def work(sample):
        return _evaluate_sample(sample, mode, client, recognizer, boxes_source,
                                template, policy, crop_mode)

    if workers <= 1:
        for sample in samples:
            try:
                outcomes[sample.id] = work(sample)
            except (BackendUnavailableError, ExhaustedError) as e:
                failure, failed_id = e, sample.id
                break
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(work, s): s for s in samples}
            for fut in as_completed(futures):
                sample = futures[fut]
                try:
                    outcomes[sample.id] = fut.result()
                except (BackendUnavailableError, ExhaustedError) as e:
                    if failure is None:
                        failure, failed_id = e, sample.id
                    for other in futures:
                        other.cancel()

    ordered = [outcomes[sid] for sid in sorted(outcomes)]
    report = build_report([o.verdict for o in ordered],
                          [o.sample for o in ordered], manifest)
    if run_dir is not None:
        write_run_artifacts(run_dir, ordered, report)
    if failure is not None:
        raise type(failure)(f"sample {failed_id}: {failure}") from failure
    return report


def write_run_artifacts(run_dir, outcomes, report: RunReport) -> None:
    """Persist every per-sample artifact plus the report under run_dir.
    Contents are deterministic for a fixed replay store and config."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    model_id = report.manifest.get("endpoint", {}).get("model_id", "")
    mode = report.manifest.get("mode", "")

    with open(run_dir / "predictions.jsonl", "w", encoding="utf-8") as f:
        for o in outcomes:
            f.write(json.dumps({
                "id": o.sample.id,
                "prediction": o.prediction,
                "mode": mode,
                "model": model_id,
                "ocr_text": o.ocr_text,
                "latency_ms": o.latency_ms,
            }, ensure_ascii=False) + "\n")

    with open(run_dir / "verdicts.jsonl", "w", encoding="utf-8") as f:
        for o in outcomes:
            f.write(json.dumps(o.verdict.to_dict(), ensure_ascii=False) + "\n")

    with open(run_dir / "prompts.jsonl", "w", encoding="utf-8") as f:
        for o in outcomes:
            f.write(json.dumps({"id": o.sample.id, "mode": mode, "text": o.prompt_text},
                               ensure_ascii=False) + "\n")

    docs = [o for o in outcomes if o.doc_dict is not None]
    if docs:
        ocr_dir = run_dir / "ocr"
        ocr_dir.mkdir(exist_ok=True)
        for o in docs:
            with open(ocr_dir / f"{o.sample.id}.json", "w", encoding="utf-8") as f:
                json.dump(o.doc_dict, f, ensure_ascii=False, indent=2)
                f.write("\n")

    with open(run_dir / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(report.manifest, f, ensure_ascii=False, indent=2)
        f.write("\n")
    with open(run_dir / "report.json", "w", encoding="utf-8") as f:
        f.write(emit_report(report, "json"))
    with open(run_dir / "report.txt", "w", encoding="utf-8") as f:
        f.write(emit_report(report, "text-table"))
