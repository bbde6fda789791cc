"""The ocrforge command: reproducible entry points over the library.

Subcommands: prep, detect, ocr, eval-ocr, eval-vqa, rescore, report.
Exit codes: 0 success, 1 validation/usage error, 2 environment or
endpoint error. Settings come from a TOML config file plus flag
overrides (flags win); the effective config is echoed into every run
manifest."""

from __future__ import annotations

import argparse
import json
import os
import shlex
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__, benchmark as bench, dataprep
from .detect import DetectParams, MalformedQuadError, dump_boxes_jsonl, extract_boxes, load_boxes_jsonl
from .images import MissingImageError, load_image
from .metrics import corpus_cer, get_profile, word_accuracy
from .pipeline import BackendProtocolError, BackendUnavailableError, run_ocr
from .prompting import MissingOcrError, PromptTemplate
from .vlm import (
    DEFAULT_API_KEY_ENV,
    AuthFailureError,
    ExhaustedError,
    HttpTransport,
    ModelEndpoint,
    RecordingTransport,
    ReplayMissError,
    ReplayTransport,
    VlmClient,
)
from .wire import WireBackend


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


CONFIG_DEFAULTS = {
    # paths
    "benchmark": None,
    "images_root": None,
    "run_dir": None,
    "replay": None,
    "boxes": None,
    "maps_dir": None,
    # endpoint
    "base_url": "http://127.0.0.1:8000/v1",
    "model_id": "local-model",
    "api_key_env": DEFAULT_API_KEY_ENV,
    "timeout": 60.0,
    "max_retries": 2,
    "thinking": "off",
    "temperature": 0.0,
    # prompt templates
    "ocr_block_label": "Reference OCR tokens:",
    "answer_instruction": "Answer the question using a single word or phrase.",
    "line_separator": "\n",
    # scoring
    "profile": "exact-nfc",
    "match_rule": "strict",
    # detection
    "bin_thresh": 0.3,
    "box_thresh": 0.6,
    "unclip_ratio": 1.5,
    "min_side": 3.0,
    # pipeline
    "crop_mode": "rectify",
    "workers": 4,
    "backend_cmd": None,
    "backend_host": None,
    "backend_port": None,
}

_PATH_KEYS = ("benchmark", "images_root", "run_dir", "replay", "boxes", "maps_dir")


def load_config(path) -> dict:
    cfg = dict(CONFIG_DEFAULTS)
    path = Path(path)
    with open(path, "rb") as f:
        data = tomllib.load(f)
    unknown = sorted(set(data) - set(CONFIG_DEFAULTS))
    if unknown:
        raise UsageError(f"unknown config keys in {path}: {', '.join(unknown)}")
    cfg.update(data)
    for key in _PATH_KEYS:
        if cfg[key]:
            cfg[key] = str((path.parent / cfg[key]).resolve())
    return cfg


def _endpoint_from(cfg: dict) -> ModelEndpoint:
    return ModelEndpoint(
        base_url=cfg["base_url"],
        model_id=cfg["model_id"],
        api_key_env=cfg["api_key_env"],
        timeout=float(cfg["timeout"]),
        max_retries=int(cfg["max_retries"]),
        thinking=cfg["thinking"],
        temperature=float(cfg["temperature"]),
    )


def _template_from(cfg: dict) -> PromptTemplate:
    return PromptTemplate(
        ocr_block_label=cfg["ocr_block_label"],
        answer_instruction=cfg["answer_instruction"],
        line_separator=cfg["line_separator"],
    )


def _policy_from(cfg: dict) -> bench.ScoringPolicy:
    return bench.ScoringPolicy(profile=get_profile(cfg["profile"]), rule=cfg["match_rule"])


def _detect_params_from(cfg: dict) -> DetectParams:
    return DetectParams(
        bin_thresh=float(cfg["bin_thresh"]),
        box_thresh=float(cfg["box_thresh"]),
        unclip_ratio=float(cfg["unclip_ratio"]),
        min_side=float(cfg["min_side"]),
    )


def _backend_from(cfg: dict) -> WireBackend:
    if cfg["backend_cmd"]:
        return WireBackend(cmd=shlex.split(cfg["backend_cmd"]))
    if cfg["backend_host"] and cfg["backend_port"]:
        return WireBackend(host=cfg["backend_host"], port=int(cfg["backend_port"]))
    raise MissingOcrError(
        "ocr mode needs a recognizer backend: set backend_cmd or "
        "backend_host/backend_port in the config"
    )


def _boxes_source_from(cfg: dict):
    if cfg["boxes"]:
        table: dict[str, list] = {}
        for image, boxes in load_boxes_jsonl(cfg["boxes"]):
            table[image] = boxes
            table[os.path.basename(image)] = boxes

        def from_jsonl(sample):
            for key in (sample.image_path, os.path.basename(sample.image_path)):
                if key in table:
                    return table[key]
            raise UsageError(f"no boxes found for sample {sample.id} ({sample.image_path})")

        return from_jsonl
    if cfg["maps_dir"]:
        params = _detect_params_from(cfg)
        maps_dir = Path(cfg["maps_dir"])

        def from_maps(sample):
            map_path = maps_dir / (Path(sample.image_path).name + ".npy")
            if not map_path.is_file():
                raise UsageError(f"no probability map for sample {sample.id}: {map_path}")
            return extract_boxes(np.load(map_path), params)

        return from_maps
    raise MissingOcrError(
        "ocr mode needs a box source: set boxes (a boxes JSONL) or maps_dir "
        "(probability maps named <image-filename>.npy) in the config"
    )


# ---------------------------------------------------------------------------
# subcommands


def _write_sidecar_manifest(path, command: str, settings: dict) -> None:
    # every file-producing command records its effective settings
    payload = {
        "command": command,
        "toolkit_version": __version__,
        "settings": {k: v for k, v in settings.items() if k != "func"},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")


def _cmd_prep(args) -> int:
    annotations = dataprep.load_annotations(args.annotations)
    manifest = dataprep.crop_dataset(annotations, args.out, crop_mode=args.crop_mode)
    print(
        f"wrote {len(manifest.entries)} pairs to {args.out} "
        f"(skipped {manifest.skipped_empty} empty labels, "
        f"{manifest.skipped_degenerate} degenerate boxes)"
    )
    if args.split:
        train, test = dataprep.split_manifest(
            manifest, test_fraction=args.test_fraction, seed=args.seed,
            group_by=args.group_by,
        )
        out = Path(args.out)
        train.save(out / "train.jsonl")
        test.save(out / "test.jsonl")
        print(f"split: {len(train.entries)} train / {len(test.entries)} test "
              f"(seed {args.seed}, fraction {args.test_fraction}, by {args.group_by})")
    _write_sidecar_manifest(Path(args.out) / "prep_manifest.json", "prep", vars(args))
    return 0


def _cmd_detect(args) -> int:
    cfg = load_config(args.config) if args.config else dict(CONFIG_DEFAULTS)
    for key in ("bin_thresh", "box_thresh", "unclip_ratio", "min_side"):
        flag = getattr(args, key)
        if flag is not None:
            cfg[key] = flag
    params = _detect_params_from(cfg)

    entries = []
    if args.maps:
        maps = Path(args.maps)
        paths = sorted(maps.glob("*.npy")) if maps.is_dir() else [maps]
        if not paths:
            raise UsageError(f"no .npy probability maps under {args.maps}")
        for p in paths:
            image_name = p.name[: -len(".npy")] if p.name.endswith(".npy") else p.stem
            entries.append((image_name, extract_boxes(np.load(p), params)))
    elif args.boxes:
        entries = load_boxes_jsonl(args.boxes)  # validate and normalize
    else:
        raise UsageError("detect needs --maps or --boxes")
    dump_boxes_jsonl(args.out, entries)
    total = sum(len(b) for _, b in entries)
    print(f"wrote {total} boxes for {len(entries)} images to {args.out}")
    settings = dict(vars(args))
    settings.update({k: cfg[k] for k in ("bin_thresh", "box_thresh", "unclip_ratio", "min_side")})
    _write_sidecar_manifest(str(args.out) + ".manifest.json", "detect", settings)
    return 0


def _cmd_ocr(args) -> int:
    entries = load_boxes_jsonl(args.boxes)
    backend = WireBackend(cmd=shlex.split(args.backend_cmd)) if args.backend_cmd else (
        WireBackend(host=args.backend_host, port=args.backend_port)
        if args.backend_host else None
    )
    if backend is None:
        raise UsageError("ocr needs --backend-cmd or --backend-host/--backend-port")
    root = Path(args.images_root) if args.images_root else Path(".")
    with backend:
        with open(args.out, "w", encoding="utf-8") as f:
            for image_name, boxes in entries:
                image = load_image(root / image_name)
                doc = run_ocr(image, boxes, backend, image_id=image_name,
                              crop_mode=args.crop_mode)
                f.write(json.dumps(doc.to_dict(), ensure_ascii=False) + "\n")
    print(f"wrote OCR documents for {len(entries)} images to {args.out}")
    _write_sidecar_manifest(str(args.out) + ".manifest.json", "ocr", vars(args))
    return 0


def _read_text_jsonl(path) -> dict[str, str]:
    table = {}
    with open(path, encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "id" not in rec:
                raise UsageError(f"{path}: line {ln}: missing id")
            text = rec.get("text", rec.get("prediction"))
            if text is None:
                raise UsageError(f"{path}: line {ln}: missing text/prediction")
            table[str(rec["id"])] = str(text)
    return table


def _cmd_eval_ocr(args) -> int:
    preds = _read_text_jsonl(args.pred)
    refs = _read_text_jsonl(args.ref)
    missing = sorted(set(refs) - set(preds))
    if missing:
        raise UsageError(f"predictions missing for ids: {', '.join(missing[:10])}")
    profile = get_profile(args.profile)
    pairs = [(preds[i], refs[i]) for i in sorted(refs)]
    cer_value = corpus_cer(pairs, profile, average="macro" if args.macro else "micro")
    acc = word_accuracy(pairs, profile)
    kind = "macro" if args.macro else "micro"
    print(f"pairs          {len(pairs)}")
    print(f"profile        {profile.name}")
    print(f"corpus CER     {cer_value:.4f} ({cer_value * 100:.2f}%, {kind})")
    print(f"word accuracy  {acc:.4f} ({acc * 100:.2f}%)")
    return 0


def _cmd_eval_vqa(args) -> int:
    cfg = load_config(args.config)
    if args.run_dir:
        cfg["run_dir"] = args.run_dir
    if args.replay:
        cfg["replay"] = args.replay
    if args.model:
        cfg["model_id"] = args.model
    if args.base_url:
        cfg["base_url"] = args.base_url
    if args.thinking:
        cfg["thinking"] = args.thinking
    if args.workers is not None:
        cfg["workers"] = args.workers
    if args.record and (args.replay or cfg["replay"]):
        raise UsageError("--record cannot be combined with a replay store")
    if not cfg["benchmark"]:
        raise UsageError("config must set benchmark (path to the dataset JSONL)")

    samples = bench.load_benchmark(cfg["benchmark"], images_root=cfg["images_root"])
    endpoint = _endpoint_from(cfg)

    if cfg["replay"]:
        transport = ReplayTransport.from_path(cfg["replay"])
    elif args.record:
        transport = RecordingTransport(HttpTransport(endpoint), args.record)
    else:
        transport = HttpTransport(endpoint)
    client = VlmClient(endpoint, transport=transport)

    mode = args.mode.lower()
    recognizer = None
    boxes_source = None
    if mode == "ocr":
        recognizer = _backend_from(cfg)
        boxes_source = _boxes_source_from(cfg)

    run_dir = cfg["run_dir"]
    if not run_dir:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run_dir = str(Path("runs") / f"{stamp}-{cfg['model_id']}-{mode}")

    try:
        report = bench.run_benchmark(
            samples,
            mode=mode,
            client=client,
            recognizer=recognizer,
            boxes_source=boxes_source,
            template=_template_from(cfg),
            policy=_policy_from(cfg),
            crop_mode=cfg["crop_mode"],
            run_dir=run_dir,
            workers=int(cfg["workers"]),
            extra_manifest={"config": cfg},
        )
    finally:
        if recognizer is not None:
            recognizer.close()
    print(bench.emit_report(report, "text-table"), end="")
    print(f"run directory: {run_dir}")
    return 0


def _cmd_rescore(args) -> int:
    verdicts = bench.read_verdicts_jsonl(args.verdicts)
    samples = bench.load_benchmark(args.benchmark, images_root=args.images_root,
                                   check_images=False)
    report = bench.rescore_spacing(verdicts, samples)
    rendered = bench.emit_report(report, args.format)
    if args.out:
        Path(args.out).write_text(rendered, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(rendered, end="")
    return 0


def _cmd_report(args) -> int:
    with open(args.report, encoding="utf-8") as f:
        report = bench.RunReport.from_dict(json.load(f))
    print(bench.emit_report(report, args.format), end="")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="ocrforge", description=__doc__)
    parser.add_argument("--version", action="version", version=f"ocrforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prep", help="crop annotated pages into (image, text) pairs")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--crop-mode", choices=["rectify", "bbox"], default="rectify")
    p.add_argument("--split", action="store_true")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=13)
    p.add_argument("--group-by", choices=["source", "crop"], default="source")
    p.set_defaults(func=_cmd_prep)

    p = sub.add_parser("detect", help="probability maps or raw boxes -> boxes JSONL")
    p.add_argument("--maps", help=".npy map file or directory (named <image-filename>.npy)")
    p.add_argument("--boxes", help="external boxes JSONL to validate and normalize")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--bin-thresh", type=float, dest="bin_thresh")
    p.add_argument("--box-thresh", type=float, dest="box_thresh")
    p.add_argument("--unclip-ratio", type=float, dest="unclip_ratio")
    p.add_argument("--min-side", type=float, dest="min_side")
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("ocr", help="images + boxes -> OCR documents JSONL")
    p.add_argument("--boxes", required=True)
    p.add_argument("--images-root")
    p.add_argument("--backend-cmd", help="recognizer command speaking the wire protocol on stdio")
    p.add_argument("--backend-host")
    p.add_argument("--backend-port", type=int)
    p.add_argument("--crop-mode", choices=["rectify", "bbox"], default="rectify")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ocr)

    p = sub.add_parser("eval-ocr", help="predictions vs references -> CER / word accuracy")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--profile", default="exact-nfc")
    p.add_argument("--macro", action="store_true", help="macro-average the CER")
    p.set_defaults(func=_cmd_eval_ocr)

    p = sub.add_parser("eval-vqa", help="run the benchmark and write a scored run directory")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", required=True, choices=["base", "ocr"])
    p.add_argument("--replay", help="replay store JSONL for offline deterministic runs")
    p.add_argument("--record", help="record live responses into this replay store")
    p.add_argument("--run-dir")
    p.add_argument("--model")
    p.add_argument("--base-url")
    p.add_argument("--thinking", choices=["off", "on"])
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_cmd_eval_vqa)

    p = sub.add_parser("rescore", help="stored verdicts -> spacing-forgiven report")
    p.add_argument("--verdicts", required=True)
    p.add_argument("--benchmark", required=True)
    p.add_argument("--images-root")
    p.add_argument("--format", choices=["text-table", "json", "csv"], default="text-table")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_rescore)

    p = sub.add_parser("report", help="render a stored report.json")
    p.add_argument("--report", required=True)
    p.add_argument("--format", choices=["text-table", "json", "csv"], default="text-table")
    p.set_defaults(func=_cmd_report)

    return parser


_VALIDATION_ERRORS = (
    UsageError,
    MissingOcrError,
    MalformedQuadError,
    bench.SchemaError,
    bench.DuplicateIdError,
    dataprep.TooFewGroupsError,
    MissingImageError,
    FileNotFoundError,
    ValueError,
)
_ENVIRONMENT_ERRORS = (
    BackendUnavailableError,
    BackendProtocolError,
    ExhaustedError,
    AuthFailureError,
    ReplayMissError,
)


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _ENVIRONMENT_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except _VALIDATION_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    raise SystemExit(dispatch())


if __name__ == "__main__":
    main()
