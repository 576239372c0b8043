"""plate-bench command line.

Subcommands: forge, report, bench, prompts, backends, pipeline, adjudicate.
Exit code is nonzero only on validation errors; per-record backend failures
are recorded in the run file and do not fail the process.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .backends import BackendError, VisionQuery, build_backend, load_backend_configs
from .forge import ForgeSpec, forge_dataset
from .harness import (
    compare_backends,
    load_plan,
    reports_by_backend,
    run_experiment,
)
from .backends import ResponseCache
from .labels import PlateFormat
from .manifest import load_manifest
from .metrics import accuracy_table, heatmap_csv, heatmap_table, summary_dict
from .prompts import BUILTIN_PROMPTS

# 1x1 black PNG used by the connectivity probe
_PROBE_PNG = bytes.fromhex(
    "89504e470d0a1a0a0000000d4948445200000001000000010800000000"
    "3a7e9b550000000a49444154789c63600000000200015d7d5ba80000000049454e44ae426082"
)


def _cmd_forge(args: argparse.Namespace) -> int:
    spec = ForgeSpec(
        format=PlateFormat(letters=args.letters, digits=args.digits),
        seed=args.seed,
        count=args.count,
        two_line_prob=args.two_line_prob,
        blur_radius_px=args.blur,
        gaussian_sigma=args.sigma,
        salt_pepper_density=args.sp,
    )
    manifest = forge_dataset(spec, args.out, workers=args.workers)
    print(f"forged {len(manifest)} plates into {args.out}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    try:
        rows = compare_backends(args.runs)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = accuracy_table(rows)
    (out_dir / "accuracy.txt").write_text(table, encoding="utf-8")
    (out_dir / "heatmap.csv").write_text(heatmap_csv(heatmap_table(rows)), encoding="utf-8")
    (out_dir / "summary.json").write_text(
        json.dumps(summary_dict(rows), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(table, end="")
    print(f"wrote {out_dir}/accuracy.txt, heatmap.csv, summary.json")
    return 0


def _build_backends(config_path: str, needed: set[str]) -> dict:
    configs = load_backend_configs(config_path)
    base = Path(config_path).parent
    return {bid: build_backend(cfg, base) for bid, cfg in configs.items() if bid in needed}


def _cmd_bench(args: argparse.Namespace) -> int:
    try:
        plan = load_plan(args.plan)
        backends = _build_backends(args.backends, set(plan.backends))
        cache = ResponseCache(args.cache) if args.cache else None
        records = run_experiment(plan, backends, BUILTIN_PROMPTS, args.run_file, cache)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    errors = sum(1 for r in records if r.error)
    print(f"{len(records)} records in {args.run_file} ({errors} backend errors)")
    rows = reports_by_backend(records)
    print(accuracy_table(rows), end="")
    return 0


def _cmd_prompts(args: argparse.Namespace) -> int:
    if args.action == "list":
        for prompt in BUILTIN_PROMPTS.values():
            fmt = ""
            if prompt.expected_format:
                fmt = f"  [expects {prompt.expected_format.letters}L+{prompt.expected_format.digits}D]"
            print(f"{prompt.id:<10} {prompt.text}{fmt}")
    return 0


def _cmd_backends(args: argparse.Namespace) -> int:
    if args.action != "check":
        return 2
    configs = load_backend_configs(args.backends)
    base = Path(args.backends).parent
    failures = 0
    for bid, config in configs.items():
        try:
            backend = build_backend(config, base)
            reply = backend.query(VisionQuery(image=_PROBE_PNG, prompt="describe this image"))
            print(f"{bid}: ok ({reply.latency_ms} ms)")
        except BackendError as exc:
            print(f"{bid}: FAILED ({exc.kind}): {exc}")
            failures += 1
        except (ValueError, OSError) as exc:
            print(f"{bid}: FAILED (config): {exc}")
            failures += 1
    return 0 if failures == 0 else 1


def _cmd_pipeline(args: argparse.Namespace) -> int:
    from .image import load_png
    from .pipeline import AttributeFilter, eval_multicar, run_pipeline

    try:
        manifest = load_manifest(args.manifest)
        backends = _build_backends(args.backends, {args.detect_backend, args.recognize_backend})
        detect = backends[args.detect_backend]
        recognize = backends[args.recognize_backend]
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    filt = None
    if args.color or args.model:
        filt = AttributeFilter(color=args.color, model=args.model)
    base = Path(args.manifest).parent
    results = []
    seen: set[str] = set()
    for rec in manifest.records:
        if rec.path in seen:
            continue  # multi-plate images share a path; run each image once
        seen.add(rec.path)
        img = load_png(base / rec.path)
        result = run_pipeline(detect, recognize, img, image_id=rec.path, filt=filt)
        results.append(result)
        with open(args.run_file, "a", encoding="utf-8") as fh:
            fh.write(
                json.dumps(
                    {
                        "image_id": result.image_id,
                        "plates": [lbl.chars for lbl in result.plate_labels],
                        "cars": len(result.per_car),
                        "diagnostics": list(result.diagnostics),
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    if all(rec.label is not None for rec in manifest.records):
        report = eval_multicar(results, manifest)
        print(
            f"images {report.images_all_correct}/{report.images_total} all-correct "
            f"({report.image_accuracy_pct:.2f}%), plates {report.plates_correct}/"
            f"{report.plates_total} ({report.plate_accuracy_pct:.2f}%)"
        )
    return 0


def _cmd_adjudicate(args: argparse.Namespace) -> int:
    import uvicorn

    from .adjudicate import AdjudicationStore
    from .service import create_app

    manifest = load_manifest(args.manifest)
    images_dir = Path(args.manifest).parent
    log_path = args.log or str(images_dir / "adjudication_log.jsonl")
    store = AdjudicationStore(manifest, log_path)
    app = create_app(store, images_dir, frontend_dir=args.frontend)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="plate-bench", description=__doc__)
    parser.add_argument("--version", action="version", version=f"plate-bench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forge", help="generate a synthetic degraded plate dataset")
    p.add_argument("--count", type=int, default=600)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--letters", type=int, default=3)
    p.add_argument("--digits", type=int, default=4)
    p.add_argument("--blur", type=float, default=1.0, help="box blur radius, px")
    p.add_argument("--sigma", type=float, default=12.0, help="gaussian noise sigma")
    p.add_argument("--sp", type=float, default=0.02, help="salt-and-pepper density")
    p.add_argument("--two-line-prob", type=float, default=0.5)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_forge)

    p = sub.add_parser("report", help="combine run files into accuracy tables")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", default="report")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("bench", help="run an experiment plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--backends", required=True, help="backend config file")
    p.add_argument("--run-file", required=True)
    p.add_argument("--cache", default=None, help="response cache directory")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("prompts", help="prompt spec utilities")
    p.add_argument("action", choices=["list"])
    p.set_defaults(func=_cmd_prompts)

    p = sub.add_parser("backends", help="backend utilities")
    p.add_argument("action", choices=["check"])
    p.add_argument("--backends", required=True, help="backend config file")
    p.set_defaults(func=_cmd_backends)

    p = sub.add_parser("pipeline", help="multi-stage detect/filter/recognize run")
    p.add_argument("--manifest", required=True)
    p.add_argument("--detect-backend", required=True)
    p.add_argument("--recognize-backend", required=True)
    p.add_argument("--backends", required=True, help="backend config file")
    p.add_argument("--run-file", required=True)
    p.add_argument("--color", default=None)
    p.add_argument("--model", default=None)
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("adjudicate", help="label adjudication service")
    p.add_argument("action", choices=["serve"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--port", type=int, default=8800)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--log", default=None, help="event log path")
    p.add_argument("--frontend", default=None, help="built annotator UI directory")
    p.set_defaults(func=_cmd_adjudicate)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
