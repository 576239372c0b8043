#!/usr/bin/env python3
"""Offline benchmark demo: forge a plate set, score mock backends against it.

Exercises the whole loop without any remote model: a clean mock, a noisy
mock, and a mock with a systematic P-read-as-R confusion, compared in one
accuracy table plus a per-class heatmap CSV.
"""

import argparse
import json
from pathlib import Path

from plate_bench.backends import BackendConfig, BackendKind, MockBackend, MockBehavior
from plate_bench.forge import ForgeSpec, forge_dataset
from plate_bench.harness import ExperimentPlan, reports_by_backend, run_experiment
from plate_bench.metrics import accuracy_table, heatmap_csv, heatmap_table, summary_dict
from plate_bench.prompts import BUILTIN_PROMPTS


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out/mock_benchmark", help="work directory")
    parser.add_argument("--count", type=int, default=300)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    out = Path(args.out)
    data_dir = out / "data"
    manifest = forge_dataset(ForgeSpec(seed=args.seed, count=args.count), data_dir)
    print(f"forged {len(manifest)} plates into {data_dir}")

    behaviors = {
        "mock-clean": MockBehavior(seed=args.seed),
        "mock-noisy": MockBehavior(char_error_rate=0.08, seed=args.seed),
        "mock-p-confuser": MockBehavior(
            char_error_rate=0.03, seed=args.seed, confusion_bias=(("P", "R", 0.7),)
        ),
    }
    backends = {
        backend_id: MockBackend(
            BackendConfig(id=backend_id, kind=BackendKind.MOCK), behavior, manifest, data_dir
        )
        for backend_id, behavior in behaviors.items()
    }

    plan = ExperimentPlan(
        manifest=str(data_dir / "manifest.jsonl"),
        prompts=("canonical",),
        backends=tuple(backends),
    )
    records = run_experiment(plan, backends, BUILTIN_PROMPTS, out / "run.jsonl")
    rows = reports_by_backend(records)

    table = accuracy_table(rows)
    print(table)
    (out / "accuracy.txt").write_text(table, encoding="utf-8")
    (out / "heatmap.csv").write_text(heatmap_csv(heatmap_table(rows)), encoding="utf-8")
    (out / "summary.json").write_text(
        json.dumps(summary_dict(rows), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"wrote {out}/accuracy.txt, heatmap.csv, summary.json")
    p_row = heatmap_table(rows)["mock-p-confuser"]
    print(f"confusion check: class P {p_row['P']:.1f}% vs class Q {p_row['Q']:.1f}%")


if __name__ == "__main__":
    main()
