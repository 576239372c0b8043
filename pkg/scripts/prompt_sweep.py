#!/usr/bin/env python3
"""Prompt-sensitivity sweep on a deterministic mock backend.

Runs the four stock prompts over one forged dataset and prints the
per-prompt plate accuracy table. With a mock the spread is driven purely by
the expected-format hint (prompt2/canonical can salvage two-line replies),
which makes the mechanics easy to eyeball before spending real API calls.
"""

import argparse
from pathlib import Path

from plate_bench.backends import BackendConfig, BackendKind, MockBackend, MockBehavior
from plate_bench.forge import ForgeSpec, forge_dataset
from plate_bench.harness import prompt_sensitivity, sensitivity_table
from plate_bench.prompts import BUILTIN_PROMPTS


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out/prompt_sweep", help="work directory")
    parser.add_argument("--count", type=int, default=200)
    parser.add_argument("--seed", type=int, default=11)
    parser.add_argument("--error-rate", type=float, default=0.05)
    args = parser.parse_args()

    out = Path(args.out)
    data_dir = out / "data"
    manifest = forge_dataset(ForgeSpec(seed=args.seed, count=args.count), data_dir)
    print(f"forged {len(manifest)} plates into {data_dir}")

    backend = MockBackend(
        BackendConfig(id="mock", kind=BackendKind.MOCK),
        MockBehavior(char_error_rate=args.error_rate, seed=args.seed),
        manifest,
        data_dir,
    )
    prompts = [BUILTIN_PROMPTS[p] for p in ("prompt1", "prompt2", "prompt3", "prompt4")]
    reports = prompt_sensitivity(
        str(data_dir / "manifest.jsonl"), backend, prompts, out / "run.jsonl"
    )
    table = sensitivity_table(reports)
    print(table)
    (out / "sensitivity.txt").write_text(table, encoding="utf-8")
    print(f"wrote {out}/sensitivity.txt")


if __name__ == "__main__":
    main()
