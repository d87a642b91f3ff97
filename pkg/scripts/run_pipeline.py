#!/usr/bin/env python3
"""End-to-end demo: pretrain, train the weight predictor, render reports.

Writes a complete run directory (curve.csv, report.txt, report.json,
record.json, checkpoint.pbld) and prints the control-vs-prompted summary
plus the hardest eval example with its top contributing prompts.
"""

import argparse
import json
from pathlib import Path

from promptblend.cli import run_cli


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/demo")
    ap.add_argument("--fixture-size", type=int, default=300)
    ap.add_argument("--pretrain-epochs", type=int, default=6)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--batch-size", type=int, default=10)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    code = run_cli([
        "train",
        "--data", "fixture",
        "--fixture-size", str(args.fixture_size),
        "--pretrain-epochs", str(args.pretrain_epochs),
        "--epochs", str(args.epochs),
        "--batch-size", str(args.batch_size),
        "--lr", str(args.lr),
        "--seed", str(args.seed),
        "--out", args.out,
    ])
    if code != 0:
        raise SystemExit(code)

    payload = json.loads((Path(args.out) / "report.json").read_text())
    summary = payload["summary"]
    print()
    print(f"relative reduction vs control: "
          f"{summary['relative_reduction'] * 100:.2f}%")
    hardest = payload["examples"][0]
    print(f"hardest eval example (loss {hardest['loss']:.2f}): {hardest['question']}")
    for i, c in enumerate(hardest["contributors"], start=1):
        print(f"  {i}. ({c['rendered']}) {c['prompt']}")


if __name__ == "__main__":
    main()
