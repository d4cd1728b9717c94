"""Train and evaluate all six models at desk scale and print the report.

    python3 scripts/run_desk_experiment.py --out runs/desk --seed 0
"""
import argparse
import json
import logging
import time
from dataclasses import replace
from pathlib import Path

from edd.harness import ExperimentConfig, check_report, format_text, run_experiment


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/desk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=None, help="override the 30-epoch default")
    p.add_argument("-q", "--quiet", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(asctime)s %(message)s")

    cfg = ExperimentConfig(out_dir=args.out, seed=args.seed)
    if args.epochs is not None:
        cfg = replace(cfg, arch=replace(cfg.arch, epochs=args.epochs))
    t0 = time.perf_counter()
    report = run_experiment(cfg)
    print(format_text(report), end="")
    for problem in check_report(report):
        print("warning:", problem)
    timings = json.loads((Path(args.out) / "timings.json").read_text())
    print("training seconds:", ", ".join(f"{k} {v:.0f}" for k, v in timings.items()))
    print(f"total {time.perf_counter() - t0:.0f} s; artifacts in {args.out}")


if __name__ == "__main__":
    main()
