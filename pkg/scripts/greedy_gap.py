"""How often greedy per-head decoding finds the joint mode, by plan and table peakedness.

    python3 scripts/greedy_gap.py --trials 1000
"""
import argparse

import numpy as np

from edd.graph import MODEL_TAGS, ConditionalTables, cardinalities_for, compare_decoders, plan_for

SETTINGS = [
    ("dirichlet(1)", {"concentration": 1.0}),
    ("dirichlet(0.3)", {"concentration": 0.3}),
    ("logit sd 1", {"scale": 1.0}),
    ("logit sd 4", {"scale": 4.0}),
]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--sizes", default="3,3", help="attribute cardinalities")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    print(f"{'tables':16s}" + "".join(f"{t:>8s}" for t in MODEL_TAGS))
    for label, kw in SETTINGS:
        cells = []
        for tag in MODEL_TAGS:
            plan = plan_for(tag, len(sizes))
            cards = cardinalities_for(plan, args.classes, sizes)
            rng = np.random.default_rng(args.seed)
            hits = sum(compare_decoders(plan, ConditionalTables(plan, cards, rng, **kw), cards)["match"]
                       for _ in range(args.trials))
            cells.append(f"{hits / args.trials:8.3f}")
        print(f"{label:16s}" + "".join(cells))


if __name__ == "__main__":
    main()
