"""Zero-shot transfer on a synthetic corpus: train on all verticals but one,
evaluate on the held-out vertical, for several variants and seeds.

    python scripts/zero_shot.py --config configs/synthetic.yaml --seeds 0 1 2
"""

import argparse
import json
import logging

from rexpath.evaluate import VARIANTS
from rexpath.experiments import zero_shot_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/synthetic.yaml")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--variants", nargs="+", default=["full", "no_relxpath"],
                    choices=VARIANTS)
    ap.add_argument("--test-vertical")
    ap.add_argument("--steps", type=int)
    ap.add_argument("--json", help="write per-run reports here")
    a = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    logging.getLogger("rexpath.train").setLevel(logging.WARNING)
    res = zero_shot_study(a.config, a.seeds, a.variants, a.test_vertical, a.steps)
    for v in a.variants:
        print(f"{v:<20} mean F1 {res.mean(v):.4f}  runs {[round(f, 4) for f in res.f1[v]]}")
    if a.json:
        with open(a.json, "w") as fh:
            json.dump({"f1": res.f1, "reports": res.reports, "baseline": res.baseline},
                      fh, indent=2)


if __name__ == "__main__":
    main()
