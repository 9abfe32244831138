"""Capacity check: fit a two-vertical synthetic corpus and report training F1.

    python scripts/overfit.py --config configs/desk.yaml
"""

import argparse
import logging

from rexpath.config import load_run_config
from rexpath.experiments import overfit_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/desk.yaml")
    ap.add_argument("--websites", type=int, default=2)
    ap.add_argument("--pages", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--target", type=float, default=0.95)
    a = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    f1, steps, secs = overfit_study(load_run_config(a.config), n_websites=a.websites,
                                    pages_per_website=a.pages, seed=a.seed,
                                    target_f1=a.target)
    print(f"training-set F1 {f1:.4f} after {steps} steps in {secs:.0f}s")


if __name__ == "__main__":
    main()
