"""Run every hypothesis check on the catalog models and print one verdict line per check."""

import argparse
import json
from dataclasses import dataclass

from mfw import catalog
from mfw.hypotheses import reports_to_json, run_all


@dataclass
class CheckConfig:
    n_samples: int = 300
    seed: int = 0
    models: tuple = ("porous_medium", "cahn_hilliard", "linear", "scalar", "diagonal", "broken")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=CheckConfig.n_samples)
    ap.add_argument("--json", help="write all reports to this file")
    args = ap.parse_args()
    cfg = CheckConfig(n_samples=args.samples)
    everything = {}
    for name in cfg.models:
        model = catalog.broken() if name == "broken" else catalog.CATALOG[name]()
        reports = run_all(model, n_samples=cfg.n_samples, seed=cfg.seed)
        everything[name] = json.loads(reports_to_json(reports, gap=model.dissipativity_gap()))
        for r in reports:
            print(f"{name:14s} {r.condition_id:6s} {r.verdict:4s} margin={r.worst_margin: .3e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(everything, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
