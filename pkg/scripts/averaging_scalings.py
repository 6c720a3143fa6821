"""Increment, fast-auxiliary and averaging-error scalings on the linear catalog model.

Defaults reproduce the full-scale runs (10^4 paths, about 5 minutes on one core).
"""

import argparse
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mfw import catalog
from mfw.averaging import LinearOracle
from mfw.ldp import validate_averaging, validate_fast_auxiliary, validate_increments
from mfw.paths import ScaleParams


@dataclass
class ScalingConfig:
    n_paths: int = 10_000
    T: float = 1.0
    increments_scales: tuple = (0.5, 0.01)
    zetas: tuple = (0.2, 0.1, 0.05, 0.025)
    cells: tuple = ((0.1, 0.01, 0.1), (0.1, 0.005, 0.05))
    epsilons: tuple = (0.4, 0.2, 0.1, 0.05)
    out: str = "out/scalings"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--paths", type=int, default=ScalingConfig.n_paths)
    ap.add_argument("--out", default=ScalingConfig.out)
    args = ap.parse_args()
    cfg = ScalingConfig(n_paths=args.paths, out=args.out)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    m = catalog.linear()
    x0 = np.sin(np.pi * m.slow_grid.nodes)

    t = time.perf_counter()
    inc = validate_increments(m, ScaleParams(*cfg.increments_scales), cfg.zetas, cfg.n_paths, cfg.T,
                              control=np.ones(3), x0=x0, seed=1)
    inc.to_csv(out / "increments.csv")
    fit = inc.slope()
    print(f"increments: slope {fit.slope:.3f} +- {fit.stderr:.3f}  ({time.perf_counter() - t:.0f}s)")

    t = time.perf_counter()
    aux = validate_fast_auxiliary(m, cfg.cells, cfg.n_paths, cfg.T, control=np.ones(5), x0=x0, seed=2)
    aux.to_csv(out / "fast_aux.csv")
    print(f"fast auxiliary: halving factor {aux.ratios()[0]:.3f}  ({time.perf_counter() - t:.0f}s)")

    t = time.perf_counter()
    avg = validate_averaging(m, LinearOracle(m), cfg.epsilons, cfg.n_paths, T=cfg.T, control=np.ones(3), x0=x0,
                             seed=3)
    avg.to_csv(out / "averaging.csv")
    print(f"averaging: {np.array2string(avg.estimates, precision=5)} decreasing={avg.decreasing(2.0)} "
          f"slope {avg.slope().slope:.3f}  ({time.perf_counter() - t:.0f}s)")


if __name__ == "__main__":
    main()
