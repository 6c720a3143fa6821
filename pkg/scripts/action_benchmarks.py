"""Minimum action by penalty continuation against the controllability-Gramian closed form."""

import argparse
from dataclasses import dataclass

import numpy as np

from mfw import catalog
from mfw.action import ActionProblem, TerminalHit, linear_minimum_action, linear_system, penalty_continuation
from mfw.averaging import LinearOracle
from mfw.paths import TimeGrid


@dataclass
class ActionConfig:
    T: float = 1.0
    n_steps: int = 4000
    weights: tuple = (1e2, 1e4, 1e6)


def solve(model, backend, x0, target, cfg):
    grid = TimeGrid(cfg.T, cfg.T / cfg.n_steps)
    runs = penalty_continuation(ActionProblem(x0, grid, TerminalHit(target, 1.0)), model, backend, cfg.weights)
    G, B, b = linear_system(model, backend)
    return runs, linear_minimum_action(G, B, b, np.asarray(x0, float), np.asarray(target, float), cfg.T)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=ActionConfig.n_steps)
    cfg = ActionConfig(n_steps=ap.parse_args().steps)
    sc = catalog.scalar()
    d = catalog.diagonal()
    g = d.slow_grid
    cases = {
        "scalar": (sc, LinearOracle(sc), [0.3], [1.5]),
        "diagonal": (d, None, g.from_modes([0.5, -0.2, 0.1, 0.0]).values, g.from_modes([1.0, 0.5, -0.3, 0.2]).values),
    }
    for name, (m, be, x0, target) in cases.items():
        runs, exact = solve(m, be, x0, target, cfg)
        for w, r in zip(cfg.weights, runs):
            print(f"{name:9s} w={w:8.0e} I={r.action_value:.6f} gap={r.terminal_gap:.2e} iters={r.iterations:3d} "
                  f"{r.status}")
        print(f"{name:9s} closed form {exact:.6f}, relative error {abs(runs[-1].action_value / exact - 1):.2e}")


if __name__ == "__main__":
    main()
