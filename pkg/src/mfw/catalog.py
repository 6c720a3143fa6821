"""Named models used by the shipped configs, tests and scripts."""

import numpy as np

from .models import (Affine, BoundedLip, CahnHilliard, FastOperatorSpec, LinearClipped, LinearDiagnostic, ModelSpec,
                     NoiseSpec, PorousMedium)

__all__ = ["porous_medium", "cahn_hilliard", "linear", "scalar", "diagonal", "broken", "CATALOG"]

SLOW_NOISE = NoiseSpec((1.0, 0.5, 0.25), LinearClipped(0.5, 2.0))


def porous_medium(n_interior=8):
    return ModelSpec(slow=PorousMedium(3.0), fast=FastOperatorSpec(c1=1.0, g=Affine(x_gain=1.0)),
                     coupling=Affine(x_gain=0.5, F=1.0), noise_slow=SLOW_NOISE, noise_fast=NoiseSpec((1.0, 0.5)),
                     n_interior=n_interior)


def cahn_hilliard(n_interior=8):
    return ModelSpec(slow=CahnHilliard(1.0, -1.0), fast=FastOperatorSpec(c1=1.0, g=Affine(x_gain=0.5)),
                     coupling=BoundedLip(1.0, x_gain=0.5), noise_slow=SLOW_NOISE,
                     noise_fast=NoiseSpec((1.0, 0.5)), n_interior=n_interior)


def linear(n_interior=8):
    return ModelSpec(slow=LinearDiagnostic(0.1), fast=FastOperatorSpec(c1=1.0, g=Affine(x_gain=1.0)),
                     coupling=Affine(F=1.0), noise_slow=NoiseSpec((1.0, 0.5, 0.25)),
                     noise_fast=NoiseSpec((1.0, 0.5)), n_interior=n_interior)


def scalar(noise=np.sqrt(2.0)):
    """One node per component.

    Slow drift ``-X + Y``; fast drift ``-8 Y + 4 X``, so ``fbar(x) = x/2`` and the
    skeleton is ``dX = (-X/2 + sqrt(2) noise phi) dt`` (``2 phi`` by default).
    """
    return ModelSpec(slow=LinearDiagnostic(0.125), fast=FastOperatorSpec(c1=0.0, g=Affine(x_gain=4.0)),
                     coupling=Affine(F=1.0), noise_slow=NoiseSpec((float(noise),)),
                     noise_fast=NoiseSpec((1.0,)), n_interior=1)


def diagonal():
    """Four decoupled linear modes: slow heat flow plus linear damping, noise on every mode."""
    return ModelSpec(slow=LinearDiagnostic(0.05), coupling=Affine(x_gain=-0.2),
                     noise_slow=NoiseSpec((1.0, 0.8, 0.6, 0.5)), n_interior=4)


def broken():
    """Anti-dissipative slow drift and a fast reaction that overwhelms diffusion."""
    return ModelSpec(slow=LinearDiagnostic(-1.0), fast=FastOperatorSpec(c1=20.0, g=Affine(x_gain=1.0)))


CATALOG = {
    "porous_medium": porous_medium,
    "cahn_hilliard": cahn_hilliard,
    "linear": linear,
    "scalar": scalar,
    "diagonal": diagonal,
}
