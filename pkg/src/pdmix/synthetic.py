"""Simulated normal-mixture data on an equally spaced lattice of means."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import InputError, RawDataset, support_lattice
from .recovery import MixingMeasure


@dataclass(frozen=True)
class SyntheticDesign:
    """Equal-weight mixture of N_p(theta, I) over all p-fold combinations of ``levels``.

    With ``stratified=True`` each component contributes exactly n/m draws
    (n must be a multiple of m); otherwise labels are drawn at random.
    """

    n: int = 270
    p: int = 3
    levels: tuple = (-5.0, 0.0, 5.0)
    stratified: bool = True

    def __post_init__(self):
        if self.n < 1 or self.p < 1 or not self.levels:
            raise InputError("design needs n >= 1, p >= 1 and at least one level")


def generate_synthetic(design: SyntheticDesign | None = None, seed: int = 0):
    """Draw a dataset; returns ``(RawDataset, true MixingMeasure)``.

    Identical seeds give bit-identical output.
    """
    design = design or SyntheticDesign()
    means = support_lattice(design.levels, design.p).theta
    m = means.shape[0]
    rng = np.random.default_rng(seed)
    if design.stratified and design.n % m == 0:
        labels = np.repeat(np.arange(m), design.n // m)
    else:
        labels = rng.integers(0, m, size=design.n)
    X = means[labels] + rng.standard_normal((design.n, design.p))
    return RawDataset(X), MixingMeasure(means, np.full(m, 1.0 / m))
