"""Free-running node clocks: skewed timestamps and CFO ratios.

skew is the fractional stretch of a node's unit second relative to global
time. A delay the node counts as D of its own ticks spans D*(1+skew) of
global time, and its timestamp counter therefore reads global time divided
by (1+skew). This one convention keeps three things mutually consistent:
scheduled waits, reported reply durations, and the carrier-frequency-offset
ratio a receiver measures about a transmitter.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

MAX_ABS_SKEW = 50e-6


@dataclass(frozen=True, slots=True)
class ClockModel:
    """Deterministic affine clock. offset_ps shifts the local epoch."""

    skew: float = 0.0
    offset_ps: int = 0

    def __post_init__(self) -> None:
        if not abs(self.skew) <= MAX_ABS_SKEW:
            raise ValueError(f"clock skew {self.skew} outside +/-{MAX_ABS_SKEW}")

    def to_local(self, t_global_ps: int) -> int:
        # t/(1+s) computed as t - t*s/(1+s): the correction term is small
        # enough to stay exact in float64 for multi-day horizons.
        factor = self.skew / (1.0 + self.skew)
        return self.offset_ps + t_global_ps - round(t_global_ps * factor)

    def from_local(self, t_local_ps: int) -> int:
        elapsed = t_local_ps - self.offset_ps
        return elapsed + round(elapsed * self.skew)

    def local_duration_to_global(self, duration_ps: int) -> int:
        """Global span of a delay the node counts as duration_ps."""
        return duration_ps + round(duration_ps * self.skew)


def cfo_ratio(
    clock_tx: ClockModel,
    clock_rx: ClockModel,
    noise_sigma: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Ratio of the transmitter's unit second to the receiver's.

    This is what the receiver's PHY reports about a transmitter, and the
    factor that converts durations the transmitter reports into receiver
    units. Optional Gaussian noise models estimator error.
    """
    ratio = (1.0 + clock_tx.skew) / (1.0 + clock_rx.skew)
    if noise_sigma > 0.0:
        if rng is None:
            raise ValueError("noise_sigma > 0 requires an rng")
        ratio += rng.normal(0.0, noise_sigma)
    return ratio
