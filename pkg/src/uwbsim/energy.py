"""Per-event energy accounting and average-power arithmetic.

Radio and processing costs are charged as atomic per-event energies taken
from bench characterization of the DW3001 + WuR reference design; everything
between events idles at the sleep floor. AP-TWR anchors idle in receive
instead and pay the much higher listening power.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

from .core import PS_PER_MICROSECOND, PS_PER_MILLISECOND, PS_PER_SECOND


class OverlappingIntervals(ValueError):
    """Two ledger entries for the same node overlap in time."""


@dataclass(frozen=True, slots=True)
class EnergyModel:
    """Energy and duration constants for one radio/firmware configuration.

    Wake-up energies are specified at wakeup_reference_duration_ps; when a
    scenario shortens the wake-up call, each wake-up energy scales with the
    actual duration (the radios are on for the whole call).
    """

    sleep_power_w: float = 12.05e-6
    aptwr_rx_idle_power_w: float = 120.9e-3

    wakeup_energy_active_tag_j: float = 5.61e-3
    wakeup_energy_passive_tag_j: float = 6.6e-6
    wakeup_energy_anchor_j: float = 5.61e-6
    wakeup_reference_duration_ps: int = 55 * PS_PER_MILLISECOND
    scale_wakeup_energy: bool = True

    active_tag_base_j: float = 217.97e-6
    active_tag_per_response_j: float = 24.88e-6
    passive_tag_base_j: float = 236.97e-6
    passive_tag_per_response_j: float = 24.88e-6
    anchor_base_j: float = 147.87e-6
    anchor_per_response_j: float = 9.66e-6

    active_tag_base_duration_ps: int = round(3.19 * PS_PER_MILLISECOND)
    active_tag_per_response_duration_ps: int = 210 * PS_PER_MICROSECOND
    passive_tag_base_duration_ps: int = round(3.15 * PS_PER_MILLISECOND)
    passive_tag_per_response_duration_ps: int = 210 * PS_PER_MICROSECOND
    anchor_base_duration_ps: int = round(2.78 * PS_PER_MILLISECOND)
    anchor_per_response_duration_ps: int = 230 * PS_PER_MICROSECOND

    def wakeup_energy(self, role: str, wuc_duration_ps: int | None = None) -> float:
        base = {
            "active_tag": self.wakeup_energy_active_tag_j,
            "passive_tag": self.wakeup_energy_passive_tag_j,
            "anchor": self.wakeup_energy_anchor_j,
        }[role]
        if wuc_duration_ps is None or not self.scale_wakeup_energy:
            return base
        return base * (wuc_duration_ps / self.wakeup_reference_duration_ps)

    def localization_energy(self, role: str, n: int) -> float:
        """Energy of one localization event for a node in the given role.

        n counts the anchor response frames of the round. The anchor term
        grows with (n-1)/2 because an anchor in slot i overhears only the
        i-1 earlier responses before it transmits and sleeps; the factor is
        kept rational until the final multiply.
        """
        if n < 1:
            raise ValueError(f"localization requires n >= 1, got {n}")
        if role == "active_tag":
            return self.active_tag_base_j + n * self.active_tag_per_response_j
        if role == "passive_tag":
            return self.passive_tag_base_j + (n - 1) * self.passive_tag_per_response_j
        if role == "anchor":
            share = Fraction(n - 1, 2)
            return self.anchor_base_j + float(share) * self.anchor_per_response_j
        raise ValueError(f"unknown role {role!r}")

    def localization_duration_ps(self, role: str, n: int) -> int:
        if n < 1:
            raise ValueError(f"localization requires n >= 1, got {n}")
        if role == "active_tag":
            return self.active_tag_base_duration_ps + n * self.active_tag_per_response_duration_ps
        if role == "passive_tag":
            return self.passive_tag_base_duration_ps + (n - 1) * self.passive_tag_per_response_duration_ps
        if role == "anchor":
            return self.anchor_base_duration_ps + (n - 1) * self.anchor_per_response_duration_ps // 2
        raise ValueError(f"unknown role {role!r}")


@dataclass(frozen=True, slots=True)
class LedgerEntry:
    kind: str
    t_start_ps: int
    t_end_ps: int
    energy_j: float

    def __post_init__(self) -> None:
        if self.t_end_ps < self.t_start_ps:
            raise ValueError("entry ends before it starts")


@dataclass
class EnergyLedger:
    """Time-ordered record of one node's energy events. Gaps are idle time."""

    entries: list[LedgerEntry] = field(default_factory=list)

    def add(self, entry: LedgerEntry) -> None:
        keys = [e.t_start_ps for e in self.entries]
        idx = bisect.bisect_right(keys, entry.t_start_ps)
        if idx > 0 and self.entries[idx - 1].t_end_ps > entry.t_start_ps:
            raise OverlappingIntervals(f"{self.entries[idx - 1]} overlaps {entry}")
        if idx < len(self.entries) and entry.t_end_ps > self.entries[idx].t_start_ps:
            raise OverlappingIntervals(f"{entry} overlaps {self.entries[idx]}")
        self.entries.insert(idx, entry)

    def total_event_energy_j(self) -> float:
        return sum(e.energy_j for e in self.entries)

    def total_busy_ps(self) -> int:
        return sum(e.t_end_ps - e.t_start_ps for e in self.entries)


def average_power(ledger: EnergyLedger, horizon_ps: int, baseline_power_w: float) -> float:
    """Mean power over the horizon: event energies plus baseline idle power.

    Raises OverlappingIntervals if entries overlap and ValueError if any
    entry falls outside the horizon.
    """
    if horizon_ps <= 0:
        raise ValueError("horizon must be positive")
    prev_end = None
    for e in ledger.entries:
        if e.t_start_ps < 0 or e.t_end_ps > horizon_ps:
            raise ValueError(f"entry {e} outside horizon {horizon_ps}")
        if prev_end is not None and e.t_start_ps < prev_end:
            raise OverlappingIntervals(f"entry {e} overlaps its predecessor")
        prev_end = e.t_end_ps
    idle_ps = horizon_ps - ledger.total_busy_ps()
    idle_energy = baseline_power_w * (idle_ps / PS_PER_SECOND)
    return (ledger.total_event_energy_j() + idle_energy) / (horizon_ps / PS_PER_SECOND)


def battery_lifetime_s(average_power_w: float, capacity_wh: float = 0.69) -> float:
    """Runtime of an ideal battery of the given capacity at constant draw."""
    if average_power_w <= 0.0:
        raise ValueError("average power must be positive")
    if capacity_wh <= 0.0:
        raise ValueError("capacity must be positive")
    return capacity_wh * 3600.0 / average_power_w


def aptwr_anchor_power(round_rate_hz: float, n: int, model: EnergyModel) -> float:
    """Analytic always-on anchor power under a given localization round rate.

    Rounds replace idle listening with the (cheaper) localization event, so
    the value converges to the idle receive power as the rate goes to zero.
    """
    if round_rate_hz < 0.0:
        raise ValueError("rate must be nonnegative")
    duration_s = model.localization_duration_ps("anchor", n) / PS_PER_SECOND
    busy_fraction = round_rate_hz * duration_s
    if busy_fraction > 1.0:
        raise ValueError("round rate exceeds what one anchor can serve")
    return (
        model.aptwr_rx_idle_power_w * (1.0 - busy_fraction)
        + round_rate_hz * model.localization_energy("anchor", n)
    )
