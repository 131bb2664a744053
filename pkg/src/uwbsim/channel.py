"""Radio channel: disk propagation, airtime, and per-receiver collision arbitration."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .clock import ClockModel, cfo_ratio
from .core import (
    PS_PER_MICROSECOND,
    PS_PER_MILLISECOND,
    PS_PER_SECOND,
    Band,
    Message,
    NodeId,
    Position3,
    band_for,
    distance,
)

SPEED_OF_LIGHT = 299_792_458.0  # meters per second


@dataclass(frozen=True, slots=True)
class ChannelParams:
    """Propagation and framing constants shared by every link."""

    uwb_range_m: float = 50.0
    wuc_range_m: float = 20.0
    uwb_frame_airtime_ps: int = 170 * PS_PER_MICROSECOND
    wuc_duration_ps: int = 55 * PS_PER_MILLISECOND
    toa_noise_sigma_s: float = 0.1e-9
    cfo_noise_sigma: float = 0.0

    def range_for(self, band: Band) -> float:
        return self.wuc_range_m if band is Band.WAKEUP else self.uwb_range_m

    def airtime_for(self, band: Band) -> int:
        return self.wuc_duration_ps if band is Band.WAKEUP else self.uwb_frame_airtime_ps


def propagation_delay_ps(meters: float) -> int:
    """Line-of-sight flight time, rounded to the nearest picosecond."""
    if meters < 0.0:
        raise ValueError("negative distance")
    return round(meters / SPEED_OF_LIGHT * PS_PER_SECOND)


@dataclass(frozen=True, slots=True)
class Transmission:
    """One frame on the air, in global time."""

    sender: NodeId
    origin: Position3
    message: Message
    t_air_start_ps: int
    t_air_end_ps: int

    @property
    def band(self) -> Band:
        return band_for(self.message.kind)


@dataclass(frozen=True, slots=True)
class RxEvent:
    """A successfully delivered frame as one receiver saw it."""

    receiver: NodeId
    transmission: Transmission
    t_arrival_start_ps: int
    t_arrival_end_ps: int
    t_local_ps: int
    cfo: float


def arrival_interval(tx: Transmission, receiver_pos: Position3) -> tuple[int, int]:
    delay = propagation_delay_ps(distance(tx.origin, receiver_pos))
    return tx.t_air_start_ps + delay, tx.t_air_end_ps + delay


def intervals_overlap(a: tuple[int, int], b: tuple[int, int]) -> bool:
    """Half-open overlap test; frames that merely touch do not collide."""
    return a[0] < b[1] and b[0] < a[1]


def arbitrate_receptions(
    receiver: NodeId,
    receiver_pos: Position3,
    receiver_clock: ClockModel,
    concurrent: Sequence[Transmission],
    params: ChannelParams,
    clocks: Optional[dict[NodeId, ClockModel]] = None,
    rng: Optional[np.random.Generator] = None,
) -> list[RxEvent]:
    """Decide which of a set of transmissions the receiver actually decodes.

    Any overlap between two in-range arrival intervals on the same band
    destroys both frames; there is no capture effect. Delivered frames get a
    local timestamp taken at the start of the arrival, plus Gaussian
    time-of-arrival noise when configured.
    """
    in_range: list[tuple[Transmission, tuple[int, int]]] = []
    for tx in concurrent:
        if tx.sender == receiver:
            continue
        if distance(tx.origin, receiver_pos) <= params.range_for(tx.band):
            in_range.append((tx, arrival_interval(tx, receiver_pos)))

    delivered: list[RxEvent] = []
    for tx, interval in in_range:
        collided = any(
            other_tx.band == tx.band and intervals_overlap(interval, other)
            for other_tx, other in in_range
            if other_tx is not tx
        )
        if collided:
            continue
        delivered.append(
            make_rx_event(receiver, receiver_clock, tx, interval, params, clocks, rng)
        )
    delivered.sort(key=lambda ev: ev.t_arrival_start_ps)
    return delivered


def make_rx_event(
    receiver: NodeId,
    receiver_clock: ClockModel,
    tx: Transmission,
    interval: tuple[int, int],
    params: ChannelParams,
    clocks: Optional[dict[NodeId, ClockModel]] = None,
    rng: Optional[np.random.Generator] = None,
) -> RxEvent:
    t_local = receiver_clock.to_local(interval[0])
    if params.toa_noise_sigma_s > 0.0:
        if rng is None:
            raise ValueError("toa noise requires an rng")
        t_local += round(rng.normal(0.0, params.toa_noise_sigma_s) * PS_PER_SECOND)
    tx_clock = clocks.get(tx.sender, ClockModel()) if clocks else ClockModel()
    ratio = cfo_ratio(tx_clock, receiver_clock, params.cfo_noise_sigma, rng)
    return RxEvent(
        receiver=receiver,
        transmission=tx,
        t_arrival_start_ps=interval[0],
        t_arrival_end_ps=interval[1],
        t_local_ps=t_local,
        cfo=ratio,
    )


@dataclass(frozen=True, slots=True)
class Obstacle:
    """Axis-aligned rectangle in the xy plane that can block placement or links."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def blocks_segment(self, a: Position3, b: Position3) -> bool:
        """2D slab test of the xy projection of segment a-b against the box."""
        dx = b.x - a.x
        dy = b.y - a.y
        t_min, t_max = 0.0, 1.0
        for start, delta, lo, hi in (
            (a.x, dx, self.x_min, self.x_max),
            (a.y, dy, self.y_min, self.y_max),
        ):
            if delta == 0.0:
                if start < lo or start > hi:
                    return False
            else:
                t0 = (lo - start) / delta
                t1 = (hi - start) / delta
                if t0 > t1:
                    t0, t1 = t1, t0
                t_min = max(t_min, t0)
                t_max = min(t_max, t1)
                if t_min > t_max:
                    return False
        return True


def link_clear(a: Position3, b: Position3, obstacles: Sequence[Obstacle]) -> bool:
    return not any(ob.blocks_segment(a, b) for ob in obstacles)
