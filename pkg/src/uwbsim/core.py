"""Shared vocabulary: positions, picosecond time, node identity, frame kinds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Optional

NodeId = int

PS_PER_SECOND = 10**12
PS_PER_MILLISECOND = 10**9
PS_PER_MICROSECOND = 10**6
PS_PER_NANOSECOND = 10**3


def seconds_to_ps(seconds: float) -> int:
    """Convert seconds to integer picoseconds, rounding to the nearest tick."""
    return round(seconds * PS_PER_SECOND)


def ps_to_seconds(ps: int) -> float:
    return ps / PS_PER_SECOND


def microseconds_to_ps(us: float) -> int:
    return round(us * PS_PER_MICROSECOND)


def milliseconds_to_ps(ms: float) -> int:
    return round(ms * PS_PER_MILLISECOND)


@dataclass(frozen=True, slots=True)
class Position3:
    """A point in meters. Coordinates must be finite."""

    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        for value in (self.x, self.y, self.z):
            if not math.isfinite(value):
                raise ValueError(f"non-finite coordinate in {(self.x, self.y, self.z)}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


def distance(a: Position3, b: Position3) -> float:
    """Euclidean distance in meters."""
    return math.dist(a.as_tuple(), b.as_tuple())


class NodeRole(Enum):
    ANCHOR = "anchor"
    TAG = "tag"


class TagMode(Enum):
    ACTIVE = "active"
    PASSIVE = "passive"


class MessageKind(IntEnum):
    WUC = 1
    POLL = 2
    RESPONSE = 3
    FINAL_BROADCAST = 4
    FLEX_INIT = 5
    FLEX_RESPONSE = 6


class Band(IntEnum):
    """Logical radio channels arbitrated independently of each other."""

    UWB = 0
    WAKEUP = 1


def band_for(kind: MessageKind) -> Band:
    return Band.WAKEUP if kind is MessageKind.WUC else Band.UWB


@dataclass(frozen=True, slots=True)
class Message:
    """Over-the-air frame content.

    source_addr is the sender's session address; active tags draw a fresh one
    per localization so consecutive rounds are unlinkable. round_id ties
    responses and the final broadcast back to the poll that started the round.
    """

    kind: MessageKind
    source_addr: int
    round_id: int
    anchor_index: Optional[int] = None
    anchor_position: Optional[Position3] = None
    reply_duration_ps: Optional[int] = None
    estimated_position: Optional[Position3] = None
