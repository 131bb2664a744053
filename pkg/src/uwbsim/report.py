"""Result aggregation: accuracy statistics, power curves, CSV emission.

Column layouts are a stable contract; floats are rendered with repr() so the
files round-trip bit-exactly and equal seeds produce byte-identical output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import NodeRole, Position3
from .energy import EnergyModel, average_power
from .protocols import LocalizationOutcome
from .simkernel import SimulationResult

ACCURACY_COLUMNS = (
    "scheme,mode,n,"
    "avg_x_cm,md_x_cm,sd_x_cm,avg_y_cm,md_y_cm,sd_y_cm,avg_z_cm,md_z_cm,sd_z_cm,"
    "avg_2d_cm,md_2d_cm,sd_2d_cm,avg_3d_cm,md_3d_cm,sd_3d_cm,fail_rate"
)
POWER_COLUMNS = "scheme,period_s,n_tags,placement,anchor_power_w,tag_power_w"
LATENCY_COLUMNS = "scheme,n_anchors,latency_s"


class EmptyInput(ValueError):
    """Statistics requested over zero samples."""


@dataclass(frozen=True)
class AxisStats:
    avg: float
    md: float
    sd: float


@dataclass(frozen=True)
class ErrorStats:
    """Signed per-axis and Euclidean error statistics over successes."""

    count: int
    x: AxisStats
    y: AxisStats
    z: AxisStats
    d2: AxisStats
    d3: AxisStats


def _median_lower(values: np.ndarray) -> float:
    # lower-middle median: no averaging for even counts, so every reported
    # median is an actually observed value
    ordered = np.sort(values)
    return float(ordered[(len(ordered) - 1) // 2])


def _axis(values: np.ndarray) -> AxisStats:
    return AxisStats(
        avg=float(values.mean()),
        md=_median_lower(values),
        sd=float(values.std(ddof=0)),
    )


def error_stats(pairs: Sequence[tuple[Position3, Position3]]) -> ErrorStats:
    """Statistics of (estimate - truth) errors; raises EmptyInput on []."""
    if not pairs:
        raise EmptyInput("no (estimate, truth) pairs")
    est = np.array([p[0].as_tuple() for p in pairs])
    truth = np.array([p[1].as_tuple() for p in pairs])
    delta = est - truth
    d2 = np.hypot(delta[:, 0], delta[:, 1])
    d3 = np.linalg.norm(delta, axis=1)
    return ErrorStats(
        count=len(pairs),
        x=_axis(delta[:, 0]),
        y=_axis(delta[:, 1]),
        z=_axis(delta[:, 2]),
        d2=_axis(d2),
        d3=_axis(d3),
    )


def success_pairs(
    outcomes: Sequence[LocalizationOutcome], mode: Optional[str] = None
) -> list[tuple[Position3, Position3]]:
    return [
        (o.estimate, o.truth)
        for o in outcomes
        if o.success and (mode is None or o.mode == mode)
    ]


def failure_rate(outcomes: Sequence[LocalizationOutcome], mode: Optional[str] = None) -> float:
    relevant = [o for o in outcomes if mode is None or o.mode == mode]
    if not relevant:
        raise EmptyInput("no outcomes")
    return sum(1 for o in relevant if not o.success) / len(relevant)


# -- power curves ---------------------------------------------------------------


@dataclass(frozen=True)
class PowerCurvePoint:
    """One (scheme, period, tag-count) group across placements."""

    scheme: str
    period_s: float
    n_tags: int
    anchor_power_w: tuple[float, ...]  # one entry per placement
    tag_power_w: tuple[float, ...]
    anchor_mean_w: float
    tag_mean_w: float
    anchor_min_w: float
    anchor_max_w: float
    tag_min_w: float
    tag_max_w: float


def node_average_power(result: SimulationResult, energy: EnergyModel) -> dict[int, float]:
    """Average power per node over the horizon, with the right idle floor."""
    powers: dict[int, float] = {}
    for node_id, ledger in result.ledgers.items():
        if result.scheme == "aptwr" and result.roles[node_id] is NodeRole.ANCHOR:
            baseline = energy.aptwr_rx_idle_power_w
        else:
            baseline = energy.sleep_power_w
        powers[node_id] = average_power(ledger, result.horizon_ps, baseline)
    return powers


def mean_power_by_role(
    result: SimulationResult, energy: EnergyModel
) -> tuple[float, float]:
    """(mean anchor power, mean tag power) over all nodes of each role."""
    powers = node_average_power(result, energy)
    anchors = [powers[i] for i in result.anchor_ids]
    tags = [powers[i] for i in result.tag_ids]
    anchor_mean = sum(anchors) / len(anchors) if anchors else math.nan
    tag_mean = sum(tags) / len(tags) if tags else math.nan
    return anchor_mean, tag_mean


def power_curve(
    groups: Mapping[tuple[str, float, int], Sequence[SimulationResult]],
    energy: EnergyModel,
) -> list[PowerCurvePoint]:
    """Collapse grouped placement results into curve points, sorted by key."""
    points = []
    for key in sorted(groups):
        scheme, period_s, n_tags = key
        results = groups[key]
        if not results:
            raise EmptyInput(f"empty group {key}")
        anchor_w = []
        tag_w = []
        for result in results:
            a, t = mean_power_by_role(result, energy)
            anchor_w.append(a)
            tag_w.append(t)
        points.append(
            PowerCurvePoint(
                scheme=scheme,
                period_s=period_s,
                n_tags=n_tags,
                anchor_power_w=tuple(anchor_w),
                tag_power_w=tuple(tag_w),
                anchor_mean_w=sum(anchor_w) / len(anchor_w),
                tag_mean_w=sum(tag_w) / len(tag_w),
                anchor_min_w=min(anchor_w),
                anchor_max_w=max(anchor_w),
                tag_min_w=min(tag_w),
                tag_max_w=max(tag_w),
            )
        )
    return points


def mean_latency_s(outcomes: Sequence[LocalizationOutcome], mode: str = "active") -> float:
    latencies = [o.latency_ps / 1e12 for o in outcomes if o.success and o.mode == mode]
    if not latencies:
        raise EmptyInput("no successful outcomes with latency")
    return sum(latencies) / len(latencies)


# -- CSV emission -----------------------------------------------------------------


def _cm(meters: float) -> str:
    return repr(meters * 100.0)


def write_accuracy_csv(
    path: str,
    rows: Sequence[tuple[str, str, ErrorStats, float]],
) -> None:
    """Rows are (scheme, mode, stats, fail_rate); values emitted in cm."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(ACCURACY_COLUMNS + "\n")
        for scheme, mode, stats, fail in rows:
            cells = [scheme, mode, str(stats.count)]
            for axis in (stats.x, stats.y, stats.z, stats.d2, stats.d3):
                cells.extend([_cm(axis.avg), _cm(axis.md), _cm(axis.sd)])
            cells.append(repr(fail))
            fh.write(",".join(cells) + "\n")


def write_power_csv(path: str, points: Sequence[PowerCurvePoint]) -> None:
    """One row per placement within each curve point."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(POWER_COLUMNS + "\n")
        for point in points:
            for placement, (a, t) in enumerate(zip(point.anchor_power_w, point.tag_power_w)):
                fh.write(
                    f"{point.scheme},{point.period_s!r},{point.n_tags},"
                    f"{placement},{a!r},{t!r}\n"
                )


def write_latency_csv(path: str, rows: Sequence[tuple[str, int, float]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(LATENCY_COLUMNS + "\n")
        for scheme, n_anchors, latency_s in rows:
            fh.write(f"{scheme},{n_anchors},{latency_s!r}\n")
