"""Deterministic discrete-event simulation and solvers for UWB localization.

Three schemes are modeled end to end: a wake-up-radio scheme whose anchors
sleep until a tag summons them, a fixed-beacon downlink-TDOA scheme, and an
always-on two-way-ranging baseline. The package reproduces their protocol
timing, localization math, and energy budgets at configurable scale.
"""

from .channel import ChannelParams, Obstacle, RxEvent, Transmission
from .clock import ClockModel, cfo_ratio
from .core import Band, Message, MessageKind, NodeRole, Position3, distance
from .energy import (
    EnergyLedger,
    EnergyModel,
    LedgerEntry,
    average_power,
    battery_lifetime_s,
)
from .protocols import (
    AnchorNode,
    LocalizationOutcome,
    ProtocolContext,
    ResponseSchedule,
    TagNode,
    end_to_end_latency_ps,
)
from .report import (
    ErrorStats,
    PowerCurvePoint,
    error_stats,
    mean_power_by_role,
    power_curve,
    write_accuracy_csv,
    write_latency_csv,
    write_power_csv,
)
from .scenario import (
    InfeasibleSpec,
    ParseError,
    ScenarioConfig,
    ValidationError,
    build_simulation,
    generate_layout,
    load_config,
    sample_placements,
    serialize_config,
)
from .simkernel import (
    SimulationResult,
    SimulationSetup,
    run_simulation,
    schedule_triggers,
)
from .solvers import (
    SolverParams,
    TdoaMeasurement,
    TwrMeasurement,
    cc_ss_twr_range,
    particle_filter_solve,
    trilaterate,
)
from .suite import CriterionResult, run_suite

__version__ = "0.1.0"

__all__ = [
    "AnchorNode",
    "Band",
    "ChannelParams",
    "ClockModel",
    "CriterionResult",
    "EnergyLedger",
    "EnergyModel",
    "ErrorStats",
    "InfeasibleSpec",
    "LedgerEntry",
    "LocalizationOutcome",
    "Message",
    "MessageKind",
    "NodeRole",
    "Obstacle",
    "ParseError",
    "PowerCurvePoint",
    "Position3",
    "ProtocolContext",
    "ResponseSchedule",
    "RxEvent",
    "ScenarioConfig",
    "SimulationResult",
    "SimulationSetup",
    "SolverParams",
    "TagNode",
    "TdoaMeasurement",
    "Transmission",
    "TwrMeasurement",
    "ValidationError",
    "average_power",
    "battery_lifetime_s",
    "build_simulation",
    "cc_ss_twr_range",
    "cfo_ratio",
    "distance",
    "end_to_end_latency_ps",
    "error_stats",
    "generate_layout",
    "load_config",
    "mean_power_by_role",
    "particle_filter_solve",
    "power_curve",
    "run_simulation",
    "run_suite",
    "sample_placements",
    "schedule_triggers",
    "serialize_config",
    "trilaterate",
    "write_accuracy_csv",
    "write_latency_csv",
    "write_power_csv",
]
