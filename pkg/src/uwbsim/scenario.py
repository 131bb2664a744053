"""Experiment descriptions: config parsing, layout synthesis, placements.

Configs are strict JSON: unknown fields are parse errors, constraint
violations are collected and reported together. Layout generation and tag
placement are pure functions of (spec, seed), so a config file pins an
experiment completely.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from functools import partial
from typing import Optional, Sequence, Union

import numpy as np

from .channel import ChannelParams, Obstacle
from .clock import MAX_ABS_SKEW, ClockModel
from .core import (
    PS_PER_MICROSECOND,
    PS_PER_SECOND,
    NodeId,
    NodeRole,
    Position3,
    seconds_to_ps,
)
from .energy import EnergyModel
from .protocols import (
    AnchorNode,
    ProtocolContext,
    ProtocolNode,
    ResponseSchedule,
    TagNode,
    derive_solve_time_ps,
)
from .simkernel import SimulationSetup, schedule_triggers
from .solvers import SolverParams

SCHEMA_VERSION = 1
MIN_PERIOD_S = 0.06

# RNG stream domains; each (domain, placement, node) triple is independent
_STREAM_LAYOUT = 0
_STREAM_NODE = 1
_STREAM_CLOCK = 2
_STREAM_TRIGGERS = 3
_STREAM_PLACEMENT = 4


class ParseError(ValueError):
    """The text is not a well-formed instance of the config schema."""


class ValidationError(ValueError):
    """Schema-shaped config with constraint violations; carries all of them."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class InfeasibleSpec(ValueError):
    """A layout or placement request that cannot be satisfied."""


# -- layout specs -------------------------------------------------------------


@dataclass(frozen=True)
class GridLayout:
    rows: int = 2
    cols: int = 2
    spacing_m: float = 10.0
    z_range_m: tuple[float, float] = (1.75, 2.10)


@dataclass(frozen=True)
class TwoHallsLayout:
    """Two rectangular halls joined by a narrower corridor.

    Hall A sits at the origin, the corridor attaches to its right edge
    (vertically centered), hall B continues to the right of the corridor.
    """

    hall_a_dims_m: tuple[float, float] = (54.0, 54.0)
    hall_b_dims_m: tuple[float, float] = (54.0, 54.0)
    corridor_dims_m: tuple[float, float] = (25.0, 22.0)
    anchor_count: int = 89
    z_range_m: tuple[float, float] = (1.75, 2.10)


@dataclass(frozen=True)
class ExplicitLayout:
    positions_m: tuple[tuple[float, float, float], ...] = ()


LayoutSpec = Union[GridLayout, TwoHallsLayout, ExplicitLayout]


@dataclass(frozen=True)
class TagSpec:
    count: int = 1
    positions_m: Optional[tuple[tuple[float, float, float], ...]] = None
    height_m: float = 1.0
    n_placements: int = 1


@dataclass(frozen=True)
class ProtocolSpec:
    localization_period_s: float = 1.0
    t_f_s: float = 1.0
    min_responses: int = 5
    rounds_per_tag: Optional[int] = None
    trigger_mode: Optional[str] = None  # None = per-scheme default
    trigger_jitter_s: float = 0.0
    initiator_index: Optional[int] = None
    response_base_us: float = 720.0
    response_step_us: float = 230.0
    wakeup_settle_us: float = 500.0


@dataclass(frozen=True)
class ClockSpec:
    skew_ppm_range: float = 20.0
    offset_jitter_us: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    scheme: str
    layout: LayoutSpec
    tags: TagSpec
    seed: int = 0
    horizon_s: Optional[float] = None
    protocol: ProtocolSpec = ProtocolSpec()
    channel: ChannelParams = ChannelParams()
    clocks: ClockSpec = ClockSpec()
    energy: EnergyModel = EnergyModel()
    solver: SolverParams = SolverParams()
    obstacles: tuple[Obstacle, ...] = ()
    obstacles_block_radio: bool = False
    output_dir: str = "results"


# -- strict JSON walking -------------------------------------------------------


class _Node:
    """One object in the config tree; tracks consumed keys for strictness."""

    def __init__(self, data: dict, path: str, issues: list[str]):
        if not isinstance(data, dict):
            raise ParseError(f"{path or 'config'}: expected an object")
        self.data = dict(data)
        self.path = path
        self.issues = issues

    def _label(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def take(self, key: str, default=None, required: bool = False):
        if key not in self.data:
            if required:
                raise ParseError(f"missing required field {self._label(key)}")
            return default
        return self.data.pop(key)

    def child(self, key: str) -> Optional["_Node"]:
        raw = self.take(key)
        if raw is None:
            return None
        return _Node(raw, self._label(key), self.issues)

    def finish(self) -> None:
        for key in self.data:
            self.issues.append(f"unknown field {self._label(key)}")


def _number(value, path: str, minimum=None, allow_none=False) -> Optional[float]:
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"{path}: expected a number")
    out = float(value)
    if minimum is not None and out < minimum:
        raise ParseError(f"{path}: must be >= {minimum}")
    return out


def _integer(value, path: str, minimum=None, allow_none=False) -> Optional[int]:
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(f"{path}: expected an integer")
    if minimum is not None and value < minimum:
        raise ParseError(f"{path}: must be >= {minimum}")
    return value


def _string(value, path: str, allow_none=False) -> Optional[str]:
    if value is None and allow_none:
        return None
    if not isinstance(value, str):
        raise ParseError(f"{path}: expected a string")
    return value


def _boolean(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise ParseError(f"{path}: expected a boolean")
    return value


def _pair(value, path: str) -> tuple[float, float]:
    if not isinstance(value, list) or len(value) != 2:
        raise ParseError(f"{path}: expected [low, high]")
    return (_number(value[0], f"{path}[0]"), _number(value[1], f"{path}[1]"))


def _positions(value, path: str) -> tuple[tuple[float, float, float], ...]:
    if not isinstance(value, list):
        raise ParseError(f"{path}: expected a list of [x, y, z] triples")
    out = []
    for i, item in enumerate(value):
        if not isinstance(item, list) or len(item) != 3:
            raise ParseError(f"{path}[{i}]: expected [x, y, z]")
        out.append(tuple(_number(item[j], f"{path}[{i}][{j}]") for j in range(3)))
    return tuple(out)


# -- loading -------------------------------------------------------------------


def load_config(text: str) -> ScenarioConfig:
    """Parse and validate a JSON scenario; reports every violation at once."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from None

    issues: list[str] = []
    root = _Node(raw, "", issues)

    version = _integer(root.take("schema_version", SCHEMA_VERSION), "schema_version")
    if version != SCHEMA_VERSION:
        raise ParseError(f"schema_version: expected {SCHEMA_VERSION}, got {version}")

    violations: list[str] = []
    scheme = _string(root.take("scheme", required=True), "scheme")
    if scheme not in ("wakeloc", "flextdoa", "aptwr"):
        violations.append(f"scheme: unknown scheme {scheme!r}")

    seed = _integer(root.take("seed", 0), "seed", minimum=0)
    horizon_s = _number(root.take("horizon_s"), "horizon_s", allow_none=True)
    if horizon_s is not None and horizon_s <= 0:
        violations.append("horizon_s: must be positive")

    layout = _parse_layout(root.child("layout"), violations)
    tags = _parse_tags(root.child("tags"), violations)
    protocol = _parse_protocol(root.child("protocol"), violations)
    channel = _parse_channel(root.child("channel"), violations)
    clocks = _parse_clocks(root.child("clocks"), violations)
    energy = _parse_energy(root.child("energy"))
    solver = _parse_solver(root.child("solver"), tags, violations)
    obstacles = _parse_obstacles(root.take("obstacles"))
    block_radio = _boolean(root.take("obstacles_block_radio", False), "obstacles_block_radio")
    output_dir = _string(root.take("output_dir", "results"), "output_dir")
    root.finish()

    if issues:
        raise ParseError("; ".join(issues))

    _cross_validate(scheme, layout, protocol, channel, clocks, violations)
    if violations:
        raise ValidationError(violations)

    return ScenarioConfig(
        scheme=scheme,
        layout=layout,
        tags=tags,
        seed=seed,
        horizon_s=horizon_s,
        protocol=protocol,
        channel=channel,
        clocks=clocks,
        energy=energy,
        solver=solver,
        obstacles=obstacles,
        obstacles_block_radio=block_radio,
        output_dir=output_dir,
    )


def _parse_layout(node: Optional[_Node], violations: list[str]) -> LayoutSpec:
    if node is None:
        raise ParseError("missing required field layout")
    kind = _string(node.take("kind", required=True), "layout.kind")
    if kind == "grid":
        out = GridLayout(
            rows=_integer(node.take("rows", 2), "layout.rows", minimum=1),
            cols=_integer(node.take("cols", 2), "layout.cols", minimum=1),
            spacing_m=_number(node.take("spacing_m", 10.0), "layout.spacing_m"),
            z_range_m=_pair(node.take("z_range_m", [1.75, 2.10]), "layout.z_range_m"),
        )
        if out.spacing_m <= 0:
            violations.append("layout.spacing_m: must be positive")
    elif kind == "two_halls":
        out = TwoHallsLayout(
            hall_a_dims_m=_pair(node.take("hall_a_dims_m", [54.0, 54.0]), "layout.hall_a_dims_m"),
            hall_b_dims_m=_pair(node.take("hall_b_dims_m", [54.0, 54.0]), "layout.hall_b_dims_m"),
            corridor_dims_m=_pair(
                node.take("corridor_dims_m", [25.0, 22.0]), "layout.corridor_dims_m"
            ),
            anchor_count=_integer(node.take("anchor_count", 89), "layout.anchor_count", minimum=1),
            z_range_m=_pair(node.take("z_range_m", [1.75, 2.10]), "layout.z_range_m"),
        )
        for name in ("hall_a_dims_m", "hall_b_dims_m", "corridor_dims_m"):
            dims = getattr(out, name)
            if dims[0] <= 0 or dims[1] <= 0:
                violations.append(f"layout.{name}: dimensions must be positive")
        if out.corridor_dims_m[1] > min(out.hall_a_dims_m[1], out.hall_b_dims_m[1]):
            violations.append("layout.corridor_dims_m: corridor taller than the halls")
    elif kind == "explicit":
        out = ExplicitLayout(positions_m=_positions(node.take("positions_m", []), "layout.positions_m"))
        if not out.positions_m:
            violations.append("layout.positions_m: at least one anchor required")
    else:
        raise ParseError(f"layout.kind: unknown layout kind {kind!r}")
    node.finish()
    return out


def _parse_tags(node: Optional[_Node], violations: list[str]) -> TagSpec:
    if node is None:
        raise ParseError("missing required field tags")
    count = _integer(node.take("count", required=True), "tags.count", minimum=0)
    positions = node.take("positions_m")
    spec = TagSpec(
        count=count,
        positions_m=_positions(positions, "tags.positions_m") if positions is not None else None,
        height_m=_number(node.take("height_m", 1.0), "tags.height_m"),
        n_placements=_integer(node.take("n_placements", 1), "tags.n_placements", minimum=1),
    )
    node.finish()
    if spec.positions_m is not None and len(spec.positions_m) != spec.count:
        violations.append("tags.positions_m: length must equal tags.count")
    return spec


def _parse_protocol(node: Optional[_Node], violations: list[str]) -> ProtocolSpec:
    if node is None:
        return ProtocolSpec()
    spec = ProtocolSpec(
        localization_period_s=_number(
            node.take("localization_period_s", 1.0), "protocol.localization_period_s"
        ),
        t_f_s=_number(node.take("t_f_s", 1.0), "protocol.t_f_s"),
        min_responses=_integer(node.take("min_responses", 5), "protocol.min_responses", minimum=1),
        rounds_per_tag=_integer(
            node.take("rounds_per_tag"), "protocol.rounds_per_tag", minimum=1, allow_none=True
        ),
        trigger_mode=_string(node.take("trigger_mode"), "protocol.trigger_mode", allow_none=True),
        trigger_jitter_s=_number(
            node.take("trigger_jitter_s", 0.0), "protocol.trigger_jitter_s", minimum=0.0
        ),
        initiator_index=_integer(
            node.take("initiator_index"), "protocol.initiator_index", minimum=0, allow_none=True
        ),
        response_base_us=_number(node.take("response_base_us", 720.0), "protocol.response_base_us"),
        response_step_us=_number(node.take("response_step_us", 230.0), "protocol.response_step_us"),
        wakeup_settle_us=_number(node.take("wakeup_settle_us", 500.0), "protocol.wakeup_settle_us"),
    )
    node.finish()
    if spec.trigger_mode not in (None, "shuffled", "independent"):
        violations.append(f"protocol.trigger_mode: unknown mode {spec.trigger_mode!r}")
    return spec


def _parse_channel(node: Optional[_Node], violations: list[str]) -> ChannelParams:
    if node is None:
        return ChannelParams()
    params = ChannelParams(
        uwb_range_m=_number(node.take("uwb_range_m", 50.0), "channel.uwb_range_m"),
        wuc_range_m=_number(node.take("wuc_range_m", 20.0), "channel.wuc_range_m"),
        uwb_frame_airtime_ps=round(
            _number(node.take("uwb_frame_airtime_us", 170.0), "channel.uwb_frame_airtime_us")
            * PS_PER_MICROSECOND
        ),
        wuc_duration_ps=round(
            _number(node.take("wuc_duration_ms", 55.0), "channel.wuc_duration_ms")
            * PS_PER_MICROSECOND
            * 1000
        ),
        toa_noise_sigma_s=_number(
            node.take("toa_noise_sigma_ns", 0.1), "channel.toa_noise_sigma_ns", minimum=0.0
        )
        * 1e-9,
        cfo_noise_sigma=_number(node.take("cfo_noise_sigma", 0.0), "channel.cfo_noise_sigma", minimum=0.0),
    )
    node.finish()
    if params.uwb_range_m <= 0 or params.wuc_range_m <= 0:
        violations.append("channel: ranges must be positive")
    if params.uwb_frame_airtime_ps <= 0 or params.wuc_duration_ps <= 0:
        violations.append("channel: airtimes must be positive")
    return params


def _parse_clocks(node: Optional[_Node], violations: list[str]) -> ClockSpec:
    if node is None:
        return ClockSpec()
    spec = ClockSpec(
        skew_ppm_range=_number(node.take("skew_ppm_range", 20.0), "clocks.skew_ppm_range", minimum=0.0),
        offset_jitter_us=_number(
            node.take("offset_jitter_us", 0.0), "clocks.offset_jitter_us", minimum=0.0
        ),
    )
    node.finish()
    if spec.skew_ppm_range * 1e-6 > MAX_ABS_SKEW:
        violations.append(
            f"clocks.skew_ppm_range: exceeds the +/-{MAX_ABS_SKEW * 1e6:.0f} ppm crystal bound"
        )
    return spec


def _parse_energy(node: Optional[_Node]) -> EnergyModel:
    if node is None:
        return EnergyModel()
    valid = {f.name: f for f in dataclasses.fields(EnergyModel)}
    overrides = {}
    for key in list(node.data):
        value = node.take(key)
        if key not in valid:
            node.issues.append(f"unknown field energy.{key}")
            continue
        if key == "scale_wakeup_energy":
            overrides[key] = _boolean(value, f"energy.{key}")
        elif valid[key].type == "int" or key.endswith("_ps"):
            overrides[key] = round(_number(value, f"energy.{key}", minimum=0))
        else:
            overrides[key] = _number(value, f"energy.{key}", minimum=0.0)
    node.finish()
    return EnergyModel(**overrides)


def _parse_solver(node: Optional[_Node], tags: TagSpec, violations: list[str]) -> SolverParams:
    fields = {"fixed_z_m": tags.height_m}
    if node is not None:
        fields.update(
            dimension=_string(node.take("dimension", "2d"), "solver.dimension"),
            n_particles=_integer(node.take("n_particles", 10_000), "solver.n_particles"),
            residual_sigma_s=_number(
                node.take("residual_sigma_ns", 0.3), "solver.residual_sigma_ns"
            )
            * 1e-9,
            max_iters=_integer(node.take("max_iters", 25), "solver.max_iters", minimum=1),
            step_tol_m=_number(node.take("step_tol_m", 1e-6), "solver.step_tol_m"),
            damping=_number(node.take("damping", 1e-3), "solver.damping"),
            box_margin_m=_number(node.take("box_margin_m", 5.0), "solver.box_margin_m"),
        )
        fixed_z = node.take("fixed_z_m")
        if fixed_z is not None:
            fields["fixed_z_m"] = _number(fixed_z, "solver.fixed_z_m")
        node.finish()
    try:
        return SolverParams(**fields)
    except ValueError as exc:
        violations.append(f"solver: {exc}")
        return SolverParams(fixed_z_m=tags.height_m)


def _parse_obstacles(raw) -> tuple[Obstacle, ...]:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        raise ParseError("obstacles: expected a list")
    out = []
    for i, item in enumerate(raw):
        node = _Node(item, f"obstacles[{i}]", [])
        box = Obstacle(
            x_min=_number(node.take("x_min_m", required=True), f"obstacles[{i}].x_min_m"),
            y_min=_number(node.take("y_min_m", required=True), f"obstacles[{i}].y_min_m"),
            x_max=_number(node.take("x_max_m", required=True), f"obstacles[{i}].x_max_m"),
            y_max=_number(node.take("y_max_m", required=True), f"obstacles[{i}].y_max_m"),
        )
        node.finish()
        if node.issues:
            raise ParseError("; ".join(node.issues))
        if box.x_max <= box.x_min or box.y_max <= box.y_min:
            raise ParseError(f"obstacles[{i}]: empty box")
        out.append(box)
    return tuple(out)


def _cross_validate(scheme, layout, protocol, channel, clocks, violations: list[str]) -> None:
    if channel.wuc_range_m > channel.uwb_range_m:
        violations.append("channel.wuc_range_m: must not exceed channel.uwb_range_m")
    if protocol.localization_period_s < MIN_PERIOD_S:
        violations.append(
            f"protocol.localization_period_s: below the {MIN_PERIOD_S * 1000:.0f} ms floor"
        )
    if scheme == "flextdoa" and protocol.t_f_s < MIN_PERIOD_S:
        violations.append(f"protocol.t_f_s: below the {MIN_PERIOD_S * 1000:.0f} ms floor")
    if scheme == "flextdoa" and protocol.localization_period_s < protocol.t_f_s:
        violations.append("protocol.localization_period_s: must be >= t_f_s for flextdoa")
    if protocol.response_step_us * PS_PER_MICROSECOND < channel.uwb_frame_airtime_ps:
        violations.append("protocol.response_step_us: slots shorter than the frame airtime")
    if isinstance(layout, ExplicitLayout) and protocol.initiator_index is not None:
        if protocol.initiator_index >= len(layout.positions_m):
            violations.append("protocol.initiator_index: no such anchor")


# -- serialization --------------------------------------------------------------


def serialize_config(config: ScenarioConfig) -> str:
    """Emit the JSON form that load_config parses back to an equal config."""
    layout: dict
    if isinstance(config.layout, GridLayout):
        layout = {
            "kind": "grid",
            "rows": config.layout.rows,
            "cols": config.layout.cols,
            "spacing_m": config.layout.spacing_m,
            "z_range_m": list(config.layout.z_range_m),
        }
    elif isinstance(config.layout, TwoHallsLayout):
        layout = {
            "kind": "two_halls",
            "hall_a_dims_m": list(config.layout.hall_a_dims_m),
            "hall_b_dims_m": list(config.layout.hall_b_dims_m),
            "corridor_dims_m": list(config.layout.corridor_dims_m),
            "anchor_count": config.layout.anchor_count,
            "z_range_m": list(config.layout.z_range_m),
        }
    else:
        layout = {"kind": "explicit", "positions_m": [list(p) for p in config.layout.positions_m]}

    tags: dict = {
        "count": config.tags.count,
        "height_m": config.tags.height_m,
        "n_placements": config.tags.n_placements,
    }
    if config.tags.positions_m is not None:
        tags["positions_m"] = [list(p) for p in config.tags.positions_m]

    data = {
        "schema_version": SCHEMA_VERSION,
        "scheme": config.scheme,
        "seed": config.seed,
        "horizon_s": config.horizon_s,
        "layout": layout,
        "tags": tags,
        "protocol": {
            "localization_period_s": config.protocol.localization_period_s,
            "t_f_s": config.protocol.t_f_s,
            "min_responses": config.protocol.min_responses,
            "rounds_per_tag": config.protocol.rounds_per_tag,
            "trigger_mode": config.protocol.trigger_mode,
            "trigger_jitter_s": config.protocol.trigger_jitter_s,
            "initiator_index": config.protocol.initiator_index,
            "response_base_us": config.protocol.response_base_us,
            "response_step_us": config.protocol.response_step_us,
            "wakeup_settle_us": config.protocol.wakeup_settle_us,
        },
        "channel": {
            "uwb_range_m": config.channel.uwb_range_m,
            "wuc_range_m": config.channel.wuc_range_m,
            "uwb_frame_airtime_us": config.channel.uwb_frame_airtime_ps / PS_PER_MICROSECOND,
            "wuc_duration_ms": config.channel.wuc_duration_ps / (1000 * PS_PER_MICROSECOND),
            "toa_noise_sigma_ns": config.channel.toa_noise_sigma_s * 1e9,
            "cfo_noise_sigma": config.channel.cfo_noise_sigma,
        },
        "clocks": {
            "skew_ppm_range": config.clocks.skew_ppm_range,
            "offset_jitter_us": config.clocks.offset_jitter_us,
        },
        "energy": {
            f.name: getattr(config.energy, f.name) for f in dataclasses.fields(EnergyModel)
        },
        "solver": {
            "dimension": config.solver.dimension,
            "fixed_z_m": config.solver.fixed_z_m,
            "n_particles": config.solver.n_particles,
            "residual_sigma_ns": config.solver.residual_sigma_s * 1e9,
            "max_iters": config.solver.max_iters,
            "step_tol_m": config.solver.step_tol_m,
            "damping": config.solver.damping,
            "box_margin_m": config.solver.box_margin_m,
        },
        "obstacles": [
            {"x_min_m": o.x_min, "y_min_m": o.y_min, "x_max_m": o.x_max, "y_max_m": o.y_max}
            for o in config.obstacles
        ],
        "obstacles_block_radio": config.obstacles_block_radio,
        "output_dir": config.output_dir,
    }
    return json.dumps(data, indent=2, sort_keys=True)


# -- layout generation -----------------------------------------------------------


def _rng(seed: int, domain: int, placement: int, node: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(domain, placement, node))
    return np.random.default_rng(ss)


def free_rectangles(layout: LayoutSpec) -> list[tuple[float, float, float, float]]:
    """Walkable area as (x0, y0, x1, y1) rectangles."""
    if isinstance(layout, TwoHallsLayout):
        aw, ah = layout.hall_a_dims_m
        cw, ch = layout.corridor_dims_m
        bw, bh = layout.hall_b_dims_m
        cy0 = (ah - ch) / 2.0
        return [
            (0.0, 0.0, aw, ah),
            (aw, cy0, aw + cw, cy0 + ch),
            (aw + cw, 0.0, aw + cw + bw, bh),
        ]
    if isinstance(layout, GridLayout):
        return [(0.0, 0.0, (layout.cols - 1) * layout.spacing_m, (layout.rows - 1) * layout.spacing_m)]
    pts = layout.positions_m
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    return [(min(xs), min(ys), max(xs), max(ys))]


def _two_halls_boundary(layout: TwoHallsLayout) -> list[tuple[float, float]]:
    aw, ah = layout.hall_a_dims_m
    cw, ch = layout.corridor_dims_m
    bw, bh = layout.hall_b_dims_m
    cy0 = (ah - ch) / 2.0
    cy1 = cy0 + ch
    bx = aw + cw
    return [
        (0.0, 0.0),
        (aw, 0.0),
        (aw, cy0),
        (bx, cy0),
        (bx, 0.0),
        (bx + bw, 0.0),
        (bx + bw, bh),
        (bx, bh),
        (bx, cy1),
        (aw, cy1),
        (aw, ah),
        (0.0, ah),
    ]


def generate_layout(layout: LayoutSpec, seed: int) -> list[Position3]:
    """Anchor positions for a layout spec; deterministic in (spec, seed)."""
    rng = _rng(seed, _STREAM_LAYOUT, 0, 0)
    if isinstance(layout, ExplicitLayout):
        return [Position3(*p) for p in layout.positions_m]
    if isinstance(layout, GridLayout):
        zs = rng.uniform(layout.z_range_m[0], layout.z_range_m[1], layout.rows * layout.cols)
        return [
            Position3(c * layout.spacing_m, r * layout.spacing_m, float(zs[r * layout.cols + c]))
            for r in range(layout.rows)
            for c in range(layout.cols)
        ]
    vertices = _two_halls_boundary(layout)
    segments = []
    perimeter = 0.0
    for i, a in enumerate(vertices):
        b = vertices[(i + 1) % len(vertices)]
        length = math.hypot(b[0] - a[0], b[1] - a[1])
        segments.append((a, b, length))
        perimeter += length
    n = layout.anchor_count
    zs = rng.uniform(layout.z_range_m[0], layout.z_range_m[1], n)
    positions = []
    for k in range(n):
        target = perimeter * k / n
        for a, b, length in segments:
            if target <= length or (a, b, length) is segments[-1]:
                frac = target / length if length > 0 else 0.0
                positions.append(
                    Position3(
                        a[0] + (b[0] - a[0]) * frac,
                        a[1] + (b[1] - a[1]) * frac,
                        float(zs[k]),
                    )
                )
                break
            target -= length
    _check_coverage(layout, positions)
    return positions


def _check_coverage(layout: TwoHallsLayout, anchors: list[Position3], uwb_range_m: float = 50.0,
                    min_cover: int = 5) -> None:
    """Every free-area point on a 1 m grid must see enough anchors."""
    pts = []
    for x0, y0, x1, y1 in free_rectangles(layout):
        xs = np.arange(math.ceil(x0), math.floor(x1) + 1)
        ys = np.arange(math.ceil(y0), math.floor(y1) + 1)
        gx, gy = np.meshgrid(xs, ys)
        pts.append(np.column_stack([gx.ravel(), gy.ravel()]))
    grid = np.unique(np.concatenate(pts), axis=0).astype(float)
    axy = np.array([[a.x, a.y] for a in anchors])
    d2 = ((grid[:, None, :] - axy[None, :, :]) ** 2).sum(axis=2)
    counts = (d2 <= uwb_range_m**2).sum(axis=1)
    if counts.min() < min_cover:
        worst = grid[counts.argmin()]
        raise InfeasibleSpec(
            f"free-area point ({worst[0]:.0f}, {worst[1]:.0f}) is covered by only "
            f"{counts.min()} anchors; need {min_cover}"
        )


def _in_free_area(x: float, y: float, rects, obstacles: Sequence[Obstacle]) -> bool:
    inside = any(x0 <= x <= x1 and y0 <= y <= y1 for x0, y0, x1, y1 in rects)
    if not inside:
        return False
    return not any(ob.contains(x, y) for ob in obstacles)


def sample_placements(
    config: ScenarioConfig,
    n_placements: Optional[int] = None,
) -> list[list[Position3]]:
    """Tag position sets, uniform over the free area, outside obstacles."""
    count = config.tags.count
    n_place = n_placements if n_placements is not None else config.tags.n_placements
    if config.tags.positions_m is not None:
        fixed = [Position3(*p) for p in config.tags.positions_m]
        return [fixed for _ in range(n_place)]
    rects = free_rectangles(config.layout)
    x0 = min(r[0] for r in rects)
    y0 = min(r[1] for r in rects)
    x1 = max(r[2] for r in rects)
    y1 = max(r[3] for r in rects)
    out = []
    for placement in range(n_place):
        rng = _rng(config.seed, _STREAM_PLACEMENT, placement, 0)
        points = []
        for _ in range(count):
            for _attempt in range(1000):
                x = rng.uniform(x0, x1)
                y = rng.uniform(y0, y1)
                if _in_free_area(x, y, rects, config.obstacles):
                    points.append(Position3(x, y, config.tags.height_m))
                    break
            else:
                raise InfeasibleSpec(
                    "could not place a tag in the free area after 1000 attempts"
                )
        out.append(points)
    return out


# -- building a runnable setup ----------------------------------------------------


def _schedule(config: ScenarioConfig) -> ResponseSchedule:
    return ResponseSchedule(
        response_base_ps=round(config.protocol.response_base_us * PS_PER_MICROSECOND),
        response_step_ps=round(config.protocol.response_step_us * PS_PER_MICROSECOND),
        wakeup_settle_ps=round(config.protocol.wakeup_settle_us * PS_PER_MICROSECOND),
    )


def _pick_initiator(config: ScenarioConfig, anchors: list[Position3]) -> int:
    if config.protocol.initiator_index is not None:
        if config.protocol.initiator_index >= len(anchors):
            raise InfeasibleSpec("initiator_index outside the anchor list")
        return config.protocol.initiator_index
    rects = free_rectangles(config.layout)
    area = sum((r[2] - r[0]) * (r[3] - r[1]) for r in rects)
    if area > 0:
        cx = sum((r[2] + r[0]) / 2 * (r[2] - r[0]) * (r[3] - r[1]) for r in rects) / area
        cy = sum((r[3] + r[1]) / 2 * (r[2] - r[0]) * (r[3] - r[1]) for r in rects) / area
    else:
        cx = sum(a.x for a in anchors) / len(anchors)
        cy = sum(a.y for a in anchors) / len(anchors)
    dists = [math.hypot(a.x - cx, a.y - cy) for a in anchors]
    return int(np.argmin(dists))


def default_horizon_s(config: ScenarioConfig) -> float:
    """Horizon that covers the configured round quota, or 10 s without one."""
    quota = config.protocol.rounds_per_tag
    if quota is None:
        return 10.0
    if config.scheme == "flextdoa":
        return (quota - 1) * config.protocol.localization_period_s + config.protocol.t_f_s + 1.0
    return quota * config.protocol.localization_period_s + 1.0


def build_simulation(
    config: ScenarioConfig,
    placement_index: int = 0,
    record_trace: bool = False,
) -> SimulationSetup:
    """Instantiate nodes, clocks, triggers, and context for one placement."""
    anchor_positions = generate_layout(config.layout, config.seed)
    tag_positions = sample_placements(config, placement_index + 1)[placement_index]
    schedule = _schedule(config)
    n_anchors = len(anchor_positions)
    initiator = _pick_initiator(config, anchor_positions) if config.scheme == "flextdoa" else None

    def make_clock(node_id: int) -> ClockModel:
        rng = _rng(config.seed, _STREAM_CLOCK, placement_index, node_id)
        skew = rng.uniform(-config.clocks.skew_ppm_range, config.clocks.skew_ppm_range) * 1e-6
        offset = round(rng.uniform(0.0, config.clocks.offset_jitter_us) * PS_PER_MICROSECOND)
        return ClockModel(skew=skew, offset_ps=offset)

    nodes: list[ProtocolNode] = []
    for i, pos in enumerate(anchor_positions):
        nodes.append(
            AnchorNode(
                node_id=i,
                position=pos,
                clock=make_clock(i),
                rng=_rng(config.seed, _STREAM_NODE, placement_index, i),
                scheme=config.scheme,
                slot=i + 1,
                is_initiator=(initiator == i),
            )
        )
    for j, pos in enumerate(tag_positions):
        node_id = n_anchors + j
        nodes.append(
            TagNode(
                node_id=node_id,
                position=pos,
                clock=make_clock(node_id),
                rng=_rng(config.seed, _STREAM_NODE, placement_index, node_id),
                scheme=config.scheme,
            )
        )

    horizon_s = config.horizon_s if config.horizon_s is not None else default_horizon_s(config)
    horizon_ps = seconds_to_ps(horizon_s)

    ctx = ProtocolContext(
        scheme=config.scheme,
        schedule=schedule,
        channel=config.channel,
        min_responses=config.protocol.min_responses,
        solver=config.solver,
        anchor_positions={i: p for i, p in enumerate(anchor_positions)},
        anchor_slots={i: i + 1 for i in range(n_anchors)},
        max_slot=n_anchors,
        initiator_id=initiator,
        solve_time_ps=partial(
            derive_solve_time_ps, config.energy, schedule, config.channel, wait_slots=n_anchors
        ),
    )

    triggers = schedule_triggers(
        scheme=config.scheme,
        tag_ids=[n_anchors + j for j in range(config.tags.count)],
        period_ps=seconds_to_ps(config.protocol.localization_period_s),
        horizon_ps=horizon_ps,
        rng=_rng(config.seed, _STREAM_TRIGGERS, placement_index, 0),
        mode=config.protocol.trigger_mode or "shuffled",
        rounds_per_tag=config.protocol.rounds_per_tag,
        t_f_ps=seconds_to_ps(config.protocol.t_f_s),
        initiator_id=initiator,
        jitter_ps=seconds_to_ps(config.protocol.trigger_jitter_s),
    )

    return SimulationSetup(
        scheme=config.scheme,
        ctx=ctx,
        nodes=nodes,
        channel=config.channel,
        energy=config.energy,
        triggers=triggers,
        horizon_ps=horizon_ps,
        obstacles=config.obstacles,
        obstacles_block_radio=config.obstacles_block_radio,
        record_trace=record_trace,
    )


def layout_to_csv(positions: Sequence[Position3], path: str, role: str = "anchor") -> None:
    """Write the generated layout as id,x,y,z,role rows."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id,x_m,y_m,z_m,role\n")
        for i, p in enumerate(positions):
            fh.write(f"{i},{p.x!r},{p.y!r},{p.z!r},{role}\n")
