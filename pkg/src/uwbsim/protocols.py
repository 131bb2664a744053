"""Node state machines for the three localization schemes.

Nodes are event-driven: the kernel feeds them frame deliveries, timer
expirations, and localization triggers, and they answer with actions
(transmissions, timers, outcomes, energy activity records). All node-side
deadlines are computed in the node's own skewed clock units.

Scheme summary:

* wakeloc: an active tag sends a wake-up call, polls the anchors it woke,
  ranges against their staggered responses, and broadcasts its estimate so
  overhearing passive tags can solve a downlink TDOA against the same round.
* flextdoa: one fixed anchor initiates rounds on a global period, the other
  anchors answer in their slots, and tags localize purely by listening.
* aptwr: like the active half of wakeloc without a wake-up radio; anchors
  keep their receivers on permanently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .channel import ChannelParams, RxEvent, Transmission
from .clock import ClockModel
from .core import (
    PS_PER_MICROSECOND,
    PS_PER_SECOND,
    Band,
    Message,
    MessageKind,
    NodeId,
    NodeRole,
    Position3,
)
from .energy import EnergyModel
from .solvers import (
    SolverError,
    SolverParams,
    TdoaMeasurement,
    TwrMeasurement,
    cc_ss_twr_range,
    particle_filter_solve,
    trilaterate,
)


@dataclass(frozen=True, slots=True)
class ResponseSchedule:
    """Slotted reply timing shared by every scheme."""

    response_base_ps: int = 720 * PS_PER_MICROSECOND
    response_step_ps: int = 230 * PS_PER_MICROSECOND
    wakeup_settle_ps: int = 500 * PS_PER_MICROSECOND

    def __post_init__(self) -> None:
        if self.response_base_ps <= 0 or self.response_step_ps <= 0:
            raise ValueError("schedule times must be positive")

    def delta_t_ps(self, slot: int) -> int:
        """Reply delay for the 1-based response slot."""
        if slot < 1:
            raise ValueError(f"slots are 1-based, got {slot}")
        return self.response_base_ps + self.response_step_ps * slot


# -- events handed to nodes ---------------------------------------------------


@dataclass(frozen=True, slots=True)
class TriggerLocalize:
    pass


@dataclass(frozen=True, slots=True)
class TimerFired:
    tag: str


@dataclass(frozen=True, slots=True)
class TxDone:
    transmission: Transmission


NodeEvent = Union[TriggerLocalize, TimerFired, TxDone, RxEvent]


# -- actions returned by nodes ------------------------------------------------


@dataclass(frozen=True, slots=True)
class StartTx:
    message: Message
    tx_mark_local_ps: Optional[int] = None  # None means transmit immediately


@dataclass(frozen=True, slots=True)
class ArmTimer:
    deadline_local_ps: int
    tag: str


@dataclass(frozen=True, slots=True)
class RecordActivity:
    kind: str  # "wakeup", "wakeup_tx", or "localization"
    role: str  # "active_tag", "passive_tag", or "anchor"
    t_start_ps: int
    t_end_ps: int
    n: int


@dataclass(frozen=True, slots=True)
class LocalizationOutcome:
    node: NodeId
    scheme: str
    mode: str  # "active" or "passive"
    success: bool
    estimate: Optional[Position3]
    failure_reason: Optional[str]
    n_responses_used: int
    t_trigger_ps: int
    t_emit_ps: int
    latency_ps: int
    round_id: int
    truth: Position3
    spread_m: float = 0.0
    converged: bool = True
    measurements: tuple = ()


@dataclass(frozen=True, slots=True)
class EmitOutcome:
    outcome: LocalizationOutcome


Action = Union[StartTx, ArmTimer, RecordActivity, EmitOutcome]


@dataclass(frozen=True)
class ProtocolContext:
    """Static per-scenario facts every node may rely on."""

    scheme: str
    schedule: ResponseSchedule
    channel: ChannelParams
    min_responses: int
    solver: SolverParams
    anchor_positions: dict[NodeId, Position3]
    anchor_slots: dict[NodeId, int]
    max_slot: int
    initiator_id: Optional[NodeId]
    solve_time_ps: Callable[[int], int]

    def collection_window_ps(self) -> int:
        """Local wait from the poll air start until the last slot has landed.

        The guard absorbs propagation and worst-case relative clock skew so
        the final slotted reply cannot straddle the deadline.
        """
        return (
            self.channel.uwb_frame_airtime_ps
            + self.schedule.delta_t_ps(self.max_slot)
            + self.channel.uwb_frame_airtime_ps
            + COLLECTION_GUARD_PS
        )


def derive_solve_time_ps(
    energy: EnergyModel,
    schedule: ResponseSchedule,
    channel: ChannelParams,
    n: int,
    wait_slots: Optional[int] = None,
) -> int:
    """Tag-side compute time, backed out of the characterized active-tag
    localization duration by removing the radio phases of the round."""
    radio = (
        channel.uwb_frame_airtime_ps
        + schedule.delta_t_ps(wait_slots if wait_slots is not None else n)
        + 2 * channel.uwb_frame_airtime_ps
    )
    return max(0, energy.localization_duration_ps("active_tag", n) - radio)


def end_to_end_latency_ps(
    scheme: str,
    n: int,
    schedule: ResponseSchedule,
    channel: ChannelParams,
    energy: EnergyModel,
) -> int:
    """Analytic trigger-to-outcome latency of a collision-free round.

    Mirrors the simulated sequencing exactly, including the collection
    guard, with all waits at their nominal (zero-skew) lengths.
    """
    solve = derive_solve_time_ps(energy, schedule, channel, n)
    air = channel.uwb_frame_airtime_ps
    core = air + schedule.delta_t_ps(n) + air + COLLECTION_GUARD_PS + solve
    if scheme == "wakeloc":
        return channel.wuc_duration_ps + schedule.wakeup_settle_ps + core + air
    if scheme == "aptwr":
        return core + air
    if scheme == "flextdoa":
        return core
    raise ValueError(f"unknown scheme {scheme!r}")


# -- node machinery -----------------------------------------------------------


class AnchorState(Enum):
    SLEEP = "sleep"
    AWAIT_POLL = "await_poll"
    RESPOND_SCHEDULED = "respond_scheduled"
    IDLE = "idle"  # flextdoa initiator between rounds


class TagState(Enum):
    IDLE = "idle"
    WUC_TX = "wuc_tx"
    SETTLE = "settle"
    POLL_TX = "poll_tx"
    COLLECT = "collect"
    SOLVE = "solve"
    BCAST_TX = "bcast_tx"
    WAIT_POLL = "wait_poll"  # woken passive tag, poll not yet heard
    COLLECT_PASSIVE = "collect_passive"
    SOLVE_PASSIVE = "solve_passive"
    LISTEN_FLEX = "listen_flex"
    SOLVE_FLEX = "solve_flex"


COLLECTION_GUARD_PS = 5 * PS_PER_MICROSECOND
PASSIVE_GUARD_PS = 500 * PS_PER_MICROSECOND
AWAIT_POLL_GUARD_PS = 1000 * PS_PER_MICROSECOND


class ProtocolNode:
    """Base class: identity, clock, and the kernel-facing surface."""

    def __init__(
        self,
        node_id: NodeId,
        role: NodeRole,
        position: Position3,
        clock: ClockModel,
        rng: np.random.Generator,
    ) -> None:
        self.node_id = node_id
        self.role = role
        self.position = position
        self.clock = clock
        self.rng = rng
        self.transmitting = False

    def listening(self, band: Band) -> bool:
        raise NotImplementedError

    def advance(self, event: NodeEvent, ctx: ProtocolContext, now_ps: int) -> list[Action]:
        raise NotImplementedError


class AnchorNode(ProtocolNode):
    """Responder (any scheme) or flextdoa initiator."""

    def __init__(self, node_id, position, clock, rng, scheme: str, slot: int, is_initiator: bool = False):
        super().__init__(node_id, NodeRole.ANCHOR, position, clock, rng)
        self.scheme = scheme
        self.slot = slot
        self.is_initiator = is_initiator
        if is_initiator:
            self.state = AnchorState.IDLE
        elif scheme == "wakeloc":
            self.state = AnchorState.SLEEP
        else:
            self.state = AnchorState.AWAIT_POLL
        self._poll_mark_ps = 0
        self._round_id = 0
        self._round_counter = 0

    def listening(self, band: Band) -> bool:
        if self.transmitting:
            return False
        if band is Band.WAKEUP:
            return self.scheme == "wakeloc" and self.state is AnchorState.SLEEP
        return self.state in (AnchorState.AWAIT_POLL, AnchorState.RESPOND_SCHEDULED)

    def advance(self, event: NodeEvent, ctx: ProtocolContext, now_ps: int) -> list[Action]:
        if isinstance(event, TriggerLocalize):
            if self.is_initiator and self.state is AnchorState.IDLE:
                self._round_counter += 1
                msg = Message(
                    kind=MessageKind.FLEX_INIT,
                    source_addr=self.node_id,
                    round_id=self._round_counter,
                )
                return [StartTx(msg)]
            return []

        if isinstance(event, RxEvent):
            return self._on_frame(event, ctx)

        if isinstance(event, TimerFired):
            if event.tag == "respond" and self.state is AnchorState.RESPOND_SCHEDULED:
                return self._transmit_response(ctx)
            if event.tag == "poll_timeout" and self.state is AnchorState.AWAIT_POLL:
                if self.scheme == "wakeloc":
                    self.state = AnchorState.SLEEP
            return []

        if isinstance(event, TxDone):
            kind = event.transmission.message.kind
            if kind in (MessageKind.RESPONSE, MessageKind.FLEX_RESPONSE):
                self.state = (
                    AnchorState.SLEEP if self.scheme == "wakeloc" else AnchorState.AWAIT_POLL
                )
            elif kind is MessageKind.FLEX_INIT:
                self.state = AnchorState.IDLE
            return []

        return []

    def _on_frame(self, rx: RxEvent, ctx: ProtocolContext) -> list[Action]:
        kind = rx.transmission.message.kind
        if kind is MessageKind.WUC and self.state is AnchorState.SLEEP:
            self.state = AnchorState.AWAIT_POLL
            timeout = (
                rx.t_local_ps
                + ctx.channel.wuc_duration_ps
                + ctx.schedule.wakeup_settle_ps
                + ctx.channel.uwb_frame_airtime_ps
                + AWAIT_POLL_GUARD_PS
            )
            return [
                RecordActivity("wakeup", "anchor", rx.t_arrival_start_ps, rx.t_arrival_end_ps, 1),
                ArmTimer(timeout, "poll_timeout"),
            ]
        poll_kind = MessageKind.FLEX_INIT if self.scheme == "flextdoa" else MessageKind.POLL
        if kind is poll_kind and self.state is AnchorState.AWAIT_POLL and not self.is_initiator:
            self._poll_mark_ps = rx.t_local_ps
            self._round_id = rx.transmission.message.round_id
            self.state = AnchorState.RESPOND_SCHEDULED
            deadline = rx.t_local_ps + ctx.schedule.delta_t_ps(self.slot)
            return [ArmTimer(deadline, "respond")]
        return []

    def _transmit_response(self, ctx: ProtocolContext) -> list[Action]:
        delta = ctx.schedule.delta_t_ps(self.slot)
        if self.scheme == "flextdoa":
            msg = Message(
                kind=MessageKind.FLEX_RESPONSE,
                source_addr=self.node_id,
                round_id=self._round_id,
                anchor_index=self.slot,
                anchor_position=self.position,
            )
        else:
            msg = Message(
                kind=MessageKind.RESPONSE,
                source_addr=self.node_id,
                round_id=self._round_id,
                anchor_index=self.slot,
                anchor_position=self.position,
                reply_duration_ps=delta,
            )
        return [StartTx(msg, tx_mark_local_ps=self._poll_mark_ps + delta)]


@dataclass(slots=True)
class _ResponseRecord:
    slot: int
    t_local_ps: int
    cfo: float
    anchor_position: Position3
    reply_duration_ps: Optional[int]


class TagNode(ProtocolNode):
    """A tag; in wakeloc it can serve either side of a round."""

    def __init__(self, node_id, position, clock, rng, scheme: str):
        super().__init__(node_id, NodeRole.TAG, position, clock, rng)
        self.scheme = scheme
        self.state = TagState.IDLE
        self.session_addr = 0
        self._trigger_ps = 0
        self._round_id = 0
        self._poll_tx_mark_ps = 0
        self._poll_rx: Optional[tuple[int, float]] = None  # local mark, cfo
        self._poll_arrival_global_ps = 0
        self._responses: dict[int, _ResponseRecord] = {}
        self._estimate: Optional[Position3] = None
        self._spread_m = 0.0
        self._converged = True
        self._n_used = 0
        self._measurements: tuple = ()
        self._loc_start_global_ps = 0

    def listening(self, band: Band) -> bool:
        if self.transmitting:
            return False
        if band is Band.WAKEUP:
            return self.scheme == "wakeloc" and self.state is TagState.IDLE
        return self.state in (
            TagState.COLLECT,
            TagState.WAIT_POLL,
            TagState.COLLECT_PASSIVE,
            TagState.LISTEN_FLEX,
        )

    # -- event dispatch --------------------------------------------------

    def advance(self, event: NodeEvent, ctx: ProtocolContext, now_ps: int) -> list[Action]:
        if isinstance(event, TriggerLocalize):
            return self._on_trigger(ctx, now_ps)
        if isinstance(event, RxEvent):
            return self._on_frame(event, ctx, now_ps)
        if isinstance(event, TimerFired):
            return self._on_timer(event.tag, ctx, now_ps)
        if isinstance(event, TxDone):
            return self._on_tx_done(event.transmission, ctx, now_ps)
        return []

    def _on_trigger(self, ctx: ProtocolContext, now_ps: int) -> list[Action]:
        if self.state is not TagState.IDLE:
            return []  # radio busy with another round; this request is lost
        self._reset_round()
        self._trigger_ps = now_ps
        if self.scheme == "flextdoa":
            self.state = TagState.LISTEN_FLEX
            deadline = self.clock.to_local(now_ps) + ctx.collection_window_ps()
            return [ArmTimer(deadline, "flex_deadline")]
        self.session_addr = int(self.rng.integers(0, 2**32))
        # round ids must be globally unique; session addresses alone may
        # collide between tags
        self._round_id = (self.node_id << 32) | self.session_addr
        if self.scheme == "wakeloc":
            self.state = TagState.WUC_TX
            return [StartTx(Message(MessageKind.WUC, self.session_addr, self._round_id))]
        self.state = TagState.POLL_TX
        return [StartTx(Message(MessageKind.POLL, self.session_addr, self._round_id))]

    def _on_tx_done(self, tx: Transmission, ctx: ProtocolContext, now_ps: int) -> list[Action]:
        kind = tx.message.kind
        if kind is MessageKind.WUC:
            self.state = TagState.SETTLE
            deadline = self.clock.to_local(now_ps) + ctx.schedule.wakeup_settle_ps
            return [
                RecordActivity("wakeup_tx", "active_tag", tx.t_air_start_ps, tx.t_air_end_ps, 1),
                ArmTimer(deadline, "settle"),
            ]
        if kind is MessageKind.POLL:
            self.state = TagState.COLLECT
            self._poll_tx_mark_ps = self.clock.to_local(tx.t_air_start_ps)
            self._loc_start_global_ps = tx.t_air_start_ps
            deadline = self._poll_tx_mark_ps + ctx.collection_window_ps()
            return [ArmTimer(deadline, "collect_deadline")]
        if kind is MessageKind.FINAL_BROADCAST:
            outcome = self._success_outcome(ctx, now_ps, mode="active")
            self.state = TagState.IDLE
            return [
                RecordActivity(
                    "localization", "active_tag", self._loc_start_global_ps, now_ps, self._n_used
                ),
                EmitOutcome(outcome),
            ]
        return []

    def _on_timer(self, tag: str, ctx: ProtocolContext, now_ps: int) -> list[Action]:
        if tag == "settle" and self.state is TagState.SETTLE:
            self.state = TagState.POLL_TX
            return [StartTx(Message(MessageKind.POLL, self.session_addr, self._round_id))]

        if tag == "collect_deadline" and self.state is TagState.COLLECT:
            return self._finish_collection_active(ctx, now_ps)

        if tag == "solved" and self.state is TagState.SOLVE:
            self.state = TagState.BCAST_TX
            msg = Message(
                kind=MessageKind.FINAL_BROADCAST,
                source_addr=self.session_addr,
                round_id=self._round_id,
                estimated_position=self._estimate,
            )
            return [StartTx(msg)]

        if tag == "poll_timeout" and self.state is TagState.WAIT_POLL:
            self.state = TagState.IDLE
            return [EmitOutcome(self._failure_outcome(ctx, now_ps, "passive", "no_poll"))]

        if tag == "passive_deadline" and self.state is TagState.COLLECT_PASSIVE:
            reason = (
                "insufficient_responses"
                if len(self._responses) < ctx.min_responses
                else "no_final_broadcast"
            )
            self.state = TagState.IDLE
            return [EmitOutcome(self._failure_outcome(ctx, now_ps, "passive", reason))]

        if tag == "passive_solved" and self.state is TagState.SOLVE_PASSIVE:
            outcome = self._success_outcome(ctx, now_ps, mode="passive")
            self.state = TagState.IDLE
            return [
                RecordActivity(
                    "localization", "passive_tag", self._loc_start_global_ps, now_ps, self._n_used
                ),
                EmitOutcome(outcome),
            ]

        if tag == "flex_deadline" and self.state is TagState.LISTEN_FLEX:
            return self._finish_collection_flex(ctx, now_ps)

        if tag == "flex_solved" and self.state is TagState.SOLVE_FLEX:
            outcome = self._success_outcome(ctx, now_ps, mode="passive")
            self.state = TagState.IDLE
            return [
                RecordActivity(
                    "localization", "passive_tag", self._loc_start_global_ps, now_ps, self._n_used
                ),
                EmitOutcome(outcome),
            ]

        return []

    def _on_frame(self, rx: RxEvent, ctx: ProtocolContext, now_ps: int) -> list[Action]:
        msg = rx.transmission.message
        kind = msg.kind

        if kind is MessageKind.WUC and self.state is TagState.IDLE and self.scheme == "wakeloc":
            self._reset_round()
            self._trigger_ps = rx.t_arrival_start_ps
            self.state = TagState.WAIT_POLL
            timeout = (
                rx.t_local_ps
                + ctx.channel.wuc_duration_ps
                + ctx.schedule.wakeup_settle_ps
                + ctx.channel.uwb_frame_airtime_ps
                + AWAIT_POLL_GUARD_PS
            )
            return [
                RecordActivity(
                    "wakeup", "passive_tag", rx.t_arrival_start_ps, rx.t_arrival_end_ps, 1
                ),
                ArmTimer(timeout, "poll_timeout"),
            ]

        if kind is MessageKind.POLL and self.state is TagState.WAIT_POLL:
            self._round_id = msg.round_id
            self._poll_rx = (rx.t_local_ps, rx.cfo)
            self._poll_arrival_global_ps = rx.t_arrival_start_ps
            self._loc_start_global_ps = rx.t_arrival_start_ps
            self.state = TagState.COLLECT_PASSIVE
            deadline = (
                rx.t_local_ps
                + ctx.collection_window_ps()
                + ctx.solve_time_ps(ctx.max_slot)
                + ctx.channel.uwb_frame_airtime_ps
                + PASSIVE_GUARD_PS
            )
            return [ArmTimer(deadline, "passive_deadline")]

        if kind is MessageKind.RESPONSE and self.state in (
            TagState.COLLECT,
            TagState.COLLECT_PASSIVE,
        ):
            if msg.round_id == self._round_id and msg.anchor_index not in self._responses:
                self._responses[msg.anchor_index] = _ResponseRecord(
                    slot=msg.anchor_index,
                    t_local_ps=rx.t_local_ps,
                    cfo=rx.cfo,
                    anchor_position=msg.anchor_position,
                    reply_duration_ps=msg.reply_duration_ps,
                )
            return []

        if kind is MessageKind.FLEX_INIT and self.state is TagState.LISTEN_FLEX:
            self._round_id = msg.round_id
            self._poll_rx = (rx.t_local_ps, rx.cfo)
            self._loc_start_global_ps = rx.t_arrival_start_ps
            return []

        if kind is MessageKind.FLEX_RESPONSE and self.state is TagState.LISTEN_FLEX:
            if msg.round_id == self._round_id and msg.anchor_index not in self._responses:
                self._responses[msg.anchor_index] = _ResponseRecord(
                    slot=msg.anchor_index,
                    t_local_ps=rx.t_local_ps,
                    cfo=rx.cfo,
                    anchor_position=msg.anchor_position,
                    reply_duration_ps=None,
                )
            return []

        if kind is MessageKind.FINAL_BROADCAST and self.state is TagState.COLLECT_PASSIVE:
            if msg.round_id != self._round_id:
                return []
            return self._finish_collection_passive(msg.estimated_position, ctx, now_ps)

        return []

    # -- round completion --------------------------------------------------

    def _finish_collection_active(self, ctx: ProtocolContext, now_ps: int) -> list[Action]:
        n = len(self._responses)
        if n < ctx.min_responses:
            self.state = TagState.IDLE
            return [
                EmitOutcome(
                    self._failure_outcome(ctx, now_ps, "active", "insufficient_responses")
                )
            ]
        measurements = []
        for rec in sorted(self._responses.values(), key=lambda r: r.slot):
            measurements.append(
                TwrMeasurement(
                    anchor_position=rec.anchor_position,
                    t_round_s=(rec.t_local_ps - self._poll_tx_mark_ps) / PS_PER_SECOND,
                    t_reply_nominal_s=ctx.schedule.delta_t_ps(rec.slot) / PS_PER_SECOND,
                    t_reply_reported_s=(
                        rec.reply_duration_ps / PS_PER_SECOND
                        if rec.reply_duration_ps is not None
                        else None
                    ),
                    cfo=rec.cfo,
                )
            )
        ranges = []
        for m in measurements:
            try:
                ranges.append((m.anchor_position, cc_ss_twr_range(m, ctx.channel.uwb_range_m)))
            except SolverError:
                continue
        self._measurements = tuple(measurements)
        self._n_used = len(ranges)
        if self._n_used < ctx.min_responses:
            self.state = TagState.IDLE
            return [
                EmitOutcome(
                    self._failure_outcome(ctx, now_ps, "active", "insufficient_responses")
                )
            ]
        try:
            result = trilaterate(ranges, ctx.solver)
        except SolverError as exc:
            self.state = TagState.IDLE
            return [
                EmitOutcome(
                    self._failure_outcome(ctx, now_ps, "active", type(exc).__name__)
                )
            ]
        self._estimate = result.position
        self._converged = True
        self.state = TagState.SOLVE
        deadline_mark = self._poll_tx_mark_ps + ctx.collection_window_ps()
        return [ArmTimer(deadline_mark + ctx.solve_time_ps(self._n_used), "solved")]

    def _finish_collection_passive(
        self, broadcast_position: Position3, ctx: ProtocolContext, now_ps: int
    ) -> list[Action]:
        n = len(self._responses)
        if n < ctx.min_responses:
            self.state = TagState.IDLE
            return [
                EmitOutcome(
                    self._failure_outcome(ctx, now_ps, "passive", "insufficient_responses")
                )
            ]
        return self._solve_tdoa(
            initiator=broadcast_position,
            n_used=n,
            use_reported_delta=True,
            solve_state=TagState.SOLVE_PASSIVE,
            timer_tag="passive_solved",
            mode="passive",
            ctx=ctx,
            now_ps=now_ps,
        )

    def _finish_collection_flex(self, ctx: ProtocolContext, now_ps: int) -> list[Action]:
        if self._poll_rx is None:
            self.state = TagState.IDLE
            return [EmitOutcome(self._failure_outcome(ctx, now_ps, "passive", "no_initiator_frame"))]
        n_used = len(self._responses) + 1  # the initiator frame is a measurement too
        if n_used < ctx.min_responses:
            self.state = TagState.IDLE
            return [
                EmitOutcome(
                    self._failure_outcome(ctx, now_ps, "passive", "insufficient_responses")
                )
            ]
        return self._solve_tdoa(
            initiator=ctx.anchor_positions[ctx.initiator_id],
            n_used=n_used,
            use_reported_delta=False,
            solve_state=TagState.SOLVE_FLEX,
            timer_tag="flex_solved",
            mode="passive",
            ctx=ctx,
            now_ps=now_ps,
        )

    def _solve_tdoa(
        self,
        initiator: Position3,
        n_used: int,
        use_reported_delta: bool,
        solve_state: TagState,
        timer_tag: str,
        mode: str,
        ctx: ProtocolContext,
        now_ps: int,
    ) -> list[Action]:
        ref_mark, _ = self._poll_rx
        measurements: list[TdoaMeasurement] = [
            TdoaMeasurement(t_arrival_s=ref_mark / PS_PER_SECOND, is_reference=True)
        ]
        for rec in sorted(self._responses.values(), key=lambda r: r.slot):
            delta_ps = (
                rec.reply_duration_ps
                if use_reported_delta and rec.reply_duration_ps is not None
                else ctx.schedule.delta_t_ps(rec.slot)
            )
            measurements.append(
                TdoaMeasurement(
                    t_arrival_s=rec.t_local_ps / PS_PER_SECOND,
                    anchor_position=rec.anchor_position,
                    delta_t_s=delta_ps / PS_PER_SECOND,
                    cfo=rec.cfo,
                )
            )
        self._measurements = tuple(measurements)
        self._n_used = n_used
        try:
            solution = particle_filter_solve(measurements, initiator, ctx.solver, self.rng)
        except SolverError as exc:
            self.state = TagState.IDLE
            return [EmitOutcome(self._failure_outcome(ctx, now_ps, mode, type(exc).__name__))]
        self._estimate = solution.position
        self._spread_m = solution.spread_m
        self._converged = solution.converged
        self.state = solve_state
        deadline = self.clock.to_local(now_ps) + ctx.solve_time_ps(n_used)
        return [ArmTimer(deadline, timer_tag)]

    # -- outcome helpers ---------------------------------------------------

    def _success_outcome(self, ctx: ProtocolContext, now_ps: int, mode: str) -> LocalizationOutcome:
        return LocalizationOutcome(
            node=self.node_id,
            scheme=self.scheme,
            mode=mode,
            success=True,
            estimate=self._estimate,
            failure_reason=None,
            n_responses_used=self._n_used,
            t_trigger_ps=self._trigger_ps,
            t_emit_ps=now_ps,
            latency_ps=now_ps - self._trigger_ps,
            round_id=self._round_id,
            truth=self.position,
            spread_m=self._spread_m,
            converged=self._converged,
            measurements=self._measurements,
        )

    def _failure_outcome(
        self, ctx: ProtocolContext, now_ps: int, mode: str, reason: str
    ) -> LocalizationOutcome:
        return LocalizationOutcome(
            node=self.node_id,
            scheme=self.scheme,
            mode=mode,
            success=False,
            estimate=None,
            failure_reason=reason,
            n_responses_used=len(self._responses),
            t_trigger_ps=self._trigger_ps,
            t_emit_ps=now_ps,
            latency_ps=now_ps - self._trigger_ps,
            round_id=self._round_id,
            truth=self.position,
            measurements=self._measurements,
        )

    def _reset_round(self) -> None:
        self._responses = {}
        self._poll_rx = None
        self._estimate = None
        self._spread_m = 0.0
        self._converged = True
        self._n_used = 0
        self._measurements = ()
