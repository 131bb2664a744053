import numpy as np
import pytest

from uwbsim.channel import (
    SPEED_OF_LIGHT,
    ChannelParams,
    Obstacle,
    Transmission,
    arbitrate_receptions,
    arrival_interval,
    intervals_overlap,
    link_clear,
    make_rx_event,
    propagation_delay_ps,
)
from uwbsim.clock import ClockModel
from uwbsim.core import Band, Message, MessageKind, Position3, microseconds_to_ps

NOISELESS = ChannelParams(toa_noise_sigma_s=0.0)


def _tx(sender, origin, kind, start_ps, airtime_ps=170 * 10**6, **msg_kw):
    msg = Message(kind=kind, source_addr=sender, **msg_kw)
    return Transmission(
        sender=sender,
        origin=origin,
        message=msg,
        t_air_start_ps=start_ps,
        t_air_end_ps=start_ps + airtime_ps,
    )


def test_propagation_delay():
    assert propagation_delay_ps(0.0) == 0
    assert propagation_delay_ps(SPEED_OF_LIGHT) == 10**12
    # 3 m is almost exactly 10 ns of flight time
    assert propagation_delay_ps(3.0) == pytest.approx(10_007, abs=5)
    with pytest.raises(ValueError):
        propagation_delay_ps(-1.0)


def test_arrival_interval_shifts_by_flight_time():
    tx = _tx(0, Position3(0.0, 0.0, 0.0), MessageKind.POLL, 1000)
    start, end = arrival_interval(tx, Position3(SPEED_OF_LIGHT, 0.0, 0.0))
    assert start == 1000 + 10**12
    assert end - start == tx.t_air_end_ps - tx.t_air_start_ps


def test_half_open_overlap():
    assert not intervals_overlap((0, 10), (10, 20))
    assert intervals_overlap((0, 11), (10, 20))
    assert intervals_overlap((10, 20), (0, 11))
    assert not intervals_overlap((0, 10), (20, 30))


def test_band_of_transmission():
    wuc = _tx(0, Position3(0, 0, 0), MessageKind.WUC, 0)
    poll = _tx(0, Position3(0, 0, 0), MessageKind.POLL, 0)
    assert wuc.band is Band.WAKEUP
    assert poll.band is Band.UWB


def test_overlapping_frames_destroy_each_other():
    receiver_pos = Position3(0.0, 0.0, 0.0)
    a = _tx(1, Position3(5.0, 0.0, 0.0), MessageKind.POLL, 0)
    b = _tx(2, Position3(0.0, 5.0, 0.0), MessageKind.POLL, microseconds_to_ps(100))
    delivered = arbitrate_receptions(0, receiver_pos, ClockModel(), [a, b], NOISELESS)
    assert delivered == []


def test_disjoint_frames_both_delivered_in_order():
    receiver_pos = Position3(0.0, 0.0, 0.0)
    a = _tx(1, Position3(5.0, 0.0, 0.0), MessageKind.POLL, 0)
    b = _tx(2, Position3(0.0, 5.0, 0.0), MessageKind.POLL, microseconds_to_ps(400))
    delivered = arbitrate_receptions(0, receiver_pos, ClockModel(), [a, b], NOISELESS)
    assert [ev.transmission.sender for ev in delivered] == [1, 2]


def test_out_of_range_not_received():
    receiver_pos = Position3(0.0, 0.0, 0.0)
    far = _tx(1, Position3(51.0, 0.0, 0.0), MessageKind.POLL, 0)
    assert arbitrate_receptions(0, receiver_pos, ClockModel(), [far], NOISELESS) == []
    # the wake-up band has its own, shorter range
    wuc = _tx(1, Position3(21.0, 0.0, 0.0), MessageKind.WUC, 0)
    assert arbitrate_receptions(0, receiver_pos, ClockModel(), [wuc], NOISELESS) == []


def test_bands_do_not_collide_with_each_other():
    receiver_pos = Position3(0.0, 0.0, 0.0)
    wuc = _tx(1, Position3(5.0, 0.0, 0.0), MessageKind.WUC, 0)
    poll = _tx(2, Position3(0.0, 5.0, 0.0), MessageKind.POLL, 10**6)
    delivered = arbitrate_receptions(0, receiver_pos, ClockModel(), [wuc, poll], NOISELESS)
    assert len(delivered) == 2


def test_own_transmission_ignored():
    receiver_pos = Position3(0.0, 0.0, 0.0)
    own = _tx(0, receiver_pos, MessageKind.POLL, 0)
    assert arbitrate_receptions(0, receiver_pos, ClockModel(), [own], NOISELESS) == []


def test_rx_event_timestamp_and_cfo():
    tx = _tx(1, Position3(10.0, 0.0, 0.0), MessageKind.POLL, 0)
    interval = arrival_interval(tx, Position3(0.0, 0.0, 0.0))
    rx_clock = ClockModel(skew=-4e-6)
    clocks = {1: ClockModel(skew=9e-6)}
    ev = make_rx_event(0, rx_clock, tx, interval, NOISELESS, clocks=clocks)
    assert ev.t_local_ps == rx_clock.to_local(interval[0])
    assert ev.cfo == pytest.approx((1 + 9e-6) / (1 - 4e-6), abs=1e-12)


def test_toa_noise_needs_rng_and_moves_timestamp():
    params = ChannelParams(toa_noise_sigma_s=1e-9)
    tx = _tx(1, Position3(10.0, 0.0, 0.0), MessageKind.POLL, 0)
    interval = arrival_interval(tx, Position3(0.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        make_rx_event(0, ClockModel(), tx, interval, params)
    draws = {
        make_rx_event(0, ClockModel(), tx, interval, params, rng=np.random.default_rng(s)).t_local_ps
        for s in range(8)
    }
    assert len(draws) > 1
    assert all(abs(t - interval[0]) < 10_000 for t in draws)  # within 10 ns


def test_obstacle_blocks_and_contains():
    box = Obstacle(2.0, 2.0, 8.0, 8.0)
    assert box.contains(5.0, 5.0)
    assert not box.contains(1.0, 5.0)
    a = Position3(0.0, 5.0, 1.0)
    b = Position3(10.0, 5.0, 1.0)
    assert box.blocks_segment(a, b)
    assert not box.blocks_segment(Position3(0.0, 9.0, 1.0), Position3(10.0, 9.0, 1.0))
    assert not link_clear(a, b, [box])
    assert link_clear(a, Position3(0.0, 9.0, 1.0), [box])
