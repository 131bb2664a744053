import math

import pytest

from uwbsim.core import (
    PS_PER_MICROSECOND,
    PS_PER_MILLISECOND,
    PS_PER_SECOND,
    Band,
    MessageKind,
    Position3,
    band_for,
    distance,
    microseconds_to_ps,
    milliseconds_to_ps,
    ps_to_seconds,
    seconds_to_ps,
)


def test_time_conversions_round_trip():
    assert seconds_to_ps(1.5) == 1_500_000_000_000
    assert ps_to_seconds(PS_PER_SECOND) == 1.0
    assert microseconds_to_ps(230) == 230 * PS_PER_MICROSECOND
    assert milliseconds_to_ps(55) == 55 * PS_PER_MILLISECOND
    assert seconds_to_ps(ps_to_seconds(123_456_789)) == 123_456_789


def test_conversions_round_not_truncate():
    assert seconds_to_ps(0.9999999999994) == PS_PER_SECOND - 1
    assert microseconds_to_ps(0.5) == 500_000


def test_position_rejects_non_finite():
    with pytest.raises(ValueError):
        Position3(math.nan, 0.0, 0.0)
    with pytest.raises(ValueError):
        Position3(0.0, math.inf, 0.0)


def test_position_is_immutable():
    p = Position3(1.0, 2.0, 3.0)
    assert p.as_tuple() == (1.0, 2.0, 3.0)
    with pytest.raises(AttributeError):
        p.x = 5.0


def test_distance():
    a = Position3(0.0, 0.0, 0.0)
    b = Position3(3.0, 4.0, 0.0)
    assert distance(a, b) == 5.0
    assert distance(a, a) == 0.0


def test_band_mapping():
    assert band_for(MessageKind.WUC) is Band.WAKEUP
    for kind in (
        MessageKind.POLL,
        MessageKind.RESPONSE,
        MessageKind.FINAL_BROADCAST,
        MessageKind.FLEX_INIT,
        MessageKind.FLEX_RESPONSE,
    ):
        assert band_for(kind) is Band.UWB
