import numpy as np
import pytest

from uwbsim.clock import MAX_ABS_SKEW, ClockModel, cfo_ratio
from uwbsim.core import PS_PER_SECOND, seconds_to_ps


def test_zero_skew_is_identity():
    clock = ClockModel()
    t = seconds_to_ps(123.456)
    assert clock.to_local(t) == t
    assert clock.from_local(t) == t


def test_offset_shifts_epoch():
    clock = ClockModel(skew=0.0, offset_ps=777)
    assert clock.to_local(0) == 777
    assert clock.from_local(777) == 0


def test_round_trip_within_one_tick():
    clock = ClockModel(skew=17e-6, offset_ps=12345)
    for t in (0, 1, seconds_to_ps(1.0), seconds_to_ps(3600.0), seconds_to_ps(86400.0)):
        assert abs(clock.from_local(clock.to_local(t)) - t) <= 1


def test_local_wait_occupies_stretched_global_time():
    # a delay counted as D local ticks spans D*(1+skew) of global time
    for skew in (-20e-6, -1e-9, 0.0, 1e-9, 20e-6):
        clock = ClockModel(skew=skew)
        wait = seconds_to_ps(0.5)
        t0 = seconds_to_ps(100.0)
        t1 = clock.from_local(clock.to_local(t0) + wait)
        expected = wait + wait * skew
        assert abs((t1 - t0) - expected) <= 1
        assert abs(clock.local_duration_to_global(wait) - expected) <= 0.5


def test_skew_bound_enforced():
    ClockModel(skew=MAX_ABS_SKEW)
    with pytest.raises(ValueError):
        ClockModel(skew=MAX_ABS_SKEW * 1.01)
    with pytest.raises(ValueError):
        ClockModel(skew=float("nan"))


def test_cfo_ratio_values():
    assert cfo_ratio(ClockModel(skew=5e-6), ClockModel(skew=5e-6)) == 1.0
    assert cfo_ratio(ClockModel(skew=1e-5), ClockModel()) == pytest.approx(1.00001, abs=1e-12)
    assert cfo_ratio(ClockModel(), ClockModel(skew=2e-5)) == pytest.approx(
        1.0 / 1.00002, abs=1e-12
    )


def test_cfo_ratio_reciprocal_product():
    a = ClockModel(skew=13e-6)
    b = ClockModel(skew=-7e-6)
    assert cfo_ratio(a, b) * cfo_ratio(b, a) == pytest.approx(1.0, abs=1e-15)


def test_cfo_noise_requires_rng_and_perturbs():
    a = ClockModel(skew=1e-5)
    b = ClockModel()
    with pytest.raises(ValueError):
        cfo_ratio(a, b, noise_sigma=1e-8)
    rng = np.random.default_rng(3)
    noisy = cfo_ratio(a, b, noise_sigma=1e-8, rng=rng)
    assert noisy != cfo_ratio(a, b)
    assert noisy == pytest.approx(1.00001, abs=1e-6)


def test_timestamp_reads_global_over_one_plus_skew():
    clock = ClockModel(skew=10e-6)
    t = seconds_to_ps(1000.0)
    expected = t / (1.0 + 10e-6)
    assert abs(clock.to_local(t) - expected) <= 1
