import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import tiny_instance
from tripshift.instance import (
    DEADHEAD, DEPOT, PULL_IN, PULL_OUT, STATION, TRIP, WAIT, GenParams, InstanceError,
    InstanceParseError, arc_cost, dumps_instance, generate_instance, instance_from_dict,
    instance_summary, instance_to_dict, is_peak, load_instance, loads_instance, save_instance,
)


def test_generator_is_deterministic(tmp_path):
    a = generate_instance(GenParams(60, seed=3))
    b = generate_instance(GenParams(60, seed=3))
    assert a == b
    pa, pb = save_instance(a, tmp_path / "a.json"), save_instance(b, tmp_path / "b.json")
    assert pa.read_bytes() == pb.read_bytes()
    assert generate_instance(GenParams(60, seed=4)) != a


def test_generator_500_trip_shape():
    inst = generate_instance(GenParams(500, seed=0))
    s = instance_summary(inst)
    assert (s["trips"], s["short"], s["long"], s["stations"], s["depots"]) == (500, 200, 300, 50, 4)
    # stations come first, depots after them
    assert inst.stations == tuple(range(50))
    assert inst.depots == (50, 51, 52, 53)


def test_generator_zero_trips():
    inst = generate_instance(GenParams(0, num_locations=3))
    assert inst.trips == ()
    assert instance_summary(inst)["trips"] == 0


def test_generator_rejects_bad_params():
    with pytest.raises(ValueError, match="short_fraction"):
        GenParams(10, short_fraction=1.5).validate()
    with pytest.raises(ValueError, match="2 stations"):
        GenParams(10, num_locations=1).validate()


def test_trip_ids_follow_departure_order():
    inst = generate_instance(GenParams(80, seed=1))
    starts = [t.start_time for t in inst.trips]
    assert starts == sorted(starts)
    assert [t.id for t in inst.trips] == list(range(80))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(10, 60))
def test_generated_trip_properties(seed, n):
    p = GenParams(n, seed=seed)
    inst = generate_instance(p)
    tt = inst.tt
    for t in inst.trips:
        if t.start_location != t.end_location:
            slack = t.duration - tt[t.start_location, t.end_location]
            assert 0 <= slack <= 45
        else:
            assert 180 <= t.duration <= 300
        assert p.day[0] <= t.start_time and t.end_time <= p.day[1] + 45 + tt.max()
    # closed under shortest paths: no detour is ever faster
    assert (tt[:, :, None] + tt[None, :, :] >= tt[:, None, :]).all()
    assert (tt == tt.T).all() and (np.diag(tt) == 0).all()
    assert (tt[~np.eye(len(tt), dtype=bool)] >= 1).all()


def test_short_trips_concentrate_in_peaks():
    inst = generate_instance(GenParams(20_000, short_fraction=1.0, num_locations=8, seed=5))
    frac = np.mean([is_peak(t.start_time) for t in inst.trips])
    # half drawn inside the peaks plus the uniform half's 120/960 share
    assert abs(frac - 0.5625) < 0.015


def _three():
    tt = [[0, 17, 20], [17, 0, 12], [20, 12, 0]]
    return tiny_instance(tt, [DEPOT, STATION, STATION], [(1, 2, 100, 130)])


def test_arc_costs():
    inst = _three()
    assert arc_cost(DEADHEAD, 0, 1, inst) == 17
    assert arc_cost(TRIP, 1, 2, inst) == 0
    assert arc_cost(WAIT, 1, 1, inst) == 0
    assert arc_cost(PULL_OUT, 0, 1, inst) == 517
    assert arc_cost(PULL_IN, 1, 0, inst) == 517
    tt = [[0, 12], [12, 0]]
    assert arc_cost(PULL_IN, 1, 0, tiny_instance(tt, [DEPOT, STATION], [])) == 512
    with pytest.raises(ValueError):
        arc_cost("teleport", 0, 1, inst)


def test_round_trip(tmp_path):
    inst = generate_instance(GenParams(40, seed=2))
    assert instance_from_dict(instance_to_dict(inst)) == inst
    assert load_instance(save_instance(inst, tmp_path / "x.json")) == inst
    assert loads_instance(dumps_instance(inst)) == inst
    json.loads(dumps_instance(inst))


@pytest.mark.parametrize("tt,trips,msg", [
    ([[0, 5], [5, 0]], [(1, 1, 10, 20), (1, 1, 30, 40)], None),
    ([[0, 5], [4, 0]], [], r"asymmetric travel_time at \(0,1\)"),
    ([[0, -1], [-1, 0]], [], r"negative travel_time at \(0,1\)"),
    ([[1, 5], [5, 0]], [], r"diagonal at \(0,0\)"),
    ([[0, 5], [5, 0]], [(1, 1, 20, 20)], "trip 0: end_time"),
    ([[0, 5], [5, 0]], [(0, 1, 20, 30)], "trip 0: location 0 is not a station"),
    ([[0, 5], [5, 0]], [(1, 1, 1790, 1810)], "trip 0 lies outside horizon"),
])
def test_validation_messages(tt, trips, msg):
    if msg is None:
        tiny_instance(tt, [DEPOT, STATION], trips)
        return
    with pytest.raises(InstanceError, match=msg):
        tiny_instance(tt, [DEPOT, STATION], trips)


def test_validation_triangle_and_trip_time():
    tt = [[0, 1, 10], [1, 0, 1], [10, 1, 0]]
    with pytest.raises(InstanceError, match=r"triangle inequality violated for \(0,1,2\)"):
        tiny_instance(tt, [DEPOT, STATION, STATION], [])
    tt = [[0, 5, 5], [5, 0, 8], [5, 8, 0]]
    with pytest.raises(InstanceError, match="shorter than travel time 8"):
        tiny_instance(tt, [DEPOT, STATION, STATION], [(1, 2, 10, 15)])


def test_duplicate_trip_id():
    d = instance_to_dict(_three())
    d["trips"].append(dict(d["trips"][0]))
    with pytest.raises(InstanceError, match="duplicate trip id 0"):
        instance_from_dict(d)


def test_parse_errors_name_line_and_field():
    with pytest.raises(InstanceParseError) as e:
        loads_instance('{\n  "version": 1,\n  oops\n}')
    assert e.value.line == 3
    d = instance_to_dict(_three())
    d["trips"][0]["dep"] = "noon"
    with pytest.raises(InstanceParseError) as e:
        instance_from_dict(d)
    assert e.value.field == "trips[0].dep"
    d["trips"][0]["dep"] = 100
    del d["trips"][0]["arr"]
    with pytest.raises(InstanceParseError, match="trips\\[0\\].arr"):
        instance_from_dict(d)


def test_shift_fits():
    tt = [[0, 5], [5, 0]]
    inst = tiny_instance(tt, [DEPOT, STATION], [(1, 1, 2, 10)], horizon=(0, 12))
    inst.check_shift_fits(2)
    with pytest.raises(InstanceError, match="starts before"):
        inst.check_shift_fits(3)


def test_subset_keeps_ids():
    inst = generate_instance(GenParams(30, seed=0))
    sub = inst.subset([4, 17, 29])
    assert [t.id for t in sub.trips] == [4, 17, 29]
    assert sub.trip(17) == inst.trip(17)
