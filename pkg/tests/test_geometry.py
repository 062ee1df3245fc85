from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssmbeam.errors import GeometryError, SceneConstraintError
from ssmbeam.geometry import (
    ListenerPose,
    Point3,
    Scene,
    SsmConfig,
    angular_distance,
    azimuth_of,
    check_scene,
    dumps_scene,
    head_angle_interval,
    loads_scene,
    minimal_arc_unwrap,
    place_microphones,
    sample_head_angle,
    sample_scene,
    select_speaker,
    undershot_angle,
    wrap_angle,
)
from ssmbeam.rng import make_rng

D = math.radians
angles = st.floats(-20.0, 20.0, allow_nan=False)


def brute_force_select(head, azimuths):
    # oracle: wrapped difference through complex phase, first minimum wins
    diffs = [abs(np.angle(np.exp(1j * (head - a)))) for a in azimuths]
    return int(np.argmin(diffs))


def listener_at(x, y, head_deg):
    return ListenerPose(Point3(x, y, 1.7), D(head_deg))


@pytest.mark.parametrize("target, expected", [((1.0, 1.0), math.pi / 4), ((-1.0, 0.0), math.pi)])
def test_azimuth_examples(target, expected):
    assert azimuth_of(Point3(0, 0, 0), Point3(*target, 0.0)) == pytest.approx(expected)


def test_azimuth_coincident_raises():
    with pytest.raises(GeometryError, match="coincident positions"):
        azimuth_of(Point3(2, 3, 1), Point3(2, 3, 1.5))


@pytest.mark.parametrize("head, spk, expected", [(10, 0, 10), (170, -170, 20), (33, 33, 0)])
def test_undershot_examples(head, spk, expected):
    assert undershot_angle(D(head), D(spk)) == pytest.approx(D(expected), abs=1e-12)


@given(angles)
def test_wrap_angle_range(theta):
    w = wrap_angle(theta)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(theta), abs_tol=1e-9)
    assert math.isclose(math.sin(w), math.sin(theta), abs_tol=1e-9)


@given(angles, angles)
def test_undershot_bounded_and_symmetric(a, b):
    u = undershot_angle(a, b)
    assert 0.0 <= u <= math.pi
    assert u == pytest.approx(undershot_angle(b, a), abs=1e-12)


def test_head_interval_examples():
    cfg = SsmConfig()
    lo, hi = head_angle_interval([0.0, D(90)], cfg.max_undershot)
    assert (lo, hi) == pytest.approx((D(-30), D(120)))
    lo, hi = head_angle_interval([D(45)], cfg.max_undershot)
    assert (lo, hi) == pytest.approx((D(15), D(75)))
    for seed in range(50):
        v = sample_head_angle([0.0, D(90)], cfg, make_rng(seed))
        assert D(-30) <= v <= D(120)


def test_head_angle_replay():
    cfg = SsmConfig()
    a = sample_head_angle([0.0, D(90)], cfg, make_rng(123))
    b = sample_head_angle([0.0, D(90)], cfg, make_rng(123))
    assert a == b


def test_head_interval_ambiguous():
    with pytest.raises(GeometryError, match="ambiguous head-angle interval"):
        head_angle_interval([D(-170), D(170)], D(30))


def test_minimal_arc_unwrap_crosses_seam():
    out = minimal_arc_unwrap([D(170), D(-170)])
    assert max(out) - min(out) == pytest.approx(D(20))


def test_select_examples():
    spk = [Point3(1, 0, 1.7), Point3(0, 1, 1.7)]
    assert select_speaker(listener_at(0, 0, 10), spk) == 0
    # exact tie at 45 degrees: lowest index
    assert select_speaker(listener_at(0, 0, 45), [Point3(2, 0, 1.7), Point3(0, 2, 1.7)]) == 0


@given(st.lists(st.floats(-math.pi, math.pi), min_size=1, max_size=6),
       st.floats(-math.pi, math.pi), st.floats(-10, 10))
def test_select_matches_oracle_and_rotation(azs, head, shift):
    spk = [Point3(3 * math.cos(a), 3 * math.sin(a), 1.7) for a in azs]
    lst = ListenerPose(Point3(0, 0, 1.7), head)
    got = select_speaker(lst, spk)
    true_az = [azimuth_of(lst, s) for s in spk]
    want = brute_force_select(lst.head_angle, true_az)
    u = [undershot_angle(lst.head_angle, a) for a in true_az]
    # the oracle may disagree only on numerically tied angles
    assert got == want or abs(u[got] - u[want]) < 1e-12
    rot = [Point3(3 * math.cos(a + shift), 3 * math.sin(a + shift), 1.7) for a in azs]
    rot_got = select_speaker(ListenerPose(Point3(0, 0, 1.7), head + shift), rot)
    ur = [undershot_angle(head + shift, azimuth_of(Point3(0, 0, 0), s)) for s in rot]
    assert rot_got == got or abs(ur[rot_got] - ur[got]) < 1e-9


@given(st.integers(0, 2**32))
def test_two_speaker_undershot_bound(seed):
    cfg = SsmConfig()
    s = sample_scene(cfg, 2, seed)
    c = s.listener.center
    azs = minimal_arc_unwrap([azimuth_of(c, p) for p in s.speakers])
    span = max(azs) - min(azs)
    k = s.selected_speaker()
    assert undershot_angle(s.listener.head_angle, azimuth_of(c, s.speakers[k])) <= span / 2 + cfg.max_undershot + 1e-9


def test_place_microphones_geometry():
    lst = listener_at(2.5, 1.8, 0)
    arr = place_microphones(lst, 0.005)
    p = arr.as_array()
    assert arr.n_mics == 4 and arr.reference_index == 0
    left, right = p[:2].mean(axis=0), p[2:].mean(axis=0)
    assert np.linalg.norm(left - right) == pytest.approx(0.30)
    for centre in (left, right):
        assert np.linalg.norm(centre[:2] - [2.5, 1.8]) == pytest.approx(0.15, abs=1e-9)
    assert np.allclose(p[:, 2], 1.7)
    # left ear at +90 degrees, front mic ahead along the head axis
    assert p[0, 1] > 1.8 and p[0, 0] > p[1, 0]
    assert np.linalg.norm(p[0] - p[1]) == pytest.approx(0.005)


@given(st.floats(-math.pi, math.pi))
def test_place_microphones_rotation(head):
    c = np.array([2.5, 1.8])
    base = place_microphones(ListenerPose(Point3(2.5, 1.8, 1.6), 0.0)).as_array()
    rot = place_microphones(ListenerPose(Point3(2.5, 1.8, 1.6), head)).as_array()
    R = np.array([[math.cos(head), -math.sin(head)], [math.sin(head), math.cos(head)]])
    assert np.allclose((base[:, :2] - c) @ R.T + c, rot[:, :2], atol=1e-12)
    assert place_microphones(ListenerPose(Point3(2.5, 1.8, 1.6), head)) == \
        place_microphones(ListenerPose(Point3(2.5, 1.8, 1.6), head))


def test_microphones_outside_room():
    with pytest.raises(GeometryError):
        place_microphones(ListenerPose(Point3(0.05, 1.0, 1.6), math.pi / 2), room_dims=Point3(5.15, 3.75, 2.65))


@pytest.mark.parametrize("seed", range(20))
def test_sample_scene_defaults(seed):
    cfg = SsmConfig()
    s = sample_scene(cfg, 2, seed)
    assert check_scene(s, cfg) == []
    c = s.listener.center
    assert all(math.hypot(p.a - c.a, p.b - c.b) >= 1.0 for p in s.speakers)
    a0, a1 = (azimuth_of(c, p) for p in s.speakers)
    assert angular_distance(a0, a1) >= D(45)


@pytest.mark.parametrize("seed", range(10))
def test_sample_scene_three_speakers(seed):
    cfg = SsmConfig.three_speaker_variant()
    s = sample_scene(cfg, 3, seed)
    assert cfg.min_dist == 0.5 and cfg.min_sep_deg == 20.0
    assert check_scene(s, cfg) == []


def test_sample_scene_deterministic():
    a = dumps_scene(sample_scene(SsmConfig(), 2, 77))
    b = dumps_scene(sample_scene(SsmConfig(), 2, 77))
    assert a == b
    assert dumps_scene(loads_scene(a)) == a


def test_sample_scene_unsatisfiable():
    cfg = SsmConfig(min_dist=3.0, max_attempts=50)
    with pytest.raises(SceneConstraintError, match="unsatisfiable scene constraints"):
        sample_scene(cfg, 3, 0)


def test_sample_scene_pins_t60_and_snr():
    s = sample_scene(SsmConfig(), 2, 5, t60=0.4, snr_db=0.0)
    assert (s.t60, s.snr_db) == (0.4, 0.0)


def test_checker_flags_violations():
    cfg = SsmConfig()
    s = sample_scene(cfg, 2, 3)
    close = Scene(s.room_dims, s.listener, s.mics, (s.listener.center, s.speakers[1]), s.t60, 30.0, s.seed)
    problems = check_scene(close, cfg)
    assert any("too close" in p for p in problems)
    assert any("snr" in p for p in problems)


def test_scene_json_has_schema_version():
    import json
    d = json.loads(dumps_scene(sample_scene(SsmConfig(), 2, 1)))
    assert d["schema_version"] == 1
    d["schema_version"] = 99
    with pytest.raises(GeometryError):
        loads_scene(json.dumps(d))


@pytest.mark.parametrize("kwargs", [dict(max_undershot=0.0), dict(min_dist=-1.0), dict(min_sep_deg=180.0)])
def test_config_rejects_bad_values(kwargs):
    with pytest.raises(GeometryError):
        SsmConfig(**kwargs)
