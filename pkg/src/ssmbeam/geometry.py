"""Scene geometry and the speaker selection mechanism.

Angles are radians in the room's horizontal plane, measured from the
room x-axis.  Heights never enter the selection rule.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import GeometryError, SceneConstraintError
from .rng import RngState, make_rng

SCENE_SCHEMA_VERSION = 1
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Point3:
    a: float
    b: float
    c: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.a, self.b, self.c)):
            raise GeometryError(f"non-finite coordinate in {self!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c], dtype=float)

    @classmethod
    def from_seq(cls, xs: Sequence[float]) -> Point3:
        return cls(float(xs[0]), float(xs[1]), float(xs[2]))


@dataclass(frozen=True)
class ListenerPose:
    center: Point3
    head_angle: float
    head_radius: float = 0.15

    def __post_init__(self):
        if not self.head_radius > 0:
            raise GeometryError("head_radius must be positive")
        object.__setattr__(self, "head_angle", wrap_angle(self.head_angle))


@dataclass(frozen=True)
class MicrophoneArray:
    positions: tuple[Point3, ...]
    reference_index: int = 0

    def __post_init__(self):
        if len(self.positions) < 1:
            raise GeometryError("microphone array needs at least one position")
        if not 0 <= self.reference_index < len(self.positions):
            raise GeometryError("reference_index out of range")

    @property
    def n_mics(self) -> int:
        return len(self.positions)

    def as_array(self) -> np.ndarray:
        return np.array([p.as_array() for p in self.positions])


@dataclass(frozen=True)
class SsmConfig:
    """Selection and scene-sampling parameters.

    ``max_undershot`` is in radians, ``min_sep_deg`` in degrees.  The
    remaining fields carry the room, array and parameter ranges used by
    :func:`sample_scene`.
    """

    max_undershot: float = math.radians(30.0)
    min_dist: float = 1.00
    min_sep_deg: float = 45.0
    room_dims: tuple[float, float, float] = (5.15, 3.75, 2.65)
    head_radius: float = 0.15
    mic_spacing: float = 0.005
    t60_range: tuple[float, float] = (0.20, 1.00)
    snr_range: tuple[float, float] = (-10.0, 20.0)
    height_range: tuple[float, float] = (1.50, 1.95)
    max_attempts: int = 10_000

    def __post_init__(self):
        if not self.max_undershot > 0:
            raise GeometryError("max_undershot must be positive")
        if not self.min_dist > 0:
            raise GeometryError("min_dist must be positive")
        if not 0 < self.min_sep_deg < 180:
            raise GeometryError("min_sep_deg must lie in (0, 180)")
        for lo, hi in (self.t60_range, self.snr_range, self.height_range):
            if lo > hi:
                raise GeometryError("parameter range is not ordered")

    @property
    def wall_margin(self) -> float:
        # head breadth is taken equal to the head radius
        return 2.0 * self.head_radius

    @classmethod
    def three_speaker_variant(cls, **overrides) -> SsmConfig:
        """Relaxed constraints of the N=3 robustness evaluation."""
        params = dict(min_dist=0.5, min_sep_deg=20.0)
        params.update(overrides)
        return cls(**params)


@dataclass(frozen=True)
class Scene:
    room_dims: Point3
    listener: ListenerPose
    mics: MicrophoneArray
    speakers: tuple[Point3, ...]
    t60: float
    snr_db: float
    seed: int = 0

    @property
    def n_speakers(self) -> int:
        return len(self.speakers)

    def selected_speaker(self) -> int:
        return select_speaker(self.listener, self.speakers)


def wrap_angle(theta: float) -> float:
    """Map an angle onto (-pi, pi]."""
    w = math.remainder(theta, TWO_PI)
    if w <= -math.pi:
        w += TWO_PI
    return w


def angular_distance(x: float, y: float) -> float:
    """Smallest absolute difference between two angles, in [0, pi]."""
    return abs(math.remainder(x - y, TWO_PI))


def azimuth_of(listener: ListenerPose | Point3, target: Point3) -> float:
    center = listener.center if isinstance(listener, ListenerPose) else listener
    da = target.a - center.a
    db = target.b - center.b
    if da == 0.0 and db == 0.0:
        raise GeometryError("coincident positions")
    return wrap_angle(math.atan2(db, da))


def undershot_angle(head_angle: float, speaker_azimuth: float) -> float:
    if not (math.isfinite(head_angle) and math.isfinite(speaker_azimuth)):
        raise GeometryError("angles must be finite")
    return angular_distance(head_angle, speaker_azimuth)


def head_angle_interval(speaker_azimuths: Sequence[float], max_undershot: float) -> tuple[float, float]:
    if len(speaker_azimuths) == 0:
        raise GeometryError("speaker list is empty")
    lo = min(speaker_azimuths) - abs(max_undershot)
    hi = max(speaker_azimuths) + abs(max_undershot)
    if hi - lo >= TWO_PI:
        raise GeometryError("ambiguous head-angle interval")
    return lo, hi


def sample_head_angle(speaker_azimuths: Sequence[float], cfg: SsmConfig, rng: RngState) -> float:
    """Uniform draw from [min(az) - max_undershot, max(az) + max_undershot].

    The result is returned unwrapped (it may lie outside (-pi, pi]);
    :class:`ListenerPose` wraps it.
    """
    lo, hi = head_angle_interval(speaker_azimuths, cfg.max_undershot)
    return float(rng.uniform(lo, hi))


def minimal_arc_unwrap(azimuths: Sequence[float]) -> list[float]:
    """Re-express azimuths so the seam falls in the widest angular gap.

    After this the raw min/max span is the shortest arc covering every
    speaker, so the admissible head interval never straddles +-pi.
    """
    az = [wrap_angle(x) for x in azimuths]
    if len(az) < 2:
        return az
    order = sorted(range(len(az)), key=lambda i: az[i])
    s = [az[i] for i in order]
    gaps = [s[k + 1] - s[k] for k in range(len(s) - 1)] + [s[0] + TWO_PI - s[-1]]
    k = int(np.argmax(gaps))
    start = s[(k + 1) % len(s)]
    out = [0.0] * len(az)
    for i, x in enumerate(az):
        out[i] = start + ((x - start) % TWO_PI)
    return out


def select_speaker(listener: ListenerPose, speakers: Sequence[Point3]) -> int:
    """Index of the speaker with the smallest undershot angle.

    Exact ties go to the lowest index.
    """
    if len(speakers) == 0:
        raise GeometryError("speaker list is empty")
    best, best_angle = 0, math.inf
    for i, spk in enumerate(speakers):
        u = undershot_angle(listener.head_angle, azimuth_of(listener, spk))
        if u < best_angle:
            best, best_angle = i, u
    return best


def place_microphones(listener: ListenerPose, mic_spacing: float = 0.005,
                      room_dims: Point3 | None = None) -> MicrophoneArray:
    """Two front/back pairs at the ear points of the head circle.

    Order is [left-front, left-back, right-front, right-back]; the
    left-front microphone (index 0) is the reference.  "Left" is the
    ear at head_angle + 90 degrees.
    """
    c = listener.center
    h = listener.head_angle
    r = listener.head_radius
    fwd = (math.cos(h), math.sin(h))
    positions = []
    for side in (+1.0, -1.0):
        ear_angle = h + side * math.pi / 2
        ex = c.a + r * math.cos(ear_angle)
        ey = c.b + r * math.sin(ear_angle)
        for sign in (+1.0, -1.0):
            positions.append(Point3(ex + sign * 0.5 * mic_spacing * fwd[0],
                                    ey + sign * 0.5 * mic_spacing * fwd[1],
                                    c.c))
    if room_dims is not None:
        for p in positions:
            if not point_inside(p, room_dims):
                raise GeometryError(f"microphone outside room: {p}")
    return MicrophoneArray(tuple(positions), reference_index=0)


def point_inside(p: Point3, room_dims: Point3, margin: float = 0.0) -> bool:
    return (margin <= p.a <= room_dims.a - margin and margin <= p.b <= room_dims.b - margin
            and margin <= p.c <= room_dims.c - margin)


def horizontal_distance(p: Point3, q: Point3) -> float:
    return math.hypot(p.a - q.a, p.b - q.b)


def _uniform_point(rng: RngState, dims: Point3, margin: float, heights: tuple[float, float]) -> Point3:
    return Point3(float(rng.uniform(margin, dims.a - margin)),
                  float(rng.uniform(margin, dims.b - margin)),
                  float(rng.uniform(*heights)))


def sample_scene(cfg: SsmConfig, n_speakers: int, seed: int, *,
                 t60: float | None = None, snr_db: float | None = None) -> Scene:
    """Rejection-sample a scene satisfying every placement constraint.

    ``t60`` / ``snr_db`` pin those values instead of drawing them (used
    for exact-SNR evaluation scenes).
    """
    if n_speakers < 1:
        raise GeometryError("n_speakers must be >= 1")
    rng = make_rng(seed)
    dims = Point3.from_seq(cfg.room_dims)
    margin = cfg.wall_margin
    if dims.a <= 2 * margin or dims.b <= 2 * margin:
        raise SceneConstraintError("unsatisfiable scene constraints")
    min_sep = math.radians(cfg.min_sep_deg)

    for _ in range(cfg.max_attempts):
        center = _uniform_point(rng, dims, margin, cfg.height_range)
        speakers: list[Point3] = []
        azimuths: list[float] = []
        ok = True
        for _ in range(n_speakers):
            spk = _uniform_point(rng, dims, margin, cfg.height_range)
            if horizontal_distance(spk, center) < cfg.min_dist:
                ok = False
                break
            if any(horizontal_distance(spk, o) < cfg.min_dist for o in speakers):
                ok = False
                break
            az = azimuth_of(center, spk)
            if any(angular_distance(az, o) < min_sep for o in azimuths):
                ok = False
                break
            speakers.append(spk)
            azimuths.append(az)
        if not ok:
            continue
        try:
            head = sample_head_angle(minimal_arc_unwrap(azimuths), cfg, rng)
        except GeometryError:
            continue
        listener = ListenerPose(center, head, cfg.head_radius)
        try:
            mics = place_microphones(listener, cfg.mic_spacing, dims)
        except GeometryError:
            continue
        scene_t60 = float(rng.uniform(*cfg.t60_range)) if t60 is None else float(t60)
        scene_snr = float(rng.uniform(*cfg.snr_range)) if snr_db is None else float(snr_db)
        return Scene(dims, listener, mics, tuple(speakers), scene_t60, scene_snr, int(seed))
    raise SceneConstraintError("unsatisfiable scene constraints")


def check_scene(scene: Scene, cfg: SsmConfig, *, check_ranges: bool = True) -> list[str]:
    """Return a list of human-readable constraint violations (empty if valid)."""
    problems = []
    dims = scene.room_dims
    if check_ranges:
        if (dims.a, dims.b, dims.c) != tuple(cfg.room_dims):
            problems.append("room dimensions differ from configuration")
        if not cfg.t60_range[0] <= scene.t60 <= cfg.t60_range[1]:
            problems.append(f"t60 {scene.t60} out of range")
        if not cfg.snr_range[0] <= scene.snr_db <= cfg.snr_range[1]:
            problems.append(f"snr {scene.snr_db} out of range")
    margin = cfg.wall_margin
    entities = [("listener", scene.listener.center)] + [
        (f"speaker {i}", s) for i, s in enumerate(scene.speakers)]
    lo_h, hi_h = cfg.height_range
    for name, p in entities:
        if not point_inside(p, dims, 0.0):
            problems.append(f"{name} outside room")
        if min(p.a, dims.a - p.a, p.b, dims.b - p.b) < margin:
            problems.append(f"{name} closer than {margin} m to a wall")
        if not lo_h <= p.c <= hi_h:
            problems.append(f"{name} height {p.c} out of range")
    c = scene.listener.center
    azs = []
    for i, s in enumerate(scene.speakers):
        if horizontal_distance(s, c) < cfg.min_dist:
            problems.append(f"speaker {i} too close to listener")
        for j in range(i):
            if horizontal_distance(s, scene.speakers[j]) < cfg.min_dist:
                problems.append(f"speakers {j} and {i} too close")
        if horizontal_distance(s, c) > 0:
            azs.append(azimuth_of(c, s))
    min_sep = math.radians(cfg.min_sep_deg)
    for i in range(len(azs)):
        for j in range(i):
            if angular_distance(azs[i], azs[j]) < min_sep:
                problems.append(f"speakers {j} and {i} angular separation too small")
    if len(azs) == len(scene.speakers) and azs:
        unwrapped = minimal_arc_unwrap(azs)
        lo, hi = min(unwrapped) - cfg.max_undershot, max(unwrapped) + cfg.max_undershot
        h = scene.listener.head_angle
        shift = lo + ((h - lo) % TWO_PI)
        if shift > hi + 1e-12:
            problems.append("head angle outside admissible interval")
    for k, p in enumerate(scene.mics.positions):
        if not point_inside(p, dims):
            problems.append(f"microphone {k} outside room")
    return problems


# -- serialization -----------------------------------------------------------

def scene_to_dict(scene: Scene) -> dict:
    def pt(p: Point3):
        return [p.a, p.b, p.c]

    return {
        "schema_version": SCENE_SCHEMA_VERSION,
        "seed": scene.seed,
        "room_dims": pt(scene.room_dims),
        "listener": {
            "center": pt(scene.listener.center),
            "head_angle": scene.listener.head_angle,
            "head_radius": scene.listener.head_radius,
        },
        "mics": {
            "positions": [pt(p) for p in scene.mics.positions],
            "reference_index": scene.mics.reference_index,
        },
        "speakers": [pt(s) for s in scene.speakers],
        "t60": scene.t60,
        "snr_db": scene.snr_db,
        "selected_speaker": scene.selected_speaker(),
    }


def scene_from_dict(d: dict) -> Scene:
    version = d.get("schema_version")
    if version != SCENE_SCHEMA_VERSION:
        raise GeometryError(f"unsupported scene schema_version {version!r}")
    lst = d["listener"]
    listener = ListenerPose(Point3.from_seq(lst["center"]), float(lst["head_angle"]),
                            float(lst["head_radius"]))
    mics = MicrophoneArray(tuple(Point3.from_seq(p) for p in d["mics"]["positions"]),
                           int(d["mics"]["reference_index"]))
    return Scene(Point3.from_seq(d["room_dims"]), listener, mics,
                 tuple(Point3.from_seq(s) for s in d["speakers"]),
                 float(d["t60"]), float(d["snr_db"]), int(d["seed"]))


def dumps_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), indent=2, sort_keys=True) + "\n"


def loads_scene(text: str) -> Scene:
    return scene_from_dict(json.loads(text))


def with_snr(scene: Scene, snr_db: float) -> Scene:
    return replace(scene, snr_db=float(snr_db))
