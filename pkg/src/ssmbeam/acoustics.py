"""Shoebox room impulse responses by the image-source method.

Walls share one frequency-independent reflection coefficient obtained
from Sabine's reverberation formula.  Each image contributes a
Hann-windowed sinc pulse (fractional delay) scaled by its accumulated
reflection gain and spherical spreading 1/(4 pi d).

All image gains are positive, so the dense late arrivals pile up a
slowly decaying DC component; the Allen-Berkley 100 Hz high-pass is
applied by default to remove it (set ``highpass_hz=None`` to get the raw
image sum).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .errors import AcousticsError
from .geometry import Point3, Scene, point_inside

SABINE_CONSTANT = 0.161


@dataclass(frozen=True)
class RirConfig:
    sample_rate: int = 16000
    speed_of_sound: float = 343.0
    # None: every image whose arrival falls inside the response is kept
    max_order: int | None = None
    # None: ceil(t60 * sample_rate), clipped to max_rir_length
    rir_length: int | None = None
    max_rir_length: int = 16000
    frac_delay_halfwidth: int = 8
    highpass_hz: float | None = 100.0
    chunk_images: int = 16_384

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise AcousticsError("sample_rate must be positive")
        if self.max_order is not None and self.max_order < 0:
            raise AcousticsError("max_order must be >= 0")
        if self.rir_length is not None and self.rir_length <= 0:
            raise AcousticsError("rir_length must be positive")
        if self.frac_delay_halfwidth < 1:
            raise AcousticsError("frac_delay_halfwidth must be >= 1")

    def length_for(self, t60: float) -> int:
        if self.rir_length is not None:
            return self.rir_length
        return int(min(math.ceil(t60 * self.sample_rate), self.max_rir_length))


@dataclass(frozen=True)
class RoomImpulseResponse:
    taps: np.ndarray
    sample_rate: int
    source: Point3
    mic: Point3


def room_volume_surface(room_dims: Point3) -> tuple[float, float]:
    w, d, h = room_dims.a, room_dims.b, room_dims.c
    return w * d * h, 2.0 * (w * d + w * h + d * h)


def t60_to_absorption(room_dims: Point3, t60: float) -> float:
    if not t60 > 0:
        raise AcousticsError("t60 must be positive")
    volume, surface = room_volume_surface(room_dims)
    alpha = SABINE_CONSTANT * volume / (surface * t60)
    if alpha >= 1.0:
        raise AcousticsError("T60 unachievable")
    return alpha


def t60_to_reflection(room_dims: Point3, t60: float) -> float:
    """Per-wall pressure reflection coefficient for a requested T60."""
    if math.isinf(t60):
        return 1.0
    return math.sqrt(1.0 - t60_to_absorption(room_dims, t60))


def _axis_images(length: float, coord: float, max_index: int) -> tuple[np.ndarray, np.ndarray]:
    n = np.arange(-max_index, max_index + 1)
    pos = n * length + np.where(n % 2 == 0, coord, length - coord)
    return pos, np.abs(n)


def image_sources(room_dims: Point3, source: Point3, max_order: int | tuple[int, int, int],
                  beta: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Mirror images of ``source`` with |n_x|, |n_y|, |n_z| <= max_order.

    Returns ``(positions, gains)`` with shapes (K, 3) and (K,), where
    K = prod(2 * order + 1) and gain = beta ** (|n_x| + |n_y| + |n_z|).
    """
    if not point_inside(source, room_dims) or min(
            source.a, source.b, source.c,
            room_dims.a - source.a, room_dims.b - source.b, room_dims.c - source.c) <= 0:
        raise AcousticsError("source must lie strictly inside the room")
    orders = (max_order,) * 3 if np.isscalar(max_order) else tuple(max_order)
    px, nx = _axis_images(room_dims.a, source.a, int(orders[0]))
    py, ny = _axis_images(room_dims.b, source.b, int(orders[1]))
    pz, nz = _axis_images(room_dims.c, source.c, int(orders[2]))
    X, Y, Z = np.meshgrid(px, py, pz, indexing="ij")
    RX, RY, RZ = np.meshgrid(nx, ny, nz, indexing="ij")
    positions = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    gains = np.power(float(beta), (RX + RY + RZ).ravel())
    return positions, gains


def windowed_sinc_taps(delay: np.ndarray, halfwidth: int) -> tuple[np.ndarray, np.ndarray]:
    """Tap indices and weights of a Hann-windowed sinc fractional delay.

    For each delay (in samples) returns 2*halfwidth integer positions and
    the matching kernel values; shapes (K, 2*halfwidth).
    """
    base = np.floor(delay)
    frac = (delay - base)[:, None]
    offsets = np.arange(-halfwidth + 1, halfwidth + 1)
    idx = base.astype(np.int64)[:, None] + offsets[None, :]
    x = offsets[None, :] - frac
    # integer offsets let sin(pi x) and cos(pi x / hw) come from one sin/cos per delay
    sign = np.where(offsets % 2 == 0, -1.0, 1.0)
    # sin(pi f) = sin(pi (1 - f)); the smaller argument keeps relative precision near integers
    sin_pf = np.sin(np.pi * np.minimum(frac, 1.0 - frac))
    with np.errstate(divide="ignore", invalid="ignore"):
        sinc = np.where(x == 0.0, 1.0, sign * sin_pf / (np.pi * x))
    a = np.pi / halfwidth
    w = 0.5 * (1.0 + np.cos(a * offsets) * np.cos(a * frac) + np.sin(a * offsets) * np.sin(a * frac))
    w[np.abs(x) >= halfwidth] = 0.0
    return idx, sinc * w


def _orders_for_length(room_dims: Point3, max_dist: float, max_order: int | None) -> tuple[int, int, int]:
    orders = tuple(int(math.ceil(max_dist / L)) + 1 for L in (room_dims.a, room_dims.b, room_dims.c))
    if max_order is not None:
        orders = tuple(min(o, max_order) for o in orders)
    return orders


def allen_berkley_highpass(x: np.ndarray, sample_rate: int, cutoff_hz: float = 100.0) -> np.ndarray:
    """Second-order DC-blocking high-pass used by classic image-method RIRs."""
    w = 2.0 * np.pi * cutoff_hz / sample_rate
    r1 = np.exp(-w)
    b1 = 2.0 * r1 * np.cos(w)
    b2 = -r1 * r1
    a1 = -(1.0 + r1)
    return lfilter([1.0, a1, r1], [1.0, -b1, -b2], x, axis=-1)


def rir_from_images(positions: np.ndarray, gains: np.ndarray, mics: np.ndarray,
                    cfg: RirConfig, length: int) -> np.ndarray:
    """Accumulate image contributions at each microphone, shape (M, length)."""
    fs, c, hw = cfg.sample_rate, cfg.speed_of_sound, cfg.frac_delay_halfwidth
    out = np.zeros((len(mics), length))
    for m, mic in enumerate(mics):
        d = np.sqrt(((positions - mic[None, :]) ** 2).sum(axis=1))
        if np.any(d == 0.0):
            raise AcousticsError("coincident source and microphone")
        delay = d * fs / c
        keep = delay < length + hw
        d, delay, g = d[keep], delay[keep], gains[keep]
        amp = g / (4.0 * np.pi * d)
        acc = np.zeros(length + 2 * hw + 2)
        for start in range(0, len(d), cfg.chunk_images):
            sl = slice(start, start + cfg.chunk_images)
            idx, k = windowed_sinc_taps(delay[sl], hw)
            vals = k * amp[sl, None]
            idx = idx + hw
            ok = (idx >= 0) & (idx < len(acc))
            acc += np.bincount(idx[ok], weights=vals[ok], minlength=len(acc))
        out[m] = acc[hw:hw + length]
    if cfg.highpass_hz is not None:
        out = allen_berkley_highpass(out, fs, cfg.highpass_hz)
    return out


def scene_rirs(scene: Scene, cfg: RirConfig = RirConfig()) -> np.ndarray:
    """All speaker-to-microphone responses of a scene, shape (N, M, L)."""
    beta = t60_to_reflection(scene.room_dims, scene.t60)
    length = cfg.length_for(scene.t60)
    max_dist = (length + cfg.frac_delay_halfwidth) * cfg.speed_of_sound / cfg.sample_rate
    orders = _orders_for_length(scene.room_dims, max_dist, cfg.max_order)
    mics = scene.mics.as_array()
    out = []
    for spk in scene.speakers:
        pos, gains = image_sources(scene.room_dims, spk, orders, beta)
        out.append(rir_from_images(pos, gains, mics, cfg, length))
    return np.stack(out)


def synthesize_rir(scene: Scene, cfg: RirConfig, source: Point3, mic: Point3) -> RoomImpulseResponse:
    for p in (source, mic):
        if not point_inside(p, scene.room_dims):
            raise AcousticsError(f"position outside room: {p}")
    if source == mic:
        raise AcousticsError("coincident source and microphone")
    beta = t60_to_reflection(scene.room_dims, scene.t60)
    length = cfg.length_for(scene.t60)
    max_dist = (length + cfg.frac_delay_halfwidth) * cfg.speed_of_sound / cfg.sample_rate
    orders = _orders_for_length(scene.room_dims, max_dist, cfg.max_order)
    pos, gains = image_sources(scene.room_dims, source, orders, beta)
    taps = rir_from_images(pos, gains, mic.as_array()[None, :], cfg, length)[0]
    return RoomImpulseResponse(taps, cfg.sample_rate, source, mic)


def schroeder_decay(rir: np.ndarray) -> np.ndarray:
    """Backward-integrated energy decay curve in dB (0 dB at t=0)."""
    energy = np.cumsum(rir[::-1] ** 2)[::-1]
    energy = energy / energy[0]
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(energy)


def estimate_t60(rir: np.ndarray, sample_rate: int, start_db: float = -5.0,
                 stop_db: float = -25.0) -> float:
    """T60 extrapolated from a line fit to the decay curve between two levels."""
    edc = schroeder_decay(rir)
    sel = np.nonzero((edc <= start_db) & (edc >= stop_db))[0]
    if len(sel) < 2:
        raise AcousticsError("decay curve too short for T60 estimate")
    t = sel / sample_rate
    slope, _ = np.polyfit(t, edc[sel], 1)
    return -60.0 / slope
