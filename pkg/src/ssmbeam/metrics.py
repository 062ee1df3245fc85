"""Objective evaluation metrics and the results table."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import resample_poly

from .errors import MetricError

SI_SDR_CLAMP_DB = 60.0
_DB = 10.0 / math.log(10.0)


def _as_array(x) -> np.ndarray:
    return np.asarray(getattr(x, "samples", x), dtype=float)


def si_sdr(estimate, reference, zero_mean: bool = True) -> float:
    """Scale-invariant SDR in dB, clamped to [-60, +60] dB."""
    value, _ = si_sdr_and_grad(estimate, reference, need_grad=False, zero_mean=zero_mean)
    return value


def si_sdr_and_grad(estimate, reference, need_grad: bool = True, zero_mean: bool = True):
    """SI-SDR and its gradient with respect to ``estimate``.

    With e, s the (mean-removed) estimate and reference,
    t = (<e,s>/<s,s>) s and r = e - t, SI-SDR = 10 log10(|t|^2 / |r|^2) and
    d/de = (10 / ln 10) (2 t / |t|^2 - 2 r / |r|^2), projected back
    through the mean removal.  The gradient is zero at either clamp.
    """
    est = _as_array(estimate)
    ref = _as_array(reference)
    if est.shape != ref.shape:
        raise MetricError("estimate and reference lengths differ")
    s = ref - ref.mean() if zero_mean else ref
    e = est - est.mean() if zero_mean else est
    ss = float(s @ s)
    if ss == 0.0:
        raise MetricError("zero reference")
    t = (float(e @ s) / ss) * s
    r = e - t
    tt, rr = float(t @ t), float(r @ r)
    zero = np.zeros_like(est) if need_grad else None
    if rr == 0.0 and tt > 0.0:
        return SI_SDR_CLAMP_DB, zero
    if tt == 0.0:
        return -SI_SDR_CLAMP_DB, zero
    value = _DB * math.log(tt / rr)
    if abs(value) >= SI_SDR_CLAMP_DB:
        return math.copysign(SI_SDR_CLAMP_DB, value), zero
    if not need_grad:
        return value, None
    g = _DB * (2.0 * t / tt - 2.0 * r / rr)
    return value, (g - g.mean()) if zero_mean else g


# -- STOI ----------------------------------------------------------------------

STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30
STOI_BETA_DB = -15.0
STOI_DYN_RANGE = 40.0
_EPS = np.finfo(float).eps


def third_octave_matrix(fs: int = STOI_FS, nfft: int = STOI_NFFT, num_bands: int = STOI_BANDS,
                        min_freq: float = STOI_MIN_FREQ) -> np.ndarray:
    f = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(num_bands, dtype=float)
    lo = min_freq * 2.0 ** ((2 * k - 1) / 6)
    hi = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((num_bands, len(f)))
    for i in range(num_bands):
        a = int(np.argmin((f - lo[i]) ** 2))
        b = int(np.argmin((f - hi[i]) ** 2))
        obm[i, a:b] = 1.0
    return obm


def _frames(x: np.ndarray, size: int, hop: int, window: np.ndarray) -> np.ndarray:
    idx = range(0, len(x) - size, hop)
    return np.array([window * x[i:i + size] for i in idx]).reshape(-1, size)


def _overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    n, size = frames.shape
    out = np.zeros((n - 1) * hop + size) if n else np.zeros(0)
    for i in range(n):
        out[i * hop:i * hop + size] += frames[i]
    return out


def _remove_silent_frames(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    hop = STOI_FRAME // 2
    w = np.hanning(STOI_FRAME + 2)[1:-1]
    xf = _frames(x, STOI_FRAME, hop, w)
    yf = _frames(y, STOI_FRAME, hop, w)
    if len(xf) == 0:
        raise MetricError("no active frames")
    energy = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    keep = (energy.max() - STOI_DYN_RANGE - energy) < 0
    if energy.max() <= 20.0 * np.log10(_EPS) + 1e-9:
        raise MetricError("no active frames")
    return _overlap_add(xf[keep], hop), _overlap_add(yf[keep], hop)


def _band_envelopes(x: np.ndarray, obm: np.ndarray) -> np.ndarray:
    w = np.hanning(STOI_FRAME + 2)[1:-1]
    spec = np.fft.rfft(_frames(x, STOI_FRAME, STOI_FRAME // 2, w), n=STOI_NFFT, axis=-1)
    return np.sqrt(obm @ (np.abs(spec) ** 2).T)


def stoi(estimate, reference, sample_rate: int = 16000) -> float:
    """Short-time objective intelligibility of ``estimate`` given ``reference``."""
    y = _as_array(estimate)
    x = _as_array(reference)
    if x.shape != y.shape:
        raise MetricError("estimate and reference lengths differ")
    if not np.any(x):
        raise MetricError("no active frames")
    if sample_rate != STOI_FS:
        g = math.gcd(int(sample_rate), STOI_FS)
        x = resample_poly(x, STOI_FS // g, sample_rate // g)
        y = resample_poly(y, STOI_FS // g, sample_rate // g)
    x, y = _remove_silent_frames(x, y)
    obm = third_octave_matrix()
    xt = _band_envelopes(x, obm)
    yt = _band_envelopes(y, obm)
    n_frames = xt.shape[1]
    if n_frames < STOI_SEGMENT:
        raise MetricError("not enough active speech for STOI")
    xs = np.stack([xt[:, m - STOI_SEGMENT:m] for m in range(STOI_SEGMENT, n_frames + 1)])
    ys = np.stack([yt[:, m - STOI_SEGMENT:m] for m in range(STOI_SEGMENT, n_frames + 1)])
    norm = np.linalg.norm(xs, axis=2, keepdims=True) / (np.linalg.norm(ys, axis=2, keepdims=True) + _EPS)
    yn = ys * norm
    clip = 10.0 ** (-STOI_BETA_DB / 20.0)
    yp = np.minimum(yn, xs * (1.0 + clip))
    yp = yp - yp.mean(axis=2, keepdims=True)
    xc = xs - xs.mean(axis=2, keepdims=True)
    yp = yp / (np.linalg.norm(yp, axis=2, keepdims=True) + _EPS)
    xc = xc / (np.linalg.norm(xc, axis=2, keepdims=True) + _EPS)
    d = float(np.sum(xc * yp) / (xs.shape[0] * xs.shape[1]))
    return min(max(d, 0.0), 1.0)


# -- reporting -----------------------------------------------------------------

METHODS = ("mixed", "mvdr", "nn", "nn+ssm")
METHOD_LABELS = {"mixed": "None (mixed)", "mvdr": "MVDR filter", "nn": "NN", "nn+ssm": "NN + SSM training"}
CSV_COLUMNS = ("n_speakers", "method", "snr_db", "stoi", "pesq", "si_sdr", "count")


@dataclass(frozen=True)
class EvalRecord:
    scene_id: str
    method: str
    n_speakers: int
    snr_bin: float
    stoi: float
    si_sdr: float
    pesq: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise MetricError(f"unknown method {self.method!r}")
        if not 0.0 <= self.stoi <= 1.0:
            raise MetricError("stoi out of [0, 1]")
        if not math.isfinite(self.si_sdr):
            raise MetricError("non-finite si_sdr")


@dataclass(frozen=True)
class SummaryRow:
    n_speakers: int
    method: str
    snr_db: float
    stoi: float
    pesq: float | None
    si_sdr: float
    count: int


def summarize(records: Iterable[EvalRecord]) -> list[SummaryRow]:
    """Mean metrics per (n_speakers, method, snr_bin); empty cells are absent."""
    groups: dict[tuple, list[EvalRecord]] = {}
    for r in records:
        groups.setdefault((r.n_speakers, r.method, float(r.snr_bin)), []).append(r)
    rows = []
    for (n, method, snr), rs in groups.items():
        pesqs = [r.pesq for r in rs if r.pesq is not None]
        rows.append(SummaryRow(n, method, snr,
                               float(np.mean([r.stoi for r in rs])),
                               float(np.mean(pesqs)) if pesqs else None,
                               float(np.mean([r.si_sdr for r in rs])),
                               len(rs)))
    rows.sort(key=lambda r: (r.n_speakers, METHODS.index(r.method), r.snr_db))
    return rows


def rows_to_csv(rows: Sequence[SummaryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([r.n_speakers, r.method, repr(r.snr_db), repr(r.stoi),
                    "" if r.pesq is None else repr(r.pesq), repr(r.si_sdr), r.count])
    return buf.getvalue()


def rows_from_csv(text: str) -> list[SummaryRow]:
    rows = []
    for d in csv.DictReader(io.StringIO(text)):
        rows.append(SummaryRow(int(d["n_speakers"]), d["method"], float(d["snr_db"]),
                               float(d["stoi"]), float(d["pesq"]) if d["pesq"] else None,
                               float(d["si_sdr"]), int(d["count"])))
    return rows


def format_table(rows: Sequence[SummaryRow]) -> str:
    """Fixed-width table: one line per (N, method), STOI/PESQ/SI-SDR per SNR column."""
    snrs = sorted({r.snr_db for r in rows})
    cell = {(r.n_speakers, r.method, r.snr_db): r for r in rows}
    head1 = f"{'N':>2}  {'Method':<18}" + "".join(f"{f'{s:g} dB SNR':^26}" for s in snrs)
    head2 = f"{'':>2}  {'':<18}" + "".join(f"{'STOI':>8}{'PESQ':>8}{'SI-SDR':>10}" for _ in snrs)
    lines = [head1, head2, "-" * len(head2)]
    for n in sorted({r.n_speakers for r in rows}):
        for method in METHODS:
            if not any((n, method, s) in cell for s in snrs):
                continue
            parts = []
            for s in snrs:
                r = cell.get((n, method, s))
                if r is None:
                    parts.append(f"{'':>26}")
                else:
                    pesq = "-" if r.pesq is None else f"{r.pesq:.3f}"
                    parts.append(f"{r.stoi:8.3f}{pesq:>8}{r.si_sdr:10.3f}")
            lines.append(f"{n:>2}  {METHOD_LABELS[method]:<18}" + "".join(parts))
        lines.append("-" * len(head2))
    return "\n".join(lines) + "\n"


def record_dict(r: EvalRecord) -> dict:
    return asdict(r)
