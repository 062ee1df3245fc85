"""Oracle MVDR beamformer in the steering-vector-free (Souden) form.

Shapes follow ``(M, F, T)`` for multichannel spectrograms, ``(F, M, M)``
for spatial covariances and ``(F, M)`` for weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MvdrError

DIAGONAL_LOADING = 1e-6
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class CovarianceSet:
    phi_ss: np.ndarray
    phi_vv: np.ndarray


def spatial_covariance(x: np.ndarray) -> np.ndarray:
    """(1/T) sum_t x(t, f) x(t, f)^H for x of shape (M, F, T)."""
    T = x.shape[-1]
    if T == 0:
        raise MvdrError("no frames")
    return np.einsum("mft,nft->fmn", x, x.conj()) / T


def estimate_covariances(desired: np.ndarray, interferers: np.ndarray,
                         loading: float = DIAGONAL_LOADING) -> CovarianceSet:
    if desired.shape != interferers.shape:
        raise MvdrError("desired and interferer spectrograms differ in shape")
    phi_ss = spatial_covariance(desired)
    phi_vv = spatial_covariance(interferers)
    M = phi_vv.shape[-1]
    avg_eig = np.real(np.trace(phi_vv, axis1=-2, axis2=-1)) / M
    phi_vv = phi_vv + (loading * avg_eig)[:, None, None] * np.eye(M)
    return CovarianceSet(phi_ss, phi_vv)


def mvdr_weights(cov: CovarianceSet, ref: int = 0) -> np.ndarray:
    """w(f) = Phi_vv^-1 Phi_ss u_ref / trace(Phi_vv^-1 Phi_ss)."""
    phi_ss, phi_vv = cov.phi_ss, cov.phi_vv
    M = phi_vv.shape[-1]
    if not 0 <= ref < M:
        raise MvdrError("reference index out of range")
    cond = np.linalg.cond(phi_vv)
    if not np.all(np.isfinite(cond)) or np.max(cond) > MAX_CONDITION:
        f = int(np.nanargmax(np.where(np.isfinite(cond), cond, np.inf)))
        raise MvdrError(f"interference covariance near-singular at bin {f} "
                        f"(condition number {cond[f]:.3g})")
    numer = np.linalg.solve(phi_vv, phi_ss)
    tr = np.trace(numer, axis1=-2, axis2=-1)
    tr = np.where(np.abs(tr) > 0, tr, 1.0)
    return numer[:, :, ref] / tr[:, None]


def mvdr_filter(Y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """S_hat(f, t) = w(f)^H Y(:, f, t)."""
    if Y.shape[:2] != (w.shape[1], w.shape[0]):
        raise MvdrError("weights do not match spectrogram shape")
    return np.einsum("fm,mft->ft", w.conj(), Y)


def oracle_mvdr(images_spec: np.ndarray, desired: int, ref: int = 0) -> np.ndarray:
    """Weights from per-speaker image spectrograms (N, M, F, T).

    Interference covariance is built from the sum of all non-selected
    speakers' images.
    """
    n = images_spec.shape[0]
    d = images_spec[desired]
    if n > 1:
        v = images_spec[[k for k in range(n) if k != desired]].sum(axis=0)
    else:
        v = np.zeros_like(d)
    return mvdr_weights(estimate_covariances(d, v), ref)
