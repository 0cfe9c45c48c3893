"""
線形代数モジュール
一般実行列の固有値スペクトル（Hessenberg 縮約 + シフト付き QR 法）を提供します。
Jacobian スペクトル解析（単位円外への広がり）で使用します。
"""

import cmath

import numpy as np

from src.constants import EIG_EXCEPTIONAL_SHIFT_EVERY, EIG_SWEEPS_PER_DIM
from src.errors import ConvergenceError, DimensionError

# complex128, sorted by descending modulus
ComplexSpectrum = np.ndarray

_EPS = np.finfo(np.float64).eps


def _as_square(m) -> np.ndarray:
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"square matrix required, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DimensionError("matrix entries must be finite")
    return a


def hessenberg(m: np.ndarray) -> np.ndarray:
    """Householder reduction to upper Hessenberg form (similarity transform)."""
    h = _as_square(m)
    n = h.shape[0]
    for k in range(n - 2):
        x = h[k + 1 :, k]
        norm_x = np.linalg.norm(x)
        if norm_x == 0.0:
            continue
        v = x.copy()
        v[0] += np.copysign(norm_x, x[0])
        v /= np.linalg.norm(v)
        h[k + 1 :, k:] -= 2.0 * np.outer(v, v @ h[k + 1 :, k:])
        h[:, k + 1 :] -= 2.0 * np.outer(h[:, k + 1 :] @ v, v)
        h[k + 2 :, k] = 0.0
    return h


def _eig_2x2(a: complex, b: complex, c: complex, d: complex) -> tuple[complex, complex]:
    half_trace = 0.5 * (a + d)
    disc = cmath.sqrt(0.25 * (a - d) ** 2 + b * c)
    return half_trace + disc, half_trace - disc


def _wilkinson_shift(block: np.ndarray) -> complex:
    """Eigenvalue of the trailing 2x2 block closest to its last diagonal entry."""
    a, b = block[-2, -2], block[-2, -1]
    c, d = block[-1, -2], block[-1, -1]
    l1, l2 = _eig_2x2(a, b, c, d)
    return l1 if abs(l1 - d) <= abs(l2 - d) else l2


def _shifted_qr_sweep(block: np.ndarray, mu: complex) -> None:
    """One QR step H - mu*I = QR, H <- RQ + mu*I with Givens rotations (in place)."""
    m = block.shape[0]
    diag = np.diag_indices(m)
    block[diag] -= mu
    rotations = []
    for k in range(m - 1):
        a, b = block[k, k], block[k + 1, k]
        r = np.hypot(abs(a), abs(b))
        if r == 0.0:
            g = np.eye(2, dtype=np.complex128)
        else:
            c, s = a / r, b / r
            g = np.array([[c.conjugate(), s.conjugate()], [-s, c]])
        block[k : k + 2, k:] = g @ block[k : k + 2, k:]
        rotations.append(g)
    for k, g in enumerate(rotations):
        rows = min(k + 3, m)
        block[:rows, k : k + 2] = block[:rows, k : k + 2] @ g.conj().T
    block[diag] += mu


def eig_spectrum(m: np.ndarray) -> ComplexSpectrum:
    """
    All eigenvalues of a real square matrix.

    Hessenberg reduction followed by single-shift complex QR iterations with
    Wilkinson shifts and deflation on the active trailing block. Complex
    pairs of real matrices come out as (numerically) conjugate pairs.

    Args:
        m: square matrix with finite entries

    Returns:
        complex eigenvalues sorted by descending modulus

    Raises:
        DimensionError: non-square or non-finite input
        ConvergenceError: more than 100*n QR sweeps
    """
    a = _as_square(m)
    n = a.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.complex128)
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n, dtype=np.complex128)

    h = hessenberg(a).astype(np.complex128)
    values: list[complex] = []
    hi = n - 1
    sweeps = 0
    since_deflation = 0
    cap = EIG_SWEEPS_PER_DIM * n

    while hi >= 0:
        if hi == 0:
            values.append(h[0, 0])
            break
        lo = hi
        while lo > 0:
            off = abs(h[lo, lo - 1])
            ref = abs(h[lo, lo]) + abs(h[lo - 1, lo - 1])
            if off <= _EPS * (ref if ref > 0.0 else scale):
                h[lo, lo - 1] = 0.0
                break
            lo -= 1

        if lo == hi:
            values.append(h[hi, hi])
            hi -= 1
            since_deflation = 0
            continue
        if lo == hi - 1:
            values.extend(
                _eig_2x2(h[hi - 1, hi - 1], h[hi - 1, hi], h[hi, hi - 1], h[hi, hi])
            )
            hi -= 2
            since_deflation = 0
            continue

        sweeps += 1
        since_deflation += 1
        if sweeps > cap:
            raise ConvergenceError(
                f"QR iteration did not converge after {cap} sweeps (n={n})"
            )
        block = h[lo : hi + 1, lo : hi + 1]
        if since_deflation % EIG_EXCEPTIONAL_SHIFT_EVERY == 0:
            # 停滞時は例外シフトで対称性を崩す
            mu = block[-1, -1] + 1.5 * abs(block[-1, -2]) + 0.5j * abs(block[-2, -3])
        else:
            mu = _wilkinson_shift(block)
        _shifted_qr_sweep(block, mu)

    spectrum = np.asarray(values, dtype=np.complex128)
    spectrum.imag[np.abs(spectrum.imag) <= 1e3 * _EPS * scale] = 0.0
    order = np.argsort(-np.abs(spectrum), kind="stable")
    return spectrum[order]


def spectral_radius(m: np.ndarray) -> float:
    """Largest eigenvalue modulus."""
    spectrum = eig_spectrum(m)
    return float(np.max(np.abs(spectrum))) if spectrum.size else 0.0
