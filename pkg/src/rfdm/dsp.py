"""Preprocessing chain: range FFT, 4th-order MTI, Doppler FFT, RFDM conditioning.

The FFT is implemented here (iterative radix-2 plus Bluestein's chirp-z for
arbitrary lengths) and is verified in the test suite against `dft_oracle`,
the literal O(N^2) transform. All transforms operate along the last axis of
an arbitrary-rank array so the cube pipeline stays vectorized.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ShapeError
from .radar import DataCube

# ---------------------------------------------------------------------------
# Discrete Fourier transforms
# ---------------------------------------------------------------------------


def dft_oracle(x: np.ndarray) -> np.ndarray:
    """X(k) = sum_n x(n) exp(-j 2 pi k n / N), evaluated as the direct sum.

    Reference implementation for validating `fft`; O(N^2), vectors only.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n < 1:
        raise ShapeError("dft_oracle requires length >= 1")
    k = np.arange(n)
    w = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return w @ x


@lru_cache(maxsize=64)
def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


@lru_cache(maxsize=64)
def _twiddles(size: int) -> np.ndarray:
    half = size // 2
    return np.exp(-2j * np.pi * np.arange(half) / size)


def _fft_pow2(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 Cooley-Tukey along the last axis; len must be 2^m."""
    n = x.shape[-1]
    if n == 1:
        return x.astype(np.complex128, copy=True)
    y = np.ascontiguousarray(x, dtype=np.complex128)[..., _bit_reversal(n)]
    lead = y.shape[:-1]
    size = 2
    while size <= n:
        half = size // 2
        tw = _twiddles(size)
        y = y.reshape(*lead, n // size, size)
        even = y[..., :half]
        odd = y[..., half:] * tw
        y = np.concatenate((even + odd, even - odd), axis=-1)
        y = y.reshape(*lead, n)
        size *= 2
    return y


@lru_cache(maxsize=64)
def _bluestein_tables(n: int):
    """Chirp tables and padded chirp spectrum for length-n transforms."""
    m = 1 << (2 * n - 1).bit_length()
    k = np.arange(n)
    # exponent mod 2n keeps the quadratic phase exact for large n
    w = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(w)
    b[m - n + 1 :] = np.conj(w[1:][::-1])
    return m, w, _fft_pow2(b)


def _fft_bluestein(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    m, w, fb = _bluestein_tables(n)
    a = np.zeros(x.shape[:-1] + (m,), dtype=np.complex128)
    a[..., :n] = x * w
    conv = _ifft_pow2(_fft_pow2(a) * fb)
    return conv[..., :n] * w


def _ifft_pow2(x: np.ndarray) -> np.ndarray:
    return np.conj(_fft_pow2(np.conj(x))) / x.shape[-1]


def fft(x: np.ndarray) -> np.ndarray:
    """DFT along the last axis; any positive length (radix-2 or Bluestein)."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n < 1:
        raise ShapeError("fft requires length >= 1")
    if n & (n - 1) == 0:
        return _fft_pow2(x)
    return _fft_bluestein(x)


def ifft(x: np.ndarray) -> np.ndarray:
    """Conjugate-normalized inverse of `fft`."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n < 1:
        raise ShapeError("ifft requires length >= 1")
    return np.conj(fft(np.conj(x))) / n


def next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1)).bit_length() if n > 1 else 1


def fftshift_axis(x: np.ndarray, axis: int) -> np.ndarray:
    """Move the zero-frequency bin to index n//2 along `axis`."""
    return np.roll(x, x.shape[axis] // 2, axis=axis)


# ---------------------------------------------------------------------------
# Cube pipeline
# ---------------------------------------------------------------------------


def _window_vector(kind: str, n: int) -> np.ndarray:
    if kind == "none":
        return np.ones(n)
    if kind == "hann":
        return np.hanning(n)
    raise ValueError(f"unknown window {kind!r} (expected 'none' or 'hann')")


def range_compress(cube: DataCube, window: str = "hann") -> np.ndarray:
    """Fast-time FFT per chirp: [frame][chirp][sample][rx] -> [frame][chirp][range_bin][rx].

    The fast-time axis is windowed then zero-padded to the next power of two
    (112 -> 128 with the default config), so range bin b maps to beat
    frequency b * f_s / n_padded.
    """
    cube.validate()
    x = cube.samples
    n_s = x.shape[2]
    w = _window_vector(window, n_s)
    xw = x * w[np.newaxis, np.newaxis, :, np.newaxis]
    n_pad = next_pow2(n_s)
    if n_pad != n_s:
        pad = np.zeros(x.shape[:2] + (n_pad - n_s,) + x.shape[3:], dtype=np.complex128)
        xw = np.concatenate((xw, pad), axis=2)
    # transform along fast time: move axis to the end and back
    y = fft(np.moveaxis(xw, 2, -1))
    return np.moveaxis(y, -1, 2)


def mti_filter(rc: np.ndarray, axis: int = 1) -> np.ndarray:
    """4th-order moving-target-indication difference along the chirp axis.

    y(l) = x(l) - 4 x(l-1) + 6 x(l-2) - 4 x(l-3) + x(l-4) for l = 4..L-1,
    so the output is 4 shorter than the input. Annihilates slow-time
    polynomials up to cubic, in particular all static (DC) returns.
    """
    rc = np.asarray(rc)
    n = rc.shape[axis]
    if n < 5:
        raise ShapeError(f"MTI needs slow-time length >= 5, got {n}")
    x = np.moveaxis(rc, axis, 0)
    # symmetric grouping cancels constant input exactly in floating point
    y = (x[4:] + x[:-4]) - 4.0 * (x[3:-1] + x[1:-3]) + 6.0 * x[2:-2]
    return np.moveaxis(y, 0, axis)


@dataclass
class RfdmSequence:
    """Per-frame range x Doppler magnitude maps, the classifier input.

    frames: float64 [n_frames][n_range_bins][n_doppler_bins]; the Doppler
    axis is fftshifted so zero velocity sits at bin n_doppler // 2.
    scale_mode: 'linear' (raw magnitudes), 'linear-maxnorm' or 'log-db'.
    """

    frames: np.ndarray
    scale_mode: str = "linear"
    seq_max: float = 0.0
    provenance: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.frames.shape

    def validate(self) -> None:
        if self.frames.ndim != 3:
            raise ShapeError(f"RFDM frames must be 3-D, got shape {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ShapeError("RFDM contains non-finite values")
        if self.scale_mode.startswith("linear") and np.any(self.frames < 0):
            raise ShapeError("linear-scale RFDM must be non-negative")


def doppler_process(rc: np.ndarray, window: str = "hann", provenance: dict | None = None) -> RfdmSequence:
    """Slow-time FFT per range bin: [frame][chirp][range][rx] -> RFDM sequence.

    Chirp axis is windowed, zero-padded to the next power of two,
    transformed, fftshifted and magnitude-detected; rx channels are averaged.
    """
    rc = np.asarray(rc, dtype=np.complex128)
    if rc.ndim != 4:
        raise ShapeError(f"expected [frame][chirp][range][rx], got shape {rc.shape}")
    n_chirps = rc.shape[1]
    if n_chirps < 2:
        raise ShapeError("Doppler processing needs slow-time length >= 2")
    w = _window_vector(window, n_chirps)
    xw = rc * w[np.newaxis, :, np.newaxis, np.newaxis]
    n_pad = next_pow2(n_chirps)
    if n_pad != n_chirps:
        pad = np.zeros((rc.shape[0], n_pad - n_chirps) + rc.shape[2:], dtype=np.complex128)
        xw = np.concatenate((xw, pad), axis=1)
    spec = fft(np.moveaxis(xw, 1, -1))          # [frame, range, rx, doppler]
    spec = fftshift_axis(spec, axis=-1)
    mag = np.abs(spec).mean(axis=2)             # average rx -> [frame, range, doppler]
    return RfdmSequence(frames=mag, scale_mode="linear", seq_max=float(mag.max(initial=0.0)),
                        provenance=dict(provenance or {}))


def condition_rfdm(
    seq: RfdmSequence,
    n_range_crop: int = 32,
    n_doppler_crop: int = 32,
    scale_mode: str = "linear-maxnorm",
    range_center_bin: int | None = None,
) -> RfdmSequence:
    """Crop to the gesture zone and normalize.

    Range bins are cropped to a window centered on `range_center_bin`
    (default: the window starts at bin 0, covering the near-field gesture
    zone); Doppler is center-cropped around zero velocity. 'linear-maxnorm'
    divides by the per-sequence max (all-zero sequences pass unchanged);
    'log-db' maps 20*log10(x + 1e-12) then min-max scales to [0, 1].
    """
    seq.validate()
    t, n_r, n_d = seq.frames.shape
    if n_range_crop > n_r or n_doppler_crop > n_d:
        raise ShapeError(
            f"crop ({n_range_crop}, {n_doppler_crop}) exceeds map size ({n_r}, {n_d})"
        )
    center = n_range_crop // 2 if range_center_bin is None else int(range_center_bin)
    r0 = min(max(center - n_range_crop // 2, 0), n_r - n_range_crop)
    d0 = n_d // 2 - n_doppler_crop // 2
    cropped = seq.frames[:, r0 : r0 + n_range_crop, d0 : d0 + n_doppler_crop]

    peak = float(cropped.max(initial=0.0))
    if scale_mode == "linear-maxnorm":
        out = cropped / peak if peak > 0.0 else cropped.copy()
    elif scale_mode == "log-db":
        db = 20.0 * np.log10(cropped + 1e-12)
        lo, hi = float(db.min()), float(db.max())
        out = (db - lo) / (hi - lo) if hi > lo else np.zeros_like(db)
    else:
        raise ValueError(f"unknown scale_mode {scale_mode!r}")
    prov = dict(seq.provenance)
    prov.update({"range_crop_start": int(r0), "doppler_crop_start": int(d0)})
    return RfdmSequence(frames=np.ascontiguousarray(out), scale_mode=scale_mode,
                        seq_max=peak, provenance=prov)


def cube_to_rfdm(
    cube: DataCube,
    window: str = "hann",
    mti: bool = True,
    n_range_crop: int = 32,
    n_doppler_crop: int = 32,
    scale_mode: str = "linear-maxnorm",
    range_center_bin: int | None = None,
) -> RfdmSequence:
    """Full chain: range FFT -> (optional) 4th-order MTI -> Doppler FFT -> conditioning."""
    rc = range_compress(cube, window=window)
    if mti:
        rc = mti_filter(rc, axis=1)
    prov = {"mti": bool(mti), "window": window,
            "n_chirps": cube.config.n_chirps, "n_samples": cube.config.n_samples}
    seq = doppler_process(rc, window=window, provenance=prov)
    return condition_rfdm(seq, n_range_crop, n_doppler_crop, scale_mode, range_center_bin)
