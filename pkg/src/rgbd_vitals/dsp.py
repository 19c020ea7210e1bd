"""Signal kernels shared by the respiration, cardiac and oximetry stages."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal

from .core import GaussianPrior, KalmanParams, SampledSeries, Unit


# ---------------------------------------------------------------------------
# Zero-phase Butterworth bandpass
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BandpassSpec:
    """Butterworth bandpass; ``lo``/``hi``/``rate`` in Hz."""

    order: int
    lo: float
    hi: float
    rate: float

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if not (0 < self.lo < self.hi < self.rate / 2):
            raise ValueError(f"need 0 < lo < hi < rate/2, got {self.lo}, {self.hi}, {self.rate}")

    @classmethod
    def per_minute(cls, order: int, lo_per_min: float, hi_per_min: float, rate: float) -> "BandpassSpec":
        return cls(order, lo_per_min / 60.0, hi_per_min / 60.0, rate)

    def sos(self) -> np.ndarray:
        return signal.butter(self.order, [self.lo, self.hi], btype="bandpass", fs=self.rate, output="sos")

    @property
    def settle_length(self) -> int:
        # odd-extension length on each side, 3x the realized section count
        return 3 * (2 * self.order + 1)


def present_runs(gap: np.ndarray) -> list[tuple[int, int]]:
    """Half-open index ranges of consecutive samples not flagged in ``gap``."""
    ok = np.concatenate([[False], ~np.asarray(gap, dtype=bool), [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(ok))
    return [(int(a), int(b)) for a, b in zip(edges[::2], edges[1::2])]


def fill_missing(s: SampledSeries) -> np.ndarray:
    """Linearly interpolate across missing samples (edges held constant)."""
    x = s.values.copy()
    present = s.present
    if present.all():
        return x
    if not present.any():
        return np.zeros_like(x)
    idx = np.arange(x.size)
    x[~present] = np.interp(idx[~present], idx[present], x[present])
    return x


def zero_phase(sos: np.ndarray, x: np.ndarray, padlen: int, axis: int = -1) -> np.ndarray:
    """Forward-backward filtering, symmetrised over the two pass orders.

    A single forward-backward pass depends on which end the edge
    transients start from. Averaging it with the mirrored backward-forward
    pass makes the operator commute exactly with time reversal.
    """
    fb = signal.sosfiltfilt(sos, x, axis=axis, padtype="odd", padlen=padlen)
    rev = np.flip(x, axis=axis)
    bf = np.flip(signal.sosfiltfilt(sos, rev, axis=axis, padtype="odd", padlen=padlen), axis=axis)
    return 0.5 * (fb + bf)


def bandpass_zero_phase(s: SampledSeries, spec: BandpassSpec) -> SampledSeries:
    """Zero-phase Butterworth bandpass (see :func:`zero_phase`).

    Missing samples are bridged by linear interpolation for the filter and
    remain flagged in the output.
    """
    if not math.isclose(spec.rate, s.rate, rel_tol=1e-9):
        raise ValueError("filter rate does not match series rate")
    pad = spec.settle_length
    if len(s) <= pad:
        raise ValueError(f"series too short for filter: {len(s)} <= {pad} samples")
    y = zero_phase(spec.sos(), fill_missing(s), pad)
    return s.derive(y)


# ---------------------------------------------------------------------------
# Singular spectrum analysis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SsaSpec:
    window: int
    components: int

    def check(self, n: int) -> None:
        if not (2 <= self.window <= n - 1):
            raise ValueError(f"SSA window {self.window} invalid for length {n}")
        if not (1 <= self.components <= self.window):
            raise ValueError("components must be in [1, window]")


def default_ssa_window(n: int, rate: float, seconds: float = 3.0) -> int:
    return int(max(2, min(n // 2, round(seconds * rate))))


_CHUNK = 16384


def ssa_denoise(s: SampledSeries, spec: SsaSpec) -> SampledSeries:
    """Rank-truncated Hankel reconstruction with anti-diagonal averaging.

    Missing samples enter as zeros and stay flagged.
    """
    x = s.filled(0.0)
    n = x.size
    if n < spec.window + 1:
        raise ValueError(f"series of length {n} too short for SSA window {spec.window}")
    spec.check(n)
    lw = spec.window
    hankel = sliding_window_view(x, lw)  # (K, L) view; row i is x[i:i+L]
    k_rows = hankel.shape[0]

    gram = np.zeros((lw, lw))
    for i0 in range(0, k_rows, _CHUNK):
        block = np.ascontiguousarray(hankel[i0:i0 + _CHUNK])
        gram += block.T @ block
    _, vecs = np.linalg.eigh(gram)
    basis = vecs[:, ::-1][:, :spec.components]
    proj = basis @ basis.T

    out = np.zeros(n)
    for i0 in range(0, k_rows, _CHUNK):
        block = np.ascontiguousarray(hankel[i0:i0 + _CHUNK]) @ proj
        m = block.shape[0]
        for j in range(lw):
            out[i0 + j:i0 + j + m] += block[:, j]
    counts = np.minimum.reduce([
        np.arange(1, n + 1),
        np.full(n, min(lw, k_rows)),
        np.arange(n, 0, -1),
    ])
    return s.derive(out / counts)


# ---------------------------------------------------------------------------
# Spectral rate estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateEstimate:
    time: float
    rate: float
    posterior_peak: float
    low_confidence: bool = False


class WindowSpectra:
    """Hamming-tapered, zero-padded spectra of strided windows."""

    def __init__(self, s: SampledSeries, window_s: float, stride_s: float,
                 band_per_min: Sequence[float], resolution_per_min: float = 0.5):
        n_win = int(round(window_s * s.rate))
        if n_win < 64:
            raise ValueError("window must hold at least 64 samples")
        if n_win > len(s):
            raise ValueError("window exceeds series")
        step = max(1, int(round(stride_s * s.rate)))
        nfft = 1 << int(math.ceil(math.log2(max(n_win, s.rate * 60.0 / resolution_per_min))))
        freqs = np.fft.rfftfreq(nfft, 1.0 / s.rate) * 60.0
        self.in_band = (freqs >= band_per_min[0]) & (freqs <= band_per_min[1])
        if not self.in_band.any():
            raise ValueError("band contains no frequency bins")
        self.freqs = freqs[self.in_band]
        self.n_win, self.step, self.nfft = n_win, step, nfft
        self.x = s.filled(np.nan)
        self.present = s.present
        self.n_windows = 1 + (len(s) - n_win) // step
        self.times = s.start_time + (np.arange(self.n_windows) * step + n_win / 2.0) / s.rate
        self.taper = np.hamming(n_win)

    def magnitudes(self, chunk: int = 256):
        """Yield (first_index, |X| over band) for blocks of windows."""
        view = sliding_window_view(self.x, self.n_win)[::self.step]
        for i0 in range(0, self.n_windows, chunk):
            block = np.array(view[i0:i0 + chunk])
            mean = np.nanmean(block, axis=1, keepdims=True) if np.isnan(block).any() else block.mean(axis=1, keepdims=True)
            block = np.nan_to_num(block - np.nan_to_num(mean), nan=0.0)
            spec = np.abs(np.fft.rfft(block * self.taper, self.nfft, axis=1))
            yield i0, spec[:, self.in_band]


def _log_likelihood(mag: np.ndarray, kind: str, noise_floor: float) -> np.ndarray:
    if kind == "magnitude":
        with np.errstate(divide="ignore"):
            return np.log(mag)
    if kind == "periodogram":
        power = mag * mag
        noise = max(np.median(power) / math.log(2.0), noise_floor * power.max())
        return power / noise
    raise ValueError(f"unknown likelihood {kind!r}")


def posterior_mode(mag, freqs, prior: Optional[GaussianPrior], kind, noise_floor, low_conf_ratio):
    """Return (rate, posterior_peak, low_confidence) for one window."""
    peak = mag.max()
    if not peak > 0 or peak < low_conf_ratio * np.median(mag):
        fallback = prior.mean if prior is not None else float("nan")
        return fallback, 0.0, True
    logpost = _log_likelihood(mag, kind, noise_floor)
    if prior is not None:
        logpost = logpost + prior.log_density(freqs)
    i = int(np.argmax(logpost))
    finite = logpost[np.isfinite(logpost)]
    top = logpost[i]
    weight = np.exp(finite - top).sum()
    return float(freqs[i]), float(1.0 / weight), False


def spectral_rate(s: SampledSeries, window_s: float, stride_s: float,
                  prior: Optional[GaussianPrior], band: Sequence[float],
                  likelihood: str = "periodogram", noise_floor: float = 0.01,
                  low_conf_ratio: float = 3.0) -> list[RateEstimate]:
    """Windowed rate estimate (per-minute) as the posterior mode over ``band``.

    Likelihood kinds:

    ``"periodogram"``
        ``exp(P(f) / P_noise)`` with ``P`` the tapered power spectrum and
        ``P_noise`` the in-band median power over ln 2, floored at
        ``noise_floor`` times the peak power.
    ``"magnitude"``
        the raw magnitude spectrum.

    ``prior=None`` (or an infinite-std prior) gives the plain spectral argmax.
    Windows whose in-band peak is below ``low_conf_ratio`` times the in-band
    median magnitude return the prior mean flagged low-confidence.
    """
    spectra = WindowSpectra(s, window_s, stride_s, band)
    out = []
    for i0, mags in spectra.magnitudes():
        for j, mag in enumerate(mags):
            rate, conf, low = posterior_mode(mag, spectra.freqs, prior, likelihood, noise_floor, low_conf_ratio)
            out.append(RateEstimate(float(spectra.times[i0 + j]), rate, conf, low))
    return out


def adapt_prior(prior: GaussianPrior, history: Sequence[float], min_history: int = 10,
                min_std: float = 1.0) -> tuple[GaussianPrior, bool]:
    """Product of ``prior`` with a Gaussian fitted to raw rate history.

    Returns ``(prior, adapted)``; fewer than ``min_history`` finite values
    returns the prior unchanged with ``adapted=False``. The fitted std is
    floored at ``min_std`` so a constant history cannot collapse the prior.
    """
    h = np.asarray(history, dtype=float)
    h = h[np.isfinite(h)]
    if h.size < min_history:
        return prior, False
    mu2 = float(h.mean())
    var2 = max(float(h.std(ddof=1)), min_std) ** 2
    var1 = prior.std ** 2
    if math.isinf(var1):
        return GaussianPrior(mu2, math.sqrt(var2)), True
    mean = (prior.mean * var2 + mu2 * var1) / (var1 + var2)
    var = var1 * var2 / (var1 + var2)
    return GaussianPrior(mean, math.sqrt(var)), True


def estimates_to_series(estimates: Sequence[RateEstimate], unit: Unit) -> tuple[SampledSeries, np.ndarray, np.ndarray]:
    """Pack estimates into (rate series, confidence array, low-confidence flags)."""
    if not estimates:
        raise ValueError("no estimates")
    times = np.array([e.time for e in estimates])
    rate = 1.0 / (times[1] - times[0]) if len(times) > 1 else 1.0
    values = np.array([e.rate for e in estimates])
    series = SampledSeries(values, rate, times[0], unit, ~np.isfinite(values))
    return series, np.array([e.posterior_peak for e in estimates]), np.array([e.low_confidence for e in estimates])


# ---------------------------------------------------------------------------
# Rate tracks
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RateTrack:
    """Smoothed rate series plus per-sample raw estimate diagnostics."""

    rate: SampledSeries
    raw: SampledSeries
    confidence: np.ndarray
    low_confidence: np.ndarray


def rate_track(s: SampledSeries, prior: GaussianPrior, window_s: float, stride_s: float,
               band: Sequence[float], adaptive: bool, kalman: Optional[KalmanParams],
               likelihood: str = "periodogram", unit: Unit = Unit.BPM,
               min_history: int = 10) -> "RateTrack":
    """Windowed Bayesian spectral rate, optionally with adaptive prior, then Kalman.

    With ``adaptive`` each window's prior is ``prior`` multiplied by a
    Gaussian fitted to every likelihood-only estimate so far, the current
    window included, once ``min_history`` of them exist.
    """
    if s.duration < window_s:
        raise ValueError(f"need at least {window_s} s of signal")
    if not adaptive:
        ests = spectral_rate(s, window_s, stride_s, prior, band, likelihood)
        rates = np.array([e.rate for e in ests])
        conf = np.array([e.posterior_peak for e in ests])
        low = np.array([e.low_confidence for e in ests])
        times = np.array([e.time for e in ests])
    else:
        spectra = WindowSpectra(s, window_s, stride_s, band)
        rates, conf, low = (np.empty(spectra.n_windows) for _ in range(3))
        low = low.astype(bool)
        history: list[float] = []
        for i0, mags in spectra.magnitudes():
            for j, mag in enumerate(mags):
                raw, _, raw_low = posterior_mode(mag, spectra.freqs, None, "magnitude", 0.0, 3.0)
                if not raw_low:
                    history.append(raw)
                current, _ = adapt_prior(prior, history, min_history)
                r, c, lc = posterior_mode(mag, spectra.freqs, current, likelihood, 0.01, 3.0)
                rates[i0 + j], conf[i0 + j], low[i0 + j] = r, c, lc
        times = spectra.times
    step_rate = 1.0 / stride_s
    raw_series = SampledSeries(rates, step_rate, times[0], unit)
    smoothed = kalman_smooth(raw_series, kalman) if kalman is not None else raw_series
    return RateTrack(smoothed, raw_series, conf, low)


# ---------------------------------------------------------------------------
# Peaks
# ---------------------------------------------------------------------------

def detect_peaks(s: SampledSeries, min_prominence: float = 0.0,
                 min_separation_s: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Peaks above ``min_prominence`` and the valleys that bracket them.

    Valleys are the minima between consecutive peaks, plus the minimum before
    the first and after the last peak when that minimum is interior to the
    series. Peaks on missing samples are dropped.
    """
    if len(s) < 3:
        return np.array([], dtype=int), np.array([], dtype=int)
    x = fill_missing(s)
    distance = max(1, int(math.ceil(min_separation_s * s.rate))) if min_separation_s > 0 else None
    kwargs = {"prominence": min_prominence if min_prominence > 0 else None, "distance": distance}
    peaks, _ = signal.find_peaks(x, **{k: v for k, v in kwargs.items() if v is not None})
    peaks = peaks[s.present[peaks]]
    if peaks.size == 0:
        return peaks, np.array([], dtype=int)
    valleys = []
    head = int(np.argmin(x[:peaks[0]])) if peaks[0] > 0 else 0
    if 0 < head:
        valleys.append(head)
    for a, b in zip(peaks[:-1], peaks[1:]):
        valleys.append(int(a + np.argmin(x[a:b + 1])))
    if peaks[-1] < x.size - 1:
        tail = int(peaks[-1] + 1 + np.argmin(x[peaks[-1] + 1:]))
        if tail < x.size - 1:
            valleys.append(tail)
    return peaks, np.array(valleys, dtype=int)


def peak_amplitudes(x: np.ndarray, peaks: np.ndarray, valleys: np.ndarray) -> np.ndarray:
    """Peak minus preceding valley (following valley for a leading peak)."""
    amps = np.full(peaks.size, np.nan)
    if valleys.size == 0:
        return amps
    pos = np.searchsorted(valleys, peaks)
    for i, (p, k) in enumerate(zip(peaks, pos)):
        if k > 0:
            amps[i] = x[p] - x[valleys[k - 1]]
        elif k < valleys.size:
            amps[i] = x[p] - x[valleys[k]]
    return amps


# ---------------------------------------------------------------------------
# Kalman smoothing
# ---------------------------------------------------------------------------

def kalman_smooth(s: SampledSeries, p: KalmanParams, p0_trend: float = 1e-2) -> SampledSeries:
    """Forward constant-velocity Kalman filter; returns the filtered level.

    State is ``[level, trend]`` with transition ``[[1, dt], [0, 1]]``. The
    first present observation initialises the level with variance
    ``r_std**2``; the trend starts at zero with variance ``p0_trend``.
    Samples before that are missing; later missing samples are
    prediction-only steps.
    """
    z = s.values
    present = s.present
    n = z.size
    out = np.full(n, np.nan)
    started = False
    q00, q01, q11 = p.q[0, 0], p.q[0, 1], p.q[1, 1]
    r = p.r_std ** 2
    dt = p.dt
    lvl = vel = 0.0
    p00 = p01 = p11 = 0.0
    for i in range(n):
        if not started:
            if not present[i]:
                continue
            lvl, vel = z[i], 0.0
            p00, p01, p11 = r, 0.0, p0_trend
            started = True
            out[i] = lvl
            continue
        # predict
        lvl = lvl + dt * vel
        n00 = p00 + dt * (2.0 * p01 + dt * p11) + q00
        n01 = p01 + dt * p11 + q01
        n11 = p11 + q11
        p00, p01, p11 = n00, n01, n11
        if present[i]:
            sgain = p00 + r
            k0 = p00 / sgain
            k1 = p01 / sgain
            innov = z[i] - lvl
            lvl += k0 * innov
            vel += k1 * innov
            p00, p01, p11 = (1.0 - k0) * p00, (1.0 - k0) * p01, p11 - k1 * p01
        out[i] = lvl
    return s.derive(out, missing=~np.isfinite(out))


# ---------------------------------------------------------------------------
# Calculus
# ---------------------------------------------------------------------------

_DERIVATIVE_UNIT = {Unit.ML: Unit.ML_PER_S}
_INTEGRAL_UNIT = {Unit.ML_PER_S: Unit.ML}


def differentiate(s: SampledSeries) -> SampledSeries:
    """Fourth-order central differences, per second.

    The five-point stencil keeps the gain error near 0.5% at a quarter of
    a cycle per six samples, where plain central differences lose ~5%.
    Samples within two of either end fall back to second order.
    """
    if len(s) < 3:
        raise ValueError("need at least 3 samples")
    x = fill_missing(s)
    dv = np.gradient(x, edge_order=2)
    if x.size >= 5:
        dv[2:-2] = (x[:-4] - 8.0 * x[1:-3] + 8.0 * x[3:-1] - x[4:]) / 12.0
    dv = dv * s.rate
    return s.derive(dv, unit=_DERIVATIVE_UNIT.get(s.unit, Unit.DIMENSIONLESS))


def integrate(s: SampledSeries) -> SampledSeries:
    """Cumulative trapezoidal integral starting at zero."""
    if len(s) < 3:
        raise ValueError("need at least 3 samples")
    x = fill_missing(s)
    cum = np.concatenate([[0.0], np.cumsum((x[1:] + x[:-1]) * 0.5)]) / s.rate
    return s.derive(cum, unit=_INTEGRAL_UNIT.get(s.unit, Unit.DIMENSIONLESS))
