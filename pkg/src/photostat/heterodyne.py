"""Heterodyne g2: beat model, lock-in demodulation of g1 and the emission spectrum.

With the scattered field and a local oscillator (LO) shifted by ``omega_lo``
combined on a beamsplitter, the cross-channel intensity correlation is::

    g2_HD(tau) = 1 + alpha (g2(tau) - 1) - beta cos(omega_lo tau) g1(tau)

for a resonant drive (real g1).  Frequencies are angular (rad/s) unless a
name ends in ``_hz``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal.windows import blackman
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._csv import write_columns
from .exceptions import AliasingError, DomainError, NoSignalError, SeparabilityError, ValidationError
from .series import CoherenceSeries
from .tagstore import TagStream

DEFAULT_LO_HZ = 110e6
DEFAULT_CUTOFF_FRACTION = 0.25
DEFAULT_HD_TAU_MAX_PS = 150_000


@dataclass(frozen=True)
class HeterodyneConfig:
    """LO detuning and the mean LO and scattered intensities (any common unit)."""

    omega_lo_hz: float = DEFAULT_LO_HZ
    i_lo: float = 1.0
    i_sc: float = 0.1

    def __post_init__(self):
        if not self.omega_lo_hz > 0:
            raise DomainError("omega_lo_hz must be positive")
        if self.i_lo < 0 or self.i_sc < 0:
            raise DomainError("intensities must be >= 0")

    @property
    def omega_lo(self) -> float:
        return 2 * np.pi * self.omega_lo_hz


def alpha_beta(c: HeterodyneConfig) -> tuple[float, float]:
    """``alpha = I_SC^2 / (I_SC + I_LO)^2`` and ``beta = 2 I_SC I_LO / (I_SC + I_LO)^2``."""
    total = c.i_sc + c.i_lo
    if total <= 0:
        raise DomainError("LO and scattered intensities are both zero")
    return c.i_sc ** 2 / total ** 2, 2 * c.i_sc * c.i_lo / total ** 2


def _check_grid(tau_ps, omega_lo):
    tau_ps = np.asarray(tau_ps, dtype=float)
    if len(tau_ps) > 1:
        step = np.min(np.diff(tau_ps)) * 1e-12
        if step <= 0:
            raise ValidationError("lag grid must be strictly increasing")
        if step > np.pi / omega_lo:
            raise AliasingError(f"lag step {step * 1e12:.0f} ps is coarser than pi/omega_lo "
                                f"({np.pi / omega_lo * 1e12:.0f} ps)")
    return tau_ps


def lo_bin_factor(omega_lo: float, bin_width_ps) -> float:
    """Attenuation of ``cos(omega_lo tau)`` by a binned estimator (triangle average)."""
    if not bin_width_ps:
        return 1.0
    x = omega_lo * bin_width_ps * 1e-12 / 2
    return float(np.sinc(x / np.pi) ** 2)


def g2_hd_model(g1, g2, c: HeterodyneConfig, tau_ps) -> np.ndarray:
    """Pointwise heterodyne g2 from real g1 and g2 on ``tau_ps``."""
    tau_ps = _check_grid(tau_ps, c.omega_lo)
    g1 = np.real(np.asarray(g1, dtype=complex))
    g2 = np.asarray(g2, dtype=float)
    if not (len(g1) == len(g2) == len(tau_ps)):
        raise ValidationError("g1, g2 and tau grid differ in length")
    alpha, beta = alpha_beta(c)
    return 1 + alpha * (g2 - 1) - beta * np.cos(c.omega_lo * tau_ps * 1e-12) * g1


# ------------------------------------------------------------ demodulation

def lowpass_kernel(step_ps: float, cutoff: float, half: int) -> np.ndarray:
    """Blackman-windowed sinc of ``2 half + 1`` taps, angular cutoff ``cutoff``."""
    fc = cutoff / (2 * np.pi)
    j = np.arange(-half, half + 1)
    return np.sinc(2 * fc * step_ps * 1e-12 * j) * blackman(2 * half + 3)[1:-1]


def lockin_weights(tau_ps, omega_lo: float, cutoff: float, length_factor: float = 2.0) -> np.ndarray:
    """Rows ``W[i]`` with ``W @ y`` the in-phase amplitude of ``y`` at ``omega_lo``.

    Row ``i`` is the in-phase coefficient of a weighted least-squares fit of
    ``c0 + a cos + b sin`` under a windowed-sinc weight centred on lag ``i``.
    Fitting the offset removes the slowly varying ``alpha`` term even where
    the window is short.  Near the ends of the grid the window shrinks
    symmetrically (keeping the cutoff) down to one LO period, so the
    estimate stays centred.
    """
    tau_ps = np.asarray(tau_ps, dtype=float)
    n = len(tau_ps)
    step = tau_ps[1] - tau_ps[0] if n > 1 else 1.0
    full = max(int(np.ceil(length_factor * 2 * np.pi / (cutoff * step * 1e-12))), 1)
    period = max(int(np.ceil(2 * np.pi / (omega_lo * step * 1e-12))), 1)
    phase = omega_lo * tau_ps * 1e-12
    basis = np.column_stack([np.ones(n), np.cos(phase), np.sin(phase)])
    W = np.zeros((n, n))
    kernels = {}
    for i in range(n):
        m = max(min(full, i, n - 1 - i), period)
        if m not in kernels:
            kernels[m] = lowpass_kernel(step, cutoff, m)
        lo, hi = max(0, i - m), min(n, i + m + 1)
        k = kernels[m][lo - (i - m):hi - (i - m)]
        X = basis[lo:hi]
        XtK = X.T * k
        W[i, lo:hi] = np.linalg.lstsq(XtK @ X, XtK, rcond=None)[0][1]
    return W


def demodulate_g1(g2_hd: CoherenceSeries, c: HeterodyneConfig, cutoff_fraction: float = DEFAULT_CUTOFF_FRACTION,
                  bin_width_ps=None, bandwidth: float | None = None) -> CoherenceSeries:
    """Recover real g1 from a heterodyne g2 by lock-in detection at ``omega_lo``.

    ``g1 = -A / beta`` with ``A`` the in-phase amplitude of ``g2_HD - 1``
    (see :func:`lockin_weights`); the ``alpha`` term sits at ``omega_lo``
    after mixing and is rejected by the low-pass.  ``bin_width_ps``
    corrects for the LO-fringe attenuation of a binned correlator.  If the
    atomic ``bandwidth`` (rad/s) is given, the cutoff must separate it
    from ``omega_lo``.
    """
    alpha, beta = alpha_beta(c)
    if beta == 0:
        raise NoSignalError("beta = 0: no LO beat in the heterodyne signal")
    w_lo = c.omega_lo
    tau = _check_grid(g2_hd.tau_ps, w_lo)
    if not 0 < cutoff_fraction < 1:
        raise SeparabilityError("cutoff must lie strictly between 0 and omega_lo")
    cutoff = cutoff_fraction * w_lo
    if bandwidth is not None and not (bandwidth < cutoff < w_lo - bandwidth):
        raise SeparabilityError(
            f"cannot separate a {bandwidth / 2 / np.pi / 1e6:.3g} MHz signal from the "
            f"{c.omega_lo_hz / 1e6:.3g} MHz LO with a {cutoff / 2 / np.pi / 1e6:.3g} MHz cutoff")
    steps = np.diff(tau)
    if len(steps) and not np.allclose(steps, steps[0]):
        raise ValidationError("demodulation needs a uniform lag grid")
    W = lockin_weights(tau, w_lo, cutoff) * (-1.0 / (beta * lo_bin_factor(w_lo, bin_width_ps)))
    y = np.real(g2_hd.values) - 1
    g1 = W @ y
    err = np.full(len(y), np.nan)
    if g2_hd.has_errors:
        err = np.sqrt((W ** 2) @ np.nan_to_num(g2_hd.stderr) ** 2)
    reps = None
    if g2_hd.replicates is not None:
        reps = (np.real(g2_hd.replicates) - 1) @ W.T
    return CoherenceSeries(g2_hd.tau_ps, g1, err, "g1", reps)


class HeterodyneDemodulator(TransformerMixin, BaseEstimator):
    """Estimator form of :func:`demodulate_g1`; ``transform`` returns the g1 series."""

    def __init__(self, omega_lo_hz=DEFAULT_LO_HZ, i_lo=1.0, i_sc=0.1,
                 cutoff_fraction=DEFAULT_CUTOFF_FRACTION, bin_width_ps=None):
        self.omega_lo_hz = omega_lo_hz
        self.i_lo = i_lo
        self.i_sc = i_sc
        self.cutoff_fraction = cutoff_fraction
        self.bin_width_ps = bin_width_ps

    def fit(self, X=None, y=None):
        self.config_ = HeterodyneConfig(self.omega_lo_hz, self.i_lo, self.i_sc)
        self.alpha_, self.beta_ = alpha_beta(self.config_)
        if self.beta_ == 0:
            raise NoSignalError("beta = 0: no LO beat in the heterodyne signal")
        return self

    def transform(self, X: CoherenceSeries) -> CoherenceSeries:
        check_is_fitted(self, "config_")
        return demodulate_g1(X, self.config_, self.cutoff_fraction, self.bin_width_ps)


# ------------------------------------------------------------ spectra

@dataclass
class SpectrumSeries:
    """Spectrum on angular frequencies relative to the drive, with ``S(0) = 1``."""

    omega: np.ndarray
    values: np.ndarray
    raw: np.ndarray = field(default=None, repr=False)
    band_power: float = float("nan")

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if len(self.omega) != len(self.values):
            raise ValidationError("omega and values differ in length")
        zero = np.flatnonzero(self.omega == 0)
        if not len(zero):
            raise ValidationError("spectrum grid must contain omega = 0")
        if self.values[zero[0]] != 1.0:
            raise ValidationError("spectrum is not normalized to S(0) = 1")

    def peaks(self, min_height: float = 0.05) -> np.ndarray:
        """Frequencies of local maxima above ``min_height``."""
        v = self.values
        i = np.flatnonzero((v[1:-1] > v[:-2]) & (v[1:-1] >= v[2:]) & (v[1:-1] > min_height)) + 1
        return self.omega[i]

    def to_csv(self, path) -> None:
        write_columns(path, ["omega_rad_per_s", "S_normalized"], [self.omega, self.values])


def _normalize(omega, raw):
    zero = np.flatnonzero(omega == 0)
    if not len(zero):
        raise ValidationError("spectrum grid must contain omega = 0")
    ref = raw[zero[0]]
    if ref == 0:
        raise NoSignalError("spectrum vanishes at omega = 0")
    out = raw / ref
    out[zero[0]] = 1.0
    return out


def natural_grid(span_ps: float, half_band: float) -> np.ndarray:
    """Frequency bins ``k 2 pi / span`` with ``|omega| <= half_band``; includes 0."""
    d = 2 * np.pi / (span_ps * 1e-12)
    k = int(np.floor(half_band / d))
    return np.arange(-k, k + 1) * d


def spectrum_from_hd(g2_hd: CoherenceSeries, c: HeterodyneConfig, omega=None, window: str | None = "hann",
                     half_band: float | None = None) -> SpectrumSeries:
    """Emission spectrum from the band of ``g2_HD`` centred on ``omega_lo``.

    The transform is evaluated directly at ``omega_lo + omega``.  By default
    ``omega`` runs over the natural frequency bins within ``half_band``
    (default ``omega_lo / 2``).  ``band_power`` is the DFT power of the raw
    (unwindowed) series inside the band, for Parseval checks.
    """
    w_lo = c.omega_lo
    tau = _check_grid(g2_hd.tau_ps, w_lo)
    if half_band is None:
        half_band = w_lo / 2
    if omega is None:
        span = (tau[-1] - tau[0]) + (tau[1] - tau[0] if len(tau) > 1 else 1)
        omega = natural_grid(span, half_band)
    omega = np.asarray(omega, dtype=float)
    if np.max(np.abs(omega)) >= w_lo or half_band >= w_lo:
        raise SeparabilityError("spectral band around omega_lo reaches the DC component")
    y = np.real(g2_hd.values) - 1
    if window == "hann":
        centre = 0.5 * (tau[0] + tau[-1])
        half = 0.5 * (tau[-1] - tau[0])
        wts = 0.5 * (1 + np.cos(np.pi * (tau - centre) / half)) if half > 0 else np.ones_like(tau)
    elif window is None:
        wts = np.ones_like(tau)
    else:
        raise ValidationError(f"unknown window {window!r}")
    t = tau * 1e-12
    phase = np.exp(-1j * np.outer(w_lo + omega, t))
    raw = -(phase @ (wts * y)).real
    values = _normalize(omega, raw)

    fy = np.fft.fft(y)
    freqs = 2 * np.pi * np.fft.fftfreq(len(y), d=(tau[1] - tau[0]) * 1e-12 if len(tau) > 1 else 1.0)
    band = np.abs(freqs - w_lo) <= half_band
    power = float(np.sum(np.abs(fy[band]) ** 2) / len(y))
    return SpectrumSeries(omega, values, raw, power)


def mollow_reference(p, omega) -> SpectrumSeries:
    """Single-atom inelastic resonance-fluorescence spectrum, ``S(0) = 1``."""
    from .qsim.bloch import inelastic_spectrum

    omega = np.asarray(omega, dtype=float)
    raw = inelastic_spectrum(p, omega / p.gamma_rad_s)
    return SpectrumSeries(omega, _normalize(omega, raw), raw)


# ------------------------------------------------------------ beat streams

def beat_stream(p, n_emitters: int, c: HeterodyneConfig, shots: int, seed: int,
                mean_rate_per_ns: float = 0.1, shot_duration_ps: int = 400_000,
                dt_ps=None, efficiency: float = 1.0, bin_width_ps: int = 1000) -> TagStream:
    """Photon stream of a chaotic scattered field mixed with a shifted LO.

    The two beamsplitter outputs carry ``|s + L|^2 / 2`` and ``|s - L|^2 / 2``
    with ``L = sqrt(I_LO) exp(-i omega_lo t + i psi)``, ``psi`` random per
    shot, and ``|L|^2 / <|s|^2> = i_lo / i_sc``.
    """
    from .qsim import streams as _st

    if c.i_sc <= 0:
        raise NoSignalError("no scattered light (i_sc = 0)")
    duration = _st._duration_check(shot_duration_ps, bin_width_ps)
    n, dt = _st._field_grid(p, duration, dt_ps)
    _st._check_rate(mean_rate_per_ns, dt, efficiency)
    lo_int = n_emitters * c.i_lo / c.i_sc
    ref = n_emitters + lo_int
    t = np.arange(n) * dt * 1e-12
    parts = []
    for b, start in enumerate(range(0, shots, _st.FIELD_BATCH)):
        k = min(_st.FIELD_BATCH, shots - start)
        f = _st.chaotic_field(p, n_emitters, duration, dt, seed, segments=k, batch=b)
        rng = _st._rng(seed, 2_000_003 + b)
        psi = rng.uniform(0, 2 * np.pi, size=(k, 1))
        lo = np.sqrt(lo_int) * np.exp(-1j * c.omega_lo * t[None, :] + 1j * psi)
        scale = mean_rate_per_ns * dt * 1e-3 * efficiency / (2 * ref)
        mu1 = np.abs(f.samples + lo) ** 2 * scale
        mu2 = np.abs(f.samples - lo) ** 2 * scale
        parts.append(_st._sample_rates(rng, mu1, mu2, dt, start, duration))
    stream = _st._assemble(parts, shots, duration, bin_width_ps)
    stream.metadata.update({"scenario": "heterodyne", "omega_lo_hz": c.omega_lo_hz})
    return stream
