"""Synthetic photon streams: quantum jumps, chaotic light and a non-Gaussian fixture.

Random draws for shot batch ``b`` come from ``default_rng([seed, b])`` with a
fixed batch size, so a stream depends only on its arguments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .. import _kernels
from .._validation import check_probability
from ..exceptions import AccuracyError, AliasingError, ConfigError, ValidationError
from ..series import CoherenceSeries
from ..tagstore import TagStream
from .bloch import PROJ_E, TwoLevelParams, coherent_fraction, hamiltonian, single_atom_g1

MCWF_BATCH = 8192
FIELD_BATCH = 256
MAX_JUMP_PROB = 0.1
FIELD_DT_FACTOR = 0.05


# ---------------------------------------------------------------- helpers

def _rng(seed, batch):
    return np.random.default_rng([int(seed), int(batch)])


def _duration_check(duration_ps, bin_width_ps):
    duration_ps = int(duration_ps)
    if duration_ps <= 0:
        raise ConfigError("shot duration must be positive")
    if duration_ps % int(bin_width_ps):
        raise ConfigError(f"bin width {bin_width_ps} ps does not divide shot duration {duration_ps} ps")
    return duration_ps


def _route(rng, n, efficiency):
    """Keep each photon with ``efficiency`` and send it to channel 1 or 2."""
    keep = rng.random(n) < efficiency
    chan = np.where(rng.random(n) < 0.5, 1, 2).astype(np.uint8)
    return keep, chan


def concat_streams(streams, shot_duration_ps=None, bin_width_ps=None) -> TagStream:
    """Shots of several streams with identical headers, in order."""
    streams = list(streams)
    if not streams:
        if shot_duration_ps is None:
            raise ConfigError("cannot infer a header from zero streams")
        return TagStream.empty(shot_duration_ps, bin_width_ps or 1000)
    head = streams[0]
    for s in streams[1:]:
        if (s.shot_duration_ps, s.bin_width_ps) != (head.shot_duration_ps, head.bin_width_ps):
            raise ConfigError("streams differ in shot duration or bin width")
    offsets = [np.zeros(1, dtype=np.int64)]
    base = 0
    for s in streams:
        offsets.append(s.offsets[1:] + base)
        base += s.n_tags
    return TagStream(
        shot_duration_ps=head.shot_duration_ps,
        bin_width_ps=head.bin_width_ps,
        channels=np.concatenate([s.channels for s in streams]),
        times=np.concatenate([s.times for s in streams]),
        offsets=np.concatenate(offsets),
        clock_resolution_ps=head.clock_resolution_ps,
    )


def apply_dead_time(stream: TagStream, dead_time_ps: int) -> TagStream:
    """Drop tags arriving within ``dead_time_ps`` of the last kept tag on the same channel."""
    if dead_time_ps <= 0 or stream.n_tags == 0:
        return stream
    keep = _kernels.dead_time_mask(stream.times, stream.channels, stream.offsets, np.int64(dead_time_ps))
    return _filter(stream, keep)


def _filter(stream: TagStream, keep) -> TagStream:
    cum = np.concatenate([[0], np.cumsum(keep, dtype=np.int64)])
    return TagStream(
        shot_duration_ps=stream.shot_duration_ps,
        bin_width_ps=stream.bin_width_ps,
        channels=stream.channels[keep],
        times=stream.times[keep],
        offsets=cum[stream.offsets],
        clock_resolution_ps=stream.clock_resolution_ps,
        metadata=dict(stream.metadata),
    )


# ---------------------------------------------------------------- quantum jumps

def _no_jump_survival(p: TwoLevelParams, dt: float, n_steps: int) -> np.ndarray:
    """Survival ``S_k = ||exp(-i H_eff k dt)|g>||^2`` for k = 0..n_steps."""
    h_eff = hamiltonian(p) - 0.5j * PROJ_E
    step = expm(-1j * h_eff * dt)
    psi = np.array([1, 0], dtype=complex)
    surv = np.empty(n_steps + 1)
    surv[0] = 1.0
    for k in range(1, n_steps + 1):
        psi = step @ psi
        surv[k] = np.vdot(psi, psi).real
    return surv


def mcwf_photon_stream(p: TwoLevelParams, duration_ps: int, shots: int, seed: int,
                       efficiency: float = 1.0, dead_time_ps: int = 0,
                       bin_width_ps: int = 1000, dt: float | None = None) -> TagStream:
    """Quantum-jump photon record of one driven atom, reset to |g> at each shot start.

    After every jump the atom is back in |g>, so each photon waiting time is
    drawn from the no-jump survival curve tabulated on a grid of step ``dt``
    (units of 1/Gamma).  The conditional jump probability per step is
    ``1 - S_{k+1}/S_k``; a grid on which it exceeds 0.1 is refused.
    """
    check_probability("efficiency", efficiency, open_low=True)
    duration_ps = _duration_check(duration_ps, bin_width_ps)
    if shots < 0:
        raise ConfigError("shots must be >= 0")
    if dt is None:
        dt = min(0.01, 0.01 / p.rabi) if p.rabi > 0 else 0.01
    horizon = float(p.to_gamma_units(duration_ps))
    n_steps = int(np.ceil(horizon / dt)) + 1
    surv = _no_jump_survival(p, dt, n_steps)
    with np.errstate(divide="ignore", invalid="ignore"):
        hazard = 1 - surv[1:] / surv[:-1]
    if np.nanmax(hazard, initial=0.0) > MAX_JUMP_PROB:
        raise AccuracyError(f"jump probability per step {np.nanmax(hazard):.3f} > {MAX_JUMP_PROB}; reduce dt")
    # inverse-CDF lookup needs an increasing key
    neg_surv = -surv

    parts = []
    for b, start in enumerate(range(0, shots, MCWF_BATCH)):
        n = min(MCWF_BATCH, shots - start)
        rng = _rng(seed, b)
        clock = np.zeros(n)
        alive = np.arange(n)
        shot_ids, t_jump = [], []
        while len(alive):
            u = rng.random(len(alive))
            k = np.searchsorted(neg_surv, -u, side="left") - 1
            frac = rng.random(len(alive))
            t_new = clock[alive] + (k + frac) * dt
            ok = (k < n_steps) & (t_new < horizon)
            alive = alive[ok]
            clock[alive] = t_new[ok]
            shot_ids.append(alive + start)
            t_jump.append(t_new[ok])
        ids = np.concatenate(shot_ids) if shot_ids else np.empty(0, np.int64)
        t = np.concatenate(t_jump) if t_jump else np.empty(0)
        keep, chan = _route(rng, len(ids), efficiency)
        t_ps = np.minimum(np.floor(p.to_ps(t[keep])), duration_ps - 1).astype(np.uint64)
        parts.append((ids[keep], chan[keep], t_ps))

    ids = np.concatenate([q[0] for q in parts]) if parts else np.empty(0, np.int64)
    chans = np.concatenate([q[1] for q in parts]) if parts else np.empty(0, np.uint8)
    times = np.concatenate([q[2] for q in parts]) if parts else np.empty(0, np.uint64)
    stream = TagStream.from_arrays(ids, chans, times, shots, duration_ps, bin_width_ps)
    stream.metadata.update({"scenario": "mcwf", "efficiency": efficiency})
    return apply_dead_time(stream, dead_time_ps)


# ---------------------------------------------------------------- Gaussian fields

@dataclass
class FieldTrace:
    """Classical complex amplitude sampled every ``dt_ps``.

    ``samples`` has shape (segments, n); segments are statistically
    independent records (for example one per shot).
    """

    dt_ps: float
    samples: np.ndarray
    mean_intensity: float = field(init=False)

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=complex))
        if not self.dt_ps > 0:
            raise ValidationError("dt_ps must be positive")
        self.mean_intensity = float(np.mean(np.abs(self.samples) ** 2)) if self.samples.size else 0.0

    @property
    def n_segments(self) -> int:
        return self.samples.shape[0]

    @property
    def segment_len(self) -> int:
        return self.samples.shape[1]

    def g1(self, max_lag: int) -> CoherenceSeries:
        """Sample ``<E*(t) E(t + tau)> / <|E|^2>`` for lags up to ``max_lag`` samples.

        Each segment is correlated on its own (no wrap-around); the error
        is the spread between segments when there are several.
        """
        x = self.samples
        n = x.shape[1]
        max_lag = int(min(max_lag, n - 1))
        size = 1 << int(np.ceil(np.log2(2 * n)))
        fx = np.fft.fft(x, size, axis=1)
        acf = np.fft.ifft(np.abs(fx) ** 2, axis=1)[:, :max_lag + 1]
        per_seg = np.conj(acf) / (n - np.arange(max_lag + 1))
        norm = np.mean(np.abs(x) ** 2)
        vals = per_seg.mean(axis=0) / norm
        if self.n_segments > 1:
            err = np.abs(per_seg / norm - vals).std(axis=0, ddof=1) / np.sqrt(self.n_segments)
        else:
            err = np.full(max_lag + 1, np.nan)
        tau = np.rint(np.arange(max_lag + 1) * self.dt_ps).astype(np.int64)
        full_tau = np.concatenate([-tau[:0:-1], tau])
        full_val = np.concatenate([np.conj(vals[:0:-1]), vals])
        full_err = np.concatenate([err[:0:-1], err])
        return CoherenceSeries(full_tau, full_val, full_err, "g1")


@lru_cache(maxsize=32)
def _filter_amplitudes(rabi, detuning, gamma_hz, n, dt):
    """Square-root eigenvalues of the circulant embedding of the inelastic g1."""
    p = TwoLevelParams(rabi, gamma_hz, detuning)
    c = coherent_fraction(p) if rabi > 0 else 0.0
    r = single_atom_g1(p, np.arange(n + 1) * dt) - c
    m = 2 * n
    ext = np.empty(m, dtype=complex)
    ext[:n + 1] = r
    ext[n + 1:] = np.conj(r[1:n][::-1])
    lam = np.fft.fft(ext).real
    return np.sqrt(np.clip(lam, 0, None)), c


def _field_grid(p, duration_ps, dt_ps):
    dt_max = p.to_ps(FIELD_DT_FACTOR / max(p.rabi, 1.0))
    if dt_ps is None:
        n = int(np.ceil(duration_ps / dt_max))
        dt_ps = duration_ps / n
    elif dt_ps > dt_max * (1 + 1e-9):
        raise AccuracyError(f"dt {dt_ps:.4g} ps does not resolve the Mollow sidebands (max {dt_max:.4g} ps)")
    n = int(round(duration_ps / dt_ps))
    if n < 2 or abs(n * dt_ps - duration_ps) > 1e-6 * dt_ps:
        raise ConfigError("duration must be a whole number of samples")
    return n, float(dt_ps)


def chaotic_field(p: TwoLevelParams, n_emitters: int, duration_ps, dt_ps=None, seed: int = 0,
                  segments: int = 1, batch: int = 0) -> FieldTrace:
    """Gaussian field of ``n_emitters`` independent atoms with random phases.

    Each segment is drawn by spectral synthesis (circulant embedding) from
    the inelastic part of the single-atom g1.  The elastic part, a random
    phasor sum over atoms, is a complex Gaussian constant per segment.  The
    total has ``<|E|^2> = n_emitters`` and normalized autocorrelation g1.
    """
    if n_emitters < 1:
        raise ConfigError("n_emitters must be >= 1")
    if p.rabi == 0:
        return FieldTrace(1.0 if dt_ps is None else dt_ps, np.zeros((segments, 2)))
    n, dt_ps = _field_grid(p, duration_ps, dt_ps)
    dt = float(p.to_gamma_units(dt_ps))
    amp, c = _filter_amplitudes(p.rabi, p.detuning, p.gamma_hz, n, dt)
    rng = _rng(seed, batch)
    m = 2 * n
    z = (rng.standard_normal((segments, m)) + 1j * rng.standard_normal((segments, m))) / np.sqrt(2)
    x = np.sqrt(m) * np.fft.ifft(amp * z, axis=1)[:, :n]
    elastic = (rng.standard_normal((segments, 1)) + 1j * rng.standard_normal((segments, 1))) * np.sqrt(c / 2)
    return FieldTrace(dt_ps, np.sqrt(n_emitters) * (x + elastic))


def coherent_admixture(f: FieldTrace, amplitude: complex) -> FieldTrace:
    """Add a constant complex amplitude (a mean field) to every sample."""
    return FieldTrace(f.dt_ps, f.samples + amplitude)


def _sample_rates(rng, mu1, mu2, dt_ps, shot_offset, duration_ps):
    """Poisson photons per sample, jittered uniformly inside the sample."""
    ids, chans, times = [], [], []
    for ch, mu in ((1, mu1), (2, mu2)):
        counts = rng.poisson(mu)
        s, k = np.nonzero(counts)
        rep = counts[s, k]
        s = np.repeat(s, rep)
        k = np.repeat(k, rep)
        t = np.floor((k + rng.random(len(k))) * dt_ps)
        ids.append(s + shot_offset)
        chans.append(np.full(len(s), ch, dtype=np.uint8))
        times.append(np.minimum(t, duration_ps - 1).astype(np.uint64))
    return np.concatenate(ids), np.concatenate(chans), np.concatenate(times)


def _check_rate(mean_rate_per_ns, dt_ps, efficiency):
    check_probability("efficiency", efficiency, open_low=True)
    if mean_rate_per_ns < 0:
        raise ConfigError("mean rate must be >= 0")
    per_sample = mean_rate_per_ns * dt_ps * 1e-3
    if per_sample > 0.1:
        raise AliasingError(f"{per_sample:.3f} expected photons per sample (> 0.1); refine dt or lower the rate")


def sample_photons(f: FieldTrace, mean_rate_per_ns: float, shots: int | None = None, seed: int = 0,
                   efficiency: float = 1.0, intensity_ref: float | None = None,
                   bin_width_ps: int = 1000, batch: int = 0, shot_offset: int = 0) -> TagStream:
    """Two-channel photon stream with instantaneous rate proportional to ``|E(t)|^2``.

    ``mean_rate_per_ns`` is the total detected rate (before ``efficiency``)
    when ``|E|^2`` equals ``intensity_ref`` (default: the trace mean).  The
    trace is cut into ``shots`` equal shots (default: one per segment).  A
    50/50 beamsplitter sends half of the rate to each channel.
    """
    _check_rate(mean_rate_per_ns, f.dt_ps, efficiency)
    inten = np.abs(f.samples) ** 2
    if shots is not None and shots != f.n_segments:
        if inten.size % shots:
            raise ConfigError("trace length is not a multiple of the shot count")
        inten = inten.reshape(shots, -1)
    n = inten.shape[1]
    duration_ps = int(round(n * f.dt_ps))
    _duration_check(duration_ps, bin_width_ps)
    ref = f.mean_intensity if intensity_ref is None else intensity_ref
    if ref <= 0:
        return TagStream.empty(duration_ps, bin_width_ps, shots=inten.shape[0])
    mu = inten * (mean_rate_per_ns * f.dt_ps * 1e-3 * efficiency / (2 * ref))
    rng = _rng(seed, batch)
    ids, chans, times = _sample_rates(rng, mu, mu, f.dt_ps, 0, duration_ps)
    return TagStream.from_arrays(ids, chans, times, inten.shape[0], duration_ps, bin_width_ps)


def chaotic_stream(p: TwoLevelParams, n_emitters: int, shots: int, seed: int,
                   mean_rate_per_ns: float = 0.1, shot_duration_ps: int = 400_000,
                   dt_ps: float | None = None, efficiency: float = 1.0,
                   coherent_amplitude: complex = 0.0, dead_time_ps: int = 0,
                   bin_width_ps: int = 1000) -> TagStream:
    """Photon stream from independent chaotic shots, optionally with a mean field.

    Every shot is an independent field record (fresh atom phases).  Rates
    are normalized to the ensemble intensity ``n_emitters + |amplitude|^2``
    so shot-to-shot intensity fluctuations are kept.
    """
    shot_duration_ps = _duration_check(shot_duration_ps, bin_width_ps)
    n, dt_ps = _field_grid(p, shot_duration_ps, dt_ps)
    _check_rate(mean_rate_per_ns, dt_ps, efficiency)
    ref = n_emitters + abs(coherent_amplitude) ** 2
    parts = []
    for b, start in enumerate(range(0, shots, FIELD_BATCH)):
        k = min(FIELD_BATCH, shots - start)
        f = chaotic_field(p, n_emitters, shot_duration_ps, dt_ps, seed, segments=k, batch=b)
        if coherent_amplitude:
            f = coherent_admixture(f, coherent_amplitude)
        mu = np.abs(f.samples) ** 2 * (mean_rate_per_ns * dt_ps * 1e-3 * efficiency / (2 * ref))
        parts.append(_sample_rates(_rng(seed, 1_000_003 + b), mu, mu, dt_ps, start, shot_duration_ps))
    stream = _assemble(parts, shots, shot_duration_ps, bin_width_ps)
    stream.metadata.update({"scenario": "chaotic", "n_emitters": n_emitters})
    return apply_dead_time(stream, dead_time_ps)


def _assemble(parts, shots, duration_ps, bin_width_ps):
    if parts:
        ids, chans, times = (np.concatenate([q[i] for q in parts]) for i in range(3))
    else:
        ids, chans, times = np.empty(0, np.int64), np.empty(0, np.uint8), np.empty(0, np.uint64)
    return TagStream.from_arrays(ids, chans, times, shots, duration_ps, bin_width_ps)


# ---------------------------------------------------------------- fixture

def nongaussian_fixture(s: TagStream, delete_prob: float, tau_c_ps: int, seed: int) -> TagStream:
    """Suppress close cross-channel coincidences.

    Cross-channel pairs closer than ``tau_c_ps`` are visited in time order of
    their earlier tag; while both members survive, one of them (chosen at
    random) is deleted with probability ``delete_prob``.  The field phase is
    untouched, so a zero mean field stays zero.
    """
    check_probability("delete_prob", delete_prob)
    if tau_c_ps < 0:
        raise ConfigError("tau_c_ps must be >= 0")
    if delete_prob == 0 or s.n_tags == 0 or tau_c_ps == 0:
        return s
    tau_c = np.uint64(min(int(tau_c_ps), np.iinfo(np.int64).max))
    n_pairs = _kernels.count_close_pairs(s.times, s.channels, s.offsets, tau_c)
    first = np.empty(n_pairs, dtype=np.int64)
    second = np.empty(n_pairs, dtype=np.int64)
    _kernels.list_close_pairs(s.times, s.channels, s.offsets, tau_c, first, second)
    rng = np.random.default_rng([int(seed), 0x51E6])
    alive = np.ones(s.n_tags, dtype=np.bool_)
    _kernels.greedy_delete(first, second, rng.random(n_pairs), rng.random(n_pairs), float(delete_prob), alive)
    out = _filter(s, alive)
    out.metadata.update({"fixture_delete_prob": delete_prob, "fixture_tau_c_ps": int(tau_c_ps)})
    return out
