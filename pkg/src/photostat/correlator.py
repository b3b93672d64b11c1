"""Cross-channel coincidence counting and normalized g2.

The two-time coherence is estimated as ``N_S * N_c(t1, t2) / (N_1(t1) N_2(t2))``
where ``N_S`` is the number of shots, ``N_i`` the per-bin singles summed over
shots and ``N_c`` the number of (ch1, ch2) pairs summed over shots.  Pairs are
only formed inside a shot.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _kernels
from ._csv import write_columns, write_matrix
from ._validation import check_stream
from .exceptions import ConfigError
from .series import CoherenceSeries
from .tagstore import TagStream, bin_counts

log = logging.getLogger(__name__)

DEFAULT_BIN_PS = 1_000
DEFAULT_SPAN_PS = 250_000
DEFAULT_TAU_MAX_PS = 50_000
DEFAULT_BLOCKS = 1000


@dataclass(frozen=True)
class SteadyStateWindow:
    """Analysis window ``[t_start_ps, t_end_ps)`` and the retained lag range."""

    t_start_ps: int
    t_end_ps: int
    tau_max_ps: int = DEFAULT_TAU_MAX_PS
    bin_width_ps: int = DEFAULT_BIN_PS

    @classmethod
    def trailing(cls, shot_duration_ps, bin_width_ps=DEFAULT_BIN_PS,
                 span_ps=DEFAULT_SPAN_PS, tau_max_ps=DEFAULT_TAU_MAX_PS) -> "SteadyStateWindow":
        """The last ``span_ps`` of the shot (the whole shot if shorter)."""
        end = (int(shot_duration_ps) // bin_width_ps) * bin_width_ps
        start = max(0, end - (int(span_ps) // bin_width_ps) * bin_width_ps)
        return cls(start, end, min(int(tau_max_ps), end - start), bin_width_ps)

    @property
    def n_bins(self) -> int:
        return (self.t_end_ps - self.t_start_ps) // self.bin_width_ps

    @property
    def max_lag_bins(self) -> int:
        return self.tau_max_ps // self.bin_width_ps

    def validate(self, shot_duration_ps=None) -> "SteadyStateWindow":
        w = self.bin_width_ps
        if w <= 0:
            raise ConfigError("bin width must be positive")
        if not 0 <= self.t_start_ps < self.t_end_ps:
            raise ConfigError(f"empty window [{self.t_start_ps}, {self.t_end_ps}) ps")
        if shot_duration_ps is not None and self.t_end_ps > shot_duration_ps:
            raise ConfigError(f"window ends at {self.t_end_ps} ps, after the shot ({shot_duration_ps} ps)")
        if self.t_start_ps % w or self.t_end_ps % w:
            raise ConfigError("window bounds must be multiples of the bin width")
        if not 0 <= self.tau_max_ps <= self.t_end_ps - self.t_start_ps:
            raise ConfigError("tau_max must lie between 0 and the window length")
        return self


@dataclass
class CorrelationGrid:
    """Singles and banded coincidence counts over an analysis window.

    ``nc_band[a, k]`` holds ``N_c(t_a, t_a + (k - K) * bin)`` with ``K`` the
    maximum lag in bins; pairs farther apart than ``K`` bins are not
    counted.  The ``block_*`` arrays split the same counts into contiguous
    groups of shots for resampling.
    """

    bin_width_ps: int
    t_start_ps: int
    n1: np.ndarray
    n2: np.ndarray
    nc_band: np.ndarray
    shot_count: int
    max_lag_bins: int
    block_shots: np.ndarray
    block_n1: np.ndarray
    block_n2: np.ndarray
    block_lags: np.ndarray

    @property
    def n_bins(self) -> int:
        return len(self.n1)

    @property
    def t_end_ps(self) -> int:
        return self.t_start_ps + self.n_bins * self.bin_width_ps

    @property
    def bin_start_ps(self) -> np.ndarray:
        return self.t_start_ps + np.arange(self.n_bins, dtype=np.int64) * self.bin_width_ps

    @property
    def tau_ps(self) -> np.ndarray:
        K = self.max_lag_bins
        return np.arange(-K, K + 1, dtype=np.int64) * self.bin_width_ps

    @property
    def nc(self) -> np.ndarray:
        """Dense ``N_c`` matrix (zero outside the counted band)."""
        B, K = self.n_bins, self.max_lag_bins
        out = np.zeros((B, B), dtype=np.int64)
        a, k = np.nonzero(self.nc_band)
        out[a, a + k - K] = self.nc_band[a, k]
        return out

    @property
    def in_band(self) -> np.ndarray:
        idx = np.arange(self.n_bins)
        return np.abs(idx[None, :] - idx[:, None]) <= self.max_lag_bins

    def lag_totals(self) -> np.ndarray:
        return self.nc_band.sum(axis=0)


def _block_layout(n_shots, n_blocks):
    n_blocks = max(1, min(n_shots, n_blocks)) if n_shots else 0
    block_of_shot = (np.arange(n_shots, dtype=np.int64) * n_blocks) // max(n_shots, 1)
    first_shot = np.searchsorted(block_of_shot, np.arange(n_blocks + 1))
    return n_blocks, block_of_shot, first_shot


def coincidence_grid(stream: TagStream, window: SteadyStateWindow | None = None,
                     n_blocks: int = DEFAULT_BLOCKS, n_workers: int = 1) -> CorrelationGrid:
    """Count cross-channel coincidences inside ``window``.

    Runs in O(T + P) for T tags and P counted pairs.  With ``n_workers > 1``
    contiguous groups of shots are counted on threads; the integer result
    does not depend on the worker count.
    """
    check_stream(stream)
    if window is None:
        window = SteadyStateWindow.trailing(stream.shot_duration_ps)
    window.validate(stream.shot_duration_ps)
    w = window.bin_width_ps
    a0 = window.t_start_ps // w
    B = window.n_bins
    K = window.max_lag_bins
    n_shots = stream.shot_count

    bins_all = (stream.times // np.uint64(w)).astype(np.int64) - a0
    mask = (bins_all >= 0) & (bins_all < B)
    cum = np.concatenate([[0], np.cumsum(mask, dtype=np.int64)])
    offsets = cum[stream.offsets]
    bins = bins_all[mask]
    chans = stream.channels[mask]

    n_blocks, block_of_shot, first_shot = _block_layout(n_shots, n_blocks)
    tag_block = np.repeat(block_of_shot, np.diff(offsets))
    ch1 = chans == 1
    size = max(n_blocks, 1) * B
    block_n1 = np.bincount(tag_block[ch1] * B + bins[ch1], minlength=size).reshape(-1, B)[:n_blocks]
    block_n2 = np.bincount(tag_block[~ch1] * B + bins[~ch1], minlength=size).reshape(-1, B)[:n_blocks]
    block_shots = np.diff(first_shot).astype(np.int64)
    block_lags = np.zeros((n_blocks, 2 * K + 1), dtype=np.int64)

    n_workers = max(1, min(int(n_workers), n_blocks or 1))
    edges = [(g * n_blocks) // n_workers for g in range(n_workers + 1)]
    bins32 = bins.astype(np.int64)
    bands = [np.zeros((B, 2 * K + 1), dtype=np.int64) for _ in range(n_workers)]

    def run(g):
        b_lo, b_hi = edges[g], edges[g + 1]
        if b_hi > b_lo:
            _kernels.count_band(bins32, chans, offsets, first_shot[b_lo], first_shot[b_hi],
                                block_of_shot, b_lo, K, bands[g], block_lags[b_lo:b_hi])

    if n_workers == 1:
        run(0)
    else:
        with ThreadPoolExecutor(n_workers) as pool:
            list(pool.map(run, range(n_workers)))
    band = bands[0]
    for extra in bands[1:]:
        band += extra

    return CorrelationGrid(
        bin_width_ps=w,
        t_start_ps=window.t_start_ps,
        n1=block_n1.sum(axis=0).astype(np.int64),
        n2=block_n2.sum(axis=0).astype(np.int64),
        nc_band=band,
        shot_count=n_shots,
        max_lag_bins=K,
        block_shots=block_shots,
        block_n1=block_n1.astype(np.int64),
        block_n2=block_n2.astype(np.int64),
        block_lags=block_lags,
    )


def g2_matrix(grid: CorrelationGrid) -> np.ndarray:
    """Two-time g2; NaN where a single is zero or the pair was not counted."""
    denom = np.outer(grid.n1, grid.n2).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = grid.shot_count * grid.nc.astype(float) / denom
    g[(denom == 0) | ~grid.in_band] = np.nan
    return g


def _lag_products(n1, n2, K):
    """``sum_a n1[..., a] * n2[..., a + k]`` for k in [-K, K] (a, a+k in range)."""
    B = n1.shape[-1]
    out = np.zeros(n1.shape[:-1] + (2 * K + 1,))
    for k in range(-K, K + 1):
        if k >= 0:
            out[..., k + K] = np.einsum("...i,...i->...", n1[..., :B - k], n2[..., k:])
        else:
            out[..., k + K] = np.einsum("...i,...i->...", n1[..., -k:], n2[..., :B + k])
    return out


def _ratio(n_shots, num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.asarray(n_shots, float)[..., None] * num / den
    return np.where(den > 0, g, np.nan)


def steady_state_g2(grid: CorrelationGrid, window: SteadyStateWindow | None = None,
                    n_bootstrap: int = 200, random_state=None, symmetrize: bool = True) -> CoherenceSeries:
    """Stationary g2(tau) as a ratio of window sums, with block-bootstrap errors.

    ``tau = t2 - t1``.  With ``symmetrize`` the estimate at +tau and -tau
    (equivalently the channel-swapped estimator) are averaged.  ``window``
    may only lower the lag range; a different time span needs a new grid.
    """
    K = grid.max_lag_bins
    if window is not None:
        window.validate()
        if (window.t_start_ps, window.t_end_ps, window.bin_width_ps) != (
                grid.t_start_ps, grid.t_end_ps, grid.bin_width_ps):
            raise ConfigError("window span differs from the grid; recompute the coincidence grid")
        K = min(K, window.max_lag_bins)
    sl = slice(grid.max_lag_bins - K, grid.max_lag_bins + K + 1)

    num = grid.lag_totals()[sl].astype(float)
    den = _lag_products(grid.n1.astype(float), grid.n2.astype(float), K)
    g = _ratio(grid.shot_count, num, den)

    reps = None
    n_blocks = len(grid.block_shots)
    if grid.shot_count >= 2 and n_blocks >= 2 and n_bootstrap > 0:
        rng = np.random.default_rng(random_state)
        weights = rng.multinomial(n_blocks, np.full(n_blocks, 1.0 / n_blocks), size=n_bootstrap).astype(float)
        r_num = weights @ grid.block_lags[:, sl]
        r_den = _lag_products(weights @ grid.block_n1, weights @ grid.block_n2, K)
        reps = _ratio(weights @ grid.block_shots, r_num, r_den)
    elif grid.shot_count < 2:
        log.warning("fewer than 2 shots: bootstrap errors unavailable")

    if symmetrize:
        g = 0.5 * (g + g[::-1])
        if reps is not None:
            reps = 0.5 * (reps + reps[:, ::-1])
    if reps is not None:
        with np.errstate(invalid="ignore"):
            stderr = np.nanstd(reps, axis=0, ddof=1) if n_bootstrap > 1 else np.full(len(g), np.nan)
        stderr = np.where(np.isfinite(g), stderr, np.nan)
    else:
        stderr = np.full(len(g), np.nan)
    tau = np.arange(-K, K + 1, dtype=np.int64) * grid.bin_width_ps
    return CoherenceSeries(tau, g, stderr, "g2", reps)


@dataclass
class IntensityTrace:
    t_ps: np.ndarray
    intensity: np.ndarray

    def to_csv(self, path):
        write_columns(path, ["t_ps", "intensity"], [self.t_ps, self.intensity])


def intensity_trace(stream: TagStream, bin_width_ps: int | None = None) -> IntensityTrace:
    """Mean detected counts per bin per shot, both channels together."""
    counts = bin_counts(stream, bin_width_ps)
    total = (counts.counts_ch1 + counts.counts_ch2).astype(float)
    if stream.shot_count:
        total /= stream.shot_count
    return IntensityTrace(counts.bin_start_ps, total)


def write_g2_matrix(path, grid: CorrelationGrid, matrix=None) -> None:
    m = g2_matrix(grid) if matrix is None else matrix
    write_matrix(path, m, grid.bin_start_ps, grid.bin_start_ps)


class G2Estimator(BaseEstimator):
    """Steady-state g2 of a time-tagged HBT stream.

    Parameters mirror the command line.  ``window_start_ps``/``window_end_ps``
    default to the trailing ``window_span_ps`` of the shot.

    Attributes after ``fit``: ``window_``, ``grid_``, ``g2_`` (a
    :class:`CoherenceSeries`) and ``intensity_``.
    """

    def __init__(self, bin_width_ps=DEFAULT_BIN_PS, window_start_ps=None, window_end_ps=None,
                 window_span_ps=DEFAULT_SPAN_PS, tau_max_ps=DEFAULT_TAU_MAX_PS, n_bootstrap=200,
                 n_blocks=DEFAULT_BLOCKS, symmetrize=True, n_workers=1, random_state=None):
        self.bin_width_ps = bin_width_ps
        self.window_start_ps = window_start_ps
        self.window_end_ps = window_end_ps
        self.window_span_ps = window_span_ps
        self.tau_max_ps = tau_max_ps
        self.n_bootstrap = n_bootstrap
        self.n_blocks = n_blocks
        self.symmetrize = symmetrize
        self.n_workers = n_workers
        self.random_state = random_state

    def _window(self, stream):
        w = int(self.bin_width_ps)
        if self.window_start_ps is None and self.window_end_ps is None:
            return SteadyStateWindow.trailing(stream.shot_duration_ps, w, self.window_span_ps, self.tau_max_ps)
        end = stream.shot_duration_ps if self.window_end_ps is None else int(self.window_end_ps)
        start = max(0, end - int(self.window_span_ps)) if self.window_start_ps is None else int(self.window_start_ps)
        return SteadyStateWindow(start, end, min(int(self.tau_max_ps), max(end - start, 0)), w)

    def fit(self, stream, y=None):
        check_stream(stream)
        self.window_ = self._window(stream).validate(stream.shot_duration_ps)
        self.grid_ = coincidence_grid(stream, self.window_, self.n_blocks, self.n_workers)
        self.g2_ = steady_state_g2(self.grid_, None, self.n_bootstrap, self.random_state, self.symmetrize)
        self.intensity_ = intensity_trace(stream, self.bin_width_ps)
        self.n_shots_ = stream.shot_count
        return self

    def g2_matrix(self):
        check_is_fitted(self, "grid_")
        return g2_matrix(self.grid_)

    def g2_at_zero(self, half_width_ps=2_000):
        """Mean of g2 over |tau| <= half_width_ps with its bootstrap error."""
        check_is_fitted(self, "g2_")
        from .coherence import average_near_zero

        return average_near_zero(self.g2_, half_width_ps)
