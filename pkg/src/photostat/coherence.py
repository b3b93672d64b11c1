"""Gaussian-statistics decomposition of g2, connected correlations and mean-field bounds."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._csv import write_columns
from ._validation import check_series
from .exceptions import ConfigError, DomainError, MeanFieldBiasError, ValidationError
from .series import CoherenceSeries

log = logging.getLogger(__name__)

# 10 / Gamma for Gamma / 2 pi = 6 MHz
DEFAULT_TAIL_START_PS = int(round(10 / (2 * np.pi * 6e6) * 1e12))


def _abs2(x):
    return np.abs(np.asarray(x)) ** 2


def _series_values(x, n):
    """Broadcast a scalar, array or series to ``n`` complex values."""
    if isinstance(x, CoherenceSeries):
        x = x.values
    x = np.asarray(x, dtype=complex)
    return np.broadcast_to(x, (n,)) if x.ndim == 0 else x


# ------------------------------------------------------------ Siegert and Gaussian expansion

def siegert_prediction(g1: CoherenceSeries) -> CoherenceSeries:
    """``1 + |g1|^2`` with first-order error propagation."""
    check_series(g1)
    err = 2 * np.abs(g1.values) * g1.stderr
    reps = None if g1.replicates is None else 1 + _abs2(g1.replicates)
    return CoherenceSeries(g1.tau_ps, 1 + _abs2(g1.values), err, "g2", reps)


@dataclass
class GaussianDecomposition:
    """Inputs of the Gaussian expansion of g2.

    ``anomalous`` is ``<E-(t) E-(t + tau)> / <I>`` (scalar, array or series on
    the g1 grid); it oscillates fast and is usually set to zero.
    ``mean_field_ratio`` is ``|<E->|^2 / <I>``.
    """

    g1: CoherenceSeries
    anomalous: object = 0.0
    mean_field_ratio: float = 0.0

    def __post_init__(self):
        check_series(self.g1)
        if not 0 <= self.mean_field_ratio <= 1:
            raise ValidationError(f"mean_field_ratio must lie in [0, 1], got {self.mean_field_ratio}")
        an = _series_values(self.anomalous, len(self.g1))
        if an.shape != (len(self.g1),):
            raise ValidationError("anomalous series is not on the g1 grid")
        self.anomalous = np.array(an)

    @property
    def tau_ps(self):
        return self.g1.tau_ps

    def aligned_to(self, tau_ps) -> "GaussianDecomposition":
        idx = {t: i for i, t in enumerate(self.g1.tau_ps.tolist())}
        g1 = self.g1.aligned_to(tau_ps)
        an = self.anomalous[[idx[t] for t in np.asarray(tau_ps).tolist()]]
        return GaussianDecomposition(g1, an, self.mean_field_ratio)


def g2_gauss(d: GaussianDecomposition) -> CoherenceSeries:
    """``1 + |g1|^2 + |anomalous|^2``: the Gaussian value with zero mean field."""
    s = siegert_prediction(d.g1)
    reps = None if s.replicates is None else s.replicates + _abs2(d.anomalous)
    return CoherenceSeries(s.tau_ps, s.values + _abs2(d.anomalous), s.stderr, "g2", reps)


def gaussian_g2(d: GaussianDecomposition) -> CoherenceSeries:
    """All four terms: ``1 + |g1|^2 - 2 m^2 + |anomalous|^2`` with ``m`` the mean-field ratio."""
    s = g2_gauss(d)
    shift = 2 * d.mean_field_ratio ** 2
    reps = None if s.replicates is None else s.replicates - shift
    return CoherenceSeries(s.tau_ps, s.values - shift, s.stderr, "g2", reps)


# ------------------------------------------------------------ connected part

@dataclass
class ConnectedResult:
    connected: CoherenceSeries
    bound: CoherenceSeries
    g2_gauss: CoherenceSeries
    siegert: CoherenceSeries
    g2: CoherenceSeries

    def to_csv(self, path) -> None:
        write_columns(path, ["tau_ps", "g2", "siegert", "g2_gauss", "C", "C_stderr", "bound"], [
            self.g2.tau_ps, np.real(self.g2.values), np.real(self.siegert.values),
            np.real(self.g2_gauss.values), np.real(self.connected.values),
            self.connected.stderr, np.real(self.bound.values)])


def _difference_error(a: CoherenceSeries, b: CoherenceSeries):
    """Error of ``a - b``: from paired replicates if both have them, else in quadrature."""
    if a.replicates is not None and b.replicates is not None and a.replicates.shape == b.replicates.shape:
        with np.errstate(invalid="ignore"):
            return np.nanstd(np.real(a.replicates - b.replicates), axis=0, ddof=1)
    sa = np.nan_to_num(a.stderr) if b.has_errors else a.stderr
    sb = np.nan_to_num(b.stderr) if a.has_errors else b.stderr
    return np.sqrt(sa ** 2 + sb ** 2)


def connected_correlation(g2: CoherenceSeries, d: GaussianDecomposition,
                          mean_field_threshold: float = 0.05) -> ConnectedResult:
    """``C = g2 - g2_Gauss`` and the data-only bound ``1 + |g1|^2 - g2``.

    Only meaningful for a negligible mean field; a larger
    ``d.mean_field_ratio`` than ``mean_field_threshold`` is refused.
    """
    check_series(g2)
    if d.mean_field_ratio > mean_field_threshold:
        raise MeanFieldBiasError(
            f"mean-field ratio {d.mean_field_ratio:.3g} exceeds {mean_field_threshold}: "
            f"C would be biased by up to {max_g2_reduction(d.mean_field_ratio):.3g}")
    d = d.aligned_to(g2.tau_ps)
    gg = g2_gauss(d)
    sieg = siegert_prediction(d.g1)
    c_err = _difference_error(g2, gg)
    c_reps = None
    if g2.replicates is not None:
        c_reps = g2.replicates - (gg.replicates if gg.replicates is not None else gg.values)
    C = CoherenceSeries(g2.tau_ps, g2.values - gg.values, c_err, "connected", c_reps)
    b_reps = None
    if g2.replicates is not None:
        b_reps = (sieg.replicates if sieg.replicates is not None else sieg.values) - g2.replicates
    bound = CoherenceSeries(g2.tau_ps, sieg.values - g2.values, _difference_error(g2, sieg), "bound", b_reps)
    return ConnectedResult(C, bound, gg, sieg, g2)


def pair_fraction(g2: CoherenceSeries, gauss: CoherenceSeries) -> CoherenceSeries:
    """``f = g2 / g2_Gauss``, so that ``C = g2_Gauss (f - 1)``; NaN where g2_Gauss is 0."""
    gauss = gauss.aligned_to(g2.tau_ps)
    den = np.asarray(gauss.values)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(den != 0, g2.values / den, np.nan)
        err = np.abs(f) * np.sqrt((g2.stderr / np.abs(g2.values)) ** 2
                                  + (np.nan_to_num(gauss.stderr) / np.abs(den)) ** 2)
    return CoherenceSeries(g2.tau_ps, f, np.where(np.isfinite(f), err, np.nan), "ratio")


def average_near_zero(series: CoherenceSeries, half_width_ps: int = 2_000):
    """Mean of a series over ``|tau| <= half_width_ps`` and its standard error.

    Uses the bootstrap replicates when present, which accounts for the
    correlation between neighbouring and mirrored lags.  Otherwise the
    lags +tau and -tau are first merged and treated as independent.
    """
    mask = np.abs(series.tau_ps) <= half_width_ps
    if not mask.any():
        raise ConfigError(f"no lag within {half_width_ps} ps of zero")
    vals = np.real(series.values[mask])
    mean = float(np.mean(vals))
    if series.replicates is not None:
        with np.errstate(invalid="ignore"):
            err = float(np.nanstd(np.real(series.replicates[:, mask]).mean(axis=1), ddof=1))
        return mean, err
    tau = np.abs(series.tau_ps[mask])
    uniq, inv = np.unique(tau, return_inverse=True)
    err_sum = np.zeros(len(uniq))
    cnt = np.zeros(len(uniq))
    np.add.at(err_sum, inv, series.stderr[mask])
    np.add.at(cnt, inv, 1)
    per_lag = err_sum / cnt
    weight = cnt / cnt.sum()
    return mean, float(np.sqrt(np.sum((weight * per_lag) ** 2)))


@dataclass(frozen=True)
class SiegertVerdict:
    g2_zero: float
    g2_zero_stderr: float
    bound_zero: float
    bound_zero_stderr: float
    n_sigma: float
    threshold: float

    @property
    def label(self) -> str:
        return "violation" if self.n_sigma >= self.threshold else "consistent with Siegert"


def siegert_verdict(g2: CoherenceSeries, bound: CoherenceSeries, half_width_ps: int = 2_000,
                    threshold: float = 5.0) -> SiegertVerdict:
    """Compare ``1 + |g1|^2 - g2`` near zero lag with its error."""
    g0, g0e = average_near_zero(g2, half_width_ps)
    b0, b0e = average_near_zero(bound, half_width_ps)
    n_sigma = b0 / b0e if b0e > 0 else (np.inf if b0 > 0 else 0.0)
    return SiegertVerdict(g0, g0e, b0, b0e, float(n_sigma), threshold)


# ------------------------------------------------------------ cumulants

def _jackknife(fn, arrays, n_groups):
    n = len(arrays[0])
    edges = np.linspace(0, n, n_groups + 1).astype(int)
    vals = []
    for g in range(n_groups):
        keep = np.ones(n, dtype=bool)
        keep[edges[g]:edges[g + 1]] = False
        vals.append(fn(*(a[keep] for a in arrays)))
    vals = np.asarray(vals)
    return np.sqrt((n_groups - 1) / n_groups * np.sum(np.abs(vals - vals.mean()) ** 2))


def _samples(*xs):
    xs = [np.asarray(x).reshape(-1) for x in xs]
    n = len(xs[0])
    if any(len(x) != n for x in xs):
        raise ValidationError("sample arrays differ in length")
    if n < 2:
        raise ValidationError("need at least 2 joint samples")
    return xs


def _k3(a, b, c):
    m = np.mean
    return (m(a * b * c) - m(a * b) * m(c) - m(a * c) * m(b) - m(b * c) * m(a)
            + 2 * m(a) * m(b) * m(c))


def _k4(a, b, c, d):
    m = np.mean
    third = (_k3(a, b, c) * m(d) + _k3(b, c, d) * m(a) + _k3(a, c, d) * m(b) + _k3(a, b, d) * m(c))
    return (m(a * b * c * d) - m(a * b) * m(c * d) - m(a * c) * m(b * d) - m(a * d) * m(b * c)
            + 2 * m(a) * m(b) * m(c) * m(d) - third)


def third_cumulant(a, b, c, return_stderr=False, n_groups=50):
    """Joint third cumulant of sample draws."""
    xs = _samples(a, b, c)
    k = _k3(*xs)
    return (k, _jackknife(_k3, xs, n_groups)) if return_stderr else k


def fourth_cumulant(a, b, c, d, return_stderr=False, n_groups=50):
    """Joint fourth cumulant (connected correlation) of sample draws.

    Written as the fourth moment minus all pairings, plus twice the product
    of means, minus each third cumulant times the remaining mean; with
    nonzero means this equals the full joint cumulant.  Jackknife error over
    ``n_groups`` contiguous groups when ``return_stderr``.
    """
    xs = _samples(a, b, c, d)
    k = _k4(*xs)
    return (k, _jackknife(_k4, xs, n_groups)) if return_stderr else k


# ------------------------------------------------------------ mean-field bounds

@dataclass(frozen=True)
class MeanFieldBound:
    value: float
    stderr: float

    @property
    def upper(self) -> float:
        return self.value + self.stderr


def mean_field_from_g1_tail(g1: CoherenceSeries, tail_start_ps: int = DEFAULT_TAIL_START_PS) -> MeanFieldBound:
    """Long-lag level of ``|g1|``, an upper bound on ``|<E->|^2 / <I>``."""
    check_series(g1)
    mask = g1.tau_ps >= tail_start_ps
    if not mask.any():
        raise ConfigError(f"no g1 lag at or beyond {tail_start_ps} ps")
    mod = np.abs(g1.values[mask])
    value = float(np.mean(mod))
    spread = float(np.std(mod, ddof=1) / np.sqrt(mask.sum())) if mask.sum() > 1 else 0.0
    point = g1.stderr[mask]
    point_err = float(np.sqrt(np.nanmean(point ** 2))) if np.isfinite(point).any() else 0.0
    return MeanFieldBound(value, max(spread, point_err))


def max_g2_reduction(mean_field_ratio: float) -> float:
    """Largest bias ``2 m^2`` a mean-field ratio ``m`` can put on g2."""
    return 2 * mean_field_ratio ** 2


@dataclass
class ScalingFit:
    n: np.ndarray
    intensity: np.ndarray
    exponent: float
    exponent_stderr: float
    linear: float
    quadratic: float
    quadratic_stderr: float
    coherent_bound: float

    def model(self, n):
        n = np.asarray(n, dtype=float)
        return self.linear * n + self.quadratic * n ** 2

    @property
    def residuals(self):
        return self.intensity - self.model(self.n)

    def to_csv(self, path) -> None:
        write_columns(path, ["N", "intensity", "fit", "residual"],
                      [self.n, self.intensity, self.model(self.n), self.residuals])


def intensity_scaling_fit(n, intensity, n_sigma: float = 2.0) -> ScalingFit:
    """Power-law exponent of intensity vs atom number and a coherent-fraction bound.

    The exponent is the log-log least-squares slope.  The bound fits
    ``I = a N + b N^2`` (as ``I/N = a + b N``), takes ``b`` at ``n_sigma``
    standard errors above its estimate and reports ``b N / (a + b N)`` at
    the largest N, clipped to [0, 1].
    """
    n = np.asarray(n, dtype=float).reshape(-1)
    y = np.asarray(intensity, dtype=float).reshape(-1)
    if len(n) != len(y):
        raise ValidationError("N and intensity differ in length")
    if len(n) < 3:
        raise ConfigError("need at least 3 points")
    if np.any(~np.isfinite(n)) or np.any(~np.isfinite(y)) or np.any(n <= 0) or np.any(y <= 0):
        raise DomainError("N and intensity must be finite and positive")
    X = np.column_stack([np.ones_like(n), np.log(n)])
    coef, res, *_ = np.linalg.lstsq(X, np.log(y), rcond=None)
    exponent_se = _slope_stderr(X, np.log(y), coef)

    A = np.column_stack([np.ones_like(n), n])
    ab, *_ = np.linalg.lstsq(A, y / n, rcond=None)
    a, b = ab
    b_se = _slope_stderr(A, y / n, ab)
    b_hi = max(b + n_sigma * b_se, 0.0)
    n_max = n.max()
    total = a + b_hi * n_max
    bound = 1.0 if total <= 0 else float(np.clip(b_hi * n_max / total, 0.0, 1.0))
    return ScalingFit(n, y, float(coef[1]), exponent_se, float(a), float(b), b_se, bound)


def _slope_stderr(X, y, coef):
    dof = len(y) - X.shape[1]
    if dof <= 0:
        return float("nan")
    resid = y - X @ coef
    s2 = resid @ resid / dof
    cov = s2 * np.linalg.pinv(X.T @ X)
    return float(np.sqrt(max(cov[1, 1], 0.0)))


class PowerLawScaling(RegressorMixin, BaseEstimator):
    """Estimator wrapper: ``fit(N, intensity)``; ``predict`` uses the two-term model."""

    def __init__(self, n_sigma=2.0):
        self.n_sigma = n_sigma

    def fit(self, X, y):
        self.fit_ = intensity_scaling_fit(np.asarray(X).reshape(-1), y, self.n_sigma)
        self.exponent_ = self.fit_.exponent
        self.coherent_bound_ = self.fit_.coherent_bound
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        return self.fit_.model(np.asarray(X).reshape(-1))


# ------------------------------------------------------------ oracle helpers

def oracle_g1_series(p, tau_ps, bin_width_ps: int | None = None) -> CoherenceSeries:
    """Single-atom g1 on a lag grid, optionally matched to a binned estimator.

    With ``bin_width_ps`` the values are ``sqrt`` of the bin-averaged
    ``|g1|^2``, so that ``1 + |g1|^2`` is exactly what a binned g2 estimator
    of Gaussian light converges to.  Phase information is then dropped.
    """
    from .qsim.bloch import bin_average, single_atom_g1

    tau_ps = np.asarray(tau_ps, dtype=np.int64)
    t = p.to_gamma_units(tau_ps)
    if bin_width_ps:
        w = float(p.to_gamma_units(bin_width_ps))
        vals = np.sqrt(bin_average(lambda x: np.abs(single_atom_g1(p, x)) ** 2, t, w)).astype(complex)
    else:
        vals = single_atom_g1(p, t)
    return CoherenceSeries(tau_ps, vals, np.zeros(len(tau_ps)), "g1")
