"""Driven, damped two-level atom: Bloch generator and quantum regression.

Internally time is measured in units of 1/Gamma and frequencies in units
of Gamma.  Density matrices are vectorized row-major, so that
``vec(A @ rho @ B) = kron(A, B.T) @ vec(rho)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from ..exceptions import DegenerateSpectrumError, DomainError

# basis: 0 = |g>, 1 = |e>
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.T.copy()
PROJ_E = SIGMA_PLUS @ SIGMA_MINUS
GROUND = np.array([[1, 0], [0, 0]], dtype=complex)


@dataclass(frozen=True)
class TwoLevelParams:
    """Rabi frequency and detuning in units of Gamma; Gamma/2pi in Hz."""

    rabi: float
    gamma_hz: float = 6e6
    detuning: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.rabi) or self.rabi < 0:
            raise DomainError(f"rabi must be >= 0, got {self.rabi}")
        if not self.gamma_hz > 0:
            raise DomainError(f"gamma_hz must be > 0, got {self.gamma_hz}")

    @property
    def gamma_rad_s(self) -> float:
        return 2 * np.pi * self.gamma_hz

    def to_gamma_units(self, t_ps):
        return np.asarray(t_ps, dtype=float) * 1e-12 * self.gamma_rad_s

    def to_ps(self, t):
        return np.asarray(t, dtype=float) / self.gamma_rad_s * 1e12


def hamiltonian(p: TwoLevelParams, phase: float = 0.0) -> np.ndarray:
    """Rotating-frame Hamiltonian; the drive imprints exp(-i phase) on sigma+."""
    drive = np.exp(-1j * phase) * SIGMA_PLUS
    return -p.detuning * PROJ_E + 0.5 * p.rabi * (drive + drive.conj().T)


def liouvillian(H: np.ndarray, c_ops) -> np.ndarray:
    d = H.shape[0]
    eye = np.eye(d)
    L = -1j * (np.kron(H, eye) - np.kron(eye, H.T))
    for c in c_ops:
        cdc = c.conj().T @ c
        L += np.kron(c, c.conj()) - 0.5 * np.kron(cdc, eye) - 0.5 * np.kron(eye, cdc.T)
    return L


def bloch_generator(p: TwoLevelParams, phase: float = 0.0) -> np.ndarray:
    return liouvillian(hamiltonian(p, phase), [SIGMA_MINUS])


def vec(rho):
    return np.asarray(rho, dtype=complex).reshape(-1)


def unvec(x):
    d = int(round(np.sqrt(len(x))))
    return np.asarray(x).reshape(d, d)


def observable_row(Y) -> np.ndarray:
    """Row vector r with ``r @ vec(sigma) == Tr(Y sigma)``."""
    return np.asarray(Y, dtype=complex).T.reshape(-1)


def null_state(L: np.ndarray) -> np.ndarray:
    """Steady state as the (normalized, hermitized) null vector of ``L``."""
    _, _, vh = np.linalg.svd(L)
    rho = unvec(vh[-1].conj())
    rho = rho / np.trace(rho)
    return 0.5 * (rho + rho.conj().T)


def propagate(L: np.ndarray, x0: np.ndarray, taus) -> np.ndarray:
    """``exp(L tau) x0`` for every tau >= 0, one column per tau.

    Uniform grids are stepped with a single propagator in blocks; other
    grids fall back to one matrix exponential per point.
    """
    taus = np.asarray(taus, dtype=float)
    n = len(taus)
    out = np.empty((len(x0), n), dtype=complex)
    if n == 0:
        return out
    if np.any(taus < 0):
        raise ValueError("propagate needs tau >= 0")
    h = np.diff(taus)
    if n > 2 and np.allclose(h, h[0], rtol=1e-10, atol=1e-14) and h[0] > 0:
        step = expm(L * h[0])
        first = expm(L * taus[0]) @ x0
        m = min(n, 256)
        block = np.empty((len(x0), m), dtype=complex)
        block[:, 0] = first
        for k in range(1, m):
            block[:, k] = step @ block[:, k - 1]
        out[:, :m] = block
        jump = np.linalg.matrix_power(step, m)
        for start in range(m, n, m):
            block = jump @ block
            stop = min(start + m, n)
            out[:, start:stop] = block[:, :stop - start]
        return out
    for k, t in enumerate(taus):
        out[:, k] = expm(L * t) @ x0
    return out


def two_time(L, rho, X, Y, Z, taus) -> np.ndarray:
    """Regression-theorem correlator ``<X(t) Y(t+tau) Z(t)>`` in steady state.

    Evaluates ``Tr[Y exp(L tau)(Z rho X)]`` for tau >= 0.
    """
    x0 = vec(Z @ rho @ X)
    return observable_row(Y) @ propagate(L, x0, taus)


def bloch_steady_state(p: TwoLevelParams) -> dict:
    """Excited population and dipole ``<sigma->`` of the steady state."""
    rho = null_state(bloch_generator(p))
    return {
        "excited_pop": float(np.real(rho[1, 1])),
        "dipole": complex(np.trace(SIGMA_MINUS @ rho)),
        "rho": rho,
    }


def saturation_excited_pop(p: TwoLevelParams) -> float:
    """Closed-form steady-state population, ``s / (2 (1 + s))``."""
    s = 2 * p.rabi ** 2 / (1 + 4 * p.detuning ** 2)
    return s / (2 * (1 + s))


def coherent_fraction(p: TwoLevelParams) -> float:
    """Long-lag limit of g1, ``|<sigma->|^2 / <sigma+ sigma->``."""
    ss = bloch_steady_state(p)
    if ss["excited_pop"] <= 0:
        raise DomainError("undriven atom has no fluorescence")
    return abs(ss["dipole"]) ** 2 / ss["excited_pop"]


def _signed(taus, fn, conj):
    taus = np.asarray(taus, dtype=float)
    uniq, inv = np.unique(np.abs(taus), return_inverse=True)
    vals = np.asarray(fn(uniq), dtype=complex)[inv.reshape(-1)]
    if conj:
        vals = np.where(taus < 0, vals.conj(), vals)
    return vals


def single_atom_g1(p: TwoLevelParams, taus) -> np.ndarray:
    """Normalized ``<sigma+(t) sigma-(t+tau)> / <sigma+ sigma->`` (tau in 1/Gamma)."""
    L = bloch_generator(p)
    rho = null_state(L)
    pop = np.real(rho[1, 1])
    if pop <= 0:
        raise DomainError("undriven atom has no fluorescence")
    eye = np.eye(2)
    fn = lambda t: two_time(L, rho, SIGMA_PLUS, SIGMA_MINUS, eye, t) / pop
    return _signed(taus, fn, conj=True)


def single_atom_g2(p: TwoLevelParams, taus) -> np.ndarray:
    """Normalized ``<sigma+ sigma+(tau) sigma-(tau) sigma-> / <sigma+ sigma->^2``."""
    L = bloch_generator(p)
    rho = null_state(L)
    pop = np.real(rho[1, 1])
    if pop <= 0:
        raise DomainError("undriven atom has no fluorescence")
    fn = lambda t: two_time(L, rho, SIGMA_PLUS, PROJ_E, SIGMA_MINUS, t) / pop ** 2
    return np.real(_signed(taus, fn, conj=False))


def resonant_g2_closed_form(rabi: float, taus) -> np.ndarray:
    """Textbook resonant g2: ``1 - exp(-3t/4)[cos(mu t) + 3/(4 mu) sin(mu t)]``."""
    t = np.abs(np.asarray(taus, dtype=float))
    mu = np.sqrt(complex(rabi ** 2 - 1 / 16))
    if abs(mu) < 1e-12:
        return 1 - np.exp(-0.75 * t) * (1 + 0.75 * t)
    return np.real(1 - np.exp(-0.75 * t) * (np.cos(mu * t) + 0.75 / mu * np.sin(mu * t)))


def excited_population(p: TwoLevelParams, times) -> np.ndarray:
    """Transient ``<sigma+ sigma->(t)`` for an atom starting in |g> at t = 0."""
    L = bloch_generator(p)
    return np.real(observable_row(PROJ_E) @ propagate(L, vec(GROUND), np.asarray(times, float)))


def inelastic_spectrum(p: TwoLevelParams, omegas) -> np.ndarray:
    """Incoherent part of the fluorescence spectrum via the resolvent.

    ``S(w) = 2 Re Tr[sigma- (-(L + i w))^-1 x]`` where ``x`` is ``rho sigma+``
    with its steady-state (elastic) projection removed.  Unnormalized,
    omega in units of Gamma.
    """
    if p.rabi == 0:
        raise DegenerateSpectrumError("no inelastic spectrum without drive (elastic scattering only)")
    L = bloch_generator(p)
    rho = null_state(L)
    x0 = rho @ SIGMA_PLUS
    x = vec(x0 - rho * np.trace(x0))
    obs = observable_row(SIGMA_MINUS)
    eye = np.eye(L.shape[0])
    # the trace row pins the solution at w = 0, where L itself is singular
    trace_row = vec(np.eye(2))[None, :]
    rhs = np.concatenate([-x, [0]])
    out = np.empty(len(np.atleast_1d(omegas)))
    for k, w in enumerate(np.atleast_1d(omegas)):
        A = np.vstack([L + 1j * w * eye, trace_row])
        y = np.linalg.lstsq(A, rhs, rcond=None)[0]
        out[k] = 2 * np.real(obs @ y)
    return out


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def bin_average(fn, centers, width) -> np.ndarray:
    """Triangle-weighted average of ``fn`` over ``(c - width, c + width)``.

    This is the expectation of a binned-lag estimator at lag index ``c / width``
    when arrivals are spread uniformly inside their bins.  Each half of the
    triangle is integrated separately so a cusp at the centre is harmless.
    """
    centers = np.asarray(centers, dtype=float)
    u = 0.5 * (_GL_NODES + 1) * width
    w = 0.5 * _GL_WEIGHTS * (1 - u / width)
    pts_hi = centers[:, None] + u[None, :]
    pts_lo = centers[:, None] - u[None, :]
    f_hi = np.asarray(fn(pts_hi.ravel())).reshape(pts_hi.shape)
    f_lo = np.asarray(fn(pts_lo.ravel())).reshape(pts_lo.shape)
    return f_hi @ w + f_lo @ w
