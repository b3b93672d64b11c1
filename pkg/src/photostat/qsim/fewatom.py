"""Exact correlators of the collective field radiated by a few independent atoms.

The detected field is ``E- = sum_n sigma+_n exp(i phi_n)`` with the detection
phase ``phi_n = 2 pi u . r_n`` and each atom driven with the laser phase
``theta_n = 2 pi k_las . r_n`` (positions in wavelengths).  Four operators
enter the intensity correlation::

    A = E-(t),  B = E-(t + tau),  C = E+(t + tau),  D = E+(t)

Every joint moment of an ordered subset of (A, B, C, D) is computed in two
independent ways: on the full product Liouvillian (dimension 4**N) and by
expanding the sums over atom indices, factorizing the moments of independent
atoms.  The fourth-order connected correlation is then formed from the
moments with the Kubo decomposition.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import SizeError, ValidationError
from .bloch import (
    SIGMA_MINUS,
    SIGMA_PLUS,
    TwoLevelParams,
    bloch_generator,
    hamiltonian,
    liouvillian,
    null_state,
    two_time,
)

MAX_ATOMS = 4
LABELS = "ABCD"
_EARLY_LEFT, _LATE, _EARLY_RIGHT = "A", "BC", "D"


def _unit(v, name):
    v = np.asarray(v, dtype=float).reshape(3)
    n = np.linalg.norm(v)
    if n == 0 or not np.isfinite(n):
        raise ValidationError(f"{name} must be a non-zero finite 3-vector")
    return v / n


@dataclass(frozen=True)
class EnsembleGeometry:
    """Atom positions (in wavelengths), laser and detection directions."""

    positions: np.ndarray
    k_las_dir: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    detect_dir: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    wavelength_m: float = 780e-9

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.shape[1] != 3:
            raise ValidationError("positions must be an (N, 3) array")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "k_las_dir", _unit(self.k_las_dir, "k_las_dir"))
        object.__setattr__(self, "detect_dir", _unit(self.detect_dir, "detect_dir"))

    @property
    def n_atoms(self) -> int:
        return len(self.positions)

    @property
    def drive_phases(self) -> np.ndarray:
        return 2 * np.pi * self.positions @ self.k_las_dir

    @property
    def detect_phases(self) -> np.ndarray:
        return 2 * np.pi * self.positions @ self.detect_dir

    @classmethod
    def ring(cls, n_atoms: int, **kw) -> "EnsembleGeometry":
        """Atoms spaced by 1/N wavelength along the detection axis.

        The detection phases then sum to zero, so the mean collective
        field vanishes although each atom has a coherent dipole.
        """
        z = np.arange(n_atoms) / n_atoms
        pos = np.column_stack([np.zeros(n_atoms), np.zeros(n_atoms), z])
        return cls(pos, **kw)


def _atom_ops(phi):
    """Single-atom factors of A, B, C, D for detection phase ``phi``."""
    up = SIGMA_PLUS * np.exp(1j * phi)
    down = SIGMA_MINUS * np.exp(-1j * phi)
    return {"A": up, "B": up, "C": down, "D": down}


def _ordered_product(ops, labels, eye):
    out = eye
    for s in labels:
        out = out @ ops[s]
    return out


def _split(subset):
    return ([s for s in subset if s in _EARLY_LEFT],
            [s for s in subset if s in _LATE],
            [s for s in subset if s in _EARLY_RIGHT])


def _regression(L, rho, ops, subset, taus, eye):
    left, late, right = _split(subset)
    X = _ordered_product(ops, left, eye)
    Y = _ordered_product(ops, late, eye)
    Z = _ordered_product(ops, right, eye)
    return two_time(L, rho, X, Y, Z, taus)


def _subsets():
    for r in range(1, 5):
        for c in itertools.combinations(LABELS, r):
            yield "".join(c)


def _embed(op, n, N):
    mats = [np.eye(2)] * N
    mats[n] = op
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def moments_liouvillian(p: TwoLevelParams, g: EnsembleGeometry, taus) -> dict:
    """All ordered moments of (A, B, C, D) from the N-atom Liouvillian."""
    N = g.n_atoms
    H = sum(_embed(hamiltonian(p, th), n, N) for n, th in enumerate(g.drive_phases))
    L = liouvillian(H, [_embed(SIGMA_MINUS, n, N) for n in range(N)])
    rho = null_state(L)
    ops = {s: 0 for s in LABELS}
    for n, phi in enumerate(g.detect_phases):
        for s, op in _atom_ops(phi).items():
            ops[s] = ops[s] + _embed(op, n, N)
    eye = np.eye(2 ** N)
    return {S: _regression(L, rho, ops, S, taus, eye) for S in _subsets()}


def _single_atom_tables(p, g, taus):
    eye = np.eye(2)
    tables = []
    for th, phi in zip(g.drive_phases, g.detect_phases):
        L = bloch_generator(p, th)
        rho = null_state(L)
        ops = _atom_ops(phi)
        tables.append({S: _regression(L, rho, ops, S, taus, eye) for S in _subsets()})
    return tables


def moments_factorized(p: TwoLevelParams, g: EnsembleGeometry, taus) -> dict:
    """Same moments, expanded over atom indices with per-atom factorization."""
    tables = _single_atom_tables(p, g, taus)
    N = g.n_atoms
    one = np.ones(len(np.atleast_1d(taus)), dtype=complex)
    out = {}
    for S in _subsets():
        total = np.zeros_like(one)
        for assign in itertools.product(range(N), repeat=len(S)):
            term = one
            for n in set(assign):
                sub = "".join(s for s, a in zip(S, assign) if a == n)
                term = term * tables[n][sub]
            total = total + term
        out[S] = total
    return out


def _third_connected(m, S):
    x, y, z = S
    return (m[S] - m[x + y] * m[z] - m[x + z] * m[y] - m[y + z] * m[x]
            + 2 * m[x] * m[y] * m[z])


def kubo_fourth(m: dict) -> np.ndarray:
    """Fourth-order connected moment from a table of ordered moments.

    Pairs and triples keep the original operator order, so ``m`` only needs
    keys that are ordered subsequences of ``"ABCD"``.
    """
    k3 = sum(_third_connected(m, T) * m[rest]
             for T, rest in (("ABC", "D"), ("BCD", "A"), ("ACD", "B"), ("ABD", "C")))
    return (m["ABCD"] - m["AB"] * m["CD"] - m["AC"] * m["BD"] - m["AD"] * m["BC"]
            + 2 * m["A"] * m["B"] * m["C"] * m["D"] - k3)


@dataclass
class FewAtomCorrelators:
    """Collective-mode correlators on a lag grid (tau in units of 1/Gamma)."""

    tau: np.ndarray
    intensity: float
    mean_field: complex
    g1: np.ndarray
    g2: np.ndarray
    anomalous: np.ndarray
    third_order: np.ndarray
    connected: np.ndarray
    connected_single_atom: np.ndarray
    moments: dict = field(repr=False)

    @property
    def mean_field_ratio(self) -> float:
        return abs(self.mean_field) ** 2 / self.intensity

    @property
    def g2_gauss(self) -> np.ndarray:
        """``1 + |g1|^2 + |anomalous|^2`` (mean field set to zero)."""
        return 1 + np.abs(self.g1) ** 2 + np.abs(self.anomalous) ** 2

    @property
    def g2_gauss_mean_field(self) -> np.ndarray:
        """Gaussian expansion keeping the mean-field term."""
        return self.g2_gauss - 2 * self.mean_field_ratio ** 2


def _single_atom_cumulant(p, g, taus):
    """Sum of single-atom cumulants: for independent atoms only i = j = k = l survives."""
    return sum(kubo_fourth(t) for t in _single_atom_tables(p, g, taus))


def fewatom_collective_correlators(p: TwoLevelParams, g: EnsembleGeometry, taus,
                                   method: str = "liouvillian") -> FewAtomCorrelators:
    """g1, g2, anomalous and connected correlators of the detected mode.

    ``method`` selects the moment engine: ``"liouvillian"`` (full N-atom
    generator) or ``"factorized"`` (per-atom expansion).  Both return the
    same numbers up to round-off.
    """
    if g.n_atoms > MAX_ATOMS:
        raise SizeError(f"{g.n_atoms} atoms exceeds the {MAX_ATOMS}-atom Liouville-space limit")
    if g.n_atoms < 1:
        raise SizeError("need at least one atom")
    taus = np.asarray(taus, dtype=float)
    if np.any(taus < 0):
        raise ValidationError("lags must be >= 0")
    if method == "liouvillian":
        m = moments_liouvillian(p, g, taus)
    elif method == "factorized":
        m = moments_factorized(p, g, taus)
    else:
        raise ValidationError(f"unknown method {method!r}")
    intensity = float(np.real(m["AD"][0]))
    if intensity <= 0:
        raise ValidationError("no light in the detected mode")
    k3 = sum(_third_connected(m, T) * m[rest]
             for T, rest in (("ABC", "D"), ("BCD", "A"), ("ACD", "B"), ("ABD", "C")))
    return FewAtomCorrelators(
        tau=taus,
        intensity=intensity,
        mean_field=complex(m["A"][0]),
        g1=m["AC"] / intensity,
        g2=np.real(m["ABCD"]) / intensity ** 2,
        anomalous=m["AB"] / intensity,
        third_order=k3 / intensity ** 2,
        connected=kubo_fourth(m) / intensity ** 2,
        connected_single_atom=_single_atom_cumulant(p, g, taus) / intensity ** 2,
        moments=m,
    )
