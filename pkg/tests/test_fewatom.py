import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import kubo_by_partitions
from photostat.exceptions import SizeError, ValidationError
from photostat.qsim.bloch import TwoLevelParams, single_atom_g1, single_atom_g2
from photostat.qsim.fewatom import (
    EnsembleGeometry,
    _single_atom_tables,
    fewatom_collective_correlators,
    kubo_fourth,
    moments_factorized,
    moments_liouvillian,
)

TAUS = np.linspace(0, 6, 25)


def random_geometry(n, seed):
    rng = np.random.default_rng(seed)
    return EnsembleGeometry(rng.uniform(-1, 1, (n, 3)))


def test_single_atom_reproduced():
    p = TwoLevelParams(4.5)
    r = fewatom_collective_correlators(p, EnsembleGeometry([[0.0, 0.0, 0.0]]), TAUS)
    assert np.allclose(r.g1, single_atom_g1(p, TAUS), atol=1e-12)
    assert np.allclose(r.g2, single_atom_g2(p, TAUS), atol=1e-12)


@pytest.mark.parametrize("n", [2, 3])
def test_dual_method_agreement(n):
    p = TwoLevelParams(2.0, detuning=0.3)
    g = random_geometry(n, n)
    a = moments_liouvillian(p, g, TAUS)
    b = moments_factorized(p, g, TAUS)
    for key in a:
        assert np.max(np.abs(a[key] - b[key])) < 1e-8, key


def test_equal_phases_g2_zero_two_ways():
    p = TwoLevelParams(3.0)
    g = EnsembleGeometry([[0.2, 0, 0.5], [0.2, 0.7, 0.5]])  # same x (laser) and z (detection)
    a = fewatom_collective_correlators(p, g, [0.0], "liouvillian")
    b = fewatom_collective_correlators(p, g, [0.0], "factorized")
    assert a.g2[0] == pytest.approx(b.g2[0], abs=1e-10)
    assert 0 < a.g2[0] < 1


@pytest.mark.parametrize("n", [2, 3])
def test_decomposition_identity(n):
    p = TwoLevelParams(1.5)
    r = fewatom_collective_correlators(p, random_geometry(n, 10 + n), TAUS)
    m = r.mean_field_ratio
    rhs = 1 + np.abs(r.g1) ** 2 - 2 * m ** 2 + np.abs(r.anomalous) ** 2 + r.third_order + r.connected
    assert np.max(np.abs(r.g2 - rhs)) < 1e-8
    # the Gaussian expansion alone misses terms at order 1/N
    assert np.max(np.abs(r.g2 - r.g2_gauss_mean_field)) > 1e-3


def test_connected_equals_single_atom_sum():
    p = TwoLevelParams(2.5)
    r = fewatom_collective_correlators(p, random_geometry(3, 5), TAUS)
    assert np.max(np.abs(r.connected - r.connected_single_atom)) < 1e-10


def test_ring_geometry_has_no_mean_field():
    p = TwoLevelParams(0.7)
    for n in (2, 3, 4):
        r = fewatom_collective_correlators(p, EnsembleGeometry.ring(n), TAUS[:5])
        assert abs(r.mean_field) < 1e-12
        assert np.allclose(r.g2, r.g2_gauss + r.connected, atol=1e-10)


def test_detection_direction_changes_only_phases():
    p = TwoLevelParams(1.0)
    pos = random_geometry(2, 3).positions
    a = _single_atom_tables(p, EnsembleGeometry(pos, detect_dir=[0, 0, 1]), TAUS)
    b = _single_atom_tables(p, EnsembleGeometry(pos, detect_dir=[0, 1, 0]), TAUS)
    for ta, tb in zip(a, b):
        assert np.allclose(ta["AD"], tb["AD"])
        assert np.allclose(ta["ABCD"], tb["ABCD"])


def test_geometry_validation():
    g = EnsembleGeometry([[0, 0, 0]], k_las_dir=[3, 0, 0], detect_dir=[0, 0, 2])
    assert np.linalg.norm(g.k_las_dir) == pytest.approx(1, abs=1e-12)
    with pytest.raises(ValidationError):
        EnsembleGeometry([[0, 0]])
    with pytest.raises(ValidationError):
        EnsembleGeometry([[0, 0, 0]], detect_dir=[0, 0, 0])


def test_size_and_lag_guards():
    p = TwoLevelParams(1.0)
    with pytest.raises(SizeError):
        fewatom_collective_correlators(p, EnsembleGeometry(np.zeros((5, 3))), TAUS)
    with pytest.raises(ValidationError):
        fewatom_collective_correlators(p, EnsembleGeometry(np.zeros((1, 3))), [-1.0])
    with pytest.raises(ValidationError):
        fewatom_collective_correlators(p, EnsembleGeometry(np.zeros((1, 3))), TAUS, method="magic")


@given(st.integers(0, 10_000))
def test_kubo_fourth_matches_partition_formula(seed):
    # for commuting variables the ordered formula must equal the joint cumulant
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 50)) + 1j * rng.normal(size=(4, 50)) + rng.normal(size=(4, 1))
    idx = {s: i for i, s in enumerate("ABCD")}

    def moment(labels):
        return np.mean(np.prod([x[idx[s]] for s in labels], axis=0))

    table = {"".join(c): np.array([moment(c)]) for r in range(1, 5) for c in itertools.combinations("ABCD", r)}
    assert kubo_fourth(table)[0] == pytest.approx(kubo_by_partitions(moment), abs=1e-10)
