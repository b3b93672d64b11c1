import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import brute_force_nc, ratio_of_sums_g2
from photostat.correlator import (
    G2Estimator,
    SteadyStateWindow,
    coincidence_grid,
    g2_matrix,
    intensity_trace,
    steady_state_g2,
    write_g2_matrix,
)
from photostat.exceptions import ConfigError
from photostat.tagstore import TagStream


def poisson_stream(shots, duration_ps, rate_per_ns, seed):
    """Two independent homogeneous Poisson channels."""
    rng = np.random.default_rng(seed)
    n = rng.poisson(rate_per_ns * duration_ps * 1e-3 * 2, size=shots)
    idx = np.repeat(np.arange(shots), n)
    return TagStream.from_arrays(idx, rng.integers(1, 3, n.sum()), rng.integers(0, duration_ps, n.sum()),
                                 shots, duration_ps)


@st.composite
def small_streams(draw):
    bins = draw(st.integers(2, 12))
    duration = bins * 100
    shots = []
    for _ in range(draw(st.integers(1, 5))):
        tags = draw(st.lists(st.tuples(st.integers(1, 2), st.integers(0, duration - 1)), max_size=10))
        shots.append(sorted(tags, key=lambda r: r[1]))
    return TagStream.from_shots(shots, duration, 100)


def test_single_pair_example():
    s = TagStream.from_shots([[(1, 350), (2, 750)]], 1000, 100)
    grid = coincidence_grid(s, SteadyStateWindow(0, 1000, 1000, 100))
    nc = grid.nc
    assert nc[3, 7] == 1 and nc.sum() == 1


def test_two_shots_same_bin():
    s = TagStream.from_shots([[(1, 310), (2, 390)]] * 2, 1000, 100)
    assert coincidence_grid(s, SteadyStateWindow(0, 1000, 1000, 100)).nc[3, 3] == 2


def test_no_cross_shot_pairs():
    s = TagStream.from_shots([[(1, 500)], [(2, 500)]], 1000, 100)
    assert coincidence_grid(s, SteadyStateWindow(0, 1000, 1000, 100)).nc.sum() == 0


@given(small_streams(), st.integers(0, 3), st.integers(1, 3))
def test_grid_matches_brute_force(s, start_bins, n_workers):
    B = s.shot_duration_ps // 100
    start = min(start_bins, B - 1) * 100
    K = (s.shot_duration_ps - start) // 100
    w = SteadyStateWindow(start, s.shot_duration_ps, K * 100, 100)
    grid = coincidence_grid(s, w, n_blocks=3, n_workers=n_workers)
    ref = brute_force_nc(s, start, s.shot_duration_ps, 100)
    assert np.array_equal(grid.nc, ref)
    assert grid.block_lags.sum() == ref.sum()
    g = steady_state_g2(grid, n_bootstrap=0, symmetrize=False)
    for k in range(-K, K + 1):
        want = ratio_of_sums_g2(grid.n1, grid.n2, ref, s.shot_count, k)
        got = g.values[k + K]
        assert (np.isnan(want) and np.isnan(got)) or got == pytest.approx(want)


def test_band_limits_lags():
    s = TagStream.from_shots([[(1, 50), (2, 950)]], 1000, 100)
    grid = coincidence_grid(s, SteadyStateWindow(0, 1000, 300, 100))
    assert grid.nc.sum() == 0
    m = g2_matrix(grid)
    assert np.isnan(m[0, 9])


def test_g2_matrix_missing_and_zero():
    s = TagStream.from_shots([[(1, 50)], [(2, 150)]], 300, 100)
    m = g2_matrix(coincidence_grid(s, SteadyStateWindow(0, 300, 300, 100)))
    assert m[0, 1] == 0
    assert np.isnan(m[1, 1]) and np.isnan(m[2, 0])


def test_perfectly_correlated_pairs():
    rng = np.random.default_rng(0)
    shots, B = 4000, 8
    b = rng.integers(0, B, shots)
    s = TagStream.from_arrays(np.repeat(np.arange(shots), 2), np.tile([1, 2], shots),
                              np.repeat(b * 100 + 50, 2), shots, B * 100, 100)
    grid = coincidence_grid(s, SteadyStateWindow(0, B * 100, B * 100, 100))
    m = g2_matrix(grid)
    diag = np.diag(m)
    assert np.allclose(diag, shots / grid.n1)
    assert np.mean(diag) == pytest.approx(B, rel=0.05)


def test_poisson_normalization_and_errors():
    s = poisson_stream(4000, 100_000, 0.05, 1)
    est = G2Estimator(window_span_ps=60_000, tau_max_ps=20_000, random_state=0).fit(s)
    g = est.g2_
    z = (g.values - 1) / g.stderr
    assert np.all(np.isfinite(z))
    assert np.abs(z).max() < 4.5
    assert abs(np.mean(z)) < 1.0
    assert np.allclose(g.values, g.values[::-1])
    assert np.all(g.stderr >= 0)
    m = est.g2_matrix()
    finite = m[np.isfinite(m)]
    assert np.mean(finite) == pytest.approx(1, abs=0.02)


def test_poisson_expected_coincidences():
    shots = 20_000
    s = poisson_stream(shots, 10_000, 0.05, 2)
    grid = coincidence_grid(s, SteadyStateWindow(0, 10_000, 10_000, 1000))
    r1 = grid.n1 / shots
    r2 = grid.n2 / shots
    expect = shots * np.outer(r1, r2)
    z = (grid.nc - expect) / np.sqrt(expect)
    assert np.abs(z).max() < 4.5


def test_window_consistency():
    s = poisson_stream(3000, 200_000, 0.05, 4)
    full = G2Estimator(window_span_ps=200_000, tau_max_ps=10_000, random_state=1).fit(s).g2_
    part = G2Estimator(window_start_ps=50_000, window_end_ps=120_000, tau_max_ps=10_000,
                       random_state=1).fit(s).g2_
    diff = (full.values - part.values) / np.hypot(full.stderr, part.stderr)
    assert np.abs(diff).max() < 4


def test_exchange_symmetry():
    rng = np.random.default_rng(9)
    shots = 500
    # channel 2 lags channel 1 by ~3 bins: asymmetric raw estimator
    t1 = rng.integers(0, 40_000, shots)
    t2 = np.minimum(t1 + 3000 + rng.integers(0, 1000, shots), 49_999)
    ids = np.repeat(np.arange(shots), 2)
    times = np.column_stack([t1, t2]).ravel()
    chans = np.tile([1, 2], shots)
    s = TagStream.from_arrays(ids, chans, times, shots, 50_000)
    raw = G2Estimator(window_span_ps=50_000, tau_max_ps=10_000, symmetrize=False, n_bootstrap=0).fit(s).g2_
    swapped = G2Estimator(window_span_ps=50_000, tau_max_ps=10_000, symmetrize=False,
                          n_bootstrap=0).fit(s.with_channels_swapped()).g2_
    assert np.allclose(np.nan_to_num(raw.values), np.nan_to_num(swapped.values[::-1]))
    sym = G2Estimator(window_span_ps=50_000, tau_max_ps=10_000, n_bootstrap=0).fit(s).g2_
    sym_sw = G2Estimator(window_span_ps=50_000, tau_max_ps=10_000, n_bootstrap=0).fit(
        s.with_channels_swapped()).g2_
    assert np.allclose(np.nan_to_num(sym.values), np.nan_to_num(sym_sw.values[::-1]))
    assert np.allclose(np.nan_to_num(sym.values), np.nan_to_num(sym.values[::-1]))


def test_workers_identical_output(tmp_path):
    s = poisson_stream(3000, 100_000, 0.1, 5)
    outs = []
    for w in (1, 2, 4):
        est = G2Estimator(n_workers=w, random_state=3, tau_max_ps=30_000, window_span_ps=80_000).fit(s)
        est.g2_.to_csv(tmp_path / f"g{w}.csv")
        write_g2_matrix(tmp_path / f"m{w}.csv", est.grid_)
        outs.append(((tmp_path / f"g{w}.csv").read_bytes(), (tmp_path / f"m{w}.csv").read_bytes()))
    assert outs[0] == outs[1] == outs[2]


def test_bootstrap_unavailable_for_single_shot():
    s = TagStream.from_shots([[(1, 100), (2, 300)]], 1000, 100)
    g = G2Estimator(bin_width_ps=100, window_span_ps=1000, tau_max_ps=500).fit(s).g2_
    assert np.all(np.isnan(g.stderr))


def test_window_validation():
    s = poisson_stream(10, 10_000, 0.1, 0)
    with pytest.raises(ConfigError):
        G2Estimator(window_start_ps=0, window_end_ps=20_000).fit(s)
    with pytest.raises(ConfigError):
        SteadyStateWindow(5000, 5000).validate()
    with pytest.raises(ConfigError):
        SteadyStateWindow(0, 5000, 6000).validate()


def test_trailing_window_defaults():
    w = SteadyStateWindow.trailing(400_000)
    assert (w.t_start_ps, w.t_end_ps, w.tau_max_ps, w.bin_width_ps) == (150_000, 400_000, 50_000, 1000)


def test_intensity_trace():
    s = TagStream.from_shots([[(1, 500), (2, 600)], [(1, 1500)]], 3000, 1000)
    tr = intensity_trace(s)
    assert tr.intensity.tolist() == [1.0, 0.5, 0.0]
    assert not intensity_trace(TagStream.empty(3000)).intensity.any()


def test_bootstrap_seeded():
    s = poisson_stream(500, 50_000, 0.1, 6)
    a = G2Estimator(random_state=7, window_span_ps=50_000, tau_max_ps=10_000).fit(s).g2_.stderr
    b = G2Estimator(random_state=7, window_span_ps=50_000, tau_max_ps=10_000).fit(s).g2_.stderr
    assert np.array_equal(a, b)


def test_rebinning_consistency():
    s = poisson_stream(3000, 100_000, 0.1, 8)
    fine = G2Estimator(bin_width_ps=1000, window_span_ps=100_000, tau_max_ps=20_000, random_state=0).fit(s)
    coarse = G2Estimator(bin_width_ps=2000, window_span_ps=100_000, tau_max_ps=20_000, random_state=0).fit(s)
    # the 2 ns estimate at lag 2k averages 1 ns lags 2k-1, 2k, 2k+1 with weights 1, 2, 1
    gf = fine.g2_.values
    K = len(gf) // 2
    for j, g in zip(range(-5, 6), coarse.g2_.values[10 - 5:10 + 6]):
        k = 2 * j + K
        ref = (gf[k - 1] + 2 * gf[k] + gf[k + 1]) / 4
        assert g == pytest.approx(ref, abs=4 * coarse.g2_.stderr[10 + j])
