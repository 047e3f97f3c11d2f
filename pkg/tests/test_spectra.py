import numpy as np
import pytest
import scipy.sparse as sp

from gltsaddle import saddle, spectra
from gltsaddle.toeplitz import grid_points, predefined_symbols, symbol_eval


def test_eig3_examples():
    np.testing.assert_allclose(spectra.eig3_symmetric(np.eye(3)), [1, 1, 1])
    np.testing.assert_allclose(spectra.eig3_symmetric(np.diag([3.0, 1, 2])), [1, 2, 3])
    a = 0.7
    f0 = symbol_eval(predefined_symbols(a)[2], np.zeros(2))
    expected = [(a - np.sqrt(a * a + 4)) / 2, 0.0, (a + np.sqrt(a * a + 4)) / 2]
    np.testing.assert_allclose(spectra.eig3_symmetric(f0), expected, atol=1e-15)
    with pytest.raises(ValueError):
        spectra.eig3_symmetric(np.triu(np.ones((3, 3))))


def test_sample_symbol_g2():
    s = spectra.sample_symbol(1.0, 2)
    np.testing.assert_allclose(s.theta, [[0, 0], [0, np.pi / 2], [np.pi / 2, 0], [np.pi / 2, np.pi / 2]])
    assert s.values[0, 1] == pytest.approx(0.0, abs=1e-15)
    assert s.concatenated.shape == (12,)
    with pytest.raises(ValueError):
        spectra.sample_symbol(1.0, 1)


def test_min_of_second_function_is_zero():
    for g in (3, 7, 20):
        assert spectra.sample_symbol(1e-3, g).sorted(1)[0] == pytest.approx(0.0, abs=1e-15)


def test_refinement_ranges_nest():
    coarse, fine = spectra.sample_symbol(1e-2, 5), spectra.sample_symbol(1e-2, 10)
    for l in range(3):
        c, f = coarse.sorted(l), fine.sorted(l)
        assert f[0] <= c[0] + 1e-15 and c[-1] <= f[-1] + 1e-15


def test_interval_bounds_chunking_is_exact():
    full = spectra.sample_symbol(1e-3, 40)
    b = spectra.interval_bounds(1e-3, 40, chunk=97)
    np.testing.assert_array_equal(b[:, 0], full.values.min(axis=0))
    np.testing.assert_array_equal(b[:, 1], full.values.max(axis=0))
    assert b[1, 0] == 0.0


@pytest.mark.parametrize("alpha", [1e-2, 1e-4, 1e-6])
def test_intervals_disjoint(alpha):
    b = spectra.interval_bounds(alpha, 200)
    assert b[0, 1] < b[1, 0] and b[1, 1] < b[2, 0]


def test_count_basic():
    A = sp.diags([1.0, 2.0, 3.0]).tocsr()
    assert spectra.count_eigs_in_interval(A, 0, 2.5) == 2
    assert spectra.count_eigs_in_interval(A, 1, 3, "right") == 2
    assert spectra.count_eigs_in_interval(A, 1, 3, "left") == 2
    assert spectra.count_eigs_in_interval(A, 1, 3, "both") == 3
    assert spectra.count_eigs_in_interval(A, 1, 3, "neither") == 1
    with pytest.raises(ValueError):
        spectra.count_eigs_in_interval(A, 2, 1)


@pytest.mark.parametrize("method", ["dense", "banded"])
def test_count_matches_brute_force(method):
    rng = np.random.default_rng(3)
    s = saddle.build_system(6, 1e-3)
    B = saddle.permute_to_block_toeplitz(s)
    ev = spectra.full_spectrum(B)
    for a, b in [(-1, 0.5), (-10, -1), (1e-6, 10), tuple(np.sort(rng.uniform(-3, 3, 2)))]:
        brute = int(((ev > a) & (ev <= b)).sum())
        assert spectra.count_eigs_in_interval(B, a, b, method=method) == brute


def test_inertia_handles_eigenvalue_on_shift():
    A = np.diag([-1.0, 0.0, 2.0])
    assert spectra.inertia_below(A, 0.0) == 1
    assert spectra.inertia_below(A, 0.0, inclusive=True) == 2


def test_full_spectrum_limits():
    assert spectra.full_spectrum(np.array([[4.0]])).tolist() == [4.0]
    with pytest.raises(spectra.SpectrumSizeError):
        spectra.full_spectrum(sp.identity(10), dense_limit=5)


def test_matching():
    idx, val, pts, err = spectra.match_eigenvalues([5.0], [4.0, 7.0], [[0.1, 0.2], [0.3, 0.4]])
    assert idx[0] == 0 and val[0] == 4.0 and err[0] == 1.0
    np.testing.assert_array_equal(pts[0], [0.1, 0.2])
    x = np.random.default_rng(0).standard_normal(30)
    idx, _, _, err = spectra.match_eigenvalues(x, x)
    assert np.all(idx == np.arange(30)) and np.all(err == 0)
    # equidistant and duplicate samples resolve to the smallest grid index
    assert spectra.match_eigenvalues([5.5], [7.0, 4.0, 4.0, 7.0])[0][0] == 0
    assert spectra.match_eigenvalues([4.1], [7.0, 4.0, 4.0, 7.0])[0][0] == 1
    with pytest.raises(ValueError):
        spectra.match_eigenvalues([], [1.0])


def test_match_blocks_rows():
    rows = spectra.match_blocks(4, 1e-2)
    assert len(rows) == 48
    assert set(rows[0]) == set(spectra.MATCH_HEADER)
    assert max(r["abs_error"] for r in rows if r["block"] == 3) < 1.0


def test_spectral_report_small():
    rep = spectra.spectral_report(6, 1e-4, g=300)
    assert sum(rep.counts) <= rep.N
    assert rep.count_out == 36 - rep.counts[1]
    row = rep.table_row()
    assert tuple(row) == spectra.TABLE1_HEADER
    assert row["ratio"] == pytest.approx(rep.count_out / 108)


@pytest.mark.parametrize("variant", ["pn", "pbct"])
def test_preconditioned_structure_small(variant):
    s = saddle.build_system(3, 1e-2)
    chk = spectra.preconditioned_spectrum_check(s, variant)
    assert chk.unit_count >= 18
    np.testing.assert_allclose(np.sort(chk.non_unit.real), np.sort(chk.oracle.real)[-len(chk.non_unit):], atol=1e-8)


def test_preconditioned_check_size_limit():
    with pytest.raises(spectra.SpectrumSizeError):
        spectra.preconditioned_spectrum_check(saddle.build_system(10, 1e-2), "pn", dense_limit=100)


def test_csv_writers():
    text = spectra.write_csv([{"a": 1, "b": 0.5, "c": True}], ("a", "b", "c"))
    assert text.splitlines() == ["a,b,c", "1,0.5,true"]
    rows = spectra.spectrum_rows([-2.0, 0.0, 1e-5, 3.0, 100.0], [[-5, -1], [0, 1e-4], [1, 8]])
    assert [r["interval"] for r in rows] == [1, 0, 2, 3, 0]
    assert len(spectra.sampling_rows(spectra.sample_symbol(1.0, 3))) == 9
