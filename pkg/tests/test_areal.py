import numpy as np
import pytest
from hypothesis import given, strategies as st

from smallarea import areal
from smallarea.areal import ArealDataError, CensusTable


def census(N, xbar, ids=None, strata=None):
    N = np.asarray(N)
    ids = np.array(ids if ids is not None else [f"a{i}" for i in range(len(N))], dtype=object)
    strata = np.array(strata if strata is not None else ["s"] * len(N), dtype=object)
    xbar = np.asarray(xbar, dtype=float).reshape(len(N), -1)
    return CensusTable(ids, strata, N, xbar, tuple(f"x{j}" for j in range(xbar.shape[1])))


def test_sampled_and_nonsampled_means_decompose():
    # units {1,2,3,4}, sampled {1,3}
    c = census([4, 5], [[2.5], [0.0]])
    ds = areal.from_unit_arrays(c, np.array([0, 0]), np.array([1.0, 3.0]), np.array([[1.0], [3.0]]))
    assert ds.ybar_s[0] == 2.0
    ybar_ns = (2.5 * 4 - 2.0 * 2) / 2
    assert ybar_ns == 3.0
    assert 0.5 * ds.ybar_s[0] + 0.5 * ybar_ns == 2.5
    # covariate means follow the same identity
    assert ds.xbar_ns[0, 0] == pytest.approx(3.0)


def test_nonsampled_area_row():
    c = census([4, 5], [[2.5], [7.0]])
    ds = areal.from_unit_arrays(c, np.array([0]), np.array([1.0]), np.array([[1.0]]))
    row = ds.row(1)
    assert row.n == 0 and row.f == 0.0
    assert np.isnan(row.ybar_s)
    assert row.xbar_ns[0] == 7.0


def test_nonsampled_covariate_mean_identity():
    out = areal.nonsampled_means(np.array([[10.0]]), np.array([[8.0]]),
                                 np.array([1]), np.array([4]))
    assert out[0, 0] == pytest.approx(32 / 3, abs=1e-12)


def test_aggregate_errors():
    c = census([2, 3], [[0.0], [0.0]])
    with pytest.raises(ArealDataError, match="missing from census"):
        areal.aggregate([areal.UnitRecord("zz", "s", 1.0, np.array([0.0]))], c)
    with pytest.raises(ArealDataError, match="dimension"):
        areal.aggregate([areal.UnitRecord("a0", "s", 1.0, np.array([0.0, 1.0]))], c)
    units = [areal.UnitRecord("a0", "s", 1.0, np.array([0.0]))] * 3
    with pytest.raises(ArealDataError, match="n_c > N_c"):
        areal.aggregate(units, c)
    with pytest.raises(ArealDataError, match="no outcome"):
        areal.aggregate([areal.UnitRecord("a0", "s", None, np.array([0.0]))], c)


def test_dataset_needs_a_sampled_area():
    c = census([2], [[0.0]])
    with pytest.raises(ArealDataError):
        areal.from_unit_arrays(c, np.array([], dtype=int), np.array([]), np.zeros((0, 1)))


def test_census_rejects_duplicate_ids():
    with pytest.raises(ArealDataError):
        census([2, 3], [[0.0], [1.0]], ids=["a", "a"])


def _dataset(f=0.5):
    c = census([4, 4, 6], [[1.0], [2.0], [3.0]])
    idx = np.array([0, 0, 1, 1])
    return areal.from_unit_arrays(c, idx, np.array([1.0, 2.0, 3.0, 4.0]),
                                  np.array([[0.0], [1.0], [2.0], [3.0]]))


def test_anonymise():
    ds = _dataset()
    an = areal.anonymise(ds)
    assert np.all(an.f == 0) and np.all(an.n == 0)
    np.testing.assert_array_equal(an.xbar_ns, ds.xbar)
    # non-sampled row unchanged
    assert an.xbar_ns[2, 0] == ds.xbar_ns[2, 0]
    # fitting still sees the real aggregates
    for a, b in zip(an.fitting_data(), ds.fitting_data()):
        np.testing.assert_array_equal(a, b)
    twice = areal.anonymise(an)
    for name in ("n", "xbar_ns", "N", "xbar"):
        np.testing.assert_array_equal(getattr(twice, name), getattr(an, name))
    assert twice.training is an.training


def test_held_out_view_targets_sampled_means():
    ds = _dataset()
    v = areal.held_out_view(ds, [1])
    assert v.N[0] == 2 and v.n[0] == 0
    np.testing.assert_array_equal(v.xbar_ns, ds.xbar_s[[1]])
    with pytest.raises(ArealDataError):
        areal.held_out_view(ds, [2])


@given(st.lists(st.tuples(st.integers(0, 3), st.floats(-5, 5), st.floats(-5, 5)),
                min_size=1, max_size=30), st.randoms(use_true_random=False))
def test_aggregate_permutation_invariant_and_identity(units, rnd):
    c = census([40, 40, 40, 40], [[1.0, -2.0]] * 4)
    recs = [areal.UnitRecord(f"a{a}", "s", y, np.array([x, -x])) for a, y, x in units]
    ds1 = areal.aggregate(recs, c)
    shuffled = list(recs)
    rnd.shuffle(shuffled)
    ds2 = areal.aggregate(shuffled, c)
    np.testing.assert_allclose(ds1.ybar_s, ds2.ybar_s, rtol=1e-12, atol=1e-12, equal_nan=True)
    np.testing.assert_allclose(ds1.xbar_ns, ds2.xbar_ns, rtol=1e-12, atol=1e-12)
    part = (ds1.n > 0) & (ds1.n < ds1.N)
    f = ds1.f[part, None]
    lhs = ds1.xbar_ns[part] * (1 - f) + f * ds1.xbar_s[part]
    assert np.all(np.abs(lhs - ds1.xbar[part]) < 1e-10 * (1 + np.abs(ds1.xbar[part])))


def test_csv_round_trip(tmp_path):
    c = census([3, 5], [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], strata=["rural", "urban"])
    areal.write_census_csv(tmp_path / "c.csv", c)
    X = np.array([[0.5, 1.5, 2.5], [3.5, 4.5, 5.5]])
    areal.write_survey_csv(tmp_path / "s.csv", np.array(["a0", "a1"]),
                           np.array(["rural", "urban"]), np.array([1.0, 2.0]), X, c.covariate_names)
    units, names = areal.ingest_survey_csv(tmp_path / "s.csv")
    assert len(units) == 2 and names == c.covariate_names
    np.testing.assert_array_equal(units[1].x, X[1])
    c2 = areal.ingest_census_csv(tmp_path / "c.csv")
    np.testing.assert_array_equal(c2.xbar, c.xbar)
    ds = areal.load_dataset(tmp_path / "s.csv", tmp_path / "c.csv", design_variable="urban")
    assert ds.covariate_names[-1] == "stratum_urban"
    assert ds.design_variable_index == 3
    np.testing.assert_array_equal(ds.xbar[:, 3], [0.0, 1.0])


def test_csv_errors(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("area_id,stratum,N,xbar_x0\na,s,3,1.0\na,s,4,2.0\n")
    with pytest.raises(ArealDataError):
        areal.ingest_census_csv(p)
    p.write_text("area_id,stratum,xbar_x0\na,s,1.0\n")
    with pytest.raises(ArealDataError):
        areal.ingest_census_csv(p)
    s = tmp_path / "s.csv"
    s.write_text("area_id,stratum,y,x_x0\na,s,oops,1.0\n")
    with pytest.raises(ArealDataError):
        areal.ingest_survey_csv(s)
    # survey area absent from the census fails at aggregation
    p.write_text("area_id,stratum,N,xbar_x0\nb,s,3,1.0\n")
    s.write_text("area_id,stratum,y,x_x0\na,s,1.0,1.0\n")
    with pytest.raises(ArealDataError):
        areal.load_dataset(s, p)
