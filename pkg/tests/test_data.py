import numpy as np
import pytest

from mfcov.data import (
    FunctionalDataset,
    MeanEstimate,
    cross_products,
    fit_mean,
    load_csv,
    make_folds,
    save_csv,
)
from mfcov.kernel import KernelSpec


def toy_dataset():
    rng = np.random.default_rng(0)
    locs = [rng.uniform(size=(m, 2)) for m in (3, 4, 2)]
    vals = [rng.standard_normal(m) for m in (3, 4, 2)]
    return FunctionalDataset(locs, vals)


class TestDataset:
    def test_basic_properties(self):
        data = toy_dataset()
        assert data.n == 3
        assert data.p == 2
        assert list(data.counts) == [3, 4, 2]
        assert data.pooled_locations().shape == (9, 2)
        sl = data.subject_slices()
        assert [s.start for s in sl] == [0, 3, 7]
        assert data.stats()["total_observations"] == 9

    def test_validation(self):
        with pytest.raises(ValueError):
            FunctionalDataset([np.zeros((1, 2))], [np.zeros(1)])  # m_i < 2
        with pytest.raises(ValueError):
            FunctionalDataset([np.full((2, 2), 1.5)], [np.zeros(2)])  # out of cube
        with pytest.raises(ValueError):
            FunctionalDataset(
                [np.zeros((2, 2)), np.zeros((2, 3))], [np.zeros(2), np.zeros(2)]
            )  # mixed dimension


class TestCsvRoundTrip:
    def test_parse_two_subjects(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text(
            "subject,t1,t2,y\n"
            "a,0.1,0.2,1.0\na,0.3,0.4,2.0\na,0.5,0.6,3.0\n"
            "b,0.7,0.8,4.0\nb,0.9,1.0,5.0\nb,0.0,0.1,6.0\n"
        )
        data = load_csv(f)
        assert data.n == 2
        assert list(data.counts) == [3, 3]
        assert data.values[1][0] == 4.0

    def test_out_of_range_coordinate_names_line(self, tmp_path):
        f = tmp_path / "bad.csv"
        f.write_text("subject,t1,y\na,0.1,1.0\na,1.2,2.0\n")
        with pytest.raises(ValueError, match="bad.csv:3"):
            load_csv(f)

    def test_non_numeric_names_line(self, tmp_path):
        f = tmp_path / "bad.csv"
        f.write_text("subject,t1,y\na,0.1,1.0\na,oops,2.0\n")
        with pytest.raises(ValueError, match="bad.csv:3"):
            load_csv(f)

    def test_wrong_arity_rejected(self, tmp_path):
        f = tmp_path / "bad.csv"
        f.write_text("subject,t1,t2,y\na,0.1,1.0\n")
        with pytest.raises(ValueError, match="bad.csv:2"):
            load_csv(f)

    def test_bad_header_rejected(self, tmp_path):
        f = tmp_path / "bad.csv"
        f.write_text("id,x,y\n1,0.1,2.0\n")
        with pytest.raises(ValueError, match="header"):
            load_csv(f)

    def test_single_row_subject_dropped_with_warning(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("subject,t1,y\na,0.1,1.0\nb,0.2,2.0\nb,0.3,3.0\n")
        with pytest.warns(UserWarning, match="fewer than 2"):
            data = load_csv(f)
        assert data.n == 1

    def test_round_trip_bit_for_bit(self, tmp_path):
        rng = np.random.default_rng(1)
        data = FunctionalDataset(
            [rng.uniform(size=(4, 3)), rng.uniform(size=(2, 3))],
            [rng.standard_normal(4), rng.standard_normal(2)],
        )
        f = tmp_path / "rt.csv"
        save_csv(data, f)
        back = load_csv(f)
        for a, b in zip(data.locations, back.locations):
            assert np.array_equal(a, b)
        for a, b in zip(data.values, back.values):
            assert np.array_equal(a, b)


class TestFitMean:
    def test_zero_mode(self):
        mean = fit_mean(toy_dataset())
        pts = np.random.default_rng(2).uniform(size=(5, 2))
        assert np.all(mean(pts) == 0)

    def test_interpolation_limit(self):
        # single observation, ridge -> 0+: the fit approaches the value
        data = FunctionalDataset([np.array([[0.3], [0.7]])], [np.array([2.0, 2.0])])
        spec = KernelSpec(include_constant=True)
        mean = fit_mean(data, spec=spec, ridge=1e-12, mode="kernel-ridge")
        fitted = mean(np.array([[0.3]]))[0]
        assert abs(fitted - 2.0) < 1e-6

    def test_matches_dense_solve_oracle(self):
        # constant data, modest ridge: compare to an explicit-inverse solve
        data = toy_dataset()
        c = 1.7
        const = FunctionalDataset(data.locations, [np.full(m, c) for m in data.counts])
        spec = KernelSpec(truncation_order=25, include_constant=True)
        ridge = 0.1
        mean = fit_mean(const, spec=spec, ridge=ridge, mode="kernel-ridge")
        from mfcov.data import _tensor_product_kernel

        anchors = const.pooled_locations()
        k = _tensor_product_kernel(spec, anchors, anchors)
        k = (k + k.T) / 2.0
        coef = np.linalg.inv(k + ridge * np.eye(len(anchors))) @ np.full(len(anchors), c)
        grid = np.random.default_rng(3).uniform(size=(40, 2))
        oracle = _tensor_product_kernel(spec, grid, anchors) @ coef
        assert np.abs(mean(grid) - oracle).max() < 1e-10

    def test_bad_modes(self):
        with pytest.raises(ValueError):
            fit_mean(toy_dataset(), mode="median")
        with pytest.raises(ValueError):
            fit_mean(toy_dataset(), mode="kernel-ridge")  # no spec
        with pytest.raises(ValueError):
            fit_mean(toy_dataset(), spec=KernelSpec(), ridge=-1.0, mode="kernel-ridge")


class TestCrossProducts:
    def test_outer_product_values(self):
        data = FunctionalDataset([np.array([[0.1], [0.2], [0.3]])], [np.array([1.0, 2.0, 3.0])])
        cp = cross_products(data)
        assert np.array_equal(cp.z[0], [[1, 2, 3], [2, 4, 6], [3, 6, 9]])

    def test_mean_equal_to_values_gives_zero(self):
        data = toy_dataset()

        class Interp(MeanEstimate):
            def __call__(self, pts):
                for locs, vals in zip(data.locations, data.values):
                    if locs.shape == pts.shape and np.array_equal(locs, pts):
                        return vals
                raise AssertionError("unexpected points")

        cp = cross_products(data, Interp())
        assert all(np.all(z == 0) for z in cp.z)

    def test_rank_one_per_subject(self):
        data = toy_dataset()
        cp = cross_products(data)
        for z, r in zip(cp.z, cp.residuals):
            assert np.allclose(z, np.outer(r, r))
            s = np.linalg.svd(z, compute_uv=False)
            assert s[1] < 1e-10 * max(s[0], 1e-300)

    def test_masked_zeroes_diagonal(self):
        data = toy_dataset()
        cp = cross_products(data)
        zm = cp.masked(0)
        assert np.all(np.diag(zm) == 0)
        off = ~np.eye(zm.shape[0], dtype=bool)
        assert np.array_equal(zm[off], cp.z[0][off])


class TestMakeFolds:
    def test_balanced_10_into_5(self):
        data = FunctionalDataset(
            [np.random.default_rng(i).uniform(size=(2, 1)) for i in range(10)],
            [np.zeros(2) for _ in range(10)],
        )
        folds = make_folds(data, 5, seed=42)
        sizes = np.bincount(folds.assignment, minlength=5)
        assert list(sizes) == [2, 2, 2, 2, 2]

    def test_deterministic(self):
        data = toy_dataset()
        a = make_folds(data, 3, seed=7).assignment
        b = make_folds(data, 3, seed=7).assignment
        assert np.array_equal(a, b)

    def test_7_into_5_sizes(self):
        data = FunctionalDataset(
            [np.random.default_rng(i).uniform(size=(2, 1)) for i in range(7)],
            [np.zeros(2) for _ in range(7)],
        )
        sizes = sorted(np.bincount(make_folds(data, 5, seed=0).assignment, minlength=5))
        assert sizes == [1, 1, 1, 2, 2]

    def test_partition(self):
        data = toy_dataset()
        folds = make_folds(data, 2, seed=1)
        seen = np.concatenate([folds.valid_subjects(f) for f in range(2)])
        assert sorted(seen) == [0, 1, 2]
        assert set(folds.train_subjects(0)) == set(folds.valid_subjects(1))

    def test_too_many_folds(self):
        with pytest.raises(ValueError):
            make_folds(toy_dataset(), 4)
