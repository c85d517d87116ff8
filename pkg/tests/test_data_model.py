from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_schema, random_dataset
from reps.data_model import (
    CATEGORICAL,
    CONTINUOUS,
    SIM_N,
    SIM_N_OUTLIERS,
    TEST,
    TRAIN,
    VALIDATION,
    Dataset,
    FeatureSpec,
    Schema,
    SchemaDecl,
    load_csv,
    quantile_bin,
    schema_path_for,
    simulate_dataset,
    simulation_schema,
    split,
    standardize,
    write_csv,
)
from reps.errors import DatasetTooSmall, ParseError, SchemaMismatch, UnknownFeature, ZeroVarianceFeature


def one_feature(values, labels=None):
    schema = Schema((FeatureSpec("x", CONTINUOUS),), "y", ("0", "1"))
    values = np.asarray(values, dtype=float)
    labels = np.zeros(len(values), dtype=int) if labels is None else labels
    return Dataset(schema, values[:, None], np.zeros((len(values), 0)), labels)


class TestStandardize:
    def test_two_point_column_maps_to_plus_minus_one(self):
        out, params = standardize(one_feature([0.0, 2.0, 0.0, 2.0]))
        assert out.continuous[:, 0].tolist() == [-1.0, 1.0, -1.0, 1.0]
        assert params.mean[0] == 1.0 and params.std[0] == 1.0

    def test_large_value_is_clipped_to_three(self):
        fit = np.r_[np.zeros(5), np.ones(5)]
        data = one_feature(np.r_[fit, [0.5 + 5.2 * 0.5]])
        mask = np.r_[np.ones(10, dtype=bool), False]
        out, _ = standardize(data, fit_mask=mask)
        assert out.continuous[-1, 0] == 3.0

    def test_moments_come_from_train_only(self):
        data = one_feature([1.0, 3.0, 100.0])
        data.split = np.array([TRAIN, TRAIN, TEST])
        _, params = standardize(data)
        test_value = params.apply(one_feature([2.0])).continuous[0, 0]
        assert test_value == 0.0

    def test_constant_feature_raises(self):
        with pytest.raises(ZeroVarianceFeature):
            standardize(one_feature([4.0, 4.0, 4.0]))

    @given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=40))
    def test_values_always_within_clip_range(self, values):
        values = np.asarray(values)
        if np.ptp(values) < 1e-6:
            values = np.r_[values, values[0] + 1.0]
        out, _ = standardize(one_feature(values))
        assert np.all(np.abs(out.continuous) <= 3.0)


class TestSplit:
    def test_sim_sizes(self):
        data = simulate_dataset(0)
        sizes = split(data, 1).sizes()
        assert sizes == {TRAIN: 3360, VALIDATION: 840, TEST: 1800}

    def test_deterministic(self, small_data):
        a = split(small_data, 7).tags
        b = split(small_data, 7).tags
        assert np.array_equal(a, b)

    def test_balanced_labels(self):
        data = one_feature(np.arange(100.0), labels=np.r_[np.zeros(50, int), np.ones(50, int)])
        s = split(data, 3)
        for tag in (TRAIN, VALIDATION, TEST):
            lab = data.labels[s.indices(tag)]
            assert abs(int(lab.sum()) - int((1 - lab).sum())) <= 1

    def test_too_small(self):
        with pytest.raises(DatasetTooSmall):
            split(one_feature(np.arange(5.0)), 0)

    @given(st.integers(10, 300), st.integers(0, 2**32))
    def test_partition(self, n, seed):
        rng = np.random.default_rng(seed)
        data = random_dataset(rng, n=n)
        tags = split(data, seed).tags
        assert set(np.unique(tags)) <= {TRAIN, VALIDATION, TEST}
        sizes = split(data, seed).sizes()
        assert sum(sizes.values()) == n
        assert sizes[TRAIN] == round(0.56 * n)


class TestSimulator:
    def test_counts_and_support(self):
        data = simulate_dataset(11)
        assert data.n == SIM_N
        assert int(data.is_outlier.sum()) == SIM_N_OUTLIERS
        for j, f in enumerate(data.schema.categorical):
            z = f.categories.index("Z")
            assert not np.any(data.categorical[~data.is_outlier, j] == z)

    def test_outlier_mean(self):
        data = simulate_dataset(5)
        means = data.continuous[data.is_outlier].mean(axis=0)
        # unit variance, 120 rows: standard error 1/sqrt(120) ~ 0.09
        assert np.all(np.abs(means - 2.4) < 5 / np.sqrt(SIM_N_OUTLIERS))

    def test_pure_function_of_seed(self, tmp_path):
        write_csv(simulate_dataset(4), tmp_path / "a.csv", include_flags=True)
        write_csv(simulate_dataset(4), tmp_path / "b.csv", include_flags=True)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_schema(self):
        s = simulation_schema()
        assert len(s.continuous) == 6 and len(s.categorical) == 3


class TestCsv:
    def write(self, tmp_path, text, schema=None, open_=False):
        path = tmp_path / "d.csv"
        path.write_text(text)
        decl = (schema or make_schema(1, (2,))).to_dict()
        decl["open"] = open_
        return path, SchemaDecl.load(decl)

    def test_three_rows(self, tmp_path):
        path, decl = self.write(tmp_path, "x0,c0,y\n0.5,k0,no\n1.5,k1,yes\n-2,k0,no\n")
        data = load_csv(path, decl)
        assert data.n == 3
        assert data.labels.tolist() == [0, 1, 0]
        assert data.categorical[:, 0].tolist() == [0, 1, 0]

    def test_unknown_category_closed_schema(self, tmp_path):
        path, decl = self.write(tmp_path, "x0,c0,y\n0.5,k9,no\n")
        with pytest.raises(SchemaMismatch):
            load_csv(path, decl)

    def test_unknown_category_open_schema(self, tmp_path):
        path, decl = self.write(tmp_path, "x0,c0,y\n0.5,k9,no\n0.1,k0,yes\n", open_=True)
        data = load_csv(path, decl)
        assert data.schema.feature("c0").categories == ("k0", "k1", "k9")

    def test_non_numeric(self, tmp_path):
        path, decl = self.write(tmp_path, "x0,c0,y\nabc,k0,no\n")
        with pytest.raises(ParseError) as err:
            load_csv(path, decl)
        assert err.value.row == 2 and err.value.col == "x0"

    def test_header_mismatch(self, tmp_path):
        path, decl = self.write(tmp_path, "x0,other,y\n0.5,k0,no\n")
        with pytest.raises(SchemaMismatch):
            load_csv(path, decl)

    def test_round_trip(self, tmp_path, rng):
        data = random_dataset(rng, n=25, cat_sizes=(2, 4))
        data.is_outlier = rng.random(25) < 0.2
        sidecar = write_csv(data, tmp_path / "r.csv", include_flags=True)
        assert sidecar == schema_path_for(tmp_path / "r.csv")
        back = load_csv(tmp_path / "r.csv", SchemaDecl.load(json.loads(sidecar.read_text())))
        assert back.schema == data.schema
        assert np.array_equal(back.continuous, data.continuous)
        assert np.array_equal(back.categorical, data.categorical)
        assert np.array_equal(back.is_outlier, data.is_outlier)


class TestQuantileBin:
    def test_quintiles(self):
        data = one_feature(np.arange(1.0, 101.0))
        out = quantile_bin(data, ["x"], 5)
        f = out.schema.feature("x")
        assert f.kind == CATEGORICAL and len(f.categories) == 5
        assert np.bincount(out.categorical[:, 0]).tolist() == [20] * 5

    def test_constant_feature_single_bin(self):
        out = quantile_bin(one_feature(np.full(30, 2.0)), ["x"], 5)
        assert len(set(out.categorical[:, 0].tolist())) == 1

    def test_no_features_is_identity(self, small_data):
        assert quantile_bin(small_data, []) is small_data

    def test_unknown_feature(self, small_data):
        with pytest.raises(UnknownFeature):
            quantile_bin(small_data, ["nope"])
