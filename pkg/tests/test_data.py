import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from softhad.data import (
    Dataset,
    FeatureWeights,
    IngestOptions,
    binarize_response,
    inject_flips,
    load_bundled,
    load_csv,
    load_train_recent,
    scale_response,
    standardize,
    wilcoxon_weights,
)
from softhad.errors import DataError


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def brute_auc(x, y):
    pos = x[y == 1]
    neg = x[y == -1]
    total = 0.0
    for a, b in itertools.product(pos, neg):
        total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


class TestLoadCsv:
    def test_label_map(self, tmp_path):
        p = write(tmp_path, "f1,f2,lab\n1,2,a\n2,3,b\n3,1,a\n4,0,b\n")
        d = load_csv(p, "lab", IngestOptions(label_map={"a": 1, "b": -1}))
        assert d.n_rows == 4
        assert d.labels.tolist() == [1, -1, 1, -1]
        assert d.feature_names == ("f1", "f2")

    def test_constant_column_is_zero(self, tmp_path):
        p = write(tmp_path, "c,v,y\n5,1,1\n5,2,-1\n5,4,1\n")
        d = load_csv(p, "y")
        assert np.all(d.features[:, 0] == 0.0)

    def test_standardized_with_past_statistics(self, tmp_path):
        p = write(tmp_path, "v,y\n1,1\n3,-1\n100,1\n")
        d = load_csv(p, "y", IngestOptions(split=2))
        assert d.features[:2, 0].tolist() == [-1.0, 1.0]
        assert d.features[2, 0] == pytest.approx(98.0)

    def test_response_threshold(self, tmp_path):
        p = write(tmp_path, "x,r\n1,5\n2,27.5\n3,50\n4,20\n")
        d = load_csv(p, "r", IngestOptions(response=True))
        np.testing.assert_allclose(d.response, [-1.0, 0.0, 1.0, 2 * 15 / 45 - 1])
        assert d.labels.tolist() == [-1, 1, 1, -1]

    def test_unknown_label(self, tmp_path):
        p = write(tmp_path, "x,y\n1,1\n2,maybe\n")
        with pytest.raises(DataError, match="line 3.*maybe"):
            load_csv(p, "y")

    def test_unparseable_row_reports_line(self, tmp_path):
        p = write(tmp_path, "x,y\n1,1\nabc,-1\n")
        with pytest.raises(DataError, match="line 3"):
            load_csv(p, "y")

    def test_missing_rejected_by_default(self, tmp_path):
        p = write(tmp_path, "x,z,y\n1,,1\n2,3,-1\n")
        with pytest.raises(DataError, match="missing"):
            load_csv(p, "y")

    def test_missing_imputed_on_request(self, tmp_path):
        p = write(tmp_path, "x,z,y\n1,,1\n2,3,-1\n4,5,1\n")
        d = load_csv(p, "y", IngestOptions(impute=True, standardize=False))
        assert d.features[0, 1] == 4.0

    def test_empty(self, tmp_path):
        with pytest.raises(DataError):
            load_csv(write(tmp_path, ""), "y")
        with pytest.raises(DataError):
            load_csv(write(tmp_path, "x,y\n", "h.csv"), "y")

    def test_missing_label_column(self, tmp_path):
        with pytest.raises(DataError, match="'lab'"):
            load_csv(write(tmp_path, "x,y\n1,1\n"), "lab")

    def test_delimiter(self, tmp_path):
        d = load_csv(write(tmp_path, "x;y\n1;1\n2;-1\n"), "y", IngestOptions(delimiter=";"))
        assert d.n_rows == 2

    def test_train_recent(self, tmp_path):
        a = write(tmp_path, "x,y\n0,1\n2,-1\n", "a.csv")
        b = write(tmp_path, "x,y\n4,1\n", "b.csv")
        d = load_train_recent(a, b, "y")
        assert d.split == 2 and d.n_recent == 1
        assert d.features[:, 0].tolist() == [-1.0, 1.0, 3.0]


def test_housing_protocol():
    d = load_bundled("housing")
    assert d.n_rows == 506
    assert d.response.min() == -1.0 and d.response.max() == 1.0
    np.testing.assert_array_equal(d.labels, np.where(d.response >= 0, 1, -1))


def test_scale_response_rejects_constant():
    with pytest.raises(DataError):
        scale_response([2.0, 2.0])
    assert binarize_response([0.0, -1e-9]).tolist() == [1, -1]


def test_dataset_invariants():
    with pytest.raises(DataError):
        Dataset([[1.0], [2.0]], [1, 0])
    with pytest.raises(DataError):
        Dataset([[1.0], [np.nan]], [1, -1])
    with pytest.raises(DataError):
        Dataset([[1.0]], [1], split=2)
    d = Dataset([[1.0], [2.0]], [1, -1])
    with pytest.raises(ValueError):
        d.features[0, 0] = 3.0


@settings(max_examples=50, deadline=None)
@given(arrays(float, (20, 3), elements=st.floats(-1e3, 1e3)), st.integers(2, 20))
def test_standardization_property(X, split):
    d = standardize(Dataset(X, np.ones(20), split=split))
    past = d.past_features
    raw = X[:split]
    for j in range(3):
        if np.ptp(raw[:, j]) == 0:
            assert np.all(past[:, j] == 0)
        elif raw[:, j].std() > 1e-6 * max(1.0, np.abs(raw[:, j]).max()):
            assert abs(past[:, j].mean()) < 1e-9
            assert abs(past[:, j].var() - 1) < 1e-6


class TestWilcoxon:
    def test_perfect_separation(self):
        d = Dataset([[0.0], [1.0], [2.0], [3.0]], [-1, -1, 1, 1])
        assert wilcoxon_weights(d).psi.tolist() == [1.0]

    def test_uninformative(self):
        d = Dataset([[7.0]] * 4, [-1, 1, -1, 1])
        assert wilcoxon_weights(d).psi.tolist() == [0.0]

    def test_pair_enumeration_oracle(self):
        x = np.array([1.0, 3.0, 2.0, 4.0])
        y = np.array([1, 1, -1, -1])
        assert brute_auc(x, y) == 0.25
        assert wilcoxon_weights(Dataset(x[:, None], y)).psi[0] == pytest.approx(0.5, abs=1e-15)

    def test_single_class(self):
        with pytest.raises(DataError):
            wilcoxon_weights(Dataset([[1.0], [2.0]], [1, 1]))

    def test_uses_past_only(self):
        d = Dataset([[0.0], [1.0], [5.0]], [-1, 1, -1], split=2)
        assert wilcoxon_weights(d).psi[0] == 1.0

    @settings(max_examples=60, deadline=None)
    @given(
        arrays(float, (15, 2), elements=st.integers(-10_000, 10_000).map(lambda v: v / 100)),
        arrays(np.int8, 15, elements=st.sampled_from([-1, 1])),
    )
    def test_matches_brute_force_and_monotone_invariance(self, X, y):
        if len(set(y.tolist())) < 2:
            return
        psi = wilcoxon_weights(Dataset(X, y)).psi
        for j in range(2):
            assert psi[j] == pytest.approx(abs(2 * brute_auc(X[:, j], y) - 1), abs=1e-12)
        cubed = wilcoxon_weights(Dataset(X**3, y)).psi
        assert np.all(np.abs(cubed - psi) <= 1e-12)


def test_feature_weights_range():
    with pytest.raises(DataError):
        FeatureWeights([0.5, 1.5])


class TestInjectFlips:
    def make(self, n, seed=0):
        r = np.random.default_rng(seed).uniform(-1, 1, n)
        return Dataset(np.zeros((n, 1)), binarize_response(r)), r

    def test_no_op(self):
        d, r = self.make(50)
        noisy, rec = inject_flips(d, r, 0.0, 1)
        np.testing.assert_array_equal(noisy.labels, d.labels)
        np.testing.assert_array_equal(rec.true_anomaly_score, np.abs(r - d.labels))
        assert not rec.flipped_indices

    def test_three_percent_of_thousand(self):
        d, r = self.make(1000)
        _, rec = inject_flips(d, r, 0.03, 7)
        assert len(rec.flipped_indices) == 30

    def test_true_score_arithmetic(self):
        d = Dataset([[0.0]], [1])
        noisy, rec = inject_flips(d, [0.8], 1.0, 0)
        assert noisy.labels[0] == -1
        assert rec.true_anomaly_score[0] == pytest.approx(1.8)

    def test_flipped_labels_oppose_response(self):
        d, r = self.make(200)
        noisy, rec = inject_flips(d, r, 0.1, 3)
        idx = sorted(rec.flipped_indices)
        np.testing.assert_array_equal(noisy.labels[idx], -binarize_response(r[idx]))

    def test_bad_fraction(self):
        d, r = self.make(5)
        with pytest.raises(DataError):
            inject_flips(d, r, 1.5, 0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 300), st.integers(0, 1000).map(lambda m: m / 1000), st.integers(0, 2**31))
    def test_count_and_determinism(self, n, frac, seed):
        d, r = self.make(n)
        a, ra = inject_flips(d, r, frac, seed)
        b, rb = inject_flips(d, r, frac, seed)
        assert len(ra.flipped_indices) == math.floor(Fraction(repr(frac)) * n)
        assert a.labels.tobytes() == b.labels.tobytes()
        assert ra.flipped_indices == rb.flipped_indices
