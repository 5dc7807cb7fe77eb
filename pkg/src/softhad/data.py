"""Tabular ingestion, label encoding, feature relevance weights and label-noise
injection.

A :class:`Dataset` keeps the past (training) instances first and the recent
instances after them; ``split`` is the index of the first recent row.
"""

import csv
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import DataError

MISSING_TOKENS = frozenset({"", "na", "nan", "?", "null", "none"})


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with ±1 labels and a past/recent partition.

    Parameters
    ----------
    features : (rows, cols) array
    labels : (rows,) array of -1/+1
    split : int, optional
        Index of the first recent instance. Defaults to ``rows`` (everything
        is past data).
    response : (rows,) array, optional
        Ordinal response the labels were thresholded from, when known.
    feature_names : tuple of str, optional
    """

    features: np.ndarray
    labels: np.ndarray
    split: int = None
    response: np.ndarray = None
    feature_names: tuple = ()

    def __post_init__(self):
        X = _frozen(self.features)
        if X.ndim == 1:
            X = _frozen(X.reshape(-1, 1))
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        y = _frozen(self.labels)
        if y.shape != (X.shape[0],):
            raise DataError(f"expected {X.shape[0]} labels, got shape {y.shape}")
        if not np.all((y == 1) | (y == -1)):
            raise DataError("labels must be exactly -1 or +1")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain missing or non-finite values")
        split = X.shape[0] if self.split is None else int(self.split)
        if not 0 <= split <= X.shape[0]:
            raise DataError(f"split {split} outside [0, {X.shape[0]}]")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "split", split)
        if self.response is not None:
            r = _frozen(self.response)
            if r.shape != y.shape:
                raise DataError("response length differs from label count")
            object.__setattr__(self, "response", r)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n_rows(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def n_past(self):
        return self.split

    @property
    def n_recent(self):
        return self.n_rows - self.split

    @property
    def past_features(self):
        return self.features[: self.split]

    @property
    def past_labels(self):
        return self.labels[: self.split]

    @property
    def recent_features(self):
        return self.features[self.split :]

    @property
    def recent_labels(self):
        return self.labels[self.split :]

    def with_labels(self, labels):
        return replace(self, labels=labels)

    def take(self, order, split=None):
        """Reorder (or subset) rows, e.g. to place a training split first."""
        order = np.asarray(order, dtype=int)
        return Dataset(
            self.features[order],
            self.labels[order],
            split=len(order) if split is None else split,
            response=None if self.response is None else self.response[order],
            feature_names=self.feature_names,
        )


@dataclass(frozen=True)
class FeatureWeights:
    psi: np.ndarray

    def __post_init__(self):
        psi = _frozen(self.psi)
        if psi.ndim != 1:
            raise DataError("feature weights must be a vector")
        if np.any(~np.isfinite(psi)) or np.any(psi < 0) or np.any(psi > 1):
            raise DataError("feature weights must lie in [0, 1]")
        object.__setattr__(self, "psi", psi)

    def __len__(self):
        return len(self.psi)

    @classmethod
    def uniform(cls, n_features):
        return cls(np.ones(n_features))


@dataclass(frozen=True)
class FlipRecord:
    """Ground truth produced by :func:`inject_flips`.

    ``true_anomaly_score[i] = |original_response[i] - label[i]|`` where
    ``label`` is the label after flipping.
    """

    flipped_indices: frozenset
    original_response: np.ndarray
    true_anomaly_score: np.ndarray

    def flipped_mask(self, n=None):
        n = len(self.original_response) if n is None else n
        mask = np.zeros(n, dtype=bool)
        mask[sorted(self.flipped_indices)] = True
        return mask


@dataclass(frozen=True)
class IngestOptions:
    """How :func:`load_csv` turns a CSV file into a :class:`Dataset`.

    Labels are read in one of three ways: ``label_map`` maps raw strings to
    ±1; ``response=True`` treats the label column as an ordinal response that
    is min-max scaled to [-1, 1] over past rows and thresholded at 0;
    otherwise the column must already hold -1/+1 values.
    """

    delimiter: str = ","
    label_map: dict = None
    response: bool = False
    impute: bool = False
    standardize: bool = True
    split: int = None
    drop_columns: tuple = ()


def _is_missing(token):
    return token.strip().lower() in MISSING_TOKENS


def _read_table(path, delimiter):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    while rows and not any(cell.strip() for cell in rows[-1]):
        rows.pop()
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(
                f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}"
            )
    return header, body


def _parse_label(token, options, lineno, path):
    token = token.strip()
    if options.label_map is not None:
        if token not in options.label_map:
            raise DataError(f"{path}: line {lineno}: unknown label value {token!r}")
        value = options.label_map[token]
    else:
        try:
            value = float(token)
        except ValueError:
            raise DataError(
                f"{path}: line {lineno}: unknown label value {token!r}"
            ) from None
        if options.response:
            return value
    if value not in (1, -1):
        raise DataError(f"{path}: line {lineno}: unknown label value {token!r}")
    return float(value)


def _parse_rows(path, label_column, options):
    header, body = _read_table(path, options.delimiter)
    if label_column not in header:
        raise DataError(f"{path}: label column {label_column!r} not found")
    label_idx = header.index(label_column)
    feat_idx = [
        j
        for j, name in enumerate(header)
        if j != label_idx and name not in options.drop_columns
    ]
    X = np.empty((len(body), len(feat_idx)))
    y = np.empty(len(body))
    for r, row in enumerate(body):
        lineno = r + 2
        if _is_missing(row[label_idx]):
            raise DataError(f"{path}: line {lineno}: missing label")
        y[r] = _parse_label(row[label_idx], options, lineno, path)
        for c, j in enumerate(feat_idx):
            token = row[j]
            if _is_missing(token):
                if not options.impute:
                    raise DataError(
                        f"{path}: line {lineno}: missing value in column {header[j]!r}"
                    )
                X[r, c] = np.nan
                continue
            try:
                X[r, c] = float(token)
            except ValueError:
                raise DataError(
                    f"{path}: line {lineno}: cannot parse {token!r} in column {header[j]!r}"
                ) from None
    return X, y, tuple(header[j] for j in feat_idx)


def scale_response(values, low=None, high=None):
    """Min-max scale an ordinal response to [-1, 1]."""
    values = np.asarray(values, dtype=float)
    low = values.min() if low is None else low
    high = values.max() if high is None else high
    if high - low <= 0:
        raise DataError("response is constant; cannot scale to [-1, 1]")
    return np.clip(2.0 * (values - low) / (high - low) - 1.0, -1.0, 1.0)


def binarize_response(scaled):
    """``y := y_r >= 0`` as a ±1 label (a response of exactly 0 maps to +1)."""
    return np.where(np.asarray(scaled) >= 0, 1.0, -1.0)


def impute_missing(X, n_past):
    X = np.array(X, dtype=float)
    if not np.isnan(X).any():
        return X
    means = np.nanmean(X[:n_past], axis=0) if n_past else np.full(X.shape[1], np.nan)
    bad = np.isnan(means) & np.isnan(X).any(axis=0)
    if bad.any():
        raise DataError("cannot impute a column with no observed past values")
    rows, cols = np.nonzero(np.isnan(X))
    X[rows, cols] = means[cols]
    return X


def standardize(data):
    """Zero-mean, unit-variance columns using past-row statistics only.

    Columns that are constant over the past rows are centred but not scaled,
    which leaves their past entries at exactly zero.
    """
    past = data.past_features
    if past.shape[0] == 0:
        raise DataError("cannot standardize without past instances")
    mean = past.mean(axis=0)
    std = past.std(axis=0)
    const = np.ptp(past, axis=0) == 0
    mean[const] = past[0, const]
    # spreads so small their variance underflows are left unscaled too
    std[const | ~(std > 0)] = 1.0
    return replace(data, features=(data.features - mean) / std)


def _assemble(X, raw_labels, names, n_past, options):
    if options.impute:
        X = impute_missing(X, n_past)
    response = None
    if options.response and options.label_map is None:
        past = raw_labels[:n_past]
        response = scale_response(raw_labels, past.min(), past.max())
        labels = binarize_response(response)
    else:
        labels = raw_labels
    data = Dataset(X, labels, split=n_past, response=response, feature_names=names)
    return standardize(data) if options.standardize else data


def load_csv(path, label_column, options=None):
    """Read a headed CSV file into a :class:`Dataset`.

    Raises :class:`~softhad.errors.DataError` naming the offending line for
    unparseable rows, unknown label values and missing values (unless
    ``options.impute`` is set).
    """
    options = options or IngestOptions()
    X, raw, names = _parse_rows(path, label_column, options)
    n_past = X.shape[0] if options.split is None else options.split
    if not 0 <= n_past <= X.shape[0]:
        raise DataError(f"split {n_past} outside [0, {X.shape[0]}]")
    return _assemble(X, raw, names, n_past, options)


def load_train_recent(train_path, recent_path, label_column, options=None):
    """Load past and recent instances from two files into one Dataset."""
    options = options or IngestOptions()
    X1, raw1, names1 = _parse_rows(train_path, label_column, options)
    X2, raw2, names2 = _parse_rows(recent_path, label_column, options)
    if names1 != names2:
        raise DataError(
            f"feature columns differ between {train_path} and {recent_path}"
        )
    X = np.vstack([X1, X2])
    raw = np.concatenate([raw1, raw2])
    return _assemble(X, raw, names1, X1.shape[0], options)


BUNDLED = {"housing": ("housing.csv", "medv"), "auto_mpg": ("auto_mpg.csv", "mpg")}


def bundled_path(name):
    """Filesystem path of a bundled dataset (``housing`` or ``auto_mpg``)."""
    if name not in BUNDLED:
        raise DataError(f"unknown bundled dataset {name!r}; choose from {sorted(BUNDLED)}")
    return Path(str(resources.files("softhad") / "datasets" / BUNDLED[name][0]))


def load_bundled(name, standardize_features=False):
    """Load a bundled UCI dataset with its ordinal response as the label.

    The response is scaled to [-1, 1] and thresholded at 0.
    """
    fname, response_col = BUNDLED.get(name, (None, None))
    options = IngestOptions(response=True, standardize=standardize_features)
    return load_csv(bundled_path(name), response_col, options)


def wilcoxon_weights(data):
    """Per-feature relevance from the Wilcoxon rank-sum statistic.

    ``AUC_j`` is the probability that feature ``j`` ranks a random positive
    past instance above a random negative one (ties count one half), and
    ``psi_j = |2 AUC_j - 1|``.
    """
    X = data.past_features
    y = data.past_labels
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("both classes must be present among past instances")
    ranks = rankdata(X, axis=0)
    u = ranks[pos].sum(axis=0) - n_pos * (n_pos + 1) / 2.0
    auc = u / (n_pos * n_neg)
    return FeatureWeights(np.clip(np.abs(2.0 * auc - 1.0), 0.0, 1.0))


def inject_flips(data, response, fraction, seed):
    """Negate the labels of a uniformly random ``floor(fraction * rows)`` subset.

    Returns the noisy dataset and the :class:`FlipRecord` holding the true
    anomaly score ``|response - noisy_label|`` of every instance.
    """
    if not 0.0 <= fraction <= 1.0 or math.isnan(fraction):
        raise DataError(f"flip fraction {fraction} outside [0, 1]")
    response = np.asarray(response, dtype=float)
    if response.shape != data.labels.shape:
        raise DataError("response length differs from label count")
    if np.any(np.abs(response) > 1):
        raise DataError("response values must lie in [-1, 1]")
    n = data.n_rows
    n_flip = int(math.floor(fraction * n + 1e-9))
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=n_flip, replace=False)) if n_flip else np.array([], int)
    labels = np.array(data.labels)
    labels[idx] = -labels[idx]
    noisy = data.with_labels(labels)
    record = FlipRecord(
        flipped_indices=frozenset(int(i) for i in idx),
        original_response=_frozen(response),
        true_anomaly_score=_frozen(np.abs(response - labels)),
    )
    return noisy, record
