"""Weighted regression datasets: CSV ingestion, synthetic engines and splitting.

A :class:`Dataset` holds ``N`` rows of (feature vector, scalar target) with
per-row probability weights summing to one. The synthetic engines produce
near-deterministic targets that a linear surrogate cannot reproduce exactly,
which is the regime every other module in this package targets.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._io import atomic_write, fmt_float
from .errors import (
    DatasetError,
    DegenerateSplit,
    EmptyFile,
    EmptyPopsRow,
    InvalidSpec,
    MissingColumn,
    NonFiniteValue,
)

ENGINE_KINDS = ("sinusoid", "cubic", "quadratic", "random-linear")

# inputs are drawn uniformly from [-BOX, BOX]^input_dim
BOX = 1.0


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Immutable weighted dataset.

    ``features`` is ``(N, P)``, ``targets`` and ``weights`` are ``(N,)``.
    Weights are renormalized to sum to one on construction.
    """

    features: np.ndarray
    targets: np.ndarray
    weights: Optional[np.ndarray] = None
    feature_names: Optional[tuple] = None
    target_name: str = "y"

    def __post_init__(self):
        F = np.asarray(self.features, dtype=np.float64)
        if F.ndim == 1:
            F = F[:, None]
        y = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        if F.ndim != 2 or F.shape[0] < 1 or F.shape[1] < 1:
            raise DatasetError(f"features must be a non-empty 2-d array, got shape {F.shape}")
        if y.shape[0] != F.shape[0]:
            raise DatasetError(f"{F.shape[0]} feature rows but {y.shape[0]} targets")
        if self.weights is None:
            w = np.full(F.shape[0], 1.0 / F.shape[0])
        else:
            w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
            if w.shape[0] != F.shape[0]:
                raise DatasetError(f"{F.shape[0]} rows but {w.shape[0]} weights")
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise DatasetError("weights must be finite and strictly positive")
            w = w / w.sum()
        if not (np.all(np.isfinite(F)) and np.all(np.isfinite(y))):
            bad = np.argwhere(~np.isfinite(np.column_stack([F, y])))[0]
            raise NonFiniteValue(int(bad[0]), int(bad[1]))
        empty = np.flatnonzero(~np.any(F != 0.0, axis=1) & (y != 0.0))
        if empty.size:
            raise EmptyPopsRow(int(empty[0]))
        names = self.feature_names
        if names is None:
            names = tuple(f"f{p}" for p in range(F.shape[1]))
        elif len(names) != F.shape[1]:
            raise DatasetError(f"{len(names)} feature names for {F.shape[1]} columns")
        object.__setattr__(self, "features", _frozen(F))
        object.__setattr__(self, "targets", _frozen(y))
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "feature_names", tuple(names))

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def p(self):
        return self.features.shape[1]

    def subset(self, index):
        index = np.asarray(index)
        return Dataset(
            self.features[index],
            self.targets[index],
            self.weights[index],
            feature_names=self.feature_names,
            target_name=self.target_name,
        )


@dataclass(frozen=True)
class EngineSpec:
    kind: str = "cubic"
    input_dim: int = 1
    feature_degree: int = 1
    noise_std: float = 0.0
    coefficient_seed: int = 0

    def validate(self):
        if self.kind not in ENGINE_KINDS:
            raise InvalidSpec(f"unknown engine kind {self.kind!r}; expected one of {ENGINE_KINDS}")
        if int(self.input_dim) < 1:
            raise InvalidSpec("input_dim must be a positive integer")
        if int(self.feature_degree) < 1:
            raise InvalidSpec("feature_degree must be a positive integer")
        if not np.isfinite(self.noise_std) or self.noise_std < 0:
            raise InvalidSpec("noise_std must be a finite nonnegative real")
        if self.kind == "sinusoid" and self.input_dim != 1:
            raise InvalidSpec("the sinusoid engine is one-dimensional (input_dim=1)")

    @property
    def n_features(self):
        if self.kind == "sinusoid":
            return self.feature_degree + 1
        return self.input_dim + 1


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def _parse(raw, row, col):
    try:
        value = float(raw)
    except ValueError:
        raise NonFiniteValue(row, col, raw) from None
    if not np.isfinite(value):
        raise NonFiniteValue(row, col, raw)
    return value


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as handle:
        rows = [r for r in csv.reader(handle) if r and any(c.strip() for c in r)]
    if not rows:
        raise EmptyFile(f"{path}: no header row")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise EmptyFile(f"{path}: header but no data rows")
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise DatasetError(f"{path}: row {i} has {len(r)} fields, header has {len(header)}")
    return header, body


def load_csv(path, target_column, weight_column=None, feature_columns=None):
    """Read a CSV file into a :class:`Dataset`.

    Feature columns default to every column other than the target and weight
    columns, in header order. Rows are numbered from 0 (first data row) in
    error messages.
    """
    header, body = _read_rows(path)
    if target_column not in header:
        raise MissingColumn(target_column)
    if weight_column is not None and weight_column not in header:
        raise MissingColumn(weight_column)
    if feature_columns is None:
        feature_columns = [c for c in header if c not in (target_column, weight_column)]
    else:
        for c in feature_columns:
            if c not in header:
                raise MissingColumn(c)
    if not feature_columns:
        raise DatasetError(f"{path}: no feature columns")
    fidx = [header.index(c) for c in feature_columns]
    tidx = header.index(target_column)
    F = np.array([[_parse(r[j], i, header[j]) for j in fidx] for i, r in enumerate(body)])
    y = np.array([_parse(r[tidx], i, target_column) for i, r in enumerate(body)])
    w = None
    if weight_column is not None:
        widx = header.index(weight_column)
        w = np.array([_parse(r[widx], i, weight_column) for i, r in enumerate(body)])
    return Dataset(F, y, w, feature_names=tuple(feature_columns), target_name=target_column)


def load_features(path, feature_columns=None, exclude=()):
    """Read only a feature matrix (for prediction). Returns ``(F, names)``."""
    header, body = _read_rows(path)
    if feature_columns is None:
        feature_columns = [c for c in header if c not in exclude]
    for c in feature_columns:
        if c not in header:
            raise MissingColumn(c)
    fidx = [header.index(c) for c in feature_columns]
    F = np.array([[_parse(r[j], i, header[j]) for j in fidx] for i, r in enumerate(body)])
    return F, tuple(feature_columns)


def write_table(path, columns, data):
    """Write a header plus rows of floats at 17 significant digits."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    with atomic_write(path) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in data:
            writer.writerow([fmt_float(v) for v in row])


def write_csv(path, data: Dataset, include_weights=False):
    columns = list(data.feature_names) + [data.target_name]
    table = np.column_stack([data.features, data.targets])
    if include_weights:
        columns.append("weight")
        table = np.column_stack([table, data.weights])
    write_table(path, columns, table)


# --------------------------------------------------------------------------
# Synthetic engines
# --------------------------------------------------------------------------


# keeps the cube from swamping the quadratic form on the box
CUBE_WEIGHT = 0.5


def _engine_coefficients(spec, d):
    rng = np.random.default_rng(spec.coefficient_seed)
    scale = 1.0 / np.sqrt(d)
    if spec.kind == "random-linear":
        # pool per input: x_p, x_p^2, x_p*x_{p+1}, x_p^3
        return {"pool": rng.standard_normal((4, d)) * scale}
    return {
        "a": rng.standard_normal(d) * scale,
        "B": rng.standard_normal((d, d)) / d,
        "c": rng.standard_normal(d) * scale,
    }


def engine_response(spec: EngineSpec, x):
    """Noise-free engine output at inputs ``x`` of shape ``(n, input_dim)``.

    cubic:          a.x + x^T B x + (c.x)^3 / 2
    quadratic:      a.x + x^T B x
    random-linear:  random combination of x_p, x_p^2, x_p x_{p+1}, x_p^3
    sinusoid:       sin(pi x)

    Coefficients are standard normal, scaled so each term is O(1) on the box,
    and depend only on ``coefficient_seed``.
    """
    spec.validate()
    x = np.asarray(x, dtype=np.float64)
    if spec.kind == "sinusoid":
        return np.sin(np.pi * x[:, 0])
    coef = _engine_coefficients(spec, spec.input_dim)
    if spec.kind == "random-linear":
        pool = np.stack([x, x**2, x * np.roll(x, -1, axis=1), x**3])
        return np.einsum("kd,knd->n", coef["pool"], pool)
    y = x @ coef["a"] + np.einsum("np,pq,nq->n", x, coef["B"], x)
    if spec.kind == "cubic":
        y = y + CUBE_WEIGHT * (x @ coef["c"]) ** 3
    return y


def engine_features(spec: EngineSpec, x):
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if spec.kind == "sinusoid":
        return x[:, :1] ** np.arange(spec.feature_degree + 1)
    return np.column_stack([np.ones(n), x])


def synth_engine(spec: EngineSpec, n: int, seed: int) -> Dataset:
    """Draw ``n`` uniform inputs, evaluate the engine and emit surrogate features.

    The sinusoid engine uses monomial features ``1, x, ..., x**feature_degree``.
    The other engines use the constant plus the raw inputs as features
    (``P = input_dim + 1``) while the target mixes them nonlinearly, so a
    linear surrogate is misspecified by construction.
    """
    spec.validate()
    if int(n) < 1:
        raise InvalidSpec("n must be at least 1")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-BOX, BOX, size=(int(n), spec.input_dim))
    y = engine_response(spec, x)
    if spec.noise_std > 0:
        y = y + spec.noise_std * rng.standard_normal(y.shape)
    F = engine_features(spec, x)
    if spec.kind == "sinusoid":
        names = ("one", "x") + tuple(f"x{k}" for k in range(2, spec.feature_degree + 1))
    else:
        names = ("one",) + tuple(f"x{k}" for k in range(1, spec.input_dim + 1))
    return Dataset(F, y, feature_names=names)


def split(data: Dataset, test_fraction: float, seed: int):
    """Uniform random train/test partition; each part's weights are renormalized."""
    if not 0.0 < test_fraction < 1.0:
        raise DegenerateSplit(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n_test = int(round(test_fraction * data.n))
    if n_test < 1 or n_test > data.n - 1:
        raise DegenerateSplit(
            f"splitting {data.n} rows at fraction {test_fraction} leaves an empty part"
        )
    perm = np.random.default_rng(seed).permutation(data.n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return data.subset(train_idx), data.subset(test_idx)


def concat(parts: Sequence[Dataset]) -> Dataset:
    """Stack datasets row-wise; weights are taken as-is then renormalized."""
    first = parts[0]
    return Dataset(
        np.vstack([d.features for d in parts]),
        np.concatenate([d.targets for d in parts]),
        np.concatenate([d.weights for d in parts]),
        feature_names=first.feature_names,
        target_name=first.target_name,
    )
