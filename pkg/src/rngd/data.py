"""Datasets: LIBSVM, CSV and IDX ingestion plus synthetic generators."""

import csv
import gzip
import io
import struct
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import softmax

from .exceptions import ConfigError, InvalidInput, ParseError


@dataclass
class Dataset:
    """Dense features with integer class labels.

    Attributes
    ----------
    X : ndarray of shape (n, d)
    y : ndarray of shape (n,)
        Labels ``0..n_classes-1``.
    name : str
    label_names : list of str
        Original label text of each class index.
    feature_mean, feature_std : ndarray or None
        Set when the features were standardised.
    meta : dict
        Generator parameters or source path.
    """

    X: np.ndarray
    y: np.ndarray
    name: str = "dataset"
    label_names: list = field(default_factory=list)
    feature_mean: np.ndarray = None
    feature_std: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2:
            raise InvalidInput(f"features must be a matrix, got shape {self.X.shape}")
        self.y = np.asarray(self.y, dtype=int).ravel()
        if len(self.X) != len(self.y):
            raise InvalidInput(f"{len(self.X)} feature rows but {len(self.y)} labels")
        if not np.all(np.isfinite(self.X)):
            raise InvalidInput("features contain NaN or infinity")
        if not self.label_names:
            k = int(self.y.max()) + 1 if len(self.y) else 0
            self.label_names = [str(i) for i in range(k)]
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= len(self.label_names)):
            raise InvalidInput("labels outside the declared classes")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def n_classes(self):
        return len(self.label_names)


def standardize(ds):
    """Zero-mean, unit-variance features; constant columns are only centred."""
    mean = ds.X.mean(axis=0) if ds.n else np.zeros(ds.d)
    std = ds.X.std(axis=0) if ds.n else np.ones(ds.d)
    std = np.where(std > 0, std, 1.0)
    return replace(ds, X=(ds.X - mean) / std, feature_mean=mean, feature_std=std)


def _label_map(tokens, lineno_of):
    values = {}
    for i, tok in enumerate(tokens):
        try:
            v = float(tok)
        except ValueError:
            raise ParseError(f"non-numeric label {tok!r}", lineno_of(i)) from None
        values.setdefault(v, tok)
    order = sorted(values)
    index = {v: k for k, v in enumerate(order)}
    return np.array([index[float(t)] for t in tokens], dtype=int), [values[v] for v in order]


def _open_text(path):
    try:
        return open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise InvalidInput(f"cannot read {path}: {exc.strerror}") from exc


def parse_libsvm(path, n_features=None):
    """Read a LIBSVM file ``label idx:val idx:val ...`` into a dense dataset.

    Parameters
    ----------
    path : str or file-like
    n_features : int, optional
        Feature count; defaults to the largest index seen.

    Raises
    ------
    ParseError
        Empty file, malformed token or non-numeric value (with line number).
    """
    if hasattr(path, "read"):
        text = path.read()
    else:
        with _open_text(path) as fh:
            text = fh.read()
    labels, rows, linenos = [], [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        labels.append(parts[0])
        entries = {}
        last = 0
        for tok in parts[1:]:
            idx, sep, val = tok.partition(":")
            if not sep:
                raise ParseError(f"token {tok!r} is not index:value", lineno)
            try:
                i = int(idx)
            except ValueError:
                raise ParseError(f"bad feature index {idx!r}", lineno) from None
            if i < 1 or i <= last:
                raise ParseError(f"feature indices must be positive and increasing at {tok!r}", lineno)
            try:
                entries[i] = float(val)
            except ValueError:
                raise ParseError(f"non-numeric value {val!r}", lineno) from None
            last = i
        rows.append(entries)
        linenos.append(lineno)
    if not rows:
        raise ParseError("empty dataset")
    d = max((max(r) for r in rows if r), default=0)
    if n_features is not None:
        if d > n_features:
            raise ParseError(f"feature index {d} exceeds n_features={n_features}")
        d = int(n_features)
    X = np.zeros((len(rows), d))
    for k, r in enumerate(rows):
        for i, v in r.items():
            X[k, i - 1] = v
    if not np.all(np.isfinite(X)):
        raise ParseError("non-finite feature value")
    y, names = _label_map(labels, lambda i: linenos[i])
    name = getattr(path, "name", path) if not isinstance(path, str) else path
    return Dataset(X, y, str(name), names, meta={"source": str(name), "format": "libsvm"})


def write_libsvm(ds, path=None):
    """Write non-zero entries in LIBSVM format; returns the text."""
    lines = []
    for row, label in zip(ds.X, ds.y):
        items = [f"{i + 1}:{float(v)!r}" for i, v in enumerate(row) if v != 0.0]
        lines.append(" ".join([ds.label_names[label]] + items))
    text = "\n".join(lines) + ("\n" if lines else "")
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def parse_csv(path, label_column=-1, header=False, delimiter=","):
    """Read a delimited file with one label column.

    Parameters
    ----------
    path : str or file-like
    label_column : int or str
        Column index (negative counts from the end) or header name.
    header : bool
        Whether the first record is a header.
    delimiter : str

    Raises
    ------
    ParseError
        Ragged rows, non-numeric features or an empty file.
    """
    if hasattr(path, "read"):
        fh, close = path, False
    else:
        fh, close = _open_text(path), True
    try:
        reader = csv.reader(fh, delimiter=delimiter)
        records = [(reader.line_num, rec) for rec in reader if rec]
    except csv.Error as exc:
        raise ParseError(str(exc)) from exc
    finally:
        if close:
            fh.close()
    names = None
    if header:
        if not records:
            raise ParseError("empty dataset")
        names = records[0][1]
        records = records[1:]
        if not records:
            # a header alone still fixes the schema
            meta = {"format": "csv", "label_column": label_column, "columns": names}
            return Dataset(np.zeros((0, len(names) - 1)), np.zeros(0, dtype=int), "csv", meta=meta)
    if not records:
        raise ParseError("empty dataset")
    width = len(records[0][1]) if names is None else len(names)
    if isinstance(label_column, str):
        if names is None or label_column not in names:
            raise ParseError(f"no column named {label_column!r}")
        col = names.index(label_column)
    else:
        col = label_column % width
    feats, labels, lines = [], [], []
    for lineno, rec in records:
        if len(rec) != width:
            raise ParseError(f"expected {width} fields, found {len(rec)}", lineno)
        try:
            feats.append([float(v) for j, v in enumerate(rec) if j != col])
        except ValueError as exc:
            raise ParseError(f"non-numeric feature ({exc})", lineno) from None
        labels.append(rec[col].strip())
        lines.append(lineno)
    y, label_names = _csv_labels(labels, lines)
    X = np.array(feats, dtype=float).reshape(len(feats), width - 1)
    if not np.all(np.isfinite(X)):
        raise ParseError("non-finite feature value")
    meta = {"format": "csv", "label_column": col}
    if names is not None:
        meta["columns"] = names
    name = path if isinstance(path, str) else getattr(path, "name", "csv")
    return Dataset(X, y, str(name), label_names, meta=meta)


def _csv_labels(labels, lines):
    try:
        return _label_map(labels, lambda i: lines[i])
    except ParseError:
        names = sorted(set(labels))
        index = {v: k for k, v in enumerate(names)}
        return np.array([index[v] for v in labels], dtype=int), names


def write_csv(ds, path=None, header=None, delimiter=","):
    """Write features followed by the label column; returns the text."""
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    if header is not None:
        writer.writerow(header)
    for row, label in zip(ds.X, ds.y):
        writer.writerow([repr(float(v)) for v in row] + [ds.label_names[label]])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def read_idx(path):
    """Read an IDX array (optionally gzip-compressed)."""
    opener = gzip.open if str(path).endswith(".gz") else open
    try:
        with opener(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise InvalidInput(f"cannot read {path}: {exc}") from exc
    if len(data) < 4 or data[0] != 0 or data[1] != 0 or data[2] not in _IDX_TYPES:
        raise ParseError(f"{path} is not an IDX file")
    ndim = data[3]
    shape = struct.unpack(f">{ndim}I", data[4 : 4 + 4 * ndim])
    dtype = np.dtype(_IDX_TYPES[data[2]])
    count = int(np.prod(shape))
    body = data[4 + 4 * ndim :]
    if len(body) != count * dtype.itemsize:
        raise ParseError(f"{path}: payload size does not match shape {shape}")
    return np.frombuffer(body, dtype=dtype).reshape(shape)


def parse_idx(images_path, labels_path, limit=None):
    """Images and labels in IDX format as a flattened dataset scaled to [0, 1]."""
    X = read_idx(images_path).astype(float)
    y = read_idx(labels_path).astype(int).ravel()
    if limit is not None:
        X, y = X[:limit], y[:limit]
    X = X.reshape(len(X), -1)
    if X.max(initial=0.0) > 1.0:
        X = X / 255.0
    classes = np.unique(y)
    index = {c: k for k, c in enumerate(classes)}
    return Dataset(X, np.array([index[c] for c in y], dtype=int), str(images_path),
                   [str(c) for c in classes], meta={"format": "idx"})


def _feature_scales(d, spread, rng):
    return np.exp(rng.uniform(-spread, spread, d)) if spread > 0 else np.ones(d)


def gen_synthetic(kind, params=None, seed=0):
    """Seed-deterministic synthetic datasets.

    Parameters
    ----------
    kind : {"logistic", "multiclass-lowrank"}
    params : dict
        ``logistic``: ``n``, ``d``, optional ``beta`` (true coefficients),
        ``beta_scale`` and ``scale_spread`` (log-range of feature scales).
        ``multiclass-lowrank``: ``n``, ``d``, ``K``, ``r``, ``signal``
        (size of the planted singular values) and ``scale_spread``.
    seed : int

    Returns
    -------
    Dataset
        ``meta`` records the parameters and the planted coefficients.
    """
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    if kind == "logistic":
        n, d = int(params.get("n", 500)), int(params.get("d", 20))
        beta = params.get("beta")
        if beta is None:
            beta = rng.standard_normal(d) * float(params.get("beta_scale", 1.0))
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (d,):
            raise ConfigError("true coefficients must have length d")
        scales = _feature_scales(d, float(params.get("scale_spread", 0.0)), rng)
        X = rng.standard_normal((n, d)) * scales
        p = 1.0 / (1.0 + np.exp(-(X @ (beta / scales))))
        y = (rng.random(n) < p).astype(int)
        meta = {"kind": kind, "seed": seed, **params, "beta": beta.tolist()}
        return Dataset(X, y, "synthetic-logistic", ["0", "1"], meta=meta)
    if kind == "multiclass-lowrank":
        n, d = int(params.get("n", 10000)), int(params.get("d", 20))
        K, r = int(params.get("K", 6)), int(params.get("r", 2))
        if not 1 <= r <= min(d, K - 1):
            raise ConfigError(f"planted rank {r} invalid for d={d}, K={K}")
        signal = float(params.get("signal", 3.0))
        U, _ = np.linalg.qr(rng.standard_normal((d, r)))
        V, _ = np.linalg.qr(rng.standard_normal((K - 1, r)))
        s = signal * np.linspace(1.0, 0.6, r)
        B = (U * s) @ V.T
        alpha = 0.3 * rng.standard_normal(K - 1)
        scales = _feature_scales(d, float(params.get("scale_spread", 1.0)), rng)
        Z = rng.standard_normal((n, d))
        logits = np.hstack([Z @ B + alpha, np.zeros((n, 1))])
        P = softmax(logits, axis=1)
        y = (rng.random((n, 1)) > np.cumsum(P, axis=1)).sum(axis=1)
        y = np.minimum(y, K - 1)
        X = Z * scales
        meta = {"kind": kind, "seed": seed, **params, "B": (B / scales[:, None]).tolist(),
                "alpha": alpha.tolist()}
        return Dataset(X, y, "synthetic-multiclass-lowrank", [str(k) for k in range(K)], meta=meta)
    raise ConfigError(f"unknown synthetic kind {kind!r}")
