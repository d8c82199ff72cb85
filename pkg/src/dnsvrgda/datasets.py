"""Synthetic binary-classification generators, LIBSVM ingestion, splitting and sharding."""
from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .noise import STREAM_DATA, STREAM_SHUFFLE, NoiseSpec, sample, stream

SPLITS = ("train", "validation", "test")


def sign_pm1(v: np.ndarray) -> np.ndarray:
    """Sign with the tie rule sgn(0) = +1."""
    return np.where(np.asarray(v) >= 0, 1.0, -1.0)


@dataclass
class Dataset:
    features: np.ndarray | sp.csr_matrix = field(repr=False)
    labels: np.ndarray = field(repr=False)
    provenance: str = ""

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=float)
        if self.labels.ndim != 1 or self.labels.size == 0:
            raise ValueError("dataset needs a nonempty 1-d label vector")
        if self.features.shape[0] != self.labels.size:
            raise ValueError(
                f"{self.features.shape[0]} feature rows but {self.labels.size} labels")
        if not np.all(np.abs(self.labels) == 1.0):
            raise ValueError("labels must be -1 or +1")
        vals = self.features.data if sp.issparse(self.features) else self.features
        if not np.all(np.isfinite(vals)):
            raise ValueError("features contain NaN or Inf")

    @property
    def n(self) -> int:
        return self.labels.size

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.features)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.provenance)

    def dense_rows(self, idx=None) -> np.ndarray:
        X = self.features if idx is None else self.features[idx]
        return X.toarray() if sp.issparse(X) else np.ascontiguousarray(X)

    def equals(self, other: "Dataset") -> bool:
        if self.feature_dim != other.feature_dim or not np.array_equal(self.labels, other.labels):
            return False
        a, b = self.features, other.features
        if sp.issparse(a) or sp.issparse(b):
            a, b = sp.csr_matrix(a), sp.csr_matrix(b)
            a.sort_indices()
            b.sort_indices()
            return (np.array_equal(a.indptr, b.indptr) and np.array_equal(a.indices, b.indices)
                    and np.array_equal(a.data, b.data))
        return np.array_equal(a, b)


@dataclass
class ShardedDataset:
    train: list[Dataset]
    validation: list[Dataset]
    test: list[Dataset]
    # source-row indices of each shard, per split
    index: dict[str, list[np.ndarray]] = field(default_factory=dict, repr=False)

    @property
    def K(self) -> int:
        return len(self.train)

    def split(self, name: str) -> list[Dataset]:
        if name not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {name!r}")
        return getattr(self, name)


# --------------------------------------------------------------------------- generators

def _labels(X: np.ndarray, w: np.ndarray, alpha: float, rng) -> np.ndarray:
    xi = sample(NoiseSpec("cauchy", 1.0), rng, X.shape[0])
    return sign_pm1(X @ w + alpha * xi)


def gen_synthetic_1(n: int = 10000, d: int = 100, alpha: float = 0.1, seed: int = 0):
    """Gaussian features, labels sgn(Xw + alpha*xi) with standard Cauchy xi.

    ``w`` is shared by the three splits; each split gets its own X and xi.
    """
    if n < 1 or d < 1 or alpha < 0:
        raise ValueError("need n >= 1, d >= 1, alpha >= 0")
    w = stream(seed, STREAM_DATA, 0).standard_normal(d)
    out = []
    for i, name in enumerate(SPLITS):
        X = stream(seed, STREAM_DATA, 1, i).standard_normal((n, d))
        y = _labels(X, w, alpha, stream(seed, STREAM_DATA, 2, i))
        out.append(Dataset(X, y, f"syn1(n={n},d={d},alpha={alpha},seed={seed}):{name}"))
    return tuple(out)


def gen_synthetic_2(n: int = 10000, d: int = 100, alpha: float = 0.1,
                    common_frac: float = 0.1, seed: int = 0):
    """Bernoulli features: the first ceil(common_frac*d) columns are common (p=0.9),
    the rest rare (p=0.1).  Labels as in :func:`gen_synthetic_1`."""
    if not 0.0 < common_frac < 1.0:
        raise ValueError(f"common_frac must lie in (0, 1), got {common_frac}")
    if n < 1 or d < 1 or alpha < 0:
        raise ValueError("need n >= 1, d >= 1, alpha >= 0")
    n_common = math.ceil(common_frac * d)
    probs = np.where(np.arange(d) < n_common, 0.9, 0.1)
    w = stream(seed, STREAM_DATA, 0).standard_normal(d)
    out = []
    for i, name in enumerate(SPLITS):
        U = stream(seed, STREAM_DATA, 1, i).random((n, d))
        X = (U < probs).astype(float)
        y = _labels(X, w, alpha, stream(seed, STREAM_DATA, 2, i))
        out.append(Dataset(
            X, y, f"syn2(n={n},d={d},alpha={alpha},common_frac={common_frac},seed={seed}):{name}"))
    return tuple(out)


GENERATORS = {"syn1": gen_synthetic_1, "syn2": gen_synthetic_2}


# --------------------------------------------------------------------------- LIBSVM

class LibsvmFormatError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def _parse_label(tok: str, lineno: int, label_map: dict | None) -> float:
    try:
        raw = float(tok)
    except ValueError:
        raise LibsvmFormatError(lineno, f"bad label {tok!r}") from None
    if label_map is not None:
        if raw not in label_map:
            raise LibsvmFormatError(lineno, f"label {tok!r} not in label map")
        return float(label_map[raw])
    if raw == 1.0:
        return 1.0
    if raw in (-1.0, 0.0):
        return -1.0
    raise LibsvmFormatError(lineno, f"label {tok!r} is not one of -1, +1, 0, 1")


def parse_libsvm(source: str | Path | Iterable[str], feature_dim: int | None = None,
                 label_map: dict | None = None) -> Dataset:
    """Parse LIBSVM text (``<label> <idx>:<val> ...``, 1-based increasing indices).

    ``source`` is a path or an iterable of lines (an open text stream works).
    Labels 0 map to -1.  ``#`` starts a comment.
    """
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            return Dataset(*_parse_lines(fh, feature_dim, label_map), f"libsvm:{source}")
    return Dataset(*_parse_lines(source, feature_dim, label_map), "libsvm:<stream>")


def _parse_lines(lines: Iterable[str], feature_dim, label_map):
    labels, indptr, indices, data = [], [0], [], []
    max_idx = 0
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        labels.append(_parse_label(toks[0], lineno, label_map))
        last = 0
        for tok in toks[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise LibsvmFormatError(lineno, f"expected <index>:<value>, got {tok!r}")
            try:
                idx = int(idx_s)
            except ValueError:
                raise LibsvmFormatError(lineno, f"bad feature index {idx_s!r}") from None
            try:
                val = float(val_s)
            except ValueError:
                raise LibsvmFormatError(lineno, f"bad feature value {val_s!r}") from None
            if idx < 1:
                raise LibsvmFormatError(lineno, f"feature index {idx} is not 1-based")
            if idx <= last:
                raise LibsvmFormatError(lineno, f"feature index {idx} not increasing after {last}")
            if not math.isfinite(val):
                raise LibsvmFormatError(lineno, f"non-finite feature value {val_s!r}")
            last = idx
            if val != 0.0:
                indices.append(idx - 1)
                data.append(val)
        max_idx = max(max_idx, last)
        indptr.append(len(indices))
    if not labels:
        raise LibsvmFormatError(0, "no data lines")
    dim = max_idx if feature_dim is None else int(feature_dim)
    if dim < max_idx:
        raise ValueError(f"feature_dim={dim} smaller than largest index {max_idx}")
    X = sp.csr_matrix((np.array(data, dtype=float), np.array(indices, dtype=np.int64),
                       np.array(indptr, dtype=np.int64)), shape=(len(labels), dim))
    return X, np.array(labels)


def serialize_libsvm(ds: Dataset) -> str:
    X = sp.csr_matrix(ds.features)
    X.sort_indices()
    out = io.StringIO()
    for i, lab in enumerate(ds.labels):
        lo, hi = X.indptr[i], X.indptr[i + 1]
        toks = ["+1" if lab > 0 else "-1"]
        toks += [f"{j + 1}:{float(v)!r}" for j, v in zip(X.indices[lo:hi], X.data[lo:hi]) if v != 0.0]
        out.write(" ".join(toks) + "\n")
    return out.getvalue()


# --------------------------------------------------------------------------- splitting

def _shard_indices(n: int, K: int) -> list[np.ndarray]:
    if K > n:
        raise ValueError(f"cannot shard {n} samples across K={K} workers")
    return np.array_split(np.arange(n), K)


def split_and_shard(data: Dataset | Sequence[Dataset], K: int,
                    ratios: Sequence[float] = (0.6, 0.2, 0.2), seed: int = 0) -> ShardedDataset:
    """Shard three ready-made splits, or shuffle-split one dataset by ``ratios`` first.

    Shards are contiguous and their sizes differ by at most one (larger first).
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if isinstance(data, Dataset):
        if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) <= 0:
            raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
        perm = stream(seed, STREAM_SHUFFLE).permutation(data.n)
        cuts = np.floor(np.cumsum(ratios)[:2] * data.n).astype(int)
        parts = np.split(perm, cuts)
        sources = [data.subset(p) for p in parts]
        source_idx = parts
    else:
        if len(data) != 3:
            raise ValueError("expected (train, validation, test) datasets")
        sources = list(data)
        source_idx = [np.arange(d.n) for d in sources]
    shards: dict[str, list[Dataset]] = {}
    index: dict[str, list[np.ndarray]] = {}
    for name, src, sidx in zip(SPLITS, sources, source_idx):
        try:
            pieces = _shard_indices(src.n, K)
        except ValueError as e:
            raise ValueError(f"{name} split: {e}") from None
        shards[name] = [src.subset(p) for p in pieces]
        index[name] = [sidx[p] for p in pieces]
    return ShardedDataset(shards["train"], shards["validation"], shards["test"], index)


def replicate_shards(ds: Sequence[Dataset], K: int) -> ShardedDataset:
    """Give every worker the same full copy of each split (symmetry tests)."""
    return ShardedDataset([ds[0]] * K, [ds[1]] * K, [ds[2]] * K,
                          {s: [np.arange(d.n)] * K for s, d in zip(SPLITS, ds)})


# --------------------------------------------------------------------------- cache

def cache_key(generator: str, params: dict, seed: int) -> str:
    blob = json.dumps({"generator": generator, "params": params, "seed": seed}, sort_keys=True)
    return f"{generator}-{hashlib.sha256(blob.encode()).hexdigest()[:16]}"


def save_cached(path: Path, datasets: Sequence[Dataset], meta: dict) -> None:
    arrays = {"meta": np.array(json.dumps(meta, sort_keys=True))}
    for name, ds in zip(SPLITS, datasets):
        arrays[f"{name}_labels"] = ds.labels
        if ds.is_sparse:
            X = sp.csr_matrix(ds.features)
            arrays[f"{name}_data"] = X.data
            arrays[f"{name}_indices"] = X.indices
            arrays[f"{name}_indptr"] = X.indptr
            arrays[f"{name}_shape"] = np.array(X.shape)
        else:
            arrays[f"{name}_X"] = ds.features
        arrays[f"{name}_provenance"] = np.array(ds.provenance)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, **arrays)
    tmp.replace(path)


def load_cached(path: Path) -> tuple[tuple[Dataset, ...], dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        out = []
        for name in SPLITS:
            if f"{name}_X" in z:
                X = z[f"{name}_X"]
            else:
                X = sp.csr_matrix((z[f"{name}_data"], z[f"{name}_indices"], z[f"{name}_indptr"]),
                                  shape=tuple(z[f"{name}_shape"]))
            out.append(Dataset(X, z[f"{name}_labels"], str(z[f"{name}_provenance"])))
    return tuple(out), meta


def generate_cached(generator: str, params: dict, seed: int,
                    cache_dir: str | Path | None = None) -> tuple[tuple[Dataset, ...], bool]:
    """Generate a split triple, reusing ``cache_dir`` when present.  Returns (splits, hit)."""
    if generator not in GENERATORS:
        raise ValueError(f"unknown generator {generator!r}; expected one of {sorted(GENERATORS)}")
    if cache_dir is None:
        return GENERATORS[generator](seed=seed, **params), False
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"{cache_key(generator, params, seed)}.npz"
    if path.exists():
        return load_cached(path)[0], True
    ds = GENERATORS[generator](seed=seed, **params)
    save_cached(path, ds, {"generator": generator, "params": params, "seed": seed})
    return ds, False
