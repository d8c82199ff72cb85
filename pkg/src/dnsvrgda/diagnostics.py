"""Per-iteration measurements and the schema-v1 CSV log.

CSV schema v1: the first line is ``#schema v1:`` followed by the comma-separated
column names in :data:`COLUMNS`; every following line is one record.  Floats
are written with 17 significant digits; absent values are empty fields.
"""
from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

SCHEMA_PREFIX = "#schema v1:"


@dataclass
class MetricsRecord:
    iteration: int
    upper_loss: float
    test_accuracy: float | None
    consensus_x: float
    consensus_y: float
    consensus_z: float
    consensus_p: float
    consensus_q: float
    consensus_r: float
    grad_err_f1: float
    grad_err_g1y: float
    grad_err_g1z: float
    grad_err_f2: float
    grad_err_g2y: float
    grad_err_g2z: float
    surrogate_h: float
    surrogate_gz: float
    hypergrad_exact: float | None = None


COLUMNS = tuple(f.name for f in fields(MetricsRecord))


def consensus_error(vectors) -> float:
    """Mean Euclidean distance of the worker vectors from their average."""
    V = np.asarray(vectors, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[0] == 0:
        raise ValueError("consensus_error needs at least one vector")
    return float(np.mean(np.linalg.norm(V - V.mean(axis=0), axis=1)))


def gradient_error(estimators, problem, xs, ys, stream: str) -> float:
    """|| mean_k estimator_k - mean_k full-batch gradient at worker k's own point ||.

    ``stream`` names the gradient: one of f1, f2 (upper) or g1, g2 (lower);
    ``ys`` carries the second argument (y for the g(x, y) streams, z for g(x, z)).
    """
    fam, arg = stream[0], int(stream[1])
    grad = problem.full_grad_f if fam == "f" else problem.full_grad_g
    full = np.mean([grad(k, xs[k], ys[k])[arg - 1] for k in range(len(xs))], axis=0)
    return float(np.linalg.norm(np.mean(estimators, axis=0) - full))


def surrogate_norms(problem, x_bar, y_bar, z_bar, delta: float) -> tuple[float, float]:
    """(|| delta grad_y f + grad_y g || at (x_bar, y_bar), || grad_y g || at (x_bar, z_bar)),
    with full-batch worker-averaged gradients."""
    K = problem.K
    f2 = np.mean([problem.full_grad_f(k, x_bar, y_bar)[1] for k in range(K)], axis=0)
    g2 = np.mean([problem.full_grad_g(k, x_bar, y_bar)[1] for k in range(K)], axis=0)
    gz = np.mean([problem.full_grad_g(k, x_bar, z_bar)[1] for k in range(K)], axis=0)
    return float(np.linalg.norm(delta * f2 + g2)), float(np.linalg.norm(gz))


def collect(state, problem, delta: float) -> MetricsRecord:
    """Record for the iteration just completed by ``run_iteration``.

    Uses the iterates the step was computed at (``prev_*``), the step's
    estimators and its post-mix trackers.
    """
    X, Y, Z = state.prev_x, state.prev_y, state.prev_z
    xb, yb, zb = X.mean(axis=0), Y.mean(axis=0), Z.mean(axis=0)
    loss, _ = problem.evaluate(xb, yb, "validation")
    _, acc = problem.evaluate(xb, yb, "test")
    sh, sgz = surrogate_norms(problem, xb, yb, zb, delta)
    hyper = None
    if hasattr(problem, "hypergradient"):
        hyper = float(np.linalg.norm(problem.hypergradient(xb)))
    return MetricsRecord(
        iteration=state.t - 1,
        upper_loss=loss,
        test_accuracy=acc,
        consensus_x=consensus_error(X), consensus_y=consensus_error(Y), consensus_z=consensus_error(Z),
        consensus_p=consensus_error(state.p), consensus_q=consensus_error(state.q),
        consensus_r=consensus_error(state.r),
        grad_err_f1=gradient_error(state.u1, problem, X, Y, "f1"),
        grad_err_g1y=gradient_error(state.u2, problem, X, Y, "g1"),
        grad_err_g1z=gradient_error(state.u3, problem, X, Z, "g1"),
        grad_err_f2=gradient_error(state.v1, problem, X, Y, "f2"),
        grad_err_g2y=gradient_error(state.v2, problem, X, Y, "g2"),
        grad_err_g2z=gradient_error(state.w1, problem, X, Z, "g2"),
        surrogate_h=sh, surrogate_gz=sgz, hypergrad_exact=hyper)


# --------------------------------------------------------------------------- CSV

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


class CsvSink:
    """Append-only schema-v1 writer; the header is written with the first record."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = None
        self.rows = 0

    def _open(self):
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", newline="")
            self._fh.write(SCHEMA_PREFIX + ",".join(COLUMNS) + "\n")
        except OSError as e:
            raise OSError(f"{self.path}: {e.strerror or e}") from e

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def emit(record: MetricsRecord, sink: CsvSink) -> None:
    if sink._fh is None:
        sink._open()
    try:
        sink._fh.write(",".join(_fmt(v) for v in astuple(record)) + "\n")
        sink._fh.flush()
    except OSError as e:
        raise OSError(f"{sink.path}: {e.strerror or e}") from e
    sink.rows += 1


class SchemaError(ValueError):
    pass


def read_csv(path: str | Path) -> list[MetricsRecord]:
    path = Path(path)
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\r\n")
        if not first.startswith(SCHEMA_PREFIX):
            raise SchemaError(f"{path}: missing '{SCHEMA_PREFIX}' header")
        cols = tuple(first[len(SCHEMA_PREFIX):].split(","))
        if cols != COLUMNS:
            raise SchemaError(f"{path}: column mismatch, expected {COLUMNS}")
        out = []
        for lineno, row in enumerate(csv.reader(fh), start=2):
            if len(row) != len(COLUMNS):
                raise SchemaError(f"{path}:{lineno}: expected {len(COLUMNS)} fields, got {len(row)}")
            vals = [None if s == "" else float(s) for s in row]
            vals[0] = int(vals[0])
            out.append(MetricsRecord(*vals))
    return out


def is_finite_record(rec: MetricsRecord) -> bool:
    return all(v is None or math.isfinite(v) for v in astuple(rec))
