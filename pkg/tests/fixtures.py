"""Crafted data files shared by several test modules."""
from __future__ import annotations

import numpy as np


def a9a_like_text(n: int = 2000, seed: int = 0, dim: int = 123, groups: int = 14,
                  alpha: float = 0.1) -> str:
    """LIBSVM text shaped like a9a: binary one-hot blocks, one active feature per block.

    Labels follow a hidden linear rule with Cauchy label noise, written as +1/-1.
    """
    rng = np.random.default_rng(seed)
    edges = np.linspace(0, dim, groups + 1).astype(int)
    w = rng.standard_normal(dim)
    lines = []
    for _ in range(n):
        idx = np.array([rng.integers(lo, hi) for lo, hi in zip(edges[:-1], edges[1:])])
        score = w[idx].sum() - w.sum() * groups / dim + alpha * rng.standard_cauchy()
        lab = "+1" if score >= 0 else "-1"
        lines.append(lab + " " + " ".join(f"{j + 1}:1" for j in idx))
    return "\n".join(lines) + "\n"


def covtype_like_text(n: int = 2000, seed: int = 1, dim: int = 54) -> str:
    """Dense-ish real-valued rows with labels 1/2, as in the binary covtype file."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(dim)
    lines = []
    for _ in range(n):
        x = np.where(rng.random(dim) < 0.7, rng.standard_normal(dim), 0.0)
        lab = "1" if x @ w + 0.1 * rng.standard_cauchy() >= 0 else "2"
        lines.append(lab + " " + " ".join(f"{j + 1}:{x[j]:.6g}" for j in np.flatnonzero(x)))
    return "\n".join(lines) + "\n"


def imdb_like_text(n: int = 2000, seed: int = 2, dim: int = 2000, nnz: int = 40) -> str:
    """Very sparse bag-of-words counts with 0/1 labels."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(dim)
    lines = []
    for _ in range(n):
        idx = np.sort(rng.choice(dim, size=nnz, replace=False))
        cnt = rng.integers(1, 4, size=nnz).astype(float)
        lab = "1" if cnt @ w[idx] + 0.1 * rng.standard_cauchy() >= 0 else "0"
        lines.append(lab + " " + " ".join(f"{j + 1}:{c:g}" for j, c in zip(idx, cnt)))
    return "\n".join(lines) + "\n"


# malformed LIBSVM inputs and the (1-based) line each must be rejected at
MALFORMED = [
    ("+1 1:0.5\n-1 2:1 2:3\n", 2),          # repeated index
    ("+1 1:0.5\n\n+1 3:1 x:2\n", 3),        # non-integer index
    ("# c\n+1 1:1\n+1 2:1\n5 1:1\n", 4),    # label outside {-1, +1, 0, 1}
    ("+1 1:0.5\n-1 4-2\n", 2),              # missing colon
    ("-1 0:1\n", 1),                        # zero index
    ("+1 1:abc\n", 1),                      # bad value
    ("+1 1:nan\n", 1),                      # non-finite value
]

