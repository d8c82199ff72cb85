"""Quadratic bilevel instance with a closed-form lower-level solution.

Worker k holds

    f_k(x, y) = 1/2 |x - a_k|^2 + 1/2 |y - b_k|^2
    g_k(x, y) = 1/2 |y - C_k x - e_k|^2

so the global lower level is minimized by y*(x) = C x + e with C, e the worker
means.  Stochasticity comes from a finite set of centered additive gradient
perturbations per worker; sample i of family f contributes <n_i, (x, y)> to f.
"""
from __future__ import annotations

import numpy as np

from ..noise import STREAM_DATA, NoiseSpec, inject, stream
from .base import BilevelProblem


class QuadraticBilevel(BilevelProblem):
    def __init__(self, a, b, C, e, noise: NoiseSpec | None = None, n_samples: int = 1,
                 seed: int = 0, shared_samples: bool = False):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.C = np.asarray(C, dtype=float)
        self.e = np.asarray(e, dtype=float)
        self.K, self.dim_x = self.a.shape
        self.dim_y = self.b.shape[1]
        if self.C.shape != (self.K, self.dim_y, self.dim_x) or self.e.shape != (self.K, self.dim_y):
            raise ValueError("inconsistent quadratic problem shapes")
        self.noise = noise or NoiseSpec("none")
        self.n_samples = int(n_samples)
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        dim = self.dim_x + self.dim_y
        self._pert = {}
        for fam_id, fam in enumerate(("f", "g")):
            rows = np.empty((self.K, self.n_samples, dim))
            for k in range(self.K):
                rng = stream(seed, STREAM_DATA, 10 + fam_id, 0 if shared_samples else k)
                r = inject(np.zeros((self.n_samples, dim)), self.noise, rng)
                rows[k] = r - r.mean(axis=0)
            self._pert[fam] = rows
        self.C_bar = self.C.mean(axis=0)
        self.e_bar = self.e.mean(axis=0)
        self.a_bar = self.a.mean(axis=0)
        self.b_bar = self.b.mean(axis=0)

    def shard_size(self, k, family):
        return self.n_samples

    def _noise(self, family, k, batch):
        rows = self._pert[family][k]
        n = rows.mean(axis=0) if batch is None else rows[batch].mean(axis=0)
        return n[: self.dim_x], n[self.dim_x:]

    def grad_f(self, k, x, y, batch=None):
        n1, n2 = self._noise("f", k, batch)
        return x - self.a[k] + n1, y - self.b[k] + n2

    def grad_g(self, k, x, y, batch=None):
        n1, n2 = self._noise("g", k, batch)
        r = y - self.C[k] @ x - self.e[k]
        return -self.C[k].T @ r + n1, r + n2

    def f_value(self, k, x, y, batch=None):
        n1, n2 = self._noise("f", k, batch)
        return 0.5 * np.sum((x - self.a[k]) ** 2) + 0.5 * np.sum((y - self.b[k]) ** 2) + n1 @ x + n2 @ y

    def g_value(self, k, x, y, batch=None):
        n1, n2 = self._noise("g", k, batch)
        r = y - self.C[k] @ x - self.e[k]
        return 0.5 * r @ r + n1 @ x + n2 @ y

    def y_star(self, x):
        return self.C_bar @ x + self.e_bar

    def phi(self, x):
        """Upper objective along the lower-level solution map, noise-free."""
        ys = self.y_star(x)
        return float(np.mean([0.5 * np.sum((x - self.a[k]) ** 2) + 0.5 * np.sum((ys - self.b[k]) ** 2)
                              for k in range(self.K)]))

    def hypergradient(self, x):
        return quad_hypergradient(self, x)

    def evaluate(self, x, y, split="validation"):
        loss = np.mean([self.f_value(k, x, y) for k in range(self.K)])
        return float(loss), None

    def initial_point(self, seed=0):
        return np.zeros(self.dim_x), np.zeros(self.dim_y)

    def describe(self):
        d = super().describe()
        d.update(noise=self.noise.kind, noise_scale=self.noise.scale, n_samples=self.n_samples)
        return d


def quad_hypergradient(problem: QuadraticBilevel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return (x - problem.a_bar) + problem.C_bar.T @ (problem.y_star(x) - problem.b_bar)


def random_quadratic(K: int, dim_x: int, dim_y: int, seed: int = 0, noise: NoiseSpec | None = None,
                     n_samples: int = 1, coupling: float = 0.5, spread: float = 1.0,
                     identical: bool = False, shared_curvature: bool = False) -> QuadraticBilevel:
    """Seeded instance; ``spread`` scales per-worker heterogeneity, ``identical`` clones worker 0.

    ``shared_curvature`` gives every worker worker 0's coupling matrix while the
    linear terms stay heterogeneous.
    """
    rng = stream(seed, STREAM_DATA, 0)
    Kg = 1 if identical else K
    a = spread * rng.standard_normal((Kg, dim_x))
    b = spread * rng.standard_normal((Kg, dim_y))
    C = coupling * rng.standard_normal((Kg, dim_y, dim_x)) / np.sqrt(dim_x)
    e = spread * rng.standard_normal((Kg, dim_y))
    if shared_curvature and not identical:
        C = np.repeat(C[:1], K, axis=0)
    if identical:
        a, b, C, e = (np.repeat(v, K, axis=0) for v in (a, b, C, e))
    return QuadraticBilevel(a, b, C, e, noise=noise, n_samples=n_samples, seed=seed,
                            shared_samples=identical)
