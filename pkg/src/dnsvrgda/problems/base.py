from __future__ import annotations

import numpy as np

FAMILIES = ("f", "g")


class BilevelProblem:
    """Per-worker stochastic first-order oracle for a bilevel problem.

    A batch is an index array into the worker's shard for the given family
    (``"f"`` for upper-level samples, ``"g"`` for lower-level ones), or ``None``
    for the full shard.  Gradients with respect to the first argument (x) and
    second argument (y) are returned together since they share the forward pass.
    """

    K: int
    dim_x: int
    dim_y: int

    def shard_size(self, k: int, family: str) -> int:
        raise NotImplementedError

    def grad_f(self, k, x, y, batch=None) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def grad_g(self, k, x, y, batch=None) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def f_value(self, k, x, y, batch=None) -> float:
        raise NotImplementedError

    def g_value(self, k, x, y, batch=None) -> float:
        raise NotImplementedError

    def evaluate(self, x, y, split: str) -> tuple[float, float | None]:
        raise NotImplementedError

    def initial_point(self, seed: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    # single-output views of the joint oracles
    def grad1_f(self, k, x, y, batch=None):
        return self.grad_f(k, x, y, batch)[0]

    def grad2_f(self, k, x, y, batch=None):
        return self.grad_f(k, x, y, batch)[1]

    def grad1_g(self, k, x, y, batch=None):
        return self.grad_g(k, x, y, batch)[0]

    def grad2_g(self, k, x, y, batch=None):
        return self.grad_g(k, x, y, batch)[1]

    def full_grad_f(self, k, x, y):
        return self.grad_f(k, x, y, None)

    def full_grad_g(self, k, x, y):
        return self.grad_g(k, x, y, None)

    def grad_many(self, family: str, ks, xs, ys, batches):
        """Stacked gradients for several (worker, x, y, batch) items of one family.

        Returns ``(G1, G2)`` with one row per item.  Subclasses may override this
        with a batched implementation; results must equal the per-item calls.
        """
        grad = self.grad_f if family == "f" else self.grad_g
        out = [grad(k, x, y, b) for k, x, y, b in zip(ks, xs, ys, batches)]
        return np.stack([o[0] for o in out]), np.stack([o[1] for o in out])

    def global_full_grads(self, x, y):
        """(1/K) sum_k of full-batch (grad_f, grad_g) at a common point."""
        f1 = np.zeros(self.dim_x); f2 = np.zeros(self.dim_y)
        g1 = np.zeros(self.dim_x); g2 = np.zeros(self.dim_y)
        for k in range(self.K):
            a, b = self.full_grad_f(k, x, y)
            c, d = self.full_grad_g(k, x, y)
            f1 += a; f2 += b; g1 += c; g2 += d
        return f1 / self.K, f2 / self.K, g1 / self.K, g2 / self.K

    def draw_batch(self, k: int, family: str, size: int, rng: np.random.Generator):
        n = self.shard_size(k, family)
        if size < 1:
            raise ValueError("batch size must be >= 1")
        if size >= n:
            return None
        return np.sort(rng.choice(n, size=size, replace=False))

    def describe(self) -> dict:
        return {"class": type(self).__name__, "K": self.K, "dim_x": self.dim_x, "dim_y": self.dim_y}
