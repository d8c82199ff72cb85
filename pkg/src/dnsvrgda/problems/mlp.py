"""Regularization-hyperparameter learning for a two-layer binary classifier.

Lower level: per-worker training logistic loss of the network plus the
exp-weighted weight penalties R1, R2.  Upper level: per-worker validation
logistic loss (no x dependence).  x holds one log-weight per hidden unit and
one per output unit.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..datasets import ShardedDataset, sign_pm1
from ..noise import STREAM_INIT, stream
from .base import BilevelProblem

ACTIVATIONS = {"tanh": 0, "softplus": 1}

# sparse shards with at most this many entries are kept as a dense copy for mini-batches
DENSE_COPY_LIMIT = 2_000_000


def activation(A, act):
    if act == 0:
        return np.tanh(A)
    return np.logaddexp(0.0, A)


def activation_grad(A, H, act):
    if act == 0:
        return 1.0 - H * H
    return expit(A)


def logistic_mlp_grad(X, labels, y1, y2, act):
    """Mean logistic loss over the rows of ``X`` and its gradients in (y1, y2).

    ``X`` may be dense or a scipy sparse matrix.
    """
    B = X.shape[0]
    A = np.asarray(X @ y1)
    H = activation(A, act)
    m = labels * (H @ y2)
    loss = float(np.mean(np.logaddexp(0.0, -m)))
    s = -labels * expit(-m) / B
    gy2 = H.T @ s
    dA = np.multiply.outer(s, y2) * activation_grad(A, H, act)
    gy1 = np.asarray(X.T @ dA)
    return loss, gy1, gy2


def logistic_mlp_grad_stack(X, labels, y1, y2, act):
    """:func:`logistic_mlp_grad` over a leading stack axis of dense items.

    Shapes: X (n, B, d1), labels (n, B), y1 (n, d1, d2), y2 (n, d2).
    """
    B = X.shape[1]
    A = X @ y1
    H = activation(A, act)
    m = labels * (H @ y2[:, :, None])[:, :, 0]
    loss = np.mean(np.logaddexp(0.0, -m), axis=1)
    s = -labels * expit(-m) / B
    gy2 = (s[:, None, :] @ H)[:, 0, :]
    dA = s[:, :, None] * y2[:, None, :] * activation_grad(A, H, act)
    gy1 = X.transpose(0, 2, 1) @ dA
    return loss, gy1, gy2


def logistic_mlp_scores(X, y1, y2, act):
    return activation(np.asarray(X @ y1), act) @ y2


class MLPHyperOpt(BilevelProblem):
    def __init__(self, data: ShardedDataset, hidden: int = 20, activation: str = "tanh"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(ACTIVATIONS)}, got {activation!r}")
        self.data = data
        self.K = data.K
        self.n_in = data.train[0].feature_dim
        self.n_hidden = int(hidden)
        self.n_out = 1
        self.activation = activation
        self._act = ACTIVATIONS[activation]
        self.dim_x = self.n_hidden + self.n_out
        self.dim_y = self.n_in * self.n_hidden + self.n_hidden * self.n_out
        for split in ("train", "validation", "test"):
            for ds in data.split(split):
                if ds.feature_dim != self.n_in:
                    raise ValueError(f"{split} shard has {ds.feature_dim} features, expected {self.n_in}")
        self._dense: dict = {}

    # ------------------------------------------------------------------ layout
    def unpack_x(self, x):
        return x[: self.n_hidden], x[self.n_hidden:]

    def unpack_y(self, y):
        k = self.n_in * self.n_hidden
        return y[:k].reshape(self.n_in, self.n_hidden), y[k:]

    def shard_size(self, k, family):
        return (self.data.validation if family == "f" else self.data.train)[k].n

    # ------------------------------------------------------------------ regularizers
    def regularizer(self, x, y):
        """Value of R1 + R2 and its gradients in x and y."""
        val, gx, gy = self.regularizer_many([x], [y])
        return float(val[0]), gx[0], gy[0]

    # ------------------------------------------------------------------ oracles
    def _batch_rows(self, family, k, batch):
        """Dense feature rows of a mini-batch (sparse shards are densified row-wise)."""
        ds = (self.data.validation if family == "f" else self.data.train)[k]
        if not ds.is_sparse:
            return ds.features[batch]
        key = (family, k)
        if key not in self._dense and ds.n * ds.feature_dim <= DENSE_COPY_LIMIT:
            self._dense[key] = ds.dense_rows()
        dense = self._dense.get(key)
        return dense[batch] if dense is not None else ds.dense_rows(batch)

    def _loss_grads(self, family, ks, ys, batches):
        """Stacked (loss, grad_y) of the data term for several items."""
        n = len(ks)
        splits = self.data.validation if family == "f" else self.data.train
        for b in batches:
            if b is not None and len(b) == 0:
                raise ValueError("empty batch")
        Y = np.asarray(ys)
        k1 = self.n_in * self.n_hidden
        Y1 = Y[:, :k1].reshape(n, self.n_in, self.n_hidden)
        Y2 = Y[:, k1:]
        stackable = (all(b is not None for b in batches)
                     and len({len(b) for b in batches}) == 1)
        if stackable:
            X = np.stack([self._batch_rows(family, k, b) for k, b in zip(ks, batches)])
            lab = np.stack([splits[k].labels[b] for k, b in zip(ks, batches)])
            loss, g1, g2 = logistic_mlp_grad_stack(X, lab, Y1, Y2, self._act)
            return loss, np.concatenate([g1.reshape(n, -1), g2], axis=1)
        losses = np.empty(n)
        G = np.empty((n, self.dim_y))
        for i, (k, b) in enumerate(zip(ks, batches)):
            ds = splits[k]
            X = ds.features if b is None else ds.features[b]
            lab = ds.labels if b is None else ds.labels[b]
            if ds.is_sparse:
                losses[i], g1, g2 = logistic_mlp_grad(X, lab, Y1[i], Y2[i], self._act)
            else:
                l, g1, g2 = logistic_mlp_grad_stack(X[None], lab[None], Y1[i:i + 1], Y2[i:i + 1], self._act)
                losses[i], g1, g2 = l[0], g1[0], g2[0]
            G[i, :k1] = g1.ravel()
            G[i, k1:] = g2
        return losses, G

    def regularizer_many(self, xs, ys):
        """Stacked value and gradients of R1 + R2 for rows of ``xs``, ``ys``."""
        X = np.asarray(xs)
        Y = np.asarray(ys)
        n = X.shape[0]
        k1 = self.n_in * self.n_hidden
        y1 = Y[:, :k1].reshape(n, self.n_in, self.n_hidden)
        y2 = Y[:, k1:]
        e1, e2 = np.exp(X[:, : self.n_hidden]), np.exp(X[:, self.n_hidden:])
        s1 = np.sum(y1 * y1, axis=1)
        s2 = np.sum(y2 * y2, axis=1, keepdims=True)
        c1 = 1.0 / (self.n_hidden * self.n_in)
        c2 = 1.0 / (self.n_out * self.n_hidden)
        val = c1 * np.sum(e1 * s1, axis=1) + c2 * np.sum(e2 * s2, axis=1)
        gx = np.concatenate([c1 * e1 * s1, c2 * e2 * s2], axis=1)
        gy = np.concatenate([(2.0 * c1 * y1 * e1[:, None, :]).reshape(n, -1), 2.0 * c2 * y2 * e2], axis=1)
        return val, gx, gy

    def grad_many(self, family, ks, xs, ys, batches):
        _, G2 = self._loss_grads(family, ks, ys, batches)
        if family == "f":
            return np.zeros((len(ks), self.dim_x)), G2
        _, rgx, rgy = self.regularizer_many(xs, ys)
        return rgx, G2 + rgy

    def grad_f(self, k, x, y, batch=None):
        G1, G2 = self.grad_many("f", [k], [x], [y], [batch])
        return G1[0], G2[0]

    def grad_g(self, k, x, y, batch=None):
        G1, G2 = self.grad_many("g", [k], [x], [y], [batch])
        return G1[0], G2[0]

    def f_value(self, k, x, y, batch=None):
        return float(self._loss_grads("f", [k], [y], [batch])[0][0])

    def g_value(self, k, x, y, batch=None):
        loss = self._loss_grads("g", [k], [y], [batch])[0][0]
        return float(loss + self.regularizer_many([x], [y])[0][0])

    def mlp_gradients(self, k, x, y, f_batch=None, g_batch=None):
        f1, f2 = self.grad_f(k, x, y, f_batch)
        g1, g2 = self.grad_g(k, x, y, g_batch)
        return f1, f2, g1, g2

    # ------------------------------------------------------------------ evaluation
    def evaluate(self, x, y, split="validation"):
        """Mean logistic loss and accuracy, averaged over the K worker shards."""
        y1, y2 = self.unpack_y(y)
        losses, accs = [], []
        for ds in self.data.split(split):
            score = logistic_mlp_scores(ds.features, y1, y2, self._act)
            losses.append(np.mean(np.logaddexp(0.0, -ds.labels * score)))
            accs.append(np.mean(sign_pm1(score) == ds.labels))
        return float(np.mean(losses)), float(np.mean(accs))

    def initial_point(self, seed=0):
        rng = stream(seed, STREAM_INIT)
        b1 = 1.0 / np.sqrt(self.n_in)
        b2 = 1.0 / np.sqrt(self.n_hidden)
        y1 = rng.uniform(-b1, b1, size=(self.n_in, self.n_hidden))
        y2 = rng.uniform(-b2, b2, size=self.n_hidden * self.n_out)
        return np.zeros(self.dim_x), np.concatenate([y1.ravel(), y2])

    def describe(self):
        d = super().describe()
        d.update(n_in=self.n_in, hidden=self.n_hidden, activation=self.activation,
                 loss="logistic", tie_rule="sgn(0)=+1")
        return d


def mlp_gradients(problem: MLPHyperOpt, k, x, y, f_batch=None, g_batch=None):
    return problem.mlp_gradients(k, x, y, f_batch, g_batch)
