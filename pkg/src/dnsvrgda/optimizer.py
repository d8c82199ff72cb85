"""Decentralized normalized variance-reduced gradient descent ascent (D-NSVRGDA).

All K workers are simulated in one process.  Per-worker quantities are stored
stacked as ``(K, dim)`` arrays so that a gossip round is a single product with
the mixing matrix.  One call to :func:`run_iteration` performs, in order:

1. STORM estimators for the six gradient streams, each using one fresh batch
   evaluated at both the current and the previous iterate;
2. combination into the penalized descent directions u, v, w;
3. gradient tracking of u, v, w followed by a gossip round;
4. normalized (or raw, for the D-SVRGDA ablation) steps followed by a gossip round.

Setting ``normalized=False`` gives D-SVRGDA.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .noise import STREAM_BATCH, stream
from .problems.base import BilevelProblem
from .topology import MixingMatrix, mix

EPS_NORM = 1e-12

STEP_NAMES = {2: "estimators", 3: "combine", 4: "tracking", 5: "update"}


class NonFiniteStateError(FloatingPointError):
    def __init__(self, worker: int, step: int, iteration: int, quantity: str):
        self.worker, self.step, self.iteration, self.quantity = worker, step, iteration, quantity
        super().__init__(
            f"non-finite {quantity} on worker {worker} at step {step} "
            f"({STEP_NAMES.get(step, '?')}) of iteration {iteration}")


@dataclass
class HyperParams:
    eta_x: float = 1e-3
    eta_y: float = 1e-3
    eta_z: float = 1e-3
    gamma_x: float = 0.1
    gamma_y: float = 0.1
    gamma_z: float = 0.1
    delta: float = 0.3
    B0: int = 32
    B: int = 32
    T: int = 1000
    normalized: bool = True
    variance_reduced: bool = True
    shared_zeta: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        errs = []
        for name in ("eta_x", "eta_y", "eta_z"):
            if not getattr(self, name) > 0:
                errs.append(f"{name} must be > 0")
        for name in ("gamma_x", "gamma_y", "gamma_z"):
            if not 0 < getattr(self, name) <= 1:
                errs.append(f"{name} must lie in (0, 1]")
        if not self.delta > 0:
            errs.append("delta must be > 0")
        if not (isinstance(self.B, (int, np.integer)) and self.B >= 1):
            errs.append("B must be an integer >= 1")
        if not (isinstance(self.B0, (int, np.integer)) and self.B0 >= self.B):
            errs.append("B0 must be an integer >= B")
        if not (isinstance(self.T, (int, np.integer)) and self.T >= 1):
            errs.append("T must be an integer >= 1")
        if errs:
            raise ValueError("; ".join(errs))

    def effective_gammas(self) -> tuple[float, float, float]:
        if not self.variance_reduced:
            return 1.0, 1.0, 1.0
        return self.gamma_x, self.gamma_y, self.gamma_z

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TheoryConstants:
    s: float = 2.0
    sigma: float = 1.0
    L_f: float = 1.0
    L_g: float = 1.0
    ell_f: float = 1.0
    ell_g: float = 1.0
    C_f: float = 1.0
    mu: float = 1.0
    lam: float = 0.0
    c: float = 1.0

    def __post_init__(self):
        if not 1.0 < self.s <= 2.0:
            raise ValueError(f"tail index s must lie in (1, 2], got {self.s}")
        for f in fields(self):
            if f.name in ("s", "lam"):
                continue
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be > 0")
        if not 0.0 <= self.lam < 1.0:
            raise ValueError(f"lam must lie in [0, 1), got {self.lam}")
        if self.kappa < 1.0:
            raise ValueError(f"kappa = ell/mu must be >= 1, got {self.kappa}")

    @property
    def ell(self) -> float:
        return max(self.L_f, self.L_g, self.ell_f, self.ell_g)

    @property
    def kappa(self) -> float:
        return self.ell / self.mu


def theory_schedule(constants: TheoryConstants, K: int, T: int, B: int = 1) -> HyperParams:
    """Hyperparameters with the (K, T, sigma) scaling of the convergence rate analysis.

    Every hidden constant is the single scalar ``constants.c``.
    """
    if K < 1 or T < 1:
        raise ValueError("need K >= 1 and T >= 1")
    s, sig, c = constants.s, constants.sigma, constants.c
    ell, kap, mu = constants.ell, constants.kappa, constants.mu
    q = 2 * s + 1
    gamma = min(1.0, c * K ** (1 / q) * T ** (-2 * s / q) * sig ** (-3 * s / (q * (s - 1))))
    eta_x = (c * (1 - constants.lam) / (kap ** 5 * ell) * K ** (1 / q) * T ** (-2 * s / q)
             * sig ** (-(4 - s) / (2 * q * (s - 1))))
    delta = c / (kap ** 3 * ell) * K ** (-(s - 1) / q) * T ** (-(s - 1) / q)
    eta_y = eta_x * 4 * (delta * constants.L_f + constants.L_g) / mu
    eta_z = eta_x * 4 * constants.L_g / mu
    B0 = math.ceil(c * K ** (2 * s / q) * T ** (2 * s / q) * sig ** (s * (4 * s - 1) / (q * (s - 1) ** 2)))
    return HyperParams(eta_x=eta_x, eta_y=eta_y, eta_z=eta_z, gamma_x=gamma, gamma_y=gamma,
                       gamma_z=gamma, delta=delta, B0=max(B0, B), B=B, T=T)


def dominant_rate(constants: TheoryConstants, K: int, T: int) -> tuple[float, float]:
    """Value of the dominant rate term kappa^4 ell sigma^((2s-2)/(2s+1)) / (KT)^((s-1)/(2s+1))
    and its exponent on 1/T."""
    s = constants.s
    expo = (s - 1) / (2 * s + 1)
    val = constants.kappa ** 4 * constants.ell * constants.sigma ** ((2 * s - 2) / (2 * s + 1)) / (K * T) ** expo
    return val, expo


# --------------------------------------------------------------------------- per-step operations

def storm_update(prev_est, grad_curr, grad_prev, gamma: float, is_first: bool):
    if is_first:
        return np.array(grad_curr, dtype=float, copy=True)
    prev_est = np.asarray(prev_est)
    if np.shape(prev_est) != np.shape(grad_curr) or np.shape(grad_prev) != np.shape(grad_curr):
        raise ValueError("storm_update: dimension mismatch")
    return (1.0 - gamma) * (prev_est - grad_prev) + grad_curr


def combine(u1, u2, u3, v1, v2, w1, delta: float):
    if not delta > 0:
        raise ValueError("delta must be > 0")
    inv = 1.0 / delta
    return u1 + inv * (u2 - u3), v1 + inv * v2, inv * w1


def track_and_mix(tracker_prev, est_prev, est_curr, matrix: MixingMatrix, is_first: bool):
    """Gradient-tracking recursion followed by one gossip round.  Returns (pre_mix, mixed)."""
    if is_first:
        pre = np.array(est_curr, dtype=float, copy=True)
    else:
        if np.shape(tracker_prev) != np.shape(est_curr) or np.shape(est_prev) != np.shape(est_curr):
            raise ValueError("track_and_mix: dimension mismatch")
        pre = (tracker_prev - est_prev) + est_curr
    return pre, mix(pre, matrix)


def normalized_step_and_mix(var, tracker, eta: float, matrix: MixingMatrix, normalized: bool = True):
    """Per-worker step against ``tracker`` then gossip.  Returns (mixed, displacement).

    Normalized steps have length exactly ``eta``; trackers with norm <= EPS_NORM
    leave the worker in place.
    """
    var = np.asarray(var, dtype=float)
    tracker = np.asarray(tracker, dtype=float)
    if normalized:
        norms = np.linalg.norm(tracker, axis=-1, keepdims=True)
        safe = np.where(norms > EPS_NORM, norms, 1.0)
        disp = np.where(norms > EPS_NORM, -eta * tracker / safe, 0.0)
    else:
        disp = -eta * tracker
    return mix(var + disp, matrix), disp


# --------------------------------------------------------------------------- worker state

@dataclass
class WorkerState:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    u3: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    w1: np.ndarray
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    p: np.ndarray
    q: np.ndarray
    r: np.ndarray
    prev_x: np.ndarray
    prev_y: np.ndarray
    prev_z: np.ndarray


_STACKED = [f.name for f in fields(WorkerState)]


@dataclass
class SwarmState:
    """Stacked state of all workers; row k of every array belongs to worker k."""
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    rngs: list = field(repr=False)
    t: int = 0
    u1: np.ndarray | None = None
    u2: np.ndarray | None = None
    u3: np.ndarray | None = None
    v1: np.ndarray | None = None
    v2: np.ndarray | None = None
    w1: np.ndarray | None = None
    u: np.ndarray | None = None
    v: np.ndarray | None = None
    w: np.ndarray | None = None
    p: np.ndarray | None = None
    q: np.ndarray | None = None
    r: np.ndarray | None = None
    prev_x: np.ndarray | None = None
    prev_y: np.ndarray | None = None
    prev_z: np.ndarray | None = None

    @property
    def K(self) -> int:
        return self.x.shape[0]

    def worker(self, k: int) -> WorkerState:
        def row(a):
            return None if a is None else a[k].copy()
        return WorkerState(**{name: row(getattr(self, name)) for name in _STACKED})

    def arrays(self) -> dict:
        return {name: getattr(self, name) for name in _STACKED}


@dataclass
class IterationInfo:
    t: int
    tracker_norms: np.ndarray   # (K, 3): |p|, |q|, |r| per worker
    step_norms: np.ndarray      # (K, 3): pre-mix displacement lengths for x, y, z


def worker_rngs(seed: int, K: int, clone_streams: bool = False):
    """Three batch streams per worker: xi (upper samples), zeta and zeta' (lower samples)."""
    return [tuple(stream(seed, STREAM_BATCH, 0 if clone_streams else k, fam) for fam in range(3))
            for k in range(K)]


def init(problem: BilevelProblem, hp: HyperParams, seed: int = 0, x0=None, y0=None,
         clone_streams: bool = False) -> SwarmState:
    """Identical start on every worker, with z0 = y0."""
    K = problem.K
    for k in range(K):
        for fam in ("f", "g"):
            n = problem.shard_size(k, fam)
            if hp.B0 > n:
                raise ValueError(f"B0={hp.B0} exceeds worker {k}'s {fam}-shard of {n} samples")
    px, py = problem.initial_point(seed)
    x0 = px if x0 is None else np.asarray(x0, dtype=float)
    y0 = py if y0 is None else np.asarray(y0, dtype=float)
    return SwarmState(
        x=np.tile(x0, (K, 1)), y=np.tile(y0, (K, 1)), z=np.tile(y0, (K, 1)),
        rngs=worker_rngs(seed, K, clone_streams))


def _check_finite(arrs, step: int, t: int):
    for name, a in arrs.items():
        bad = ~np.all(np.isfinite(a), axis=1)
        if bad.any():
            raise NonFiniteStateError(int(np.flatnonzero(bad)[0]), step, t, name)


def _draw_batches(state: SwarmState, problem: BilevelProblem, hp: HyperParams):
    """One fresh batch per worker and stream family: xi (upper), zeta and zeta' (lower)."""
    size = hp.B0 if state.t == 0 else hp.B
    out = []
    for k in range(state.K):
        r_xi, r_zeta, r_zeta2 = state.rngs[k]
        xi = problem.draw_batch(k, "f", size, r_xi)
        zeta = problem.draw_batch(k, "g", size, r_zeta)
        zeta2 = zeta if hp.shared_zeta else problem.draw_batch(k, "g", size, r_zeta2)
        out.append((xi, zeta, zeta2))
    return out


def _estimators(state: SwarmState, problem: BilevelProblem, hp: HyperParams, batches, ks):
    """STORM estimators (u1, u2, u3, v1, v2, w1) for the workers in ``ks``."""
    first = state.t == 0
    gx, gy, gz = hp.effective_gammas()
    n = len(ks)
    xi = [batches[k][0] for k in ks]
    zeta = [batches[k][1] for k in ks]
    zeta2 = [batches[k][2] for k in ks]
    x, y, z = state.x[ks], state.y[ks], state.z[ks]
    need_f_prev = not first and (gx < 1.0 or gy < 1.0)
    need_g_prev = not first and (gx < 1.0 or gy < 1.0 or gz < 1.0)

    # the previous iterate is evaluated on the same batch as the current one
    if need_f_prev:
        F1, F2 = problem.grad_many("f", ks + ks, np.concatenate([x, state.prev_x[ks]]),
                                   np.concatenate([y, state.prev_y[ks]]), xi + xi)
    else:
        F1, F2 = problem.grad_many("f", ks, x, y, xi)
    if need_g_prev:
        px, py, pz = state.prev_x[ks], state.prev_y[ks], state.prev_z[ks]
        G1, G2 = problem.grad_many("g", ks * 4, np.concatenate([x, x, px, px]),
                                   np.concatenate([y, z, py, pz]), zeta + zeta2 + zeta + zeta2)
    else:
        G1, G2 = problem.grad_many("g", ks * 2, np.concatenate([x, x]), np.concatenate([y, z]),
                                   zeta + zeta2)

    cur = {"u1": F1[:n], "v1": F2[:n], "u2": G1[:n], "v2": G2[:n], "u3": G1[n:2 * n], "w1": G2[n:2 * n]}
    gammas = {"u1": gx, "u2": gx, "u3": gx, "v1": gy, "v2": gy, "w1": gz}
    if first:
        return tuple(storm_update(None, cur[name], None, gammas[name], True)
                     for name in ("u1", "u2", "u3", "v1", "v2", "w1"))
    prev = {}
    if need_f_prev:
        prev["u1"], prev["v1"] = F1[n:], F2[n:]
    if need_g_prev:
        prev.update(u2=G1[2 * n:3 * n], v2=G2[2 * n:3 * n], u3=G1[3 * n:], w1=G2[3 * n:])
    out = []
    for name in ("u1", "u2", "u3", "v1", "v2", "w1"):
        if gammas[name] == 1.0:
            out.append(storm_update(None, cur[name], None, 1.0, True))
        else:
            out.append(storm_update(getattr(state, name)[ks], cur[name], prev[name], gammas[name], False))
    return tuple(out)


def run_iteration(state: SwarmState, problem: BilevelProblem, matrix: MixingMatrix,
                  hp: HyperParams, executor=None, vectorized: bool = True) -> IterationInfo:
    """Advance every worker by one iteration in place.

    With ``vectorized`` the step-2 gradients of all workers are evaluated in
    one stacked oracle call; otherwise worker by worker, optionally mapped over
    ``executor`` (e.g. a ThreadPoolExecutor).  Results do not depend on either.
    """
    t = state.t
    K = state.K
    first = t == 0

    # step 2
    batches = _draw_batches(state, problem, hp)
    if vectorized and executor is None:
        u1, u2, u3, v1, v2, w1 = _estimators(state, problem, hp, batches, list(range(K)))
    else:
        def one(k):
            return _estimators(state, problem, hp, batches, [k])
        per_worker = list(map(one, range(K)) if executor is None else executor.map(one, range(K)))
        u1, u2, u3, v1, v2, w1 = (np.concatenate(col) for col in zip(*per_worker))
    _check_finite({"u1": u1, "u2": u2, "u3": u3, "v1": v1, "v2": v2, "w1": w1}, 2, t)

    # step 3
    u, v, w = combine(u1, u2, u3, v1, v2, w1, hp.delta)
    _check_finite({"u": u, "v": v, "w": w}, 3, t)

    # step 4
    _, p = track_and_mix(state.p, state.u, u, matrix, first)
    _, q = track_and_mix(state.q, state.v, v, matrix, first)
    _, r = track_and_mix(state.r, state.w, w, matrix, first)
    _check_finite({"p": p, "q": q, "r": r}, 4, t)

    # step 5
    x_new, dx = normalized_step_and_mix(state.x, p, hp.eta_x, matrix, hp.normalized)
    y_new, dy = normalized_step_and_mix(state.y, q, hp.eta_y, matrix, hp.normalized)
    z_new, dz = normalized_step_and_mix(state.z, r, hp.eta_z, matrix, hp.normalized)
    _check_finite({"x": x_new, "y": y_new, "z": z_new}, 5, t)

    info = IterationInfo(
        t=t,
        tracker_norms=np.stack([np.linalg.norm(a, axis=1) for a in (p, q, r)], axis=1),
        step_norms=np.stack([np.linalg.norm(a, axis=1) for a in (dx, dy, dz)], axis=1))

    state.u1, state.u2, state.u3, state.v1, state.v2, state.w1 = u1, u2, u3, v1, v2, w1
    state.u, state.v, state.w = u, v, w
    state.p, state.q, state.r = p, q, r
    state.prev_x, state.prev_y, state.prev_z = state.x, state.y, state.z
    state.x, state.y, state.z = x_new, y_new, z_new
    state.t = t + 1
    return info


def with_ablation(hp: HyperParams, normalized: bool) -> HyperParams:
    return replace(hp, normalized=normalized)


@dataclass
class RunResult:
    records: list
    state: SwarmState
    diverged: NonFiniteStateError | None = None


def run(problem: BilevelProblem, matrix: MixingMatrix, hp: HyperParams, seed: int = 0,
        diag_every: int = 10, sink=None, clone_streams: bool = False, executor=None,
        vectorized: bool = True, on_iteration=None, state: SwarmState | None = None) -> RunResult:
    """Run ``hp.T`` iterations, recording diagnostics every ``diag_every`` and at the end.

    A non-finite state stops the run; the error is returned in ``RunResult.diverged``
    together with the records gathered so far.
    """
    from .diagnostics import collect, emit

    if diag_every < 1:
        raise ValueError("diag_every must be >= 1")
    if state is None:
        state = init(problem, hp, seed, clone_streams=clone_streams)
    records = []
    for t in range(state.t, hp.T):
        try:
            # overflow is expected on the way to divergence; non-finite values are checked explicitly
            with np.errstate(over="ignore", invalid="ignore"):
                info = run_iteration(state, problem, matrix, hp, executor, vectorized)
        except NonFiniteStateError as err:
            return RunResult(records, state, err)
        if on_iteration is not None:
            on_iteration(state, info)
        if t % diag_every == 0 or t == hp.T - 1:
            rec = collect(state, problem, hp.delta)
            records.append(rec)
            if sink is not None:
                emit(rec, sink)
    return RunResult(records, state)
