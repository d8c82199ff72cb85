"""Experiment configuration files.

Grammar: an INI file (Python ``configparser``, ``#`` and ``;`` comments,
``key = value`` pairs) with these sections.

``[experiment]``   name, seeds (count), master_seed, output, diag_every,
                   variants (comma list of ``normalized`` / ``unnormalized``)
``[problem]``      kind = mlp | quadratic; mlp: hidden, activation;
                   quadratic: dim_x, dim_y, coupling, spread, n_samples, identical,
                   shared_curvature
``[dataset]``      source = syn1 | syn2 | libsvm | none; generators: n, d, alpha
                   (comma list allowed), common_frac; libsvm: path, feature_dim,
                   subsample, label_map (``0:-1, 2:1``); ratios; seed (``run`` or int)
``[topology]``     kind, K, adjacency (file, custom graphs only)
``[hyperparams]``  eta or eta_x/eta_y/eta_z, momentum + momentum_convention
                   (``one_minus_gamma``: gamma = 1 - momentum, or ``gamma``) or
                   gamma_x/gamma_y/gamma_z, delta, B, B0, T, normalized,
                   variance_reduced, shared_zeta
``[schedule]``     s, sigma, L_f, L_g, ell_f, ell_g, C_f, mu, c, T, B; step sizes
                   come from the theory schedule (lam is measured from the graph)
``[noise]``        kind, scale, pareto_shape (quadratic problem only)

Relative file paths (dataset.path, topology.adjacency) are resolved against the
current working directory.  Exactly one of ``[hyperparams]`` and ``[schedule]``
must be present.  Every
problem found is reported at once as ``section.key: message``.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

from .noise import NOISE_KINDS, NoiseSpec
from .optimizer import HyperParams, TheoryConstants, theory_schedule
from .topology import KINDS as TOPOLOGY_KINDS

VARIANTS = ("normalized", "unnormalized")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass
class ExperimentConfig:
    name: str
    seeds: int = 1
    master_seed: int = 0
    output: str = "runs"
    diag_every: int = 10
    variants: tuple[str, ...] = ("normalized",)
    problem: dict = field(default_factory=dict)
    dataset: dict = field(default_factory=dict)
    topology: dict = field(default_factory=dict)
    hyperparams: HyperParams | None = None
    schedule: TheoryConstants | None = None
    schedule_T: int | None = None
    schedule_B: int = 1
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    source_text: str = ""

    @property
    def K(self) -> int:
        return self.topology["K"]

    def seed_list(self) -> list[int]:
        return [self.master_seed + i for i in range(self.seeds)]

    def resolve_hyperparams(self, lam: float) -> HyperParams:
        """Explicit hyperparameters, or the theory schedule at the graph's measured lambda."""
        if self.hyperparams is not None:
            return self.hyperparams
        consts = replace(self.schedule, lam=lam)
        return theory_schedule(consts, self.K, self.schedule_T, self.schedule_B)


class _Reader:
    """Typed access to one section that records errors instead of raising."""

    def __init__(self, cp: configparser.ConfigParser, section: str, errors: list[str]):
        self.sec = cp[section] if cp.has_section(section) else {}
        self.name = section
        self.errors = errors
        self.used: set[str] = set()

    def _err(self, key, msg):
        self.errors.append(f"{self.name}.{key}: {msg}")

    def raw(self, key, default=None):
        self.used.add(key)
        return self.sec.get(key, default)

    def has(self, key):
        return key in self.sec

    def get(self, key, conv, default=None, required=False, check=None, what=""):
        v = self.raw(key)
        if v is None:
            if required:
                self._err(key, "required")
            return default
        try:
            out = conv(v.strip())
        except (ValueError, TypeError):
            self._err(key, f"cannot parse {v!r} as {what or conv.__name__}")
            return default
        if check is not None and not check(out):
            self._err(key, f"{v!r} is out of range{': ' + what if what else ''}")
            return default
        return out

    def flag(self, key, default):
        v = self.raw(key)
        if v is None:
            return default
        low = v.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        self._err(key, f"expected a boolean, got {v!r}")
        return default

    def unknown(self):
        for key in self.sec:
            if key not in self.used:
                self._err(key, "unknown key")


def _int(s: str) -> int:
    f = float(s)
    if f != int(f):
        raise ValueError
    return int(f)


def _floats(s: str) -> list[float]:
    return [float(t) for t in s.split(",") if t.strip()]


def _label_map(s: str) -> dict:
    out = {}
    for item in s.split(","):
        if not item.strip():
            continue
        k, v = item.split(":")
        out[float(k)] = float(v)
    return out


def parse_config(text: str, base_dir: str | Path | None = None, check_files: bool = True) -> ExperimentConfig:
    errors: list[str] = []
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError([f"syntax: {e}"]) from None
    base = Path.cwd() if base_dir is None else Path(base_dir)
    known = {"experiment", "problem", "dataset", "topology", "hyperparams", "schedule", "noise"}
    for s in cp.sections():
        if s not in known:
            errors.append(f"{s}: unknown section")

    ex = _Reader(cp, "experiment", errors)
    if not cp.has_section("experiment"):
        errors.append("experiment: section required")
    name = ex.get("name", str, "experiment")
    seeds = ex.get("seeds", _int, 1, check=lambda v: v >= 1, what="count >= 1")
    master = ex.get("master_seed", _int, 0, check=lambda v: v >= 0, what="seed >= 0")
    output = ex.get("output", str, f"runs/{name}")
    diag = ex.get("diag_every", _int, 10, check=lambda v: v >= 1, what=">= 1")
    variants = tuple(v.strip() for v in ex.get("variants", str, "normalized").split(",") if v.strip())
    if not variants or any(v not in VARIANTS for v in variants):
        errors.append(f"experiment.variants: each entry must be one of {VARIANTS}, got {variants}")
    ex.unknown()

    # problem
    pr = _Reader(cp, "problem", errors)
    kind = pr.get("kind", str, "mlp")
    problem: dict = {"kind": kind}
    if kind == "mlp":
        problem["hidden"] = pr.get("hidden", _int, 20, check=lambda v: v >= 1, what=">= 1")
        problem["activation"] = pr.get("activation", str, "tanh",
                                       check=lambda v: v in ("tanh", "softplus"), what="tanh or softplus")
    elif kind == "quadratic":
        problem["dim_x"] = pr.get("dim_x", _int, 5, check=lambda v: v >= 1, what=">= 1")
        problem["dim_y"] = pr.get("dim_y", _int, 5, check=lambda v: v >= 1, what=">= 1")
        problem["coupling"] = pr.get("coupling", float, 0.5)
        problem["spread"] = pr.get("spread", float, 1.0, check=lambda v: v >= 0, what=">= 0")
        problem["n_samples"] = pr.get("n_samples", _int, 1, check=lambda v: v >= 1, what=">= 1")
        problem["identical"] = pr.flag("identical", False)
        problem["shared_curvature"] = pr.flag("shared_curvature", False)
    else:
        errors.append(f"problem.kind: expected mlp or quadratic, got {kind!r}")
    pr.unknown()

    # dataset
    ds = _Reader(cp, "dataset", errors)
    source = ds.get("source", str, "none" if kind == "quadratic" else "syn1")
    dataset: dict = {"source": source}
    seed_raw = ds.raw("seed", "run").strip()
    if seed_raw == "run":
        dataset["seed"] = "run"
    else:
        try:
            dataset["seed"] = _int(seed_raw)
        except ValueError:
            errors.append(f"dataset.seed: expected 'run' or an integer, got {seed_raw!r}")
    if source in ("syn1", "syn2"):
        dataset["n"] = ds.get("n", _int, 10000, check=lambda v: v >= 3, what=">= 3")
        dataset["d"] = ds.get("d", _int, 100, check=lambda v: v >= 1, what=">= 1")
        alphas = ds.get("alpha", _floats, [0.1], check=lambda v: v and all(a >= 0 for a in v),
                        what="nonnegative list")
        dataset["alpha"] = alphas
        if source == "syn2":
            dataset["common_frac"] = ds.get("common_frac", float, 0.1,
                                            check=lambda v: 0 <= v <= 1, what="[0, 1]")
    elif source == "libsvm":
        path = ds.get("path", str, required=True)
        if path is not None:
            p = Path(path) if Path(path).is_absolute() else base / path
            if check_files and not p.exists():
                errors.append(f"dataset.path: file not found: {p}")
            dataset["path"] = str(p.resolve())
        dataset["feature_dim"] = ds.get("feature_dim", _int, None, check=lambda v: v >= 1, what=">= 1")
        dataset["subsample"] = ds.get("subsample", _int, None, check=lambda v: v >= 3, what=">= 3")
        dataset["label_map"] = ds.get("label_map", _label_map, None, what="list of from:to pairs")
    elif source == "none":
        if kind == "mlp":
            errors.append("dataset.source: the mlp problem needs a dataset")
    else:
        errors.append(f"dataset.source: expected syn1, syn2, libsvm or none, got {source!r}")
    dataset["ratios"] = ds.get("ratios", _floats, [0.6, 0.2, 0.2],
                               check=lambda v: len(v) == 3 and min(v) > 0 and abs(sum(v) - 1) < 1e-9,
                               what="three positive numbers summing to 1")
    ds.unknown()

    # topology
    tp = _Reader(cp, "topology", errors)
    tkind = tp.get("kind", str, "line", check=lambda v: v in TOPOLOGY_KINDS, what=f"one of {TOPOLOGY_KINDS}")
    K = tp.get("K", _int, 8, check=lambda v: v >= 1, what=">= 1")
    topology = {"kind": tkind, "K": K}
    adj = tp.get("adjacency", str, None)
    if tkind == "custom":
        if adj is None:
            errors.append("topology.adjacency: required for a custom topology")
        else:
            p = Path(adj) if Path(adj).is_absolute() else base / adj
            if check_files and not p.exists():
                errors.append(f"topology.adjacency: file not found: {p}")
            topology["adjacency"] = str(p.resolve())
    elif adj is not None:
        errors.append("topology.adjacency: only valid with kind = custom")
    if tkind == "ring" and K is not None and K < 3:
        errors.append("topology.K: a ring needs K >= 3")
    tp.unknown()

    # step sizes: exactly one source
    has_hp, has_sch = cp.has_section("hyperparams"), cp.has_section("schedule")
    hp = sched = None
    sched_T, sched_B = None, 1
    if has_hp and has_sch:
        errors.append("hyperparams: give either [hyperparams] or [schedule], not both")
    elif not has_hp and not has_sch:
        errors.append("hyperparams: one of [hyperparams] or [schedule] is required")
    elif has_hp:
        hp = _read_hyperparams(_Reader(cp, "hyperparams", errors), errors)
    else:
        sc = _Reader(cp, "schedule", errors)
        vals = {}
        for key in ("s", "sigma", "L_f", "L_g", "ell_f", "ell_g", "C_f", "mu", "c"):
            v = sc.get(key, float, None)
            if v is not None:
                vals[key] = v
        sched_T = sc.get("T", _int, None, required=True, check=lambda v: v >= 1, what=">= 1")
        sched_B = sc.get("B", _int, 1, check=lambda v: v >= 1, what=">= 1")
        sc.unknown()
        try:
            sched = TheoryConstants(**vals)
        except ValueError as e:
            errors.append(f"schedule: {e}")

    # noise
    nz = _Reader(cp, "noise", errors)
    nkind = nz.get("kind", str, "none", check=lambda v: v in NOISE_KINDS, what=f"one of {NOISE_KINDS}")
    noise = NoiseSpec()
    try:
        noise = NoiseSpec(kind=nkind or "none", scale=nz.get("scale", float, 1.0),
                          pareto_shape=nz.get("pareto_shape", float, 1.5))
    except ValueError as e:
        errors.append(f"noise: {e}")
    nz.unknown()
    if nkind not in (None, "none") and kind == "mlp":
        errors.append("noise.kind: injected noise applies to the quadratic problem only")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(name=name, seeds=seeds, master_seed=master, output=output,
                            diag_every=diag, variants=variants, problem=problem, dataset=dataset,
                            topology=topology, hyperparams=hp, schedule=sched, schedule_T=sched_T,
                            schedule_B=sched_B, noise=noise, source_text=text)


def _read_hyperparams(h: _Reader, errors: list[str]) -> HyperParams | None:
    pos = dict(check=lambda v: v > 0, what="> 0")
    kw = {}
    eta = h.get("eta", float, None, **pos)
    for axis in "xyz":
        v = h.get(f"eta_{axis}", float, None, **pos)
        kw[f"eta_{axis}"] = v if v is not None else (eta if eta is not None else 1e-3)
    conv = h.get("momentum_convention", str, "one_minus_gamma",
                 check=lambda v: v in ("one_minus_gamma", "gamma"), what="one_minus_gamma or gamma")
    mom = h.get("momentum", float, None, check=lambda v: 0 <= v < 1 if conv == "one_minus_gamma" else 0 < v <= 1,
                what="a momentum coefficient valid for the chosen convention")
    base_gamma = 0.1 if mom is None else (1.0 - mom if conv == "one_minus_gamma" else mom)
    for axis in "xyz":
        v = h.get(f"gamma_{axis}", float, None, check=lambda v: 0 < v <= 1, what="(0, 1]")
        if v is not None and mom is not None:
            errors.append(f"hyperparams.gamma_{axis}: give momentum or per-variable gammas, not both")
        kw[f"gamma_{axis}"] = base_gamma if v is None else v
    kw["delta"] = h.get("delta", float, 0.3, **pos)
    kw["B"] = h.get("B", _int, 32, check=lambda v: v >= 1, what=">= 1")
    kw["B0"] = h.get("B0", _int, kw["B"], check=lambda v: v >= 1, what=">= 1")
    kw["T"] = h.get("T", _int, 1000, check=lambda v: v >= 1, what=">= 1")
    kw["normalized"] = h.flag("normalized", True)
    kw["variance_reduced"] = h.flag("variance_reduced", True)
    kw["shared_zeta"] = h.flag("shared_zeta", False)
    h.unknown()
    if kw["B0"] < kw["B"]:
        errors.append("hyperparams.B0: must be >= B")
        return None
    try:
        return HyperParams(**kw)
    except ValueError as e:
        errors.append(f"hyperparams: {e}")
        return None


def load_config(path: str | Path, check_files: bool = True) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError([f"config: cannot read {path}: {e.strerror or e}"]) from None
    return parse_config(text, check_files=check_files)


def resolved_text(cfg: ExperimentConfig, seed: int, variant: str, hp: HyperParams) -> str:
    """A self-contained single-seed, single-variant config that reproduces one run."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["experiment"] = {"name": cfg.name, "seeds": "1", "master_seed": str(seed),
                        "output": cfg.output, "diag_every": str(cfg.diag_every), "variants": variant}
    cp["problem"] = {k: _ini(v) for k, v in cfg.problem.items()}
    cp["dataset"] = {k: _ini(v) for k, v in cfg.dataset.items() if v is not None}
    cp["topology"] = {k: _ini(v) for k, v in cfg.topology.items()}
    hpd = hp.as_dict()
    hpd["normalized"] = variant == "normalized"
    cp["hyperparams"] = {k: _ini(v) for k, v in hpd.items()}
    cp["noise"] = {"kind": cfg.noise.kind, "scale": repr(cfg.noise.scale),
                   "pareto_shape": repr(cfg.noise.pareto_shape)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _ini(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ", ".join(_ini(x) for x in v)
    if isinstance(v, dict):
        return ", ".join(f"{_ini(k)}:{_ini(x)}" for k, x in v.items())
    return str(v)
