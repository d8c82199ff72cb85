"""Command-line entry point: ``dnsvrgda {run,gen-data,schedule,plot}``.

Exit codes: 0 success, 1 invalid input (config, arguments, CSV schema),
2 runtime failure (I/O, diverged run).
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, load_config
from .diagnostics import SchemaError

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _bundled(name: str) -> Path:
    return Path(__file__).parent / "configs" / f"{name}.cfg"


def _resolve_config_path(arg: str) -> Path:
    p = Path(arg)
    if not p.exists() and _bundled(arg).exists():
        return _bundled(arg)
    return p


def _load(args):
    cfg = load_config(_resolve_config_path(args.config))
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed, seeds=1)
    return cfg


def cmd_run(args) -> int:
    from .experiment import run_experiment
    cfg = _load(args)
    outcomes = run_experiment(cfg, out=args.out, cache_dir=args.data_cache)
    out = Path(args.out or cfg.output)
    print(f"wrote {len(outcomes)} run(s) and {out / 'summary.json'}")
    diverged = [o for o in outcomes if o.diverged]
    for o in diverged:
        print(f"error: run seed={o.seed} variant={o.variant} diverged: {o.diverged}", file=sys.stderr)
    return EXIT_RUNTIME if diverged else EXIT_OK


def cmd_gen_data(args) -> int:
    from .datasets import generate_cached
    from .experiment import data_seed, generator_params, load_libsvm
    cfg = _load(args)
    cache = Path(args.data_cache or Path(args.out or cfg.output) / "data")
    src = cfg.dataset.get("source")
    if src in ("syn1", "syn2"):
        for seed in cfg.seed_list():
            for alpha in cfg.dataset["alpha"]:
                splits, hit = generate_cached(src, generator_params(cfg, alpha), data_seed(cfg, seed), cache)
                shapes = " ".join(f"{d.n}x{d.feature_dim}" for d in splits)
                print(f"{src} alpha={alpha:g} seed={data_seed(cfg, seed)}: {shapes} "
                      f"({'cache hit' if hit else 'generated'}) in {cache}")
    elif src == "libsvm":
        for seed in cfg.seed_list():
            ds = load_libsvm(cfg, data_seed(cfg, seed))
            print(f"libsvm {cfg.dataset['path']}: {ds.n} samples x {ds.feature_dim} features "
                  f"({'sparse' if ds.is_sparse else 'dense'})")
    else:
        print(f"error: dataset.source = {src!r} has nothing to generate", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def cmd_schedule(args) -> int:
    from .optimizer import TheoryConstants, dominant_rate, theory_schedule
    if args.config:
        cfg = _load(args)
        if cfg.schedule is None:
            raise ConfigError(["schedule: the config has no [schedule] section"])
        consts, T, B, K = cfg.schedule, cfg.schedule_T, cfg.schedule_B, cfg.K
        from .experiment import build_graph
        consts = replace(consts, lam=build_graph(cfg).lam)
    else:
        try:
            consts = TheoryConstants(s=args.s, sigma=args.sigma, L_f=args.L_f, L_g=args.L_g,
                                     ell_f=args.ell_f, ell_g=args.ell_g, mu=args.mu,
                                     lam=args.lam, c=args.c)
        except ValueError as e:
            raise ConfigError([f"schedule: {e}"]) from None
        T, B, K = args.T, args.B, args.K
    if K < 1 or T < 1:
        raise ConfigError(["schedule: K and T must be >= 1"])
    hp = theory_schedule(consts, K, T, B)
    val, expo = dominant_rate(consts, K, T)
    rows = [("s", consts.s), ("K", K), ("T", T), ("lambda", consts.lam),
            ("gamma", hp.gamma_x), ("eta_x", hp.eta_x), ("eta_y", hp.eta_y), ("eta_z", hp.eta_z),
            ("B0", hp.B0), ("B", hp.B), ("delta", hp.delta),
            ("rate_value", val), ("rate_exponent_T", expo)]
    for k, v in rows:
        print(f"{k:<16}{v:.10g}" if isinstance(v, float) else f"{k:<16}{v}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import plot_runs
    written = plot_runs([Path(p) for p in args.csv], Path(args.out or "plots"), labels=args.labels)
    for p in written:
        print(f"wrote {p}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """Usage errors are invalid input, so they exit with code 1 rather than argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dnsvrgda", description="Decentralized bilevel optimization simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="config file, or the name of a bundled config")
        p.add_argument("--seed", type=int, help="run this single seed instead of the config's seed list")
        p.add_argument("--out", help="output directory (overrides experiment.output)")
        p.add_argument("--data-cache", help="directory for generated dataset caches")

    p = sub.add_parser("run", help="run the configured experiment")
    common(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("gen-data", help="generate and cache the configured datasets")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("schedule", help="print the theory-shaped hyperparameters")
    common(p, config_required=False)
    for name, default in (("s", 2.0), ("sigma", 1.0), ("L-f", 1.0), ("L-g", 1.0), ("ell-f", 1.0),
                          ("ell-g", 1.0), ("mu", 1.0), ("lam", 0.0), ("c", 1.0)):
        p.add_argument(f"--{name}", type=float, default=default, dest=name.replace("-", "_"))
    p.add_argument("-K", type=int, default=1)
    p.add_argument("-T", type=int, default=1000)
    p.add_argument("-B", type=int, default=1)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("plot", help="SVG charts from schema-v1 CSV logs")
    p.add_argument("csv", nargs="+")
    p.add_argument("--out", help="output directory (default ./plots)")
    p.add_argument("--labels", nargs="+", help="curve labels, one per CSV")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (SchemaError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
