"""Command-line entry point ``hessrb``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .bench import (
    ConfigError,
    ExperimentConfig,
    build_model,
    build_sampler,
    desk_config,
    draw_training,
    run_experiment,
    seed_stream,
    spectrum_report,
    write_training_set,
)

log = logging.getLogger("hessrb")


def _config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = ExperimentConfig.from_file(args.config)
    else:
        cfg = desk_config(getattr(args, "problem", None) or "uniform", args.paper_scale)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    cfg.validate()
    return cfg


def _out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_spectrum(args) -> None:
    cfg = _config(args)
    problem = cfg.build_problem()
    path = _out(cfg) / "spectrum.csv"
    path.write_text(spectrum_report(problem, args.L, args.c, seed_stream(cfg.seed, "eigensolver")))
    print(path)


def _schemes(cfg, args):
    """``(index, scheme)`` pairs selected by ``--scheme`` (all by default)."""
    pairs = list(enumerate(cfg.schemes))
    if args.scheme is None:
        return pairs
    if not 0 <= args.scheme < len(pairs):
        raise ConfigError(f"--scheme {args.scheme} out of range (have {len(pairs)})")
    return [pairs[args.scheme]]


def cmd_sample(args) -> None:
    cfg = _config(args)
    problem = cfg.build_problem()
    out = _out(cfg)
    for i, scheme in _schemes(cfg, args):
        sampler = build_sampler(problem, scheme, cfg.seed)
        training = draw_training(problem, sampler, cfg.N_t, cfg.seed)
        path = out / f"training_{i}_{scheme.label}_L{scheme.L}.txt"
        write_training_set(path, training)
        print(path)


def cmd_build_rom(args) -> None:
    cfg = _config(args)
    problem = cfg.build_problem()
    out = _out(cfg)
    for i, scheme in _schemes(cfg, args):
        sampler = build_sampler(problem, scheme, cfg.seed)
        training = draw_training(problem, sampler, cfg.N_t, cfg.seed)
        model = build_model(problem, cfg, scheme, training)
        path = out / f"model_{i}_{scheme.label}_L{scheme.L}"
        model.save(path)
        print(path)


def cmd_evaluate(args) -> None:
    cfg = _config(args)
    run_experiment(cfg)
    print(Path(cfg.out) / "errors.csv")


def cmd_reproduce(args) -> None:
    cfg = desk_config(args.problem, args.paper_scale)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    out = _out(cfg)
    problem = cfg.build_problem()
    L = 20 if args.problem == "uniform" else 15
    if args.paper_scale and args.problem == "lognormal":
        L = 100
    (out / "spectrum.csv").write_text(
        spectrum_report(problem, L, 10, seed_stream(cfg.seed, "eigensolver"))
    )
    run_experiment(cfg)
    print(out / "spectrum.csv")
    print(out / "errors.csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hessrb", description="Hessian-based sampling for reduced-basis models."
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--paper-scale", action="store_true", help="full-size reference problems")
    common.add_argument("--out", default=None, help="output directory")
    cfg_opts = argparse.ArgumentParser(add_help=False, parents=[common])
    cfg_opts.add_argument("--config", help="key = value experiment file")
    cfg_opts.add_argument(
        "--problem", choices=("uniform", "lognormal"), help="default config when no --config"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", parents=[cfg_opts], help="dominant generalized eigenvalues")
    p.add_argument("-L", type=int, default=20)
    p.add_argument("-c", type=int, default=10)
    p.set_defaults(func=cmd_spectrum)

    for name, func, text in (
        ("sample", cmd_sample, "write training sets"),
        ("build-rom", cmd_build_rom, "build and save reduced models"),
    ):
        p = sub.add_parser(name, parents=[cfg_opts], help=text)
        p.add_argument("--scheme", type=int, default=None, help="index of one configured scheme")
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", parents=[cfg_opts], help="error-decay CSV for all schemes")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("reproduce", parents=[common], help="run a default study")
    p.add_argument("problem", choices=("uniform", "lognormal"))
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except (ConfigError, OSError) as exc:
        print(f"hessrb: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError) as exc:
        print(f"hessrb: failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
