"""Command-line entry point: ``pimvc <subcommand> [options]``.

Every option may also come from a ``--config`` file of ``key = value`` lines
(keys are the long option names with or without the leading dashes); options
given on the command line win.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import PimError
from .harness import ExperimentConfig, run

SUBCOMMANDS = {
    "poisson-convergence": "poisson_convergence",
    "eigen-convergence": "eigen_convergence",
    "compare-robin": "compare_robin",
    "solve": "single_solve",
}


def _sizes(text):
    return tuple(int(s) for s in text.replace(",", " ").split())


def _bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _c_b(text):
    return "auto" if str(text).strip() == "auto" else float(text)


# (flag, dest, type, help); the config file accepts the same names
OPTIONS = [
    ("--sizes", "sizes", _sizes, "comma-separated target sample counts, ascending"),
    ("--seed", "seed", int, "sampling and Lanczos seed"),
    ("--t-policy", "t_policy", str, "bandwidth policy: balance, fixed or density"),
    ("--t", "t", float, "bandwidth for --t-policy fixed"),
    ("--c-b", "c_b", _c_b, "constant in t = c_b h^(4/7), or 'auto'"),
    ("--c-d", "c_d", float, "constant in t = c_d h^2"),
    ("--beta", "beta", float, "Robin coefficient"),
    ("--m-eigs", "m_eigs", int, "number of eigenvalues"),
    ("--out", "out", str, "output directory"),
    ("--cloud", "cloud", str, "point cloud file for solve"),
    ("--cloud-format", "cloud_format", str, "xyzb or csv"),
    ("--f", "f", str, "source expression in x, y, z, r"),
    ("--g", "g", str, "boundary data expression"),
    ("--cg-tol", "cg_tol", float, "relative CG residual tolerance"),
    ("--eig-tol", "eig_tol", float, "relative eigen-residual tolerance"),
    ("--m-neighbors", "m_neighbors", int, "neighbours used for Voronoi weights"),
    ("--mass", "mass", str, "auto, consistent or lumped"),
    ("--certify", "certify", _bool, "run the SPD certificate on every stiffness block"),
    ("--dump-history", "dump_history", _bool, "write CG residual histories"),
    ("--dump-triplets", "dump_triplets", _bool, "write stiffness triplets"),
]
_BY_KEY = {}
for _flag, _dest, _type, _ in OPTIONS:
    _BY_KEY[_flag.lstrip("-")] = (_dest, _type)
    _BY_KEY[_dest] = (_dest, _type)


def read_config(path) -> dict:
    """Parse a ``key = value`` config file; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PimError(f"{path} line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-")
        if key not in _BY_KEY:
            raise PimError(f"{path} line {lineno}: unknown key {key!r}")
        dest, conv = _BY_KEY[key]
        try:
            values[dest] = conv(value)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise PimError(f"{path} line {lineno}: bad value for {key}: {exc}") from None
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pimvc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value file mirroring the options")
        for flag, dest, conv, text in OPTIONS:
            p.add_argument(flag, dest=dest, type=conv, default=None, help=text)
    return parser


def config_from_args(args) -> ExperimentConfig:
    values = read_config(args.config) if args.config else {}
    for _, dest, _, _ in OPTIONS:
        given = getattr(args, dest)
        if given is not None:
            values[dest] = given
    return ExperimentConfig(experiment=SUBCOMMANDS[args.command], **values)


def _summary(cfg, result):
    if cfg.experiment == "single_solve":
        _, report = result
        return [f"{k} = {v}" for k, v in report.items()]
    if cfg.experiment == "eigen_convergence":
        return [f"n={r.n} #{r.index} lambda={r.computed:.6g} exact={r.exact:.6g} "
                f"rel={r.rel_error:.3g} ({r.mass_used})" for r in result]
    lines = []
    for r in result:
        line = f"n={r.n} h={r.h:.4g} t={r.t:.4g} l2={r.l2_error:.4g} cg={r.cg_iters}"
        if r.robin_error == r.robin_error:
            line += f" robin={r.robin_error:.4g}"
        lines.append(line)
    return lines


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        result = run(cfg)
    except PimError as exc:
        print(f"pimvc: error: {exc}", file=sys.stderr)
        return 2
    for line in _summary(cfg, result):
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
