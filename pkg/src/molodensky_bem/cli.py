"""Command line interface: ``molodensky-bem <command> ...``."""

import argparse
import logging
import sys

from .config import ConfigError, RunConfig, load_config
from .driver import DriverError, run
from .experiments import eigenvalues, eoc_table, hessian_bench, rows_to_csv
from .mesh import build_cube_surface, build_icosphere, write_mesh

log = logging.getLogger("molodensky_bem")


def _int_list(text):
    """'0,1,2' or '0-3' -> list of ints."""
    text = text.strip()
    if "-" in text and "," not in text:
        lo, hi = (int(part) for part in text.split("-", 1))
        return list(range(lo, hi + 1))
    return [int(part) for part in text.split(",") if part.strip()]


def _config(args):
    config = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    return config


def cmd_gen_mesh(args):
    mesh = build_icosphere(args.level) if args.shape == "icosphere" else build_cube_surface(args.level)
    write_mesh(args.out, mesh)
    log.info("wrote %s mesh level %d (%d vertices, %d triangles) to %s", args.shape, args.level,
             mesh.n_vertices, mesh.n_triangles, args.out)


def cmd_run(args):
    config = _config(args)
    if args.restart_every is not None:
        config = config.with_updates(restart_every=args.restart_every)
    out = args.out or config.output
    for line in config.echo():
        log.info("config %s", line)
    try:
        report = run(config)
    except DriverError as exc:
        if exc.report is not None:
            exc.report.to_csv(out)
        raise
    report.to_csv(out)
    last = report.rows[-1]
    log.info("finished after %d iterations: mean radius %.6f, radius error %.3e", len(report.rows),
             last["radius_mean"], last["radius_err"])


def cmd_hessian_bench(args):
    config = _config(args)
    levels, degrees = _int_list(args.levels), _int_list(args.degrees)
    rows = hessian_bench(levels, degrees, config)
    echo = [f"levels={args.levels}", f"degrees={args.degrees}"] + config.echo()
    rows_to_csv(rows, ["p", "level", "dofs", "error"], echo, args.out)


def cmd_eoc_table(args):
    config = _config(args)
    rows = eoc_table(_int_list(args.levels), args.iterations, config)
    echo = [f"levels={args.levels}", f"iterations={args.iterations}", "q=(0,0,2)"] + config.echo()
    rows_to_csv(rows, ["iteration", "level", "dofs", "value", "exact", "error", "eoc", "eoc_dof"], echo, args.out)


def cmd_eigs(args):
    modes = None if args.modes is None or args.modes < 0 else args.modes
    rows = eigenvalues(args.level, modes, args.shape)
    rows_to_csv(rows, ["j", "lambda_j"], [f"shape={args.shape}", f"level={args.level}", f"modes={args.modes}"],
                args.out)


def build_parser():
    parser = argparse.ArgumentParser(prog="molodensky-bem", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-mesh", help="write an icosphere or cube mesh")
    p.add_argument("--shape", choices=("icosphere", "cube"), default="icosphere")
    p.add_argument("--level", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_mesh)

    p = sub.add_parser("run", help="recover the sphere by the smoothed iteration")
    p.add_argument("--config")
    p.add_argument("--restart-every", type=int)
    p.add_argument("--out", help="report CSV (default: the config's output)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("hessian-bench", help="FD Hessian error on the cube")
    p.add_argument("--config")
    p.add_argument("--levels", default="0-3")
    p.add_argument("--degrees", default="0,1,2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_hessian_bench)

    p = sub.add_parser("eoc-table", help="pointwise errors of the linearized solutions")
    p.add_argument("--config")
    p.add_argument("--levels", default="0-3")
    p.add_argument("--iterations", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eoc_table)

    p = sub.add_parser("eigs", help="Laplace-Beltrami eigenvalues")
    p.add_argument("--shape", choices=("icosphere", "cube"), default="icosphere")
    p.add_argument("--level", type=int, default=3)
    p.add_argument("--modes", type=int, help="truncation index M (default: full basis)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eigs)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except (ConfigError, DriverError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
