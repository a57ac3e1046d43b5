"""Command-line interface.

Subcommands: run, convergence, stability, identities, gronwall.  Flags
override config-file keys, which override defaults.  Exit codes follow the
harness contract: 0 pass, 1 threshold failure, 2 blow-up, 3 usage error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import diagnostics, harness


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors, which collides with the
    # blow-up exit code; remap to the documented usage status
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(harness.EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="fmhd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", help="path to a key-value config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key (may be repeated)",
        )

    p_run = sub.add_parser("run", help="single diagnosed simulation")
    add_config_args(p_run)

    p_conv = sub.add_parser("convergence", help="truncation refinement study")
    add_config_args(p_conv)
    p_conv.add_argument("--k", required=True, help="comma-separated increasing truncations, e.g. 4,6,8,10")

    p_stab = sub.add_parser("stability", help="twin-run stability study")
    add_config_args(p_stab)
    p_stab.add_argument(
        "--deltas", default="1e-3,1e-4,1e-5,1e-6", help="comma-separated perturbation sizes"
    )

    p_ident = sub.add_parser("identities", help="vector-calculus identity suite")
    p_ident.add_argument("--n", type=int, default=32)
    p_ident.add_argument("--seed", type=int, default=0)
    p_ident.add_argument("--box-length", type=float, default=2.0 * np.pi)
    p_ident.add_argument("--dealias-fraction", type=float, default=2.0 / 3.0)

    p_gron = sub.add_parser("gronwall", help="evaluate the integral-inequality bound")
    p_gron.add_argument("--alpha", type=float, required=True)
    p_gron.add_argument("--g-power", type=float, default=1.0, help="g(s) = s**p")
    p_gron.add_argument("--beta-const", type=float, required=True)
    p_gron.add_argument("--t", type=float, required=True)
    return parser


def _load_config(args) -> harness.SimConfig:
    if args.config:
        cfg = harness.parse_config_file(args.config)
    else:
        cfg = harness.SimConfig()
    return harness.apply_overrides(cfg, args.overrides)


def _parse_floats(raw: str) -> list[float]:
    try:
        return [float(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError:
        raise harness.ConfigError(f"expected comma-separated numbers, got {raw!r}") from None


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        if args.command == "run":
            result = harness.run(_load_config(args))
            print(result.to_table())
            return result.exit_code
        if args.command == "convergence":
            result = harness.convergence_study(_load_config(args), _parse_floats(args.k))
            print(result.to_table())
            return result.exit_code
        if args.command == "stability":
            result = harness.stability_study(_load_config(args), _parse_floats(args.deltas))
            print(result.to_table())
            return result.exit_code
        if args.command == "identities":
            code, table = harness.identity_command(
                args.n, args.seed, args.box_length, args.dealias_fraction
            )
            print(table)
            return code
        if args.command == "gronwall":
            samples = np.array([[0.0, args.beta_const], [args.t, args.beta_const]])
            g = diagnostics.PowerLaw(args.g_power)
            result = diagnostics.gronwall_bound(args.alpha, samples, g, args.t)
            print(f"bound at t={args.t!r}: {result}")
            breakdown = diagnostics.gronwall_breakdown_time(args.alpha, samples, g)
            if breakdown is not None:
                print(f"bound breaks down at t={breakdown!r}")
            return harness.EXIT_PASS
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return harness.EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return harness.EXIT_USAGE
    return harness.EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
