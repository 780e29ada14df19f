#!/usr/bin/env python3
"""
MMCC Accountant - Command Line Interface
Amplified privacy accounting for matrix mechanisms, the DP-SGD baselines and the experiment grids
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

import pandas as pd
from pydantic import ValidationError

from accountants.applications import dpsgd_epsilon, group_privacy_dpsgd_epsilon, last_iterate_linear_epsilon
from accountants.orchestrator import ExperimentOrchestrator, format_report
from accountants.tail_bounds import probability_tail_bounds
from config.settings import DEFAULT_EXPERIMENTS, AccountingParams, Adjacency, DiscretizationConfig
from utils.errors import AccountingError, UnachievableError
from utils.matrices import binary_tree, identity, load_csv, prefix_opt, save_csv, tree_restart, write_csv

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_UNACHIEVABLE = 3

MATRIX_KINDS = ('binary-tree', 'prefix-opt', 'tree-restart', 'identity')


def _float_list(raw: str) -> List[float]:
    try:
        return [float(item) for item in raw.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {raw!r}")


def _add_grid_flags(parser: argparse.ArgumentParser):
    parser.add_argument('--pld-grid', type=float, default=1e-4, help='PLD bucket width')
    parser.add_argument('--sens-grid', type=float, default=1e-3, help='Sensitivity rounding grid')
    parser.add_argument('--inverse-grid', type=float, default=1e-6, help='Loss inversion tolerance')
    parser.add_argument('--threads', type=int, default=None, help='Worker threads (default: MMACC_THREADS or all cores)')


def _add_budget_flags(parser: argparse.ArgumentParser):
    parser.add_argument('--delta', type=float, default=None, help='Total delta, split evenly (all of it to delta2 when no tail bound is needed)')
    parser.add_argument('--delta1', type=float, default=None, help='Tail-bound failure budget')
    parser.add_argument('--delta2', type=float, default=None, help='Delta queried on the composed PLD')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='app.py', description='MMCC privacy accountant')
    parser.add_argument('--verbose', action='store_true', help='Debug logging on stderr')
    commands = parser.add_subparsers(dest='command', required=True)

    mmcc = commands.add_parser('mmcc', help='Account an encoder matrix read from CSV')
    mmcc.add_argument('--matrix', required=True, help='Header-less CSV encoder matrix')
    mmcc.add_argument('--p', type=float, required=True, help='Sampling probability')
    mmcc.add_argument('--sigma', type=float, required=True, help='Noise standard deviation')
    _add_budget_flags(mmcc)
    mmcc.add_argument('--b', type=int, default=1, help='Min-separation of b-min-sep sampling')
    mmcc.add_argument('--all-groups', action='store_true', help='Worst case over all b groups')
    mmcc.add_argument('--independent', action='store_true', help='Independent-rows lower-bound diagnostic')
    mmcc.add_argument('--adjacency', choices=[a.value for a in Adjacency], default=Adjacency.BOTH.value)
    mmcc.add_argument(
        '--no-dedup', action='store_true', help='Build one PLD per row instead of reusing identical rows (same result)'
    )
    mmcc.add_argument('--format', choices=('json', 'text'), default='json')
    _add_grid_flags(mmcc)
    mmcc.set_defaults(handler=cmd_mmcc)

    experiment = commands.add_parser('experiment', help='Amplification experiment grids as CSV')
    grids = experiment.add_subparsers(dest='experiment', required=True)
    for name, defaults, handler in (
        ('tree', DEFAULT_EXPERIMENTS.TREE, cmd_experiment_tree),
        ('prefix-opt', DEFAULT_EXPERIMENTS.PREFIX_OPT, cmd_experiment_prefix_opt),
    ):
        grid = grids.add_parser(name)
        grid.add_argument('--c-list', type=_float_list, default=defaults['c_list'])
        grid.add_argument('--log-n-max', type=int, default=defaults['log_n_max'])
        grid.add_argument('--delta', type=float, default=DEFAULT_EXPERIMENTS.DELTA)
        grid.add_argument('--out', default=None, help='Output CSV (default: stdout)')
        _add_grid_flags(grid)
        grid.set_defaults(handler=handler)

    restart = grids.add_parser('tree-restart')
    restart.add_argument('--n', type=int, default=DEFAULT_EXPERIMENTS.TREE_RESTART['n'])
    restart.add_argument('--height', type=int, default=DEFAULT_EXPERIMENTS.TREE_RESTART['height'])
    restart.add_argument('--p', type=float, default=DEFAULT_EXPERIMENTS.TREE_RESTART['p'])
    restart.add_argument('--sigma-list', type=_float_list, default=DEFAULT_EXPERIMENTS.TREE_RESTART['sigma_list'])
    restart.add_argument('--delta', type=float, default=DEFAULT_EXPERIMENTS.DELTA)
    restart.add_argument('--out', default=None, help='Output CSV (default: stdout)')
    _add_grid_flags(restart)
    restart.set_defaults(handler=cmd_experiment_tree_restart)

    matrix = commands.add_parser('matrix', help='Encoder matrix utilities')
    matrix_commands = matrix.add_subparsers(dest='matrix_command', required=True)
    gen = matrix_commands.add_parser('gen', help='Emit a standard encoder as CSV')
    gen.add_argument('--kind', choices=MATRIX_KINDS, required=True)
    gen.add_argument('--n', type=int, required=True)
    gen.add_argument('--height', type=int, default=None, help='Tree height for tree-restart')
    gen.add_argument('--out', default=None, help='Output CSV (default: stdout)')
    gen.set_defaults(handler=cmd_matrix_gen)

    tail = commands.add_parser('tail-bounds', help='Dump the p-tilde table as CSV')
    tail.add_argument('--matrix', required=True)
    tail.add_argument('--p', type=float, required=True)
    tail.add_argument('--sigma', type=float, required=True)
    tail.add_argument('--delta1', type=float, required=True)
    tail.add_argument('--out', default=None, help='Output CSV (default: stdout)')
    tail.set_defaults(handler=cmd_tail_bounds)

    apps = commands.add_parser('apps', help='DP-SGD applications')
    app_commands = apps.add_subparsers(dest='app', required=True)
    linear = app_commands.add_parser('last-iterate-linear')
    linear.add_argument('--n', type=int, required=True)
    linear.add_argument('--p', type=float, required=True)
    linear.add_argument('--sigma', type=float, required=True)
    linear.add_argument('--delta', type=float, required=True)
    linear.add_argument('--adjacency', choices=[a.value for a in Adjacency], default=Adjacency.ADD.value)
    _add_grid_flags(linear)
    linear.set_defaults(handler=cmd_last_iterate_linear)

    group = app_commands.add_parser('group-privacy')
    group.add_argument('--k', type=int, required=True, help='Group size')
    group.add_argument('--p', type=float, required=True)
    group.add_argument('--sigma', type=float, required=True)
    group.add_argument('--n', type=int, required=True, help='Number of rounds')
    group.add_argument('--delta', type=float, required=True)
    group.add_argument('--dataset-size', type=int, default=None)
    group.add_argument('--batch-size', type=int, default=None)
    _add_grid_flags(group)
    group.set_defaults(handler=cmd_group_privacy)

    sgd = commands.add_parser('compose-sgd', help='Per-round DP-SGD baseline')
    sgd.add_argument('--n', type=int, required=True)
    sgd.add_argument('--p', type=float, required=True)
    sgd.add_argument('--sigma', type=float, required=True)
    sgd.add_argument('--delta', type=float, required=True)
    _add_grid_flags(sgd)
    sgd.set_defaults(handler=cmd_compose_sgd)

    return parser


def _discretization(args: argparse.Namespace) -> DiscretizationConfig:
    return DiscretizationConfig(
        pld_grid=args.pld_grid,
        sensitivity_grid=args.sens_grid,
        inverse_tolerance=args.inverse_grid,
    )


def _budget(args: argparse.Namespace):
    """(delta1, delta2) from either --delta or both --delta1 and --delta2"""
    if args.delta1 is not None and args.delta2 is not None:
        if args.delta is not None and abs(args.delta1 + args.delta2 - args.delta) > 1e-15:
            raise ValueError("--delta disagrees with --delta1 + --delta2")
        return args.delta1, args.delta2
    if args.delta1 is not None or args.delta2 is not None:
        raise ValueError("--delta1 and --delta2 must be given together")
    if args.delta is None:
        raise ValueError("either --delta or --delta1 and --delta2 is required")
    return args.delta / 2, args.delta / 2


def _emit_csv(frame: pd.DataFrame, out: Optional[str]):
    if out:
        frame.to_csv(out, index=False)
        print(f"💾 Wrote {len(frame)} rows to {out}", file=sys.stderr)
    else:
        frame.to_csv(sys.stdout, index=False)


def _emit_json(payload: dict):
    print(json.dumps(payload))


def cmd_mmcc(args: argparse.Namespace) -> int:
    cfg = _discretization(args)
    delta1, delta2 = _budget(args)
    params = AccountingParams(
        p=args.p,
        sigma=args.sigma,
        delta1=delta1,
        delta2=delta2,
        b=args.b,
        adjacency=Adjacency(args.adjacency),
        discretization=cfg,
    )
    print(f"📊 Step 1: Loading matrix from {args.matrix}...", file=sys.stderr)
    matrix = load_csv(args.matrix)

    print("🔐 Step 2: Accounting...", file=sys.stderr)
    orchestrator = ExperimentOrchestrator(cfg, args.threads, dedup=not args.no_dedup)
    result = orchestrator.account(matrix, params, independent=args.independent, all_groups=args.all_groups)

    if args.format == 'text':
        print(format_report(result))
    else:
        _emit_json(result.to_dict())
    return EXIT_OK


def cmd_experiment_tree(args: argparse.Namespace) -> int:
    orchestrator = ExperimentOrchestrator(_discretization(args), args.threads)
    _emit_csv(orchestrator.run_tree_experiment(args.c_list, args.log_n_max, args.delta), args.out)
    return EXIT_OK


def cmd_experiment_prefix_opt(args: argparse.Namespace) -> int:
    orchestrator = ExperimentOrchestrator(_discretization(args), args.threads)
    _emit_csv(orchestrator.run_prefix_opt_experiment(args.c_list, args.log_n_max, args.delta), args.out)
    return EXIT_OK


def cmd_experiment_tree_restart(args: argparse.Namespace) -> int:
    orchestrator = ExperimentOrchestrator(_discretization(args), args.threads)
    frame = orchestrator.run_tree_restart_experiment(args.n, args.height, args.p, args.sigma_list, args.delta)
    _emit_csv(frame, args.out)
    return EXIT_OK


def cmd_matrix_gen(args: argparse.Namespace) -> int:
    if args.kind == 'binary-tree':
        matrix = binary_tree(args.n)
    elif args.kind == 'prefix-opt':
        matrix = prefix_opt(args.n)
    elif args.kind == 'identity':
        matrix = identity(args.n)
    else:
        if args.height is None:
            raise ValueError("--height is required for tree-restart")
        matrix = tree_restart(args.n, args.height)

    if args.out:
        save_csv(matrix, args.out)
        print(f"💾 Wrote {matrix.rows}x{matrix.cols} {args.kind} matrix to {args.out}", file=sys.stderr)
    else:
        write_csv(matrix, sys.stdout)
    return EXIT_OK


def cmd_tail_bounds(args: argparse.Namespace) -> int:
    matrix = load_csv(args.matrix)
    table = probability_tail_bounds(matrix, args.p, args.sigma, args.delta1)
    print(f"📊 Max p̃/p: {table.max_ptilde(matrix) / args.p:.6f}", file=sys.stderr)
    _emit_csv(pd.DataFrame(table.values), args.out)
    return EXIT_OK


def cmd_last_iterate_linear(args: argparse.Namespace) -> int:
    epsilon = last_iterate_linear_epsilon(
        args.n, args.p, args.sigma, args.delta, _discretization(args), Adjacency(args.adjacency)
    )
    _emit_json({'epsilon': epsilon, 'delta': args.delta})
    return EXIT_OK


def cmd_group_privacy(args: argparse.Namespace) -> int:
    epsilon = group_privacy_dpsgd_epsilon(
        args.k,
        args.p,
        args.sigma,
        args.n,
        args.delta,
        _discretization(args),
        dataset_size=args.dataset_size,
        batch_size=args.batch_size,
    )
    _emit_json({'epsilon': epsilon, 'delta': args.delta, 'group_size': args.k})
    return EXIT_OK


def cmd_compose_sgd(args: argparse.Namespace) -> int:
    epsilon = dpsgd_epsilon(args.n, args.p, args.sigma, args.delta, _discretization(args))
    _emit_json({'epsilon': epsilon, 'delta': args.delta})
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Parse flags, run the selected command and map failures to exit codes"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)

    try:
        return args.handler(args)
    except UnachievableError as e:
        print(f"❌ Unachievable: {str(e)}", file=sys.stderr)
        return EXIT_UNACHIEVABLE
    except (ValidationError, ValueError, OSError, AccountingError) as e:
        print(f"❌ Error: {str(e)}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
