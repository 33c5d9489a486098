import argparse
import logging
import os
import sys

import pandas as pd

from CNNLayoutEngine.bench.benchmark import bench_layer, bench_transform
from CNNLayoutEngine.bench.fixtures import FIXTURES, get_fixture, list_fixtures
from CNNLayoutEngine.config import Config, set_up_logging
from CNNLayoutEngine.layers.pool import CoarseningPlan, PoolMode, autotune_pool
from CNNLayoutEngine.layout_selection import CalibrationError, calibrate, conv7_bench, get_preset, read_calibration
from CNNLayoutEngine.net.network import annotate_layouts, plan_transforms, profile_refine, run_network
from CNNLayoutEngine.net.network_spec import load_network
from CNNLayoutEngine.tensor import Layout, Tensor4D
from CNNLayoutEngine.utils.formatting import get_dims_from_string
from CNNLayoutEngine.utils.timing import set_serial

logger = logging.getLogger('CLE')

ALGORITHM_CHOICES = ['direct', 'gemm', 'fft', 'plain', 'coarsened', 'reference', 'fused']


class UsageError(ValueError):
    pass


class ArgumentParser(argparse.ArgumentParser):

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f'{self.prog}: {message}')


def parse_bool(value):
    value_str = str(value).lower()
    if value_str == 'true':
        return True
    elif value_str == 'false':
        return False
    raise argparse.ArgumentTypeError(f"'{value}' is not one of <True|False>")


def add_common_arguments(parser, default=None):
    # accepted before and after the subcommand; SUPPRESS keeps a value given before it
    parser.add_argument('--out', help="CSV output file. Defaults to stdout.", required=False, type=str,
                        default=default)
    parser.add_argument('--serial', help="Pin all kernels to a single worker thread.", action='store_true',
                        default=False if default is None else default)
    parser.add_argument('--seed', help="Seed for inputs and weights.", required=False, type=int, default=default)
    return parser


def build_parser():
    common = add_common_arguments(ArgumentParser(add_help=False), default=argparse.SUPPRESS)
    parser = add_common_arguments(ArgumentParser(prog='cli.py', description='CNN Layout Engine'))
    parser.add_argument('--config', help="Config file name (absolute path).", required=False, type=str)
    parser.add_argument('--warnings-log-file',
                        help="Logging file name (absolute path) for warnings and above.", required=False, type=str)
    parser.add_argument('--info-log-file',
                        help="Logging file name (absolute path) for info and above.", required=False, type=str)
    parser.add_argument('--debug', help="Enable debug mode. <True|False>. Defaults to 'False'.",
                        required=False, type=parse_bool, default=False)
    sub = parser.add_subparsers(dest='command', required=True, parser_class=ArgumentParser)

    fixtures = sub.add_parser('fixtures', parents=[common], help="Benchmark fixtures of the studied networks.")
    fixtures.add_argument('--list', help="List all fixtures.", action='store_true', required=True)
    fixtures.add_argument('--scale', help="Batch divisor. Defaults to 1 (published shapes).", type=int, default=1)

    layer = sub.add_parser('bench-layer', parents=[common], help="Oracle-verified layer micro-benchmarks.")
    layer.add_argument('--id', help="Fixture ids, e.g. CV7 PL3 CLASS3, or 'all'.", nargs='+', required=True)
    layer.add_argument('--scale', help="Batch divisor. Defaults to BENCH_SCALE.", type=int)
    layer.add_argument('--layout', help="Layouts to run.", nargs='+', choices=['chwn', 'nchw'],
                       default=['chwn', 'nchw'])
    layer.add_argument('--algorithm', help="Algorithms to run. Defaults to the preferred one per layout.",
                       nargs='+', choices=ALGORITHM_CHOICES)
    layer.add_argument('--mode', help="Pooling mode.", choices=['max', 'average'], default='max')
    layer.add_argument('--repeats', help="Timed repetitions. Defaults to BENCH_REPEATS.", type=int)

    trans = sub.add_parser('bench-transform', parents=[common], help="Layout transformation bandwidth.")
    group = trans.add_mutually_exclusive_group(required=True)
    group.add_argument('--id', help="Conv fixture whose input shape is transformed.", type=str)
    group.add_argument('--dims', help="Tensor dims N,C,H,W.", type=str)
    trans.add_argument('--scale', help="Batch divisor applied to --id. Defaults to 1.", type=int, default=1)
    trans.add_argument('--repeats', help="Timed repetitions. Defaults to BENCH_REPEATS.", type=int)

    calib = sub.add_parser('calibrate', parents=[common],
                           help="Derive the layout thresholds (c_t, n_t) on this host.")
    calib.add_argument('--fine', help="Use the finer sweep grid.", action='store_true')
    calib.add_argument('--calibration-file', help="Where to store the record. Defaults to CALIBRATION_FILE.",
                       type=str)
    calib.add_argument('--scale', help="Divisor of the output channels of the CV7-shaped layer.", type=int,
                       default=8)
    calib.add_argument('--repeats', help="Timed repetitions per point.", type=int, default=3)

    net = sub.add_parser('run-net', parents=[common], help="Run a network config and report per-layer timings.")
    net.add_argument('network', help="Network config (JSON).", type=str)
    selection = net.add_mutually_exclusive_group()
    selection.add_argument('--auto-layout', help="Use the host calibration thresholds.", action='store_true')
    selection.add_argument('--preset', help="Named thresholds. Defaults to LAYOUT_PRESET.",
                           choices=['titan-black', 'titan-x'])
    net.add_argument('--calibration', help="Calibration record for --auto-layout.", type=str)
    net.add_argument('--profile-refine', help="Refine conv layouts by one-time profiling.", action='store_true')
    net.add_argument('--fft', help="Run NCHW convolutions through the FFT path.", action='store_true')
    return parser


def write_csv(df, out):
    if out:
        df.to_csv(out, index=False)
        logger.info(f'Results written to {out}')
    else:
        df.to_csv(sys.stdout, index=False)


def _coarsening(config, fixture, mode):
    if config.POOL_COARSENING == 'autotune':
        return autotune_pool(fixture.input_dims, fixture.pool_params(mode), cap=config.POOL_ACCUMULATOR_CAP)
    return CoarseningPlan(*config.POOL_COARSENING)


def cmd_fixtures(args, config):
    return list_fixtures(scale=args.scale, hw_cap=config.BENCH_HW_CAP)


def cmd_bench_layer(args, config):
    scale = args.scale if args.scale is not None else config.BENCH_SCALE
    repeats = args.repeats if args.repeats is not None else config.BENCH_REPEATS
    mode = PoolMode.from_string(args.mode)
    ids = list(FIXTURES) if [i.lower() for i in args.id] == ['all'] else args.id
    frames = []
    for fixture_id in ids:
        fixture = get_fixture(fixture_id, scale=scale, hw_cap=config.BENCH_HW_CAP)
        coarsening = _coarsening(config, fixture, mode) if fixture.kind == 'pool' else None
        frames.append(bench_layer(fixture, layouts=[Layout.from_string(la) for la in args.layout],
                                  algorithms=args.algorithm, repeats=repeats, seed=config.RANDOM_SEED,
                                  pool_mode=mode, coarsening=coarsening))
    return pd.concat(frames, ignore_index=True)


def cmd_bench_transform(args, config):
    repeats = args.repeats if args.repeats is not None else config.BENCH_REPEATS
    if args.id:
        fixture = get_fixture(args.id, scale=args.scale, hw_cap=config.BENCH_HW_CAP)
        if fixture.kind != 'conv':
            raise ValueError(f'{fixture.id} is not a conv fixture')
        dims = fixture.input_dims
    else:
        dims = get_dims_from_string(args.dims)
    return bench_transform(dims, repeats=repeats, seed=config.RANDOM_SEED, tile=config.TRANSFORM_TILE)


def cmd_calibrate(args, config):
    path = args.calibration_file or config.CALIBRATION_FILE
    bench = conv7_bench(scale=args.scale, repeats=args.repeats, seed=config.RANDOM_SEED)
    try:
        _, table = calibrate(bench, fine=args.fine, calibration_file=path, return_table=True)
    except CalibrationError as e:
        logger.warning(f'Writing the {len(e.partial)} sweep points measured before the failure')
        write_csv(e.partial, args.out)
        raise
    return table


def resolve_thresholds(args, config):
    if args.auto_layout:
        path = args.calibration or config.CALIBRATION_FILE
        if path and os.path.isfile(path):
            return read_calibration(path)
        logger.warning(f"No calibration record at '{path}'; falling back to preset {config.LAYOUT_PRESET}. "
                       f"Run 'calibrate' first.")
    return get_preset(args.preset or config.LAYOUT_PRESET)


def cmd_run_net(args, config):
    if args.fft:
        config.USE_FFT = True
    if args.profile_refine:
        config.PROFILE_REFINE = True

    spec = annotate_layouts(load_network(args.network), resolve_thresholds(args, config))
    if config.PROFILE_REFINE:
        spec, profile = profile_refine(spec, seed=config.RANDOM_SEED, use_fft=config.USE_FFT)
        logger.info(f'Profiling table:\n{profile.to_string(index=False)}')
    spec.print()
    logger.info(f'{len(plan_transforms(spec))} layout transforms planned')

    first_layout = next((layer.layout for layer in spec.layers if layer.layout is not None), Layout.NCHW)
    t = Tensor4D.random(spec.input_dims, first_layout, seed=config.RANDOM_SEED)
    _, report = run_network(spec, t, seed=config.RANDOM_SEED, config=config)
    return report.to_dataframe()


COMMANDS = {
    'fixtures': cmd_fixtures,
    'bench-layer': cmd_bench_layer,
    'bench-transform': cmd_bench_transform,
    'calibrate': cmd_calibrate,
    'run-net': cmd_run_net,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:
        # --help
        return e.code if isinstance(e.code, int) else 1

    ##
    # initialise logging
    set_up_logging(args.info_log_file, args.warnings_log_file, args.debug, stream=sys.stderr)

    try:
        ##
        # create config object
        if args.config:
            config = Config(file_name=args.config)
        else:
            config = Config(init_mode='default')
        if args.serial:
            config.SERIAL = True
        if args.seed is not None:
            config.RANDOM_SEED = args.seed
        config.print()
        set_serial(config.SERIAL)

        write_csv(COMMANDS[args.command](args, config), args.out)
    except (ValueError, FileNotFoundError) as e:
        logger.error(str(e))
        return 1
    except CalibrationError as e:
        logger.error(f'Calibration failed: {e}')
        return 2
    except Exception as e:
        logger.exception(f'Internal error: {e}')
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
