"""Command-line surface: ``tcg-detector <command> [options]``."""
from typing import List, Optional, Sequence
import argparse
import logging
import sys

from .config import MODES, PipelineConfig, load_config
from .evaluation import (
    MAX_RATE_SPREAD,
    SWEEP_EPISODES,
    accuracy,
    f1,
    format_family_table,
    precision,
    quality_failures,
    rate_failures,
    recall,
    window_trend_failures,
)
from .parser import truth_path_for
from .pipeline import run_detect, run_eval, run_export_dot, run_simulate, run_sweep, run_train
from .types import DetectorError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ASSERT = 3

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


class UsageError(Exception):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> List[float]:
    return [float(x) for x in text.split(',') if x.strip()]


def _ints(text: str) -> List[int]:
    return [int(x) for x in text.split(',') if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument('--config', help='Pipeline config file (INI)')
    common.add_argument('--seed', type=int, help='Override the config seed')
    common.add_argument('--log-level', default='INFO', help='Logging level (default INFO)')
    common.add_argument('--log-file', help='Append log output to this file')

    parser = _ArgumentParser(prog='tcg-detector',
                             description='Ransomware detection over temporal correlation graphs')
    sub = parser.add_subparsers(dest='command', metavar='command')
    sub.required = True

    p = sub.add_parser('simulate', parents=[common], help='Write a seeded trace and its ground truth')
    p.add_argument('--output', help='Trace file to write')
    p.add_argument('--benign-only', action='store_true', help='Only the benign background')

    p = sub.add_parser('train', parents=[common], help='Fit a detection model')
    p.add_argument('--input', help='Labeled trace (simulated from the config when omitted)')
    p.add_argument('--truth', help='Ground-truth sidecar (default: next to the trace)')
    p.add_argument('--model', help='Model file to write')
    p.add_argument('--assert', dest='check', action='store_true', help='Fail on test quality thresholds')

    p = sub.add_parser('detect', parents=[common], help='Score a trace and emit alerts')
    p.add_argument('--input', help="Trace file, or '-' for stdin")
    p.add_argument('--output', help='Alerts file (default stdout)')
    p.add_argument('--model', help='Model file')
    p.add_argument('--mode', choices=MODES)
    p.add_argument('--threaded', action='store_true', help='Run stream stages on separate threads')
    p.add_argument('--snapshots', help='Directory for per-window graph snapshots')
    p.add_argument('--features', help='Per-window feature CSV to write')

    p = sub.add_parser('eval', parents=[common], help='Metrics for an alerts file against ground truth')
    p.add_argument('--alerts', required=True, help='Alerts file')
    p.add_argument('--truth', help='Ground-truth sidecar (default: next to --input)')
    p.add_argument('--input', help='Trace the alerts were produced from')
    p.add_argument('--output', help='Summary report (INI)')
    p.add_argument('--timeline', help='Anomaly timeline CSV')
    p.add_argument('--assert', dest='check', action='store_true', help='Fail on quality thresholds')

    for name, text in (('sweep-windows', 'Accuracy per window size'),
                       ('sweep-speeds', 'Detection rate per encryption speed'),
                       ('sweep-load', 'Detection rate and latency per benign load level')):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument('--output', required=True, help='CSV table to write')
        p.add_argument('--values', type=_floats, help='Comma-separated grid values')
        p.add_argument('--workers', type=int, help='Thread pool size')
        p.add_argument('--progress', action='store_true', help='Show a progress bar')
        p.add_argument('--assert', dest='check', action='store_true', help='Fail on trend thresholds')
        if name == 'sweep-windows':
            p.add_argument('--seeds', type=_ints, help='Comma-separated seeds to average over')
        else:
            p.add_argument('--model', help='Fixed model (trained from the config when omitted)')
            p.add_argument('--episodes', type=int, default=SWEEP_EPISODES, help='Episodes per grid value')

    p = sub.add_parser('export-dot', parents=[common], help='DOT file per window')
    p.add_argument('--input', help='Trace file')
    p.add_argument('--output', help='Output directory')
    p.add_argument('--window-start', type=float, help='Only the window starting here')
    return parser


def setup_logging(level: str, log_file: Optional[str] = None) -> None:
    numeric = logging.getLevelName(level.upper())
    if not isinstance(numeric, int):
        raise UsageError(f"unknown log level {level!r}")
    logging.basicConfig(level=numeric, format=LOG_FORMAT, filename=log_file, filemode='a')
    logging.getLogger().setLevel(numeric)


def _require(value: Optional[str], flag: str) -> str:
    if not value:
        raise UsageError(f"{flag} is required (flag or config)")
    return value


def _config(args: argparse.Namespace) -> PipelineConfig:
    config = load_config(args.config)
    return config.with_overrides(
        seed=args.seed,
        input=getattr(args, 'input', None),
        output=getattr(args, 'output', None),
        model=getattr(args, 'model', None),
        mode=getattr(args, 'mode', None),
        threaded=getattr(args, 'threaded', None) or None,
    )


def _report(failures: Sequence[str]) -> int:
    for failure in failures:
        logger.error(f"Assertion failed: {failure}")
    return EXIT_ASSERT if failures else EXIT_OK


def cmd_simulate(args: argparse.Namespace, config: PipelineConfig) -> int:
    summary = run_simulate(config, _require(config.output, '--output'), args.benign_only)
    print(f"events={summary.events} episodes={summary.episodes} intervals={summary.intervals} "
          f"trace={summary.trace_path} truth={summary.truth_path}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, config: PipelineConfig) -> int:
    summary = run_train(config, _require(config.model, '--model'), config.input, args.truth)
    c = summary.counts
    print(f"test windows={c.total} tp={c.tp} fp={c.fp} tn={c.tn} fn={c.fn} "
          f"precision={precision(c):.4f} recall={recall(c):.4f} f1={f1(c):.4f} accuracy={accuracy(c):.4f}")
    print(f"model={summary.model_path} test_alerts={summary.alerts_path}")
    return _report(quality_failures(c)) if args.check else EXIT_OK


def cmd_detect(args: argparse.Namespace, config: PipelineConfig) -> int:
    run_detect(config, _require(config.model, '--model'), _require(config.input, '--input'),
               config.output, args.snapshots, args.features)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, config: PipelineConfig) -> int:
    truth = args.truth
    if truth is None:
        if not args.input:
            raise UsageError("--truth or --input is required")
        truth = truth_path_for(args.input)
    summary = run_eval(args.alerts, truth, trace_path=args.input, report_path=args.output,
                       timeline_path=args.timeline)
    c = summary.counts
    print(f"windows={c.total} tp={c.tp} fp={c.fp} tn={c.tn} fn={c.fn} precision={precision(c):.4f} "
          f"recall={recall(c):.4f} f1={f1(c):.4f} accuracy={accuracy(c):.4f}")
    lat = summary.latency
    print(f"episodes={lat.episodes} detected={lat.detected} mean_latency={lat.mean:.2f}s "
          f"median_latency={lat.median:.2f}s max_latency={lat.max:.2f}s")
    if summary.families:
        print(format_family_table(summary.families))
    return _report(quality_failures(c)) if args.check else EXIT_OK


SWEEP_LABELS = {'windows': 'window', 'speeds': 'speed', 'load': 'load'}


def cmd_sweep(kind: str):
    def command(args: argparse.Namespace, config: PipelineConfig) -> int:
        if kind == 'windows':
            rows = run_sweep(kind, config, args.output, args.values, seeds=args.seeds,
                             workers=args.workers, progress=args.progress)
            for row in rows:
                print(f"window={row.size:g} accuracy={row.accuracy:.4f} std={row.accuracy_std:.4f} "
                      f"precision={row.precision:.4f} recall={row.recall:.4f}")
            failures = window_trend_failures(rows)
        else:
            rows = run_sweep(kind, config, args.output, args.values, model_path=config.model,
                             episodes=args.episodes, workers=args.workers, progress=args.progress)
            for row in rows:
                print(f"{SWEEP_LABELS[kind]}={row.value:g} detection_rate={row.detection_rate:.4f} "
                      f"detected={row.detected}/{row.episodes} mean_latency={row.mean_latency:.2f}s")
            # load only has a floor on the rate; speeds also bound the spread
            failures = rate_failures(rows, max_spread=None if kind == 'load' else MAX_RATE_SPREAD)
        return _report(failures) if args.check else EXIT_OK
    return command


def cmd_export_dot(args: argparse.Namespace, config: PipelineConfig) -> int:
    written = run_export_dot(config, _require(config.input, '--input'), _require(config.output, '--output'),
                             args.window_start)
    print(f"dot_files={len(written)}")
    return EXIT_OK


COMMANDS = {
    'simulate': cmd_simulate,
    'train': cmd_train,
    'detect': cmd_detect,
    'eval': cmd_eval,
    'sweep-windows': cmd_sweep('windows'),
    'sweep-speeds': cmd_sweep('speeds'),
    'sweep-load': cmd_sweep('load'),
    'export-dot': cmd_export_dot,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        setup_logging(args.log_level, args.log_file)
        config = _config(args)
        return COMMANDS[args.command](args, config)
    except UsageError as e:
        print(f"tcg-detector: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DetectorError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"tcg-detector: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        logger.error(f"I/O error: {e}")
        print(f"tcg-detector: I/O error: {e}", file=sys.stderr)
        return EXIT_DATA
