#!/usr/bin/env python3
"""
MACE Matting: command line
Alpha mattes from a frame and a clean plate by consensus equilibrium
of a matting agent, a background estimator and a TV denoiser.
"""

import argparse
import logging
import os
import sys
from typing import Dict, List, Optional

from config import (DEBUG_DIR, LOG_FILE, LOG_LEVEL, OUTPUT_DIR, PipelineConfig, load_config_file,
                    merge_overrides, parse_value)
from errors import ConfigError, MaceError
from image_io import load_image, load_pair, save_matte
from metrics import MetricReport, evaluate_pair
from pipeline import discover_jobs, extract_frame, run_ablation, run_batch
from synth import SceneSpec, synth_generate, write_sequence

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def setup_logging(level: str = LOG_LEVEL, log_file: Optional[str] = LOG_FILE) -> None:
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stdout)]
    if log_file:
        handlers.insert(0, logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', help='key = value file with pipeline parameters')
    parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                        help='override one parameter (repeatable)')
    parser.add_argument('--agents', help='comma separated subset of matting,background,tv')
    parser.add_argument('--downsample', type=int, help='integer reduction factor applied on load')
    parser.add_argument('--workers', type=int, help='frames processed in parallel')
    parser.add_argument('--parallel-agents', action='store_true', default=None,
                        help='evaluate the agents of one iteration concurrently')
    parser.add_argument('--max-iter', type=int, help='consensus iteration cap')
    parser.add_argument('--tol', type=float, help='relative residual tolerance')
    parser.add_argument('--debug-dir', default=DEBUG_DIR, help='write prior maps and the Laplacian here')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='mace', description='Alpha matting by multi-agent consensus equilibrium.')
    parser.add_argument('--log-level', default=LOG_LEVEL)
    parser.add_argument('--log-file', default=LOG_FILE, help="log file ('' disables)")
    sub = parser.add_subparsers(dest='command', required=True)

    extract = sub.add_parser('extract', help='matte a single frame')
    extract.add_argument('frame')
    extract.add_argument('plate')
    extract.add_argument('output')
    extract.add_argument('--gt', help='ground-truth matte to score against')
    extract.add_argument('--bits', type=int, default=8, choices=(8, 16))
    _add_run_options(extract)

    batch = sub.add_parser('batch', help='matte every frame of a sequence folder')
    batch.add_argument('directory')
    batch.add_argument('--output', default=OUTPUT_DIR)
    batch.add_argument('--temporal', action='store_true', help='spatio-temporal TV over a sliding window')
    batch.add_argument('--report', help='write the metric report here')
    _add_run_options(batch)

    evaluate = sub.add_parser('eval', help='score a predicted matte against ground truth')
    evaluate.add_argument('pred')
    evaluate.add_argument('gt')
    evaluate.add_argument('--contour-tol', type=int, default=2)

    synth = sub.add_parser('synth', help='write a synthetic sequence with ground truth')
    synth.add_argument('directory')
    synth.add_argument('--frames', type=int, default=1)
    synth.add_argument('--height', type=int, default=64)
    synth.add_argument('--width', type=int, default=64)
    synth.add_argument('--shape', choices=('square', 'disk'), default='square')
    synth.add_argument('--size', type=int, default=24)
    synth.add_argument('--velocity', type=float, nargs=2, default=(0.0, 0.0), metavar=('DY', 'DX'))
    synth.add_argument('--tile-amp', type=float, default=0.02, help='step between the two plate weave tones')
    synth.add_argument('--tile-size', type=int, default=1)
    synth.add_argument('--brightness-drift', type=float, default=0.0)
    synth.add_argument('--jitter', type=int, default=0)
    synth.add_argument('--noise', type=float, default=0.0)
    synth.add_argument('--color-proximity', type=float, default=0.0)
    synth.add_argument('--seed', type=int, default=0)

    ablate = sub.add_parser('ablate', help='compare the full agent set with each leave-one-out subset')
    ablate.add_argument('directory')
    ablate.add_argument('--output', default=OUTPUT_DIR)
    ablate.add_argument('--temporal', action='store_true')
    ablate.add_argument('--report', help='write the ablation table here as CSV')
    _add_run_options(ablate)
    return parser


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    """Defaults, then the config file, then --set pairs, then dedicated flags"""
    cfg = load_config_file(args.config) if args.config else PipelineConfig().validate()

    overrides: Dict[str, object] = {}
    for pair in args.set:
        if '=' not in pair:
            raise ConfigError(f"expected KEY=VALUE, got {pair!r}")
        key, value = pair.split('=', 1)
        overrides[key.strip()] = parse_value(key.strip(), value)

    if args.agents is not None:
        overrides['agents'] = parse_value('agents', args.agents)
    overrides.update({
        'downsample': args.downsample,
        'workers': args.workers,
        'parallel_agents': args.parallel_agents,
        'max_iter': args.max_iter,
        'tol': args.tol,
        'debug_dir': args.debug_dir,
    })
    return merge_overrides(cfg, overrides)


def cmd_extract(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    frame, plate = load_pair(args.frame, args.plate, cfg.downsample)
    matte, report = extract_frame(frame, plate, cfg)
    save_matte(matte, args.output, bits=args.bits)
    logger.info(f"Saved matte to {args.output}")

    if args.gt:
        metrics = MetricReport()
        gt = load_image(args.gt, color=False, downsample=cfg.downsample)
        metrics.add(os.path.basename(args.frame), evaluate_pair(matte, gt, cfg.contour_tol),
                    iterations=report.iterations_used, converged=report.converged)
        print(metrics.to_text(), end='')
    return EXIT_OK


def cmd_batch(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    jobs = discover_jobs(args.directory, args.output)
    result = run_batch(jobs, cfg, temporal=args.temporal)

    text = result.report.to_text() if len(result.report) else ''
    if args.report:
        with open(args.report, 'w', encoding='utf-8') as f:
            f.write(text)
        logger.info(f"Wrote metric report to {args.report}")
    elif text:
        print(text, end='')

    if result.failures:
        logger.error(f"{len(result.failures)} of {len(jobs)} frames failed")
    return result.exit_status


def cmd_eval(args: argparse.Namespace) -> int:
    pred = load_image(args.pred, color=False)
    gt = load_image(args.gt, color=False)
    report = MetricReport()
    report.add(os.path.basename(args.pred), evaluate_pair(pred, gt, args.contour_tol))
    print(report.to_text(), end='')
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    spec = SceneSpec(height=args.height, width=args.width, frames=args.frames, shape=args.shape,
                     size=args.size, velocity=tuple(args.velocity),
                     tile_amp=args.tile_amp, tile_size=args.tile_size,
                     brightness_drift=args.brightness_drift, jitter=args.jitter,
                     noise_sigma=args.noise, color_proximity=args.color_proximity)
    write_sequence(args.directory, synth_generate(spec, seed=args.seed))
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    jobs = discover_jobs(args.directory, args.output)
    table = run_ablation(jobs, cfg, temporal=args.temporal)
    if args.report:
        table.to_csv(args.report, index=False)
        logger.info(f"Wrote ablation table to {args.report}")
    else:
        print(table.to_string(index=False))
    return EXIT_FAILED if (table['failures'] > 0).any() else EXIT_OK


COMMANDS = {
    'extract': cmd_extract,
    'batch': cmd_batch,
    'eval': cmd_eval,
    'synth': cmd_synth,
    'ablate': cmd_ablate,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main function"""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level, args.log_file or None)

    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except MaceError as e:
        logger.error(f"Failed to run {args.command}: {e}")
        return EXIT_FAILED
    except KeyboardInterrupt:
        logger.info("Received keyboard interrupt")
        return EXIT_FAILED
    except Exception as e:
        logger.error(f"Unexpected error: {e}")
        return EXIT_FAILED
    finally:
        logger.debug(f"Command {args.command} finished")


if __name__ == "__main__":
    sys.exit(main())
