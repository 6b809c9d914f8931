"""
The ``evpriv`` command line interface.

Every subcommand resolves its effective configuration (flags > ``--config`` JSON >
defaults), logs it and runs. Failures print one line, ``error: <category>: <message>``,
and exit with the category's code: 2 usage, 3 format, 4 runtime, 5 protocol.
"""
import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from evpriv import config, exceptions, seeds
from evpriv.attacks import ExperimentConfig, prepare_victim, run_attack_experiment
from evpriv.events import (format_events, parse_events, read_image, read_voxel, representations, voxel_frame,
                           voxelize, write_image, write_voxel)
from evpriv.localization import (LocalizationConfig, MatchNoise, RansacConfig, accuracy_report,
                                 build_synthetic_scene, localize_queries, write_map)
from evpriv.privacy_sensor import MODES, VARIANTS, FilterParams, protect
from evpriv.quality_metrics import MetricConfig, compare
from evpriv.recon_net import (TrainConfig, client_flop_fraction, read_ends, read_middle, read_watermark, write_ends,
                              write_middle, write_network, write_watermark)
from evpriv.report import attack_frame, localization_frame, report, write_report
from evpriv.split_protocol import client_reconstruct, serve
from evpriv.synth import SCENE_KINDS, SceneSpec, simulate_events
from evpriv.version import __version__

_logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise exceptions.ConfigError(message)


def _event_format(path: Path) -> str:
    return 'binary' if path.suffix.lower() == '.evs' else 'csv'


def _train_config(cfg: config.RunConfig) -> TrainConfig:
    return TrainConfig(learning_rate=cfg['learning_rate'], batch_size=cfg['batch_size'], epochs=cfg['epochs'],
                       seed=cfg.seed)


def _experiment(cfg: config.RunConfig, attacker_samples: int = 0, eval_samples: int = 1) -> ExperimentConfig:
    return ExperimentConfig(bins=cfg['bins'], width=cfg['width'], height=cfg['height'],
                            train_samples=cfg['samples'], attacker_samples=attacker_samples,
                            eval_samples=eval_samples, adv_weight=cfg['adv_weight'],
                            use_watermark=cfg['use_watermark'], original_epochs=cfg['original_epochs'],
                            original_learning_rate=cfg['original_learning_rate'])


def run_synth(cfg: config.RunConfig) -> None:
    spec = SceneSpec(kind=cfg['kind'], width=cfg['width'], height=cfg['height'], velocity=(cfg['vx'], cfg['vy']),
                     threshold=cfg['threshold'], duration=cfg['duration'], seed=cfg.seed)
    stream = simulate_events(spec, cfg['substeps'])
    cfg['out'].write_bytes(format_events(stream, _event_format(cfg['out'])))
    _logger.info("wrote %d events to %s", len(stream), cfg['out'])


def run_voxelize(cfg: config.RunConfig) -> None:
    stream = parse_events(cfg['in'], _event_format(cfg['in']), cfg['width'], cfg['height'], cfg['zero_is_negative'])
    write_voxel(cfg['out'], voxelize(stream, cfg['bins']))


def run_represent(cfg: config.RunConfig) -> None:
    kind = cfg['kind']
    if kind == 'voxel_frame':
        image = voxel_frame(read_voxel(cfg['in']))
    elif kind in representations:
        image = representations[kind](parse_events(cfg['in'], _event_format(cfg['in']), cfg['width'], cfg['height']))
    else:
        raise exceptions.ConfigError(f"unknown representation '{kind}', choose from "
                                     f"{', '.join(list(representations) + ['voxel_frame'])}")
    write_image(cfg['out'], image)


def run_protect(cfg: config.RunConfig) -> None:
    grid = read_voxel(cfg['in'])
    write_voxel(cfg['out'], protect(grid, FilterParams(cfg['kt'], cfg['ks']), cfg['mode'], cfg['variant']))


def run_train(cfg: config.RunConfig) -> None:
    """Train F and F' and write both, the split parts, the watermark and a held-out grid."""
    victim = prepare_victim(cfg.seed, _experiment(cfg), _train_config(cfg))
    out = cfg['out']
    out.mkdir(parents=True, exist_ok=True)
    private = victim.private.params
    write_network(out / "original.net", victim.original)
    write_network(out / "private.net", private)
    write_middle(out / "middle.net", private)
    write_ends(out / "ends.net", private)
    write_watermark(out / "watermark.wmk", victim.watermark)
    write_voxel(out / "scene.vox", victim.held_out[0])
    (out / "history.json").write_text(json.dumps({'loss': victim.private.history}))
    _logger.info("client share of FLOPs %.3f", client_flop_fraction(private, cfg['height'], cfg['width']))


def run_serve(cfg: config.RunConfig) -> None:
    handle = serve(read_middle(cfg['net']), cfg['listen'], cfg['timeout'])
    print(f"listening on {handle.endpoint}", flush=True)
    try:
        handle.wait()
    except KeyboardInterrupt:
        pass
    finally:
        handle.close()


def run_client(cfg: config.RunConfig) -> None:
    image = client_reconstruct(read_ends(cfg['net']), read_watermark(cfg['watermark']), read_voxel(cfg['voxel']),
                               cfg['connect'], cfg['timeout'])
    write_image(cfg['out'], image)


def run_attack(cfg: config.RunConfig) -> None:
    exp = _experiment(cfg, cfg['attacker_samples'], cfg['eval_samples'])
    result = run_attack_experiment(cfg.seed, exp, _train_config(cfg))
    out = cfg['out']
    out.mkdir(parents=True, exist_ok=True)
    attack_frame(result.reports).to_csv(out / "attacks.csv", index=False)
    attack_frame([result.legit]).to_csv(out / "legit.csv", index=False)
    summary = {'ablation': result.ablation._asdict(), 'private_history': result.private_history}
    (out / "attack_summary.json").write_text(json.dumps(summary, sort_keys=True))


def run_localize(cfg: config.RunConfig) -> None:
    scene = build_synthetic_scene(cfg.seed, cfg['points'], cfg['refs'], n_queries=cfg['queries'], bins=cfg['bins'])
    ransac = RansacConfig(cfg['iterations'], cfg['inlier_px'], seeds.derive(cfg.seed, 'ransac'))
    settings = LocalizationConfig(cfg['top_k'], cfg['bins'], MatchNoise(cfg['pixel_noise'], cfg['outliers']), ransac,
                                  seeds.derive(cfg.seed, 'match'))
    params = FilterParams(cfg['kt'], cfg['ks']) if cfg['protect'] else None
    results = localize_queries(scene.map, scene.queries, settings, params)

    split = 'protected' if cfg['protect'] else 'plain'
    out = cfg['out']
    out.mkdir(parents=True, exist_ok=True)
    localization_frame(results).to_csv(out / f"localization_{split}.csv", index=False)
    if cfg['map_out'] is not None:
        write_map(cfg['map_out'], scene.map)
    if results:
        summary = accuracy_report([(r.t_error, r.r_error) for r in results])
        print(json.dumps({'split': split, **summary._asdict()}))


def run_metrics(cfg: config.RunConfig) -> None:
    values = compare(read_image(cfg['a']), read_image(cfg['b']), MetricConfig(ssim_window=cfg['ssim_n']))
    if math.isinf(values['psnr']):
        values['psnr'] = "inf"
    print(json.dumps(values))


def run_report(cfg: config.RunConfig) -> None:
    tables = report(cfg['results'], FilterParams(cfg['kt'], cfg['ks']))
    write_report(tables, cfg['out'] if cfg['out'] is not None else cfg['results'])


commands: Dict[str, Callable[[config.RunConfig], None]] = {
    'synth': run_synth,
    'voxelize': run_voxelize,
    'represent': run_represent,
    'protect': run_protect,
    'train': run_train,
    'serve': run_serve,
    'client': run_client,
    'attack': run_attack,
    'localize': run_localize,
    'metrics': run_metrics,
    'report': run_report,
}


def _training_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--out', help="output directory")
    parser.add_argument('--bins', type=int)
    parser.add_argument('--width', type=int)
    parser.add_argument('--height', type=int)
    parser.add_argument('--samples', type=int, help="victim training scenes")
    parser.add_argument('--epochs', type=int)
    parser.add_argument('--learning-rate', type=float)
    parser.add_argument('--batch-size', type=int)
    parser.add_argument('--adv-weight', type=float, help="weight of the sharpness terms, 0 disables them")
    parser.add_argument('--no-watermark', dest='use_watermark', action='store_false')
    parser.add_argument('--original-epochs', type=int)
    parser.add_argument('--original-learning-rate', type=float)


def build_parser() -> argparse.ArgumentParser:
    """
    Flags that are not given stay out of the parsed namespace, so the config file and
    the defaults can fill them in.
    """
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument('--config', help="JSON file with parameters of the subcommand")
    common.add_argument('--seed', type=int, help="root seed")
    common.add_argument('--log-level', help=f"logging level, defaults to ${config.LOG_LEVEL_VARIABLE} or "
                                            f"{config.DEFAULT_LOG_LEVEL}")

    parser = _Parser(prog='evpriv', description="Privacy preserving event camera localization toolkit")
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest='command', parser_class=_Parser)

    def add(name: str, help: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, help=help, parents=[common], argument_default=argparse.SUPPRESS)

    p = add('synth', "simulate events of a moving synthetic scene")
    p.add_argument('--out', help="event file, .csv or .evs")
    p.add_argument('--kind', choices=SCENE_KINDS)
    p.add_argument('--width', type=int)
    p.add_argument('--height', type=int)
    p.add_argument('--vx', type=float, help="pixels per second")
    p.add_argument('--vy', type=float, help="pixels per second")
    p.add_argument('--threshold', type=float, help="contrast threshold")
    p.add_argument('--duration', type=float, help="seconds")
    p.add_argument('--substeps', type=int)

    p = add('voxelize', "build a voxel grid from an event file")
    p.add_argument('--in', help="event file, .csv or .evs")
    p.add_argument('--out', help="voxel grid file")
    p.add_argument('--bins', type=int)
    p.add_argument('--width', type=int)
    p.add_argument('--height', type=int)
    p.add_argument('--zero-is-negative', action='store_true', help="read CSV polarity 0 as -1")

    p = add('represent', "render an event representation baseline")
    p.add_argument('--in', help="event file, or a voxel grid for voxel_frame")
    p.add_argument('--out', help="image file, .pgm or .img")
    p.add_argument('--kind', help=f"one of {', '.join(list(representations) + ['voxel_frame'])}")
    p.add_argument('--width', type=int)
    p.add_argument('--height', type=int)

    p = add('protect', "apply sensor level privacy protection to a voxel grid")
    p.add_argument('--in', help="voxel grid file")
    p.add_argument('--out', help="voxel grid file")
    p.add_argument('--kt', type=int, help="temporal median half window")
    p.add_argument('--ks', type=int, help="maximum reflection half window")
    p.add_argument('--mode', choices=MODES)
    p.add_argument('--variant', choices=VARIANTS)

    p = add('train', "train the original and the private reconstruction network")
    _training_flags(p)

    p = add('serve', "serve the middle part of a private network")
    p.add_argument('--net', help="middle part file")
    p.add_argument('--listen', help="host:port, port 0 picks a free one")
    p.add_argument('--timeout', type=float, help="session timeout in seconds")

    p = add('client', "reconstruct a voxel grid through a middle part server")
    p.add_argument('--net', help="frontal and rear part file")
    p.add_argument('--watermark', help="watermark file")
    p.add_argument('--voxel', help="voxel grid file")
    p.add_argument('--out', help="image file, .pgm or .img")
    p.add_argument('--connect', help="host:port of the server")
    p.add_argument('--timeout', type=float)

    p = add('attack', "run the split inference attack experiment")
    _training_flags(p)
    p.add_argument('--attacker-samples', type=int)
    p.add_argument('--eval-samples', type=int)

    p = add('localize', "localize queries in a synthetic scene")
    p.add_argument('--out', help="results directory")
    p.add_argument('--map-out', help="write the scene map here")
    p.add_argument('--points', type=int)
    p.add_argument('--refs', type=int)
    p.add_argument('--queries', type=int)
    p.add_argument('--bins', type=int)
    p.add_argument('--top-k', type=int)
    p.add_argument('--pixel-noise', type=float)
    p.add_argument('--outliers', type=float, help="outlier fraction of the matches")
    p.add_argument('--iterations', type=int)
    p.add_argument('--inlier-px', type=float)
    p.add_argument('--protect', action='store_true', help="protect query voxel grids at the sensor")
    p.add_argument('--kt', type=int)
    p.add_argument('--ks', type=int)

    p = add('metrics', "compare two images")
    p.add_argument('a', help="image file")
    p.add_argument('b', help="image file")
    p.add_argument('--ssim-n', type=int, help="SSIM window")

    p = add('report', "build result tables from a results directory")
    p.add_argument('--results', help="results directory")
    p.add_argument('--out', help="table directory, defaults to the results directory")
    p.add_argument('--kt', type=int)
    p.add_argument('--ks', type=int)
    return parser


def configure_logging(level_name: str) -> None:
    level = logging.getLevelName(level_name)
    if not isinstance(level, int):
        raise exceptions.ConfigError(f"unknown log level '{level_name}'")
    logging.basicConfig(format=LOG_FORMAT, stream=sys.stderr)
    logging.getLogger('evpriv').setLevel(level)


def run(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand.

    Returns:
        the exit code
    """
    try:
        args = vars(build_parser().parse_args(argv))
        command = args.pop('command', None)
        if command is None:
            raise exceptions.ConfigError(f"no subcommand given, choose from {', '.join(commands)}")
        config_file = args.pop('config', None)
        cfg = config.resolve(command, args, config_file)
        configure_logging(cfg.log_level)
        _logger.info("effective configuration %s", cfg.as_json())
        commands[command](cfg)
    except exceptions.Error as e:
        _logger.debug("%s failed", argv, exc_info=True)
        print(f"error: {e.category}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {exceptions.Error.category}: {e}", file=sys.stderr)
        return exceptions.Error.exit_code
    return 0


def main() -> None:
    sys.exit(run())
