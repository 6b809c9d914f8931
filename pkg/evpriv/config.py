"""
Run configuration of the command line interface.

Every subcommand has a flat parameter set with documented defaults. A run resolves it
from three layers: command line flags override a JSON config file, which overrides the
defaults. Unknown keys are rejected and every path is made absolute before anything
runs.
"""
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from evpriv import exceptions

_logger = logging.getLogger(__name__)

LOG_LEVEL_VARIABLE = "EVPRIV_LOG_LEVEL"
DEFAULT_LOG_LEVEL = "INFO"
GLOBAL_KEYS = ('seed', 'log_level')

defaults: Dict[str, Dict[str, Any]] = {
    'synth': {
        'out': None, 'kind': 'texture', 'width': 32, 'height': 32, 'vx': 8.0, 'vy': 0.0, 'threshold': 0.2,
        'duration': 1.0, 'substeps': 16,
    },
    'voxelize': {
        'in': None, 'out': None, 'bins': 50, 'width': None, 'height': None, 'zero_is_negative': False,
    },
    'represent': {
        'in': None, 'out': None, 'kind': 'histogram', 'width': None, 'height': None,
    },
    'protect': {
        'in': None, 'out': None, 'kt': 13, 'ks': 23, 'mode': 'dense', 'variant': 'full',
    },
    'train': {
        'out': None, 'bins': 50, 'width': 16, 'height': 16, 'samples': 64, 'epochs': 10, 'learning_rate': 1e-4,
        'batch_size': 2, 'adv_weight': 1.0, 'use_watermark': True, 'original_epochs': 10,
        'original_learning_rate': 1e-3,
    },
    'serve': {
        'net': None, 'listen': '127.0.0.1:0', 'timeout': 30.0,
    },
    'client': {
        'net': None, 'watermark': None, 'voxel': None, 'out': None, 'connect': None, 'timeout': 30.0,
    },
    'attack': {
        'out': None, 'bins': 50, 'width': 16, 'height': 16, 'samples': 64, 'attacker_samples': 64,
        'eval_samples': 8, 'epochs': 10, 'learning_rate': 1e-4, 'batch_size': 2, 'adv_weight': 1.0,
        'use_watermark': True, 'original_epochs': 10, 'original_learning_rate': 1e-3,
    },
    'localize': {
        'out': None, 'map_out': None, 'points': 200, 'refs': 20, 'queries': 50, 'bins': 10, 'top_k': 3,
        'pixel_noise': 1.0, 'outliers': 0.1, 'iterations': 1000, 'inlier_px': 3.0, 'protect': False, 'kt': 13,
        'ks': 23,
    },
    'metrics': {
        'a': None, 'b': None, 'ssim_n': 11,
    },
    'report': {
        'results': None, 'out': None, 'kt': 13, 'ks': 23,
    },
}

# parameters holding file system paths, and those that must exist before the run
path_keys = {'in', 'out', 'map_out', 'net', 'voxel', 'watermark', 'a', 'b', 'results'}
input_keys = {'in', 'net', 'voxel', 'watermark', 'a', 'b', 'results'}
required: Dict[str, tuple] = {
    'synth': ('out',),
    'voxelize': ('in', 'out'),
    'represent': ('in', 'out'),
    'protect': ('in', 'out'),
    'train': ('out',),
    'serve': ('net',),
    'client': ('net', 'watermark', 'voxel', 'out', 'connect'),
    'attack': ('out',),
    'localize': ('out',),
    'metrics': ('a', 'b'),
    'report': ('results',),
}


@dataclass(frozen=True)
class RunConfig:
    """
    The effective configuration of one command line run.

    Args:
        command: the subcommand
        params: the subcommand's parameters, paths as absolute ``Path`` objects
        seed: root seed of every random generator in the run
        log_level: name of the logging level
    """
    command: str
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0
    log_level: str = DEFAULT_LOG_LEVEL

    def __getitem__(self, key: str) -> Any:
        return self.params[key]

    def as_dict(self) -> Dict[str, Any]:
        params = {key: str(value) if isinstance(value, Path) else value for key, value in self.params.items()}
        return {'command': self.command, 'seed': self.seed, 'log_level': self.log_level, 'params': params}

    def as_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        values = json.loads(Path(path).read_text())
    except OSError as e:
        raise exceptions.ConfigError(f"cannot read config file {path}: {e}") from e
    except ValueError as e:
        raise exceptions.ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(values, dict):
        raise exceptions.ConfigError(f"config file {path} must hold a JSON object")
    _logger.debug("read %d settings from %s", len(values), path)
    return values


def resolve(command: str, flags: Optional[Mapping[str, Any]] = None, config_file: Optional[Union[str, Path]] = None,
            environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    """
    Merge defaults, config file and flags into the effective run configuration.

    Flags set to None count as not given.

    Raises:
        ConfigError: for unknown subcommands, unknown keys, missing required parameters or
            input paths that do not exist
    """
    if command not in defaults:
        raise exceptions.ConfigError(f"unknown subcommand '{command}', choose from {', '.join(defaults)}")
    environ = os.environ if environ is None else environ
    known = set(defaults[command]) | set(GLOBAL_KEYS)

    layers = [read_config_file(config_file)] if config_file is not None else []
    layers.append({key: value for key, value in (flags or {}).items() if value is not None})

    merged: Dict[str, Any] = dict(defaults[command])
    merged['seed'] = 0
    merged['log_level'] = environ.get(LOG_LEVEL_VARIABLE, DEFAULT_LOG_LEVEL)
    for layer in layers:
        unknown = sorted(set(layer) - known)
        if unknown:
            raise exceptions.ConfigError(f"unknown {command} parameters: {', '.join(unknown)}")
        merged.update(layer)

    seed = merged.pop('seed')
    log_level = str(merged.pop('log_level')).upper()
    if not isinstance(seed, int) or seed < 0:
        raise exceptions.ConfigError(f"seed must be a non-negative integer, got {seed!r}")

    missing = [key for key in required[command] if merged.get(key) is None]
    if missing:
        raise exceptions.ConfigError(f"{command} is missing required parameters: {', '.join(missing)}")
    for key in path_keys:
        if merged.get(key) is not None:
            merged[key] = Path(merged[key]).expanduser().resolve()
    absent = [f"{key}={merged[key]}" for key in sorted(input_keys) if merged.get(key) is not None
              and not merged[key].exists()]
    if absent:
        raise exceptions.ConfigError(f"missing inputs: {', '.join(absent)}")
    return RunConfig(command, merged, seed, log_level)
