"""
Attacks an honest-but-curious inference provider can mount on split inference.

The provider sees the frontal activations ``F1'(E + w)`` and holds the shared middle
part F2'. It can

* run the original network's later layers on them (swapped layer inference),
* train a network of its own from scratch and splice its later layers in (generic
  re-training), or
* do the same starting from the shared middle part (targeted re-training).

Every attack is evaluated at four splice depths: after layer 2, 3 and 4, and at the end
of the middle part. None of the attacker functions accepts a watermark.
"""
import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from evpriv import exceptions, seeds
from evpriv.events import FrameImage, VoxelGrid
from evpriv.quality_metrics import MetricConfig, mae, psnr_or_inf, ssim
from evpriv.recon_net import (DEFAULT_WIDTHS, ConvNetParams, Layers, NoiseWatermark, TrainConfig, TrainResult,
                              fit_reconstruction, forward, infuse, init_params, make_watermark, reconstruct_batch,
                              run_layers, train_private, train_supervised)
from evpriv.synth import SceneSpec, make_dataset

_logger = logging.getLogger(__name__)

ATTACKS = ('swapped', 'generic', 'targeted')
DEPTHS = ('L2', 'L3', 'L4', 'MID')
REPORT_COLUMNS = ('attack', 'depth', 'mae', 'psnr', 'ssim', 'n')


def depth_index(label: str, params: ConvNetParams) -> int:
    """
    Number of victim layers evaluated before the splice.

    Raises:
        ConfigError: for unknown labels
        ShapeError: if the depth is not visible to the provider
    """
    if label == 'MID':
        depth = params.split_points[1]
    elif label in DEPTHS:
        depth = int(label[1:])
    else:
        raise exceptions.ConfigError(f"unknown splice depth '{label}', choose from {', '.join(DEPTHS)}")
    if not params.split_points[0] <= depth < len(params.layers):
        raise exceptions.ShapeError(f"splice depth {label} (after layer {depth}) is outside the provider's view of "
                                    f"a {len(params.layers)} layer network split at {params.split_points}")
    return depth


def splice(victim: ConvNetParams, other: ConvNetParams, depth: int, grid: VoxelGrid) -> FrameImage:
    """
    Run the victim's first ``depth`` layers on an (already infused) voxel grid and the
    other network's layers from ``depth`` on.
    """
    if len(other.layers) != len(victim.layers) or other.layers[depth].c_in != victim.layers[depth - 1].c_out:
        raise exceptions.ShapeError(f"cannot splice after layer {depth}: victim produces "
                                    f"{victim.layers[depth - 1].c_out} channels, attacker expects "
                                    f"{other.layers[depth].c_in}")
    a = victim.split_points[0]
    activation = run_layers(victim.frontal, grid.data)
    activation = run_layers(victim.layers[a:depth], activation)
    out = run_layers(other.layers[depth:], activation)
    return FrameImage(out[0].astype(np.float64))


def attack_swapped_layer(original: ConvNetParams, private: ConvNetParams, split_label: str,
                         infused: VoxelGrid) -> FrameImage:
    """Finish the private network's inference with the original parameters."""
    return splice(private, original, depth_index(split_label, private), infused)


def _attacker_targets(original: ConvNetParams, data: Sequence[VoxelGrid]) -> np.ndarray:
    if not data:
        raise exceptions.OperationalError("attacker needs training data")
    return reconstruct_batch(original, np.stack([grid.data for grid in data]))


def attack_generic_retrain(original: ConvNetParams, data: Sequence[VoxelGrid], cfg: TrainConfig = TrainConfig()
                           ) -> TrainResult:
    """
    Train a randomly initialised network to reproduce the public original network on
    the attacker's own (watermark free) voxels.
    """
    initial = init_params(original.bins, original.widths, original.split_points, seed=seeds.derive(cfg.seed, 'generic'))
    return train_supervised(initial, data, _attacker_targets(original, data), cfg, label="generic attack")


def targeted_init(shared_middle: Layers, original: ConvNetParams, seed: int) -> ConvNetParams:
    """Random initialisation whose middle part is the shared F2'."""
    initial = init_params(original.bins, original.widths, original.split_points, seed=seeds.derive(seed, 'targeted'))
    return initial.with_middle(shared_middle)


def attack_targeted_retrain(shared_middle: Layers, original: ConvNetParams, data: Sequence[VoxelGrid],
                            cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """As attack_generic_retrain(), starting from the shared middle part."""
    initial = targeted_init(shared_middle, original, cfg.seed)
    return train_supervised(initial, data, _attacker_targets(original, data), cfg, label="targeted attack")


@dataclass(frozen=True)
class AttackReport:
    attack: str
    depth: str
    mae: float
    psnr: float
    ssim: float
    n: int

    def as_row(self) -> dict:
        return asdict(self)


def summarize(attack: str, depth: str, images: Sequence[FrameImage], references: Sequence[FrameImage],
              metric_cfg: MetricConfig = MetricConfig()) -> AttackReport:
    """Metrics of images against their references, averaged over the pairs."""
    if len(images) != len(references) or not images:
        raise exceptions.OperationalError(f"need matching non-empty image sets, got {len(images)} and "
                                          f"{len(references)}")
    return AttackReport(
        attack=attack,
        depth=depth,
        mae=float(np.mean([mae(i, r) for i, r in zip(images, references)])),
        psnr=float(np.mean([psnr_or_inf(i, r, metric_cfg) for i, r in zip(images, references)])),
        ssim=float(np.mean([ssim(i, r, metric_cfg) for i, r in zip(images, references)])),
        n=len(images),
    )


def _victim_input(grid: VoxelGrid, watermark: Optional[NoiseWatermark]) -> VoxelGrid:
    return infuse(grid, watermark) if watermark is not None else grid


def evaluate_attacks(original: ConvNetParams, private: ConvNetParams, watermark: Optional[NoiseWatermark],
                     scenes: Sequence[VoxelGrid], attackers: Dict[str, ConvNetParams],
                     metric_cfg: MetricConfig = MetricConfig()) -> List[AttackReport]:
    """
    One report per attack and splice depth. Attack images are compared to the original
    network's reconstruction of the clean voxels.

    Args:
        original: the public original network F
        private: the victim's private network F'
        watermark: the victim's watermark, used only to form the victim's inputs (None for a
            victim trained without one)
        scenes: clean evaluation voxels
        attackers: re-trained attacker networks under the keys ``generic`` and ``targeted``
        metric_cfg: metric settings
    """
    missing = [kind for kind in ATTACKS[1:] if kind not in attackers]
    if missing:
        raise exceptions.InterfaceError(f"missing attacker networks: {', '.join(missing)}")
    references = [forward(original, grid) for grid in scenes]
    infused = [_victim_input(grid, watermark) for grid in scenes]
    others = {'swapped': original, **attackers}

    reports = []
    for kind in ATTACKS:
        for label in DEPTHS:
            depth = depth_index(label, private)
            images = [splice(private, others[kind], depth, grid) for grid in infused]
            reports.append(summarize(kind, label, images, references, metric_cfg))
            _logger.debug("%s attack at %s: mae %.4f", kind, label, reports[-1].mae)
    return reports


def legit_report(original: ConvNetParams, private: ConvNetParams, watermark: Optional[NoiseWatermark],
                 scenes: Sequence[VoxelGrid], metric_cfg: MetricConfig = MetricConfig()) -> AttackReport:
    """Quality of the victim's own reconstruction ``F'(E + w)`` against ``F(E)``."""
    references = [forward(original, grid) for grid in scenes]
    images = [forward(private, _victim_input(grid, watermark)) for grid in scenes]
    return summarize('legit', '-', images, references, metric_cfg)


class WatermarkAblation(NamedTuple):
    clean_mae: float
    infused_mae: float


def watermark_ablation(original: ConvNetParams, attacker: ConvNetParams, scenes: Sequence[VoxelGrid],
                       watermark: NoiseWatermark) -> WatermarkAblation:
    """
    MAE of an attacker network on clean and on watermark-infused voxels, both against
    the original reconstruction of the clean voxels.
    """
    references = [forward(original, grid) for grid in scenes]
    clean = float(np.mean([mae(forward(attacker, grid), r) for grid, r in zip(scenes, references)]))
    infused = float(np.mean([mae(forward(attacker, infuse(grid, watermark)), r)
                             for grid, r in zip(scenes, references)]))
    return WatermarkAblation(clean, infused)


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Sizes of the seeded attack experiment. Victim and attacker scenes are drawn from
    disjoint seed labels.
    """
    bins: int = 50
    width: int = 16
    height: int = 16
    train_samples: int = 64
    attacker_samples: int = 64
    eval_samples: int = 8
    adv_weight: float = 1.0
    use_watermark: bool = True
    original_epochs: int = 10
    original_learning_rate: float = 1e-3


class ExperimentResult(NamedTuple):
    reports: List[AttackReport]
    legit: AttackReport
    ablation: WatermarkAblation
    private_history: List[float]


class Victim(NamedTuple):
    """Everything the victim side of an experiment produces."""
    original: ConvNetParams
    private: TrainResult
    watermark: NoiseWatermark
    use_watermark: bool
    held_out: List[VoxelGrid]


def prepare_victim(seed: int, exp: ExperimentConfig = ExperimentConfig(), cfg: TrainConfig = TrainConfig(),
                   widths: Optional[Sequence[int]] = None) -> Victim:
    """Fit the original network on rendered frames and train the private network against it."""
    template = SceneSpec(kind='texture', width=exp.width, height=exp.height)
    victim = make_dataset(seeds.derive(seed, 'victim'), exp.train_samples + exp.eval_samples, template, exp.bins)
    train, held_out = victim[:exp.train_samples], victim[exp.train_samples:]

    shape_widths = tuple(widths) if widths is not None else DEFAULT_WIDTHS
    original = init_params(exp.bins, shape_widths, seed=seeds.derive(seed, 'original'))
    original = fit_reconstruction(original, [s.voxel for s in train], [s.frame for s in train],
                                  TrainConfig(learning_rate=exp.original_learning_rate, batch_size=cfg.batch_size,
                                              epochs=exp.original_epochs, seed=seeds.derive(seed, 'fit'))).params

    watermark = make_watermark(seeds.derive(seed, 'watermark'), (exp.bins, exp.height, exp.width))
    private = train_private(original, [s.voxel for s in train], watermark if exp.use_watermark else None, cfg,
                            adv_weight=exp.adv_weight)
    return Victim(original, private, watermark, exp.use_watermark, [s.voxel for s in held_out])


def run_attack_experiment(seed: int, exp: ExperimentConfig = ExperimentConfig(), cfg: TrainConfig = TrainConfig(),
                          metric_cfg: MetricConfig = MetricConfig(),
                          widths: Optional[Sequence[int]] = None) -> ExperimentResult:
    """
    Build the original network, train the private one, train both attackers and
    evaluate everything, all from one root seed.
    """
    victim = prepare_victim(seed, exp, cfg, widths)
    template = SceneSpec(kind='texture', width=exp.width, height=exp.height)
    attacker_voxels = [s.voxel for s in make_dataset(seeds.derive(seed, 'attacker'), exp.attacker_samples, template,
                                                     exp.bins)]
    original, private = victim.original, victim.private.params
    generic = attack_generic_retrain(original, attacker_voxels, cfg).params
    targeted = attack_targeted_retrain(private.middle, original, attacker_voxels, cfg).params

    victim_watermark = victim.watermark if victim.use_watermark else None
    scenes = victim.held_out
    reports = evaluate_attacks(original, private, victim_watermark, scenes,
                               {'generic': generic, 'targeted': targeted}, metric_cfg)
    return ExperimentResult(reports, legit_report(original, private, victim_watermark, scenes, metric_cfg),
                            watermark_ablation(original, generic, scenes, victim.watermark), victim.private.history)
