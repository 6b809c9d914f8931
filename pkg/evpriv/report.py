"""
Result tables.

A results directory collects what the experiment subcommands write:

* ``attacks.csv``: one row per attack and splice depth
* ``localization_<split>.csv``: one row per query, ``query_id,t_err,r_err,correct``
* ``*.vox``: voxel grids whose filter statistics and filter property pass rates go into the
  filter table

report() turns them into an attack, a localization and a filter table.
"""
import logging
import math
from pathlib import Path
from typing import Dict, Mapping, Sequence, Union

import numpy as np
import pandas as pd

from evpriv import exceptions
from evpriv.attacks import ATTACKS, DEPTHS, REPORT_COLUMNS, AttackReport
from evpriv.events import VoxelGrid, read_voxel
from evpriv.localization import QueryResult, accuracy_report, is_correct
from evpriv.privacy_sensor import (VARIANTS, FilterParams, accumulation_mask, max_reflection_filter,
                                   median_filter_temporal, protect)

_logger = logging.getLogger(__name__)

ATTACKS_FILE = "attacks.csv"
LOCALIZATION_PREFIX = "localization_"
RESULT_COLUMNS = ('query_id', 't_err', 'r_err', 'correct')
LOCALIZATION_COLUMNS = ('split', 'median_t', 'median_r', 'accuracy', 'n')
FILTER_COLUMNS = ('source', 'variant', 'masked_fraction', 'changed_fraction', 'mean_abs_change',
                  'median_identity_rate', 'reflection_identity_rate')
TABLES = ('attack', 'localization', 'filter')


def attack_frame(reports: Sequence[AttackReport]) -> pd.DataFrame:
    return pd.DataFrame([report.as_row() for report in reports], columns=list(REPORT_COLUMNS))


def localization_frame(results: Sequence[QueryResult]) -> pd.DataFrame:
    rows = [(r.query_id, r.t_error, r.r_error, r.correct) for r in results]
    return pd.DataFrame(rows, columns=list(RESULT_COLUMNS))


def median_identity_rate(grid: VoxelGrid, k_t: int) -> float:
    """
    Share of the interior entries of active, temporally monotone pixels that the median
    filter leaves unchanged. nan when there is no such entry.
    """
    data = grid.data
    bins = data.shape[0]
    if bins < 2 * k_t + 1:
        return math.nan
    steps = np.diff(data, axis=0)
    candidates = (np.all(steps >= 0, axis=0) | np.all(steps <= 0, axis=0)) & np.any(data != 0, axis=0)
    if not candidates.any():
        return math.nan
    interior = slice(k_t, bins - k_t)
    kept = median_filter_temporal(grid, k_t).data[interior] == data[interior]
    return float(kept[:, candidates].mean())


def reflection_identity_rate(grid: VoxelGrid, k_s: int) -> float:
    """
    Share of entries the maximum reflection filter leaves unchanged, counted on slices
    that are point symmetric about their peak and on entries whose window holds that
    peak and whose mirror image lies in the frame. nan when there is no such entry.
    """
    data = grid.data
    reflected = max_reflection_filter(grid, k_s).data
    _, height, width = data.shape
    rows, cols = np.mgrid[0:height, 0:width]
    passed = total = 0
    for plane, filtered in zip(data, reflected):
        if not plane.any():
            continue
        m0, n0 = np.unravel_index(np.argmax(np.abs(plane)), plane.shape)
        mirror_rows, mirror_cols = 2 * m0 - rows, 2 * n0 - cols
        inside = (mirror_rows >= 0) & (mirror_rows < height) & (mirror_cols >= 0) & (mirror_cols < width)
        if not np.array_equal(plane[inside], plane[mirror_rows[inside], mirror_cols[inside]]):
            continue
        near = inside & (np.abs(rows - m0) <= k_s) & (np.abs(cols - n0) <= k_s)
        passed += int(np.sum(filtered[near] == plane[near]))
        total += int(near.sum())
    return passed / total if total else math.nan


def filter_stats(grid: VoxelGrid, params: FilterParams = FilterParams(), variant: str = 'full') -> dict:
    """Share of masked pixels, share of changed entries and mean absolute change of one variant."""
    protected = protect(grid, params, variant=variant)
    change = np.abs(protected.data - grid.data)
    return {
        'variant': variant,
        'masked_fraction': 1.0 if variant == 'no_blend' else accumulation_mask(grid).density,
        'changed_fraction': float(np.mean(change > 0)) if change.size else 0.0,
        'mean_abs_change': float(change.mean()) if change.size else 0.0,
    }


def filter_frame(grids: Mapping[str, VoxelGrid], params: FilterParams = FilterParams()) -> pd.DataFrame:
    """One row per grid and variant. The identity rates belong to the grid and repeat on its rows."""
    rows = []
    for source, grid in grids.items():
        rates = {'median_identity_rate': median_identity_rate(grid, params.k_t),
                 'reflection_identity_rate': reflection_identity_rate(grid, params.k_s)}
        rows.extend({'source': source, **filter_stats(grid, params, variant), **rates} for variant in VARIANTS)
    return pd.DataFrame(rows, columns=list(FILTER_COLUMNS))


def attack_table(attacks: pd.DataFrame) -> pd.DataFrame:
    """Attack rows in protocol order: attack kind, then splice depth."""
    missing = [column for column in REPORT_COLUMNS if column not in attacks.columns]
    if missing:
        raise exceptions.FormatError(f"attack results lack columns: {', '.join(missing)}")
    order = {(a, d): i for i, (a, d) in enumerate((a, d) for a in ATTACKS for d in DEPTHS)}
    keys = [order.get((a, d), len(order)) for a, d in zip(attacks['attack'], attacks['depth'])]
    table = attacks.assign(_order=keys).sort_values('_order', kind='stable').drop(columns='_order')
    return table[list(REPORT_COLUMNS)].reset_index(drop=True)


def localization_table(splits: Mapping[str, pd.DataFrame]) -> pd.DataFrame:
    """Median errors and accuracy of every split, in split name order."""
    rows = []
    for split in sorted(splits):
        frame = splits[split]
        if not len(frame):
            continue
        report = accuracy_report(list(zip(frame['t_err'], frame['r_err'])))
        rows.append((split, report.median_t, report.median_r, report.accuracy, report.n))
    return pd.DataFrame(rows, columns=list(LOCALIZATION_COLUMNS))


def read_results(path: Union[str, Path]) -> pd.DataFrame:
    frame = pd.read_csv(path)
    missing = [column for column in RESULT_COLUMNS if column not in frame.columns]
    if missing:
        raise exceptions.FormatError(f"{path} lacks columns: {', '.join(missing)}")
    frame['correct'] = [is_correct(t, r) for t, r in zip(frame['t_err'], frame['r_err'])]
    return frame


def report(results: Union[str, Path], params: FilterParams = FilterParams()) -> Dict[str, pd.DataFrame]:
    """
    Build the attack, localization and filter tables of a results directory. Absent
    inputs give empty tables with headers.

    Raises:
        InterfaceError: if the results directory does not exist
    """
    results = Path(results)
    if not results.is_dir():
        raise exceptions.InterfaceError(f"results directory {results} does not exist")

    attacks_path = results / ATTACKS_FILE
    if attacks_path.exists():
        attacks = attack_table(pd.read_csv(attacks_path))
    else:
        attacks = pd.DataFrame(columns=list(REPORT_COLUMNS))

    splits = {path.stem[len(LOCALIZATION_PREFIX):]: read_results(path)
              for path in sorted(results.glob(f"{LOCALIZATION_PREFIX}*.csv"))}
    grids = {path.name: read_voxel(path) for path in sorted(results.glob("*.vox"))}
    _logger.info("report over %s: %d attack rows, %d localization splits, %d voxel grids", results, len(attacks),
                 len(splits), len(grids))
    return {
        'attack': attacks,
        'localization': localization_table(splits),
        'filter': filter_frame(grids, params),
    }


def write_report(tables: Mapping[str, pd.DataFrame], out: Union[str, Path]) -> Dict[str, Path]:
    """Write ``<name>_table.csv`` for every table."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    for name in TABLES:
        path = out / f"{name}_table.csv"
        tables[name].to_csv(path, index=False)
        written[name] = path
    return written
