"""
Structure-based localization on synthetic ground-truth scenes.

A scene map holds a point cloud and pose-annotated reference views, each with a global
descriptor, the keypoints of the points it sees and their visibility list. A query is
localized by retrieving the top-K references by descriptor distance, choosing the one
that shares the most points with the query, lifting the 2D-2D matches to 2D-3D through
its visibility list and solving PnP-RANSAC.

Views are observed through the event pipeline: a short sideways camera motion is
rendered, turned into events, voxelized (optionally protected at the sensor) and
collapsed into the frame the descriptor is computed on.

Poses map world to camera coordinates, ``x_cam = R X + t``; the camera looks along +z
with x to the right and y down.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

from evpriv import exceptions, seeds
from evpriv._codec import formats
from evpriv.events import FrameImage, VoxelGrid, voxel_frame, voxelize
from evpriv.privacy_sensor import FilterParams, protect
from evpriv.synth import MIN_INTENSITY, simulate_frames

_logger = logging.getLogger(__name__)

DESCRIPTOR_LENGTH = 256
DESCRIPTOR_GRID = 8
MIN_SAMPLE = 6
MIN_MATCHES = 4
T_THRESHOLD = 0.1
R_THRESHOLD = 5.0
REFINE_STEPS = 20
ORTHONORMAL_TOLERANCE = 1e-9

# event observation of a view
VIEW_FRAMES = 6
VIEW_BASELINE = 0.05
VIEW_THRESHOLD = 0.2
SPLAT_SIGMA = 1.0


class Intrinsics(NamedTuple):
    fx: float
    fy: float
    cx: float
    cy: float

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


DEFAULT_INTRINSICS = Intrinsics(60.0, 60.0, 32.0, 24.0)
DEFAULT_SIZE = (64, 48)


def _orthonormalize(matrix: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(matrix)
    return u @ vt


@dataclass(frozen=True)
class Pose:
    """
    A world to camera rigid transform.

    Raises:
        DataError: if R is not a proper rotation
    """
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        rotation = np.array(self.R, dtype=np.float64, copy=True)
        translation = np.array(self.t, dtype=np.float64, copy=True).reshape(-1)
        if rotation.shape != (3, 3) or translation.shape != (3,):
            raise exceptions.ShapeError(f"pose needs a 3x3 rotation and a 3 vector, got {rotation.shape} and "
                                        f"{translation.shape}")
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise exceptions.DataError("pose contains non-finite values")
        if np.abs(rotation.T @ rotation - np.eye(3)).max() >= ORTHONORMAL_TOLERANCE or np.linalg.det(rotation) <= 0:
            raise exceptions.DataError("pose rotation is not orthonormal with determinant +1")
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, 'R', rotation)
        object.__setattr__(self, 't', translation)

    @classmethod
    def look_at(cls, center: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> 'Pose':
        center = np.asarray(center, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - center
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, up)
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rotation = _orthonormalize(np.stack([right, down, forward]))
        return cls(rotation, -rotation @ center)

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def shifted(self, offset: float) -> 'Pose':
        """The pose with the camera moved ``offset`` along its own x axis."""
        return Pose(self.R, self.t - np.array([offset, 0.0, 0.0]))

    def project(self, points: np.ndarray, intrinsics: Intrinsics) -> Tuple[np.ndarray, np.ndarray]:
        """
        Returns:
            pixel coordinates (N x 2, column then row) and depths (N)
        """
        camera = np.asarray(points, dtype=np.float64) @ self.R.T + self.t
        depth = camera[:, 2]
        with np.errstate(divide='ignore', invalid='ignore'):
            pixels = np.stack([intrinsics.fx * camera[:, 0] / depth + intrinsics.cx,
                               intrinsics.fy * camera[:, 1] / depth + intrinsics.cy], axis=1)
        return pixels, depth


@dataclass(frozen=True)
class GlobalDescriptor:
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise exceptions.DataError("descriptor contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    def distance(self, other: 'GlobalDescriptor') -> float:
        if other.values.shape != self.values.shape:
            raise exceptions.ShapeError(f"descriptor lengths differ: {len(self.values)} and {len(other.values)}")
        return float(np.linalg.norm(self.values - other.values))


@dataclass(frozen=True)
class Reference:
    """A pose-annotated map view; ``keypoints[i]`` is the projection of ``visibility[i]``."""
    pose: Pose
    descriptor: GlobalDescriptor
    keypoints: np.ndarray = field(repr=False)
    visibility: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class SceneMap:
    points3d: np.ndarray = field(repr=False)
    references: Tuple[Reference, ...]
    intrinsics: Intrinsics = DEFAULT_INTRINSICS
    size: Tuple[int, int] = DEFAULT_SIZE

    def __post_init__(self):
        points = np.array(self.points3d, dtype=np.float64, copy=True)
        if points.ndim != 2 or points.shape[1] != 3:
            raise exceptions.ShapeError(f"map points must be N x 3, got shape {points.shape}")
        points.setflags(write=False)
        object.__setattr__(self, 'points3d', points)
        object.__setattr__(self, 'references', tuple(self.references))
        object.__setattr__(self, 'intrinsics', Intrinsics(*self.intrinsics))
        for index, reference in enumerate(self.references):
            visibility = np.asarray(reference.visibility)
            if len(visibility) and (visibility.min() < 0 or visibility.max() >= len(points)):
                raise exceptions.DataError(f"reference {index} sees points outside the map")
            if np.shape(reference.keypoints) != (len(visibility), 2):
                raise exceptions.ShapeError(f"reference {index} has {np.shape(reference.keypoints)} keypoints for "
                                            f"{len(visibility)} visible points")


class Query(NamedTuple):
    """A held-out view with its ground-truth pose and exact keypoints."""
    pose: Pose
    keypoints: np.ndarray
    visibility: np.ndarray


class SyntheticScene(NamedTuple):
    map: SceneMap
    queries: List[Query]


def visible_points(points: np.ndarray, pose: Pose, intrinsics: Intrinsics, size: Tuple[int, int]
                   ) -> Tuple[np.ndarray, np.ndarray]:
    """Indices and pixel positions of the points in front of the camera and inside the frame."""
    pixels, depth = pose.project(points, intrinsics)
    width, height = size
    with np.errstate(invalid='ignore'):
        inside = (depth > 0) & (pixels[:, 0] >= 0) & (pixels[:, 0] < width) \
            & (pixels[:, 1] >= 0) & (pixels[:, 1] < height)
    indices = np.flatnonzero(inside)
    return indices, pixels[indices]


def render_view(points: np.ndarray, pose: Pose, intrinsics: Intrinsics, size: Tuple[int, int]) -> np.ndarray:
    """Intensity image of the point cloud drawn as Gaussian splats on a dim background."""
    width, height = size
    pixels, depth = pose.project(points, intrinsics)
    pixels = pixels[depth > 0]
    scale = 2 * SPLAT_SIGMA ** 2
    rows = np.exp(-(np.arange(height)[None, :] - pixels[:, 1:2]) ** 2 / scale)
    cols = np.exp(-(np.arange(width)[None, :] - pixels[:, 0:1]) ** 2 / scale)
    splats = np.einsum('ph,pw->hw', rows, cols)
    return MIN_INTENSITY + (1 - MIN_INTENSITY) * np.minimum(splats, 1.0)


def view_voxel(points: np.ndarray, pose: Pose, intrinsics: Intrinsics, size: Tuple[int, int], bins: int
               ) -> VoxelGrid:
    """
    Voxel grid of the events a camera records while sliding ``VIEW_BASELINE`` sideways
    through the given pose.
    """
    offsets = np.linspace(-VIEW_BASELINE / 2, VIEW_BASELINE / 2, VIEW_FRAMES)
    frames = [render_view(points, pose.shifted(offset), intrinsics, size) for offset in offsets]
    stream = simulate_frames(frames, np.linspace(0.0, 1.0, VIEW_FRAMES), VIEW_THRESHOLD)
    return voxelize(stream, bins)


def global_descriptor(image: FrameImage, length: int = DESCRIPTOR_LENGTH) -> GlobalDescriptor:
    """
    Pool the mean and standard deviation of every cell of an 8 x 8 grid, L2 normalise
    and zero pad to ``length``.
    """
    cells = 2 * DESCRIPTOR_GRID ** 2
    if length < cells:
        raise exceptions.ConfigError(f"descriptor length must be at least {cells}, got {length}")
    if image.height < DESCRIPTOR_GRID or image.width < DESCRIPTOR_GRID:
        raise exceptions.ShapeError(f"descriptor needs at least {DESCRIPTOR_GRID}x{DESCRIPTOR_GRID} pixels, got "
                                    f"{image.pixels.shape}")
    pooled = []
    for band in np.array_split(image.pixels, DESCRIPTOR_GRID, axis=0):
        for cell in np.array_split(band, DESCRIPTOR_GRID, axis=1):
            pooled.append((cell.mean(), cell.std()))
    values = np.zeros(length)
    values[:cells] = np.asarray(pooled).reshape(-1)
    norm = np.linalg.norm(values)
    return GlobalDescriptor(values / norm if norm > 0 else values)


def retrieve_topk(query: GlobalDescriptor, scene_map: SceneMap, k: int = 3) -> List[int]:
    """
    Indices of the ``k`` references closest to the query, by ascending L2 distance with
    ties going to the smaller index.
    """
    if k < 1:
        raise exceptions.ConfigError(f"K must be at least 1, got {k}")
    if not scene_map.references:
        raise exceptions.OperationalError("cannot retrieve from a map without references")
    library = np.stack([reference.descriptor.values for reference in scene_map.references])
    if library.shape[1] != len(query.values):
        raise exceptions.ShapeError(f"query descriptor has length {len(query.values)}, map descriptors "
                                    f"{library.shape[1]}")
    distances = np.linalg.norm(library - query.values, axis=1)
    return [int(i) for i in np.argsort(distances, kind='stable')[:k]]


def select_reference(query_visibility: np.ndarray, candidates: Sequence[int], scene_map: SceneMap) -> int:
    """The candidate sharing the most visible points with the query; ties keep retrieval order."""
    if not candidates:
        raise exceptions.OperationalError("no candidate references")
    shared = [len(np.intersect1d(query_visibility, scene_map.references[c].visibility)) for c in candidates]
    return int(candidates[int(np.argmax(shared))])


@dataclass(frozen=True)
class MatchNoise:
    """
    Args:
        pixel_sigma: standard deviation of the Gaussian noise added to query keypoints
        outlier_fraction: share of correspondences lifted to a wrong 3D point
    """
    pixel_sigma: float = 0.0
    outlier_fraction: float = 0.0

    def __post_init__(self):
        if self.pixel_sigma < 0:
            raise exceptions.ConfigError(f"pixel noise must be non-negative, got {self.pixel_sigma}")
        if not 0 <= self.outlier_fraction <= 1:
            raise exceptions.ConfigError(f"outlier fraction must be within [0, 1], got {self.outlier_fraction}")


class Correspondences(NamedTuple):
    image_points: np.ndarray
    world_points: np.ndarray
    outliers: np.ndarray

    def __len__(self):
        return len(self.image_points)


def match_and_lift(query: Query, reference: int, scene_map: SceneMap, noise: MatchNoise = MatchNoise(),
                   rng: Optional[np.random.Generator] = None) -> Correspondences:
    """
    Match the query against a reference through the ground-truth point identities and
    lift the matches to 3D through the reference's visibility list.

    Exactly ``round(outlier_fraction * n)`` correspondences get a wrong 3D point.

    Raises:
        OperationalError: with fewer than 4 correspondences
    """
    rng = rng if rng is not None else seeds.generator(0, 'match')
    ref = scene_map.references[reference]
    shared, in_query, in_reference = np.intersect1d(query.visibility, ref.visibility, return_indices=True)
    n = len(shared)
    if n < MIN_MATCHES:
        raise exceptions.OperationalError(f"reference {reference} shares only {n} points with the query, need "
                                          f"{MIN_MATCHES}")

    image_points = np.array(query.keypoints[in_query], dtype=np.float64)
    if noise.pixel_sigma > 0:
        image_points += rng.normal(0.0, noise.pixel_sigma, image_points.shape)
    world_points = np.array(scene_map.points3d[ref.visibility[in_reference]])

    outliers = np.zeros(n, dtype=bool)
    count = int(math.floor(noise.outlier_fraction * n + 0.5))
    if count:
        chosen = np.sort(rng.choice(n, size=count, replace=False))
        donors = np.roll(chosen, 1) if count > 1 else (chosen + 1) % n
        world_points[chosen] = scene_map.points3d[ref.visibility[in_reference[donors]]]
        outliers[chosen] = True
    return Correspondences(image_points, world_points, outliers)


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 1000
    inlier_px: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise exceptions.ConfigError(f"RANSAC needs at least one iteration, got {self.iterations}")
        if not self.inlier_px > 0:
            raise exceptions.ConfigError(f"inlier threshold must be positive, got {self.inlier_px}")


class PnPResult(NamedTuple):
    pose: Pose
    inliers: np.ndarray


def _dlt(image_points: np.ndarray, world_points: np.ndarray, intrinsics: Intrinsics
         ) -> Tuple[np.ndarray, np.ndarray]:
    """
    Batched DLT on normalised image coordinates.

    Args:
        image_points: hypotheses x samples x 2
        world_points: hypotheses x samples x 3

    Returns:
        rotations (hypotheses x 3 x 3) and translations (hypotheses x 3)
    """
    xn = (image_points[..., 0] - intrinsics.cx) / intrinsics.fx
    yn = (image_points[..., 1] - intrinsics.cy) / intrinsics.fy
    homogeneous = np.concatenate([world_points, np.ones(world_points.shape[:-1] + (1,))], axis=-1)
    zeros = np.zeros_like(homogeneous)
    first = np.concatenate([zeros, -homogeneous, yn[..., None] * homogeneous], axis=-1)
    second = np.concatenate([homogeneous, zeros, -xn[..., None] * homogeneous], axis=-1)
    system = np.concatenate([first, second], axis=-2)
    _, _, vt = np.linalg.svd(system)
    projection = vt[..., -1, :].reshape(-1, 3, 4)
    flip = np.linalg.det(projection[:, :, :3]) < 0
    projection[flip] *= -1
    u, s, vt = np.linalg.svd(projection[:, :, :3])
    with np.errstate(divide='ignore', invalid='ignore'):
        translation = projection[:, :, 3] / s.mean(axis=1)[:, None]
    return u @ vt, translation


def _reprojection_errors(rotations: np.ndarray, translations: np.ndarray, image_points: np.ndarray,
                         world_points: np.ndarray, intrinsics: Intrinsics) -> np.ndarray:
    """Pixel errors of every correspondence under every hypothesis, infinite behind the camera."""
    camera = np.einsum('kij,nj->kni', rotations, world_points) + translations[:, None, :]
    depth = camera[..., 2]
    with np.errstate(divide='ignore', invalid='ignore'):
        u = intrinsics.fx * camera[..., 0] / depth + intrinsics.cx
        v = intrinsics.fy * camera[..., 1] / depth + intrinsics.cy
        errors = np.hypot(u - image_points[:, 0], v - image_points[:, 1])
    errors[~(depth > 0) | ~np.isfinite(errors)] = np.inf
    return errors


def _refine(rotation: np.ndarray, translation: np.ndarray, image_points: np.ndarray, world_points: np.ndarray,
            intrinsics: Intrinsics) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Newton on the squared reprojection error, rotation updated on the left."""
    fx, fy = intrinsics.fx, intrinsics.fy
    for _ in range(REFINE_STEPS):
        rotated = world_points @ rotation.T
        camera = rotated + translation
        x, y, z = camera[:, 0], camera[:, 1], camera[:, 2]
        residual = np.stack([fx * x / z + intrinsics.cx - image_points[:, 0],
                             fy * y / z + intrinsics.cy - image_points[:, 1]], axis=1)

        projection = np.zeros((len(z), 2, 3))
        projection[:, 0, 0] = fx / z
        projection[:, 0, 2] = -fx * x / z ** 2
        projection[:, 1, 1] = fy / z
        projection[:, 1, 2] = -fy * y / z ** 2
        skew = np.zeros((len(z), 3, 3))
        skew[:, 0, 1], skew[:, 0, 2] = -rotated[:, 2], rotated[:, 1]
        skew[:, 1, 0], skew[:, 1, 2] = rotated[:, 2], -rotated[:, 0]
        skew[:, 2, 0], skew[:, 2, 1] = -rotated[:, 1], rotated[:, 0]
        jacobian = np.concatenate([projection @ -skew, projection], axis=2).reshape(-1, 6)

        step = np.linalg.lstsq(jacobian, -residual.reshape(-1), rcond=None)[0]
        rotation = Rotation.from_rotvec(step[:3]).as_matrix() @ rotation
        translation = translation + step[3:]
        if np.linalg.norm(step) < 1e-12:
            break
    return _orthonormalize(rotation), translation


def pnp_ransac(correspondences: Correspondences, intrinsics: Intrinsics, cfg: RansacConfig = RansacConfig()
               ) -> PnPResult:
    """
    Estimate the camera pose from 2D-3D correspondences.

    Six point DLT hypotheses are scored by their number of correspondences with a
    reprojection error below ``inlier_px``; the best one is refined by Gauss-Newton on
    its inliers.

    Raises:
        DataError: with fewer than six correspondences
        OperationalError: if no hypothesis has six inliers
    """
    image_points = np.asarray(correspondences.image_points, dtype=np.float64)
    world_points = np.asarray(correspondences.world_points, dtype=np.float64)
    n = len(image_points)
    if n < MIN_SAMPLE:
        raise exceptions.DataError(f"PnP needs at least {MIN_SAMPLE} correspondences, got {n}")

    rng = seeds.generator(cfg.seed, 'ransac')
    samples = np.argsort(rng.random((cfg.iterations, n)), axis=1)[:, :MIN_SAMPLE]
    rotations, translations = _dlt(image_points[samples], world_points[samples], intrinsics)
    errors = _reprojection_errors(rotations, translations, image_points, world_points, intrinsics)
    counts = (errors < cfg.inlier_px).sum(axis=1)
    best = int(np.argmax(counts))
    if counts[best] < MIN_SAMPLE:
        _logger.error("RANSAC found no hypothesis with %d inliers in %d iterations", MIN_SAMPLE, cfg.iterations)
        raise exceptions.OperationalError(f"no PnP hypothesis with at least {MIN_SAMPLE} inliers, best had "
                                          f"{counts[best]}")

    inliers = errors[best] < cfg.inlier_px
    rotation, translation = _refine(rotations[best], translations[best], image_points[inliers],
                                    world_points[inliers], intrinsics)
    final = _reprojection_errors(rotation[None], translation[None], image_points, world_points, intrinsics)[0]
    _logger.debug("PnP hypothesis %d: %d of %d inliers before and %d after refinement", best, counts[best], n,
                  int((final < cfg.inlier_px).sum()))
    return PnPResult(Pose(rotation, translation), np.flatnonzero(final < cfg.inlier_px))


def rotation_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic angle between two rotations, in degrees within [0, 180]."""
    relative = np.asarray(a).T @ np.asarray(b)
    cosine = (np.trace(relative) - 1) / 2
    sine = np.linalg.norm([relative[2, 1] - relative[1, 2], relative[0, 2] - relative[2, 0],
                           relative[1, 0] - relative[0, 1]]) / 2
    return math.degrees(math.atan2(sine, cosine))


def pose_errors(estimate: Pose, truth: Pose) -> Tuple[float, float]:
    """Camera center distance and rotation angle in degrees."""
    return float(np.linalg.norm(estimate.center - truth.center)), rotation_angle(estimate.R, truth.R)


def is_correct(t_error: float, r_error: float) -> bool:
    return t_error < T_THRESHOLD and r_error < R_THRESHOLD


class AccuracyReport(NamedTuple):
    median_t: float
    median_r: float
    accuracy: float
    n: int


def accuracy_report(results: Sequence[Tuple[float, float]]) -> AccuracyReport:
    """
    Median errors over the queries and the fraction localized within 0.1 m and 5 degrees.
    Failed queries count with infinite errors.
    """
    if not len(results):
        raise exceptions.OperationalError("no localization results to report")
    errors = np.asarray(results, dtype=np.float64).reshape(-1, 2)
    correct = [is_correct(t, r) for t, r in errors]
    return AccuracyReport(float(np.median(errors[:, 0])), float(np.median(errors[:, 1])),
                          float(np.mean(correct)), len(errors))


def _scene_attempt(rng: np.random.Generator, n_points: int, n_refs: int, n_queries: int):
    points = rng.uniform(-0.5, 0.5, (n_points, 3))
    angles = 2 * np.pi * np.arange(n_refs) / n_refs
    reference_poses = [Pose.look_at([2 * np.cos(a), 2 * np.sin(a), 0.3 * np.sin(2 * a)], np.zeros(3))
                       for a in angles]
    query_poses = []
    for _ in range(n_queries):
        angle = rng.uniform(0, 2 * np.pi)
        radius = 2 * rng.uniform(0.9, 1.1)
        center = [radius * np.cos(angle), radius * np.sin(angle), rng.uniform(-0.3, 0.3)]
        query_poses.append(Pose.look_at(center, rng.normal(0.0, 0.05, 3)))
    return points, reference_poses, query_poses


def _degenerate(points: np.ndarray, poses: Sequence[Pose], intrinsics: Intrinsics, size: Tuple[int, int]) -> bool:
    spread = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    if len(points) < 4 or spread[-1] < 1e-3 * spread[0]:
        return True
    return any(len(visible_points(points, pose, intrinsics, size)[0]) < MIN_SAMPLE for pose in poses)


def build_synthetic_scene(seed: int, n_points: int = 200, n_refs: int = 20, intrinsics: Intrinsics = DEFAULT_INTRINSICS,
                          n_queries: int = 50, size: Tuple[int, int] = DEFAULT_SIZE, bins: int = 10,
                          max_attempts: int = 100) -> SyntheticScene:
    """
    Random point cloud in the unit box around the origin, reference cameras on a circle
    of radius 2 looking at it and held-out queries near the same circle. Configurations
    in which a camera sees fewer than six points or the cloud is flat are resampled.

    Raises:
        OperationalError: if no valid configuration is found in ``max_attempts`` draws
    """
    if n_points < MIN_SAMPLE or n_refs < 1 or n_queries < 0:
        raise exceptions.ConfigError(f"need at least {MIN_SAMPLE} points and one reference, got {n_points} points, "
                                     f"{n_refs} references and {n_queries} queries")
    intrinsics = Intrinsics(*intrinsics)
    for attempt in range(max_attempts):
        points, reference_poses, query_poses = _scene_attempt(seeds.generator(seed, 'scene', attempt), n_points,
                                                              n_refs, n_queries)
        if not _degenerate(points, reference_poses + query_poses, intrinsics, size):
            break
        _logger.debug("scene attempt %d is degenerate, resampling", attempt)
    else:
        raise exceptions.OperationalError(f"no valid scene configuration in {max_attempts} attempts")

    references = []
    for pose in reference_poses:
        visibility, keypoints = visible_points(points, pose, intrinsics, size)
        descriptor = global_descriptor(voxel_frame(view_voxel(points, pose, intrinsics, size, bins)))
        references.append(Reference(pose, descriptor, keypoints, visibility))
    queries = []
    for pose in query_poses:
        visibility, keypoints = visible_points(points, pose, intrinsics, size)
        queries.append(Query(pose, keypoints, visibility))
    _logger.info("built scene with %d points, %d references and %d queries", n_points, n_refs, n_queries)
    return SyntheticScene(SceneMap(points, references, intrinsics, size), queries)


@dataclass(frozen=True)
class LocalizationConfig:
    """
    Args:
        top_k: number of retrieved candidate references
        bins: temporal bins of the query voxel grids
        noise: match oracle contamination
        ransac: PnP-RANSAC settings; its seed is combined with the query index
        seed: seed of the match oracle
    """
    top_k: int = 3
    bins: int = 10
    noise: MatchNoise = MatchNoise(1.0, 0.1)
    ransac: RansacConfig = RansacConfig()
    seed: int = 0


class QueryResult(NamedTuple):
    query_id: int
    t_error: float
    r_error: float
    correct: bool
    reference: int
    inliers: int


def localize_query(scene_map: SceneMap, query: Query, query_id: int, cfg: LocalizationConfig = LocalizationConfig(),
                   protect_params: Optional[FilterParams] = None) -> QueryResult:
    """
    Run one query through events, voxel grid, optional sensor protection, descriptor,
    retrieval, matching and PnP-RANSAC. Failures are reported with infinite errors.
    """
    voxel = view_voxel(scene_map.points3d, query.pose, scene_map.intrinsics, scene_map.size, cfg.bins)
    if protect_params is not None:
        voxel = protect(voxel, protect_params, mode='sparse')
    descriptor = global_descriptor(voxel_frame(voxel))
    reference = select_reference(query.visibility, retrieve_topk(descriptor, scene_map, cfg.top_k), scene_map)
    try:
        matches = match_and_lift(query, reference, scene_map, cfg.noise, seeds.generator(cfg.seed, 'match', query_id))
        ransac = RansacConfig(cfg.ransac.iterations, cfg.ransac.inlier_px,
                              seeds.derive(cfg.ransac.seed, 'ransac', query_id))
        result = pnp_ransac(matches, scene_map.intrinsics, ransac)
    except (exceptions.OperationalError, exceptions.DataError) as e:
        _logger.warning("query %d failed against reference %d: %s", query_id, reference, e)
        return QueryResult(query_id, math.inf, math.inf, False, reference, 0)
    t_error, r_error = pose_errors(result.pose, query.pose)
    return QueryResult(query_id, t_error, r_error, is_correct(t_error, r_error), reference, len(result.inliers))


def localize_queries(scene_map: SceneMap, queries: Sequence[Query], cfg: LocalizationConfig = LocalizationConfig(),
                     protect_params: Optional[FilterParams] = None) -> List[QueryResult]:
    results = [localize_query(scene_map, query, index, cfg, protect_params) for index, query in enumerate(queries)]
    if results:
        report = accuracy_report([(r.t_error, r.r_error) for r in results])
        _logger.info("localized %d queries%s: accuracy %.3f, median errors %.4f / %.3f deg", report.n,
                     " under sensor protection" if protect_params is not None else "", report.accuracy,
                     report.median_t, report.median_r)
    return results


def pack_scene_map(scene_map: SceneMap) -> bytes:
    references = [(r.pose.R, r.pose.t, r.descriptor.values, r.keypoints, r.visibility) for r in scene_map.references]
    return formats.pack_map(scene_map.size, tuple(scene_map.intrinsics), scene_map.points3d, references)


def unpack_scene_map(data: bytes) -> SceneMap:
    size, intrinsics, points, references = formats.unpack_map(data)
    return SceneMap(points, [Reference(Pose(rotation, translation), GlobalDescriptor(descriptor), keypoints, visibility)
                             for rotation, translation, descriptor, keypoints, visibility in references],
                    Intrinsics(*intrinsics), size)


def write_map(path: Union[str, Path], scene_map: SceneMap) -> None:
    Path(path).write_bytes(pack_scene_map(scene_map))


def read_map(path: Union[str, Path]) -> SceneMap:
    return unpack_scene_map(Path(path).read_bytes())
