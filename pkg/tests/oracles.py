"""
Literal, loop based reference implementations the vectorised code is checked against.
"""
import math
from typing import List

import numpy as np

from evpriv.events import EventStream
from evpriv.recon_net import LEAKY_SLOPE, ConvNetParams


def voxelize(stream: EventStream, bins: int) -> np.ndarray:
    grid = np.zeros((bins, stream.height, stream.width))
    for event in stream:
        if stream.duration > 0:
            tstar = (bins - 1) / stream.duration * (event.t - stream.t0)
        else:
            tstar = 0.0
        for l in range(bins):  # noqa: E741
            weight = max(0.0, 1.0 - abs(l - tstar))
            if weight > 0:
                grid[l, event.y, event.x] += event.p * weight
    return grid


def _median(values: List[float]) -> float:
    ordered = sorted(values)
    n = len(ordered)
    if n % 2:
        return ordered[n // 2]
    return (ordered[n // 2 - 1] + ordered[n // 2]) / 2


def median_filter(data: np.ndarray, k_t: int) -> np.ndarray:
    bins, height, width = data.shape
    out = np.empty_like(data)
    for l in range(bins):  # noqa: E741
        for m in range(height):
            for n in range(width):
                window = [data[j, m, n] for j in range(max(0, l - k_t), min(bins, l + k_t + 1))]
                out[l, m, n] = _median(window)
    return out


def max_reflection(data: np.ndarray, k_s: int) -> np.ndarray:
    bins, height, width = data.shape
    out = np.empty_like(data)
    for l in range(bins):  # noqa: E741
        for m in range(height):
            for n in range(width):
                best, best_m, best_n = -1.0, m, n
                for mm in range(m - k_s, m + k_s + 1):
                    for nn in range(n - k_s, n + k_s + 1):
                        if 0 <= mm < height and 0 <= nn < width and abs(data[l, mm, nn]) > best:
                            best, best_m, best_n = abs(data[l, mm, nn]), mm, nn
                rm, rn = 2 * best_m - m, 2 * best_n - n
                out[l, m, n] = data[l, rm, rn] if 0 <= rm < height and 0 <= rn < width else data[l, m, n]
    return out


def accumulation_mask(data: np.ndarray) -> np.ndarray:
    mass = np.abs(data).sum(axis=0)
    values = mass.ravel().tolist()
    mu = sum(values) / len(values)
    sigma = math.sqrt(sum((v - mu) ** 2 for v in values) / len(values))
    return mass > mu + sigma


def blend(data: np.ndarray, median: np.ndarray, reflected: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = np.empty_like(data)
    bins, height, width = data.shape
    for l in range(bins):  # noqa: E741
        for m in range(height):
            for n in range(width):
                u = 1.0 if mask[m, n] else 0.0
                out[l, m, n] = u * ((median[l, m, n] + reflected[l, m, n]) / 2) + (1 - u) * data[l, m, n]
    return out


def mae(a: np.ndarray, b: np.ndarray) -> float:
    total = 0.0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        total += abs(x - y)
    return total / a.size


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    total = 0.0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        total += (x - y) ** 2
    return 20 * math.log10(peak) - 10 * math.log10(total / a.size)


def ssim(a: np.ndarray, b: np.ndarray, n: int = 11, c1: float = 6.5025, c2: float = 58.5225,
         scale: float = 255.0) -> float:
    a, b = a * scale, b * scale
    height, width = a.shape
    values = []
    for i in range(height - n + 1):
        for j in range(width - n + 1):
            x = a[i:i + n, j:j + n].ravel().tolist()
            y = b[i:i + n, j:j + n].ravel().tolist()
            mx, my = sum(x) / len(x), sum(y) / len(y)
            vx = sum((v - mx) ** 2 for v in x) / len(x)
            vy = sum((v - my) ** 2 for v in y) / len(y)
            cov = sum((u - mx) * (v - my) for u, v in zip(x, y)) / len(x)
            values.append(((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return sum(values) / len(values)


def forward(params: ConvNetParams, data: np.ndarray) -> np.ndarray:
    """Direct 3x3 same-padded convolutions, one output value at a time."""
    x = np.asarray(data, dtype=np.float64)
    for layer in params.layers:
        c_in, height, width = x.shape
        out = np.zeros((layer.c_out, height, width))
        for o in range(layer.c_out):
            for r in range(height):
                for c in range(width):
                    total = layer.bias[o]
                    for i in range(3):
                        for j in range(3):
                            rr, cc = r + i - 1, c + j - 1
                            if 0 <= rr < height and 0 <= cc < width:
                                total += np.dot(x[:, rr, cc], layer.kernel[i, j, :, o])
                    out[o, r, c] = total
        if layer.activation == 'sigmoid':
            x = 1 / (1 + np.exp(-out))
        else:
            x = np.where(out > 0, out, LEAKY_SLOPE * out)
    return x[0]


def sobel_sharpness(image: np.ndarray) -> float:
    sx = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
    height, width = image.shape
    total = 0.0
    for r in range(1, height - 1):
        for c in range(1, width - 1):
            gx = sum(sx[i][j] * image[r + i - 1, c + j - 1] for i in range(3) for j in range(3))
            gy = sum(sx[j][i] * image[r + i - 1, c + j - 1] for i in range(3) for j in range(3))
            total += math.sqrt(gx * gx + gy * gy)
    return total / ((height - 2) * (width - 2))


def rotation_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Angle of the relative rotation through its unit quaternion."""
    from scipy.spatial.transform import Rotation
    w = abs(Rotation.from_matrix(a.T @ b).as_quat()[3])
    vector = np.linalg.norm(Rotation.from_matrix(a.T @ b).as_quat()[:3])
    return math.degrees(2 * math.atan2(vector, w))
