"""
Source and target distributions of the experiments.

- 1D Gaussian samples,
- RGB images, where every pixel is a sample in [0, 1]^3,
- 2D shapes, sampled uniformly from an occupancy mask and scaled to
  [-1, 1]^2,
- Gaussian kernel density estimates for plotting 1D clouds.
"""

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import stats

from sobolev_descent.embeddings import ParticleSet
from sobolev_descent.errors import DataIOError, ParameterError
from sobolev_descent.streams import box_muller, make_stream
from sobolev_descent.traces import read_points_csv

LUMA_THRESHOLD = 0.5
BUILTIN_SHAPES = ("disk", "square", "ring", "cross", "heart")


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """
    RGB image with channels in [0, 1].

    :param pixels: array of shape (height, width, 3), clamped to [0, 1]
    """
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ParameterError(
                f"pixels must have shape (height, width, 3), got {pixels.shape}")
        if pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise ParameterError("Image width and height must be positive")
        if not np.all(np.isfinite(pixels)):
            raise ParameterError("Image contains non finite values")
        pixels = np.clip(pixels, 0.0, 1.0)
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class ShapeMask:
    """
    Boolean occupancy grid, row 0 at the top.

    :param occupied: array of shape (height, width)
    """
    occupied: np.ndarray

    def __post_init__(self):
        occupied = np.asarray(self.occupied, dtype=bool)
        if occupied.ndim != 2 or min(occupied.shape) < 1:
            raise ParameterError(
                f"Mask must be a non empty 2D grid, got shape {occupied.shape}")
        occupied.setflags(write=False)
        object.__setattr__(self, "occupied", occupied)

    @property
    def height(self):
        return self.occupied.shape[0]

    @property
    def width(self):
        return self.occupied.shape[1]

    def n_occupied(self):
        return int(self.occupied.sum())


def sample_gauss1d(mean, std, n, seed=0, purpose="source"):
    """
    n i.i.d. draws of N(mean, std^2) by Box-Muller.

    :param purpose: stream of the draws, "source" or "target"
    :return: ParticleSet with d = 1
    """
    if not std > 0:
        raise ParameterError(f"std must be > 0, got {std}")
    if int(n) != n or n < 1:
        raise ParameterError(f"n must be a positive integer, got {n}")
    rng = make_stream(seed, purpose)
    return ParticleSet(mean + std * box_muller(rng, int(n))[:, None])


def image_to_particles(img):
    """One particle per pixel, in row-major order."""
    return ParticleSet(img.pixels.reshape(-1, 3).copy())


def particles_to_image(particles, width, height):
    """
    Inverse of image_to_particles, channels clamped to [0, 1].

    :param particles: ParticleSet or array of shape (width * height, 3)
    """
    points = np.asarray(getattr(particles, "points", particles), dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ParameterError(f"Expected RGB particles of shape (n, 3), got {points.shape}")
    if points.shape[0] != width * height:
        raise ParameterError(
            f"{points.shape[0]} particles cannot fill a {width}x{height} image")
    return ImageBuffer(points.reshape(height, width, 3))


def load_png(path):
    """Read an image as 8-bit RGB and normalize it to [0, 1]."""
    if not os.path.isfile(path):
        raise DataIOError(f"No such image: {path}")
    try:
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, UnidentifiedImageError) as e:
        raise DataIOError(f"Could not read image {path}: {e}")
    return ImageBuffer(rgb / 255.0)


def quantize(img):
    """8-bit channels, rounding half to even."""
    return np.rint(img.pixels * 255.0).astype(np.uint8)


def save_png(img, path):
    """Write an ImageBuffer as an 8-bit RGB png."""
    try:
        Image.fromarray(quantize(img), mode="RGB").save(path, format="PNG")
    except (OSError, ValueError) as e:
        raise DataIOError(f"Could not write image {path}: {e}")


def mask_from_png(path, threshold=LUMA_THRESHOLD):
    """
    Occupancy mask of a png, dark pixels (luma < threshold) are occupied.
    """
    if not os.path.isfile(path):
        raise DataIOError(f"No such image: {path}")
    try:
        with Image.open(path) as im:
            luma = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError) as e:
        raise DataIOError(f"Could not read mask {path}: {e}")
    return ShapeMask(luma < threshold)


def _cell_centers(size):
    """x, y coordinates of the cell centers of a size x size grid on [-1, 1]^2."""
    centers = -1.0 + (np.arange(size) + 0.5) * 2.0 / size
    x, y = np.meshgrid(centers, centers[::-1])
    return x, y


def mask_from_points(points, size=64):
    """
    Rasterize a 2D point list in [-1, 1]^2 onto a size x size mask.

    :param points: ParticleSet or array of shape (n, 2)
    """
    points = np.asarray(getattr(points, "points", points), dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ParameterError(f"Expected 2D points of shape (n, 2), got {points.shape}")
    cols = np.floor((points[:, 0] + 1.0) * size / 2.0).astype(int)
    rows = np.floor((1.0 - points[:, 1]) * size / 2.0).astype(int)
    inside = (cols >= 0) & (cols < size) & (rows >= 0) & (rows < size)
    occupied = np.zeros((size, size), dtype=bool)
    occupied[rows[inside], cols[inside]] = True
    return ShapeMask(occupied)


def mask_from_csv(path, size=64):
    """Mask of a point list saved with write_points_csv."""
    return mask_from_points(read_points_csv(path), size)


def builtin_mask(name, size=64):
    """
    Procedural shapes on a size x size grid.

    :param name: one of "disk", "square", "ring", "cross", "heart"
    """
    if int(size) != size or size < 2:
        raise ParameterError(f"size must be an integer >= 2, got {size}")
    x, y = _cell_centers(int(size))
    r = np.hypot(x, y)

    if name == "disk":
        occupied = r <= 0.8
    elif name == "square":
        occupied = (np.abs(x) <= 0.6) & (np.abs(y) <= 0.6)
    elif name == "ring":
        occupied = (r >= 0.45) & (r <= 0.85)
    elif name == "cross":
        box = (np.abs(x) <= 0.85) & (np.abs(y) <= 0.85)
        occupied = box & ((np.abs(x) <= 0.25) | (np.abs(y) <= 0.25))
    elif name == "heart":
        hx, hy = 1.35 * x, 1.35 * y + 0.15
        occupied = (hx**2 + hy**2 - 1.0)**3 - hx**2 * hy**3 <= 0
    else:
        raise ParameterError(
            f"Unknown shape '{name}', expected one of {', '.join(BUILTIN_SHAPES)}")
    return ShapeMask(occupied)


def shape_to_particles(mask, n, seed=0, purpose="source"):
    """
    n points uniform over the occupied cells of a mask, mapped to [-1, 1]^2.

    A cell is drawn uniformly among the occupied ones, then the point is
    drawn uniformly inside it.

    :return: ParticleSet with d = 2
    """
    if int(n) != n or n < 1:
        raise ParameterError(f"n must be a positive integer, got {n}")
    rows, cols = np.nonzero(mask.occupied)
    if rows.size == 0:
        raise ParameterError("Cannot sample from an empty mask")

    rng = make_stream(seed, purpose)
    index = rng.integers(0, rows.size, size=int(n))
    jitter = rng.random((int(n), 2))

    cell_w = 2.0 / mask.width
    cell_h = 2.0 / mask.height
    x = -1.0 + (cols[index] + jitter[:, 0]) * cell_w
    y = 1.0 - (rows[index] + jitter[:, 1]) * cell_h
    return ParticleSet(np.column_stack([x, y]))


def silverman_bandwidth(points):
    """Silverman's rule 0.9 min(std, IQR / 1.34) n^(-1/5)."""
    x = np.asarray(getattr(points, "points", points), dtype=np.float64).ravel()
    if x.size == 0:
        raise ParameterError("Cannot estimate a bandwidth from no points")
    spread = np.std(x, ddof=1) if x.size > 1 else 0.0
    iqr = stats.iqr(x) / 1.34
    scale = min(spread, iqr) if iqr > 0 else spread
    if not scale > 0:
        scale = 1.0
    return 0.9 * scale * x.size**(-0.2)


def kde1d(points, bandwidth, grid):
    """
    Gaussian kernel density estimate of a 1D cloud.

    :param points: ParticleSet with d = 1 or 1D array
    :param bandwidth: kernel standard deviation, > 0
    :param grid: evaluation points
    :return: densities at the grid points
    """
    if not bandwidth > 0:
        raise ParameterError(f"bandwidth must be > 0, got {bandwidth}")
    x = np.asarray(getattr(points, "points", points), dtype=np.float64).ravel()
    if x.size == 0:
        raise ParameterError("Cannot estimate a density from no points")
    grid = np.asarray(grid, dtype=np.float64).ravel()
    return stats.norm.pdf(grid[:, None], loc=x[None, :], scale=bandwidth).mean(axis=1)
