"""2.5D elevation maps: height/normal queries, pose projection and terrain patches.

Grid layout: ``heights[row, col]`` with ``col`` along world x and ``row`` along
world y. Cell ``(row=0, col=0)`` is centred on ``origin``. Queries are valid
anywhere between the outermost cell centres; outside that footprint an
:class:`~offroad_bench.errors.OutOfBounds` is raised instead of extrapolating.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import EulerAngles, quat_from_euler
from .errors import DataError, FormatError, OutOfBounds

MAP_MAGIC = b"ELEVMAP\x00"
MAP_VERSION = 1
ASCII_MAGIC = "ELEVMAP-ASCII"
_HEADER = struct.Struct("<8sIdddII")  # magic, version, ox, oy, resolution, width, height


@dataclass(frozen=True, eq=False)
class ElevationMap:
    origin: tuple[float, float]
    resolution: float
    heights: np.ndarray

    def __post_init__(self):
        h = np.array(self.heights, dtype=float)
        if h.ndim != 2 or h.shape[0] < 2 or h.shape[1] < 2:
            raise DataError(f"heights must be a 2D grid of at least 2x2, got {h.shape}")
        if not np.all(np.isfinite(h)):
            raise DataError("heights must be finite")
        if not (self.resolution > 0 and math.isfinite(self.resolution)):
            raise DataError("resolution must be positive")
        h.setflags(write=False)
        object.__setattr__(self, "heights", h)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "resolution", float(self.resolution))

    @property
    def width(self) -> int:
        return self.heights.shape[1]

    @property
    def height(self) -> int:
        return self.heights.shape[0]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) of the queryable footprint."""
        ox, oy = self.origin
        return (
            ox,
            ox + (self.width - 1) * self.resolution,
            oy,
            oy + (self.height - 1) * self.resolution,
        )

    def contains(self, x, y, margin: float = 0.0) -> bool:
        xmin, xmax, ymin, ymax = self.extent
        x = np.asarray(x)
        y = np.asarray(y)
        return bool(
            np.all(x >= xmin + margin)
            and np.all(x <= xmax - margin)
            and np.all(y >= ymin + margin)
            and np.all(y <= ymax - margin)
        )

    def equals(self, other: "ElevationMap") -> bool:
        return (
            self.origin == other.origin
            and self.resolution == other.resolution
            and np.array_equal(self.heights, other.heights)
        )


def flat_map(size: int = 64, resolution: float = 1.0, value: float = 0.0, origin=None) -> ElevationMap:
    if origin is None:
        half = 0.5 * (size - 1) * resolution
        origin = (-half, -half)
    return ElevationMap(origin, resolution, np.full((size, size), float(value)))


def map_from_function(fn, size: int, resolution: float, origin=None) -> ElevationMap:
    """Sample ``fn(x, y)`` at every cell centre (handy for analytic test terrain)."""
    if origin is None:
        half = 0.5 * (size - 1) * resolution
        origin = (-half, -half)
    xs = origin[0] + resolution * np.arange(size)
    ys = origin[1] + resolution * np.arange(size)
    X, Y = np.meshgrid(xs, ys)
    return ElevationMap(origin, resolution, fn(X, Y))


# ---------------------------------------------------------------------------
# queries


def height_at(emap: ElevationMap, xy) -> float | np.ndarray:
    """Bilinear height at world ``xy``; accepts a single point or an (..., 2) array."""
    pts = np.asarray(xy, dtype=float)
    x = pts[..., 0]
    y = pts[..., 1]
    if not emap.contains(x, y):
        raise OutOfBounds(f"query outside elevation map extent {emap.extent}")
    fx = (x - emap.origin[0]) / emap.resolution
    fy = (y - emap.origin[1]) / emap.resolution
    i0 = np.clip(np.floor(fx).astype(int), 0, emap.width - 2)
    j0 = np.clip(np.floor(fy).astype(int), 0, emap.height - 2)
    tx = fx - i0
    ty = fy - j0
    h = emap.heights
    h00 = h[j0, i0]
    h01 = h[j0, i0 + 1]
    h10 = h[j0 + 1, i0]
    h11 = h[j0 + 1, i0 + 1]
    out = (1 - ty) * ((1 - tx) * h00 + tx * h01) + ty * ((1 - tx) * h10 + tx * h11)
    return float(out) if np.ndim(out) == 0 else out


def surface_normal(emap: ElevationMap, xy) -> np.ndarray:
    """Upward unit normal from central differences one cell either side of ``xy``."""
    x, y = float(xy[0]), float(xy[1])
    r = emap.resolution
    pts = np.array([[x + r, y], [x - r, y], [x, y + r], [x, y - r]])
    h = height_at(emap, pts)
    dhdx = (h[0] - h[1]) / (2 * r)
    dhdy = (h[2] - h[3]) / (2 * r)
    n = np.array([-dhdx, -dhdy, 1.0])
    return n / np.linalg.norm(n)


def contact_points(xy, yaw: float, front: float, rear: float, track_width: float) -> np.ndarray:
    """World xy of the four wheel contacts: FL, FR, RL, RR."""
    c, s = math.cos(yaw), math.sin(yaw)
    w = 0.5 * track_width
    local = np.array([[front, w], [front, -w], [-rear, w], [-rear, -w]])
    R = np.array([[c, -s], [s, c]])
    return np.asarray(xy, dtype=float) + local @ R.T


def project_pose(
    emap: ElevationMap,
    xy,
    yaw: float,
    front: float = 1.3,
    rear: float = 1.3,
    track_width: float = 1.5,
    clearance: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Place the vehicle on the terrain at ``xy`` with heading ``yaw``.

    Roll and pitch come from the least-squares plane through the four wheel
    contact heights, expressed in the yaw-aligned frame (u forward, v left)::

        z = a + b*u + c*v,   pitch = -atan(b),   roll = atan(c * cos(pitch))

    Returns ``(position, orientation)``; ``position[2]`` is the terrain
    height under ``xy`` plus ``clearance``.
    """
    pts = contact_points(xy, yaw, front, rear, track_width)
    heights = height_at(emap, pts)
    w = 0.5 * track_width
    A = np.array(
        [[1.0, front, w], [1.0, front, -w], [1.0, -rear, w], [1.0, -rear, -w]]
    )
    _, b, c = np.linalg.lstsq(A, heights, rcond=None)[0]
    pitch = -math.atan(b)
    roll = math.atan(c * math.cos(pitch))
    z = height_at(emap, xy) + clearance
    position = np.array([float(xy[0]), float(xy[1]), z])
    return position, quat_from_euler(EulerAngles(roll, pitch, yaw))


@dataclass(frozen=True, eq=False)
class TerrainPatch:
    """Yaw-aligned square height patch, centre cell subtracted.

    ``heights[i, j]`` samples the terrain at forward offset ``(j - c) * resolution``
    and rightward offset ``(i - c) * resolution`` from the vehicle, where
    ``c = size // 2``.
    """

    size: int
    resolution: float
    heights: np.ndarray
    heading: float

    def __post_init__(self):
        if self.size % 2 != 1:
            raise DataError("patch size must be odd")
        h = np.asarray(self.heights, dtype=float)
        if h.shape != (self.size, self.size):
            raise DataError(f"patch heights must be {self.size}x{self.size}")
        c = self.size // 2
        if abs(h[c, c]) > 1e-9:
            raise DataError("patch must be centre-normalised")


def patch_offsets(size: int, resolution: float, yaw: float) -> np.ndarray:
    """(size, size, 2) world-frame xy offsets of the patch samples."""
    c = size // 2
    k = (np.arange(size) - c) * resolution
    fwd = np.broadcast_to(k[None, :], (size, size))
    right = np.broadcast_to(k[:, None], (size, size))
    cy, sy = math.cos(yaw), math.sin(yaw)
    # forward = (cos, sin), right = (sin, -cos)
    dx = fwd * cy + right * sy
    dy = fwd * sy - right * cy
    return np.stack([dx, dy], axis=-1)


def extract_patch(
    emap: ElevationMap, xy, yaw: float, size: int = 15, resolution: float | None = None
) -> TerrainPatch:
    if resolution is None:
        resolution = emap.resolution
    if size % 2 != 1 or size < 1:
        raise DataError("patch size must be a positive odd number")
    pts = np.asarray(xy, dtype=float)[:2] + patch_offsets(size, resolution, yaw)
    h = height_at(emap, pts)
    c = size // 2
    return TerrainPatch(size, float(resolution), h - h[c, c], float(yaw))


# ---------------------------------------------------------------------------
# file formats


def save_map(emap: ElevationMap, path) -> None:
    """Binary format: fixed header then row-major little-endian float32 heights.

    Heights must be exactly representable in float32 for the file to
    round-trip; anything else raises rather than silently rounding.
    """
    h32 = emap.heights.astype("<f4")
    if not np.array_equal(h32.astype(float), emap.heights):
        raise DataError("heights are not float32-representable; round them first")
    header = _HEADER.pack(
        MAP_MAGIC, MAP_VERSION, emap.origin[0], emap.origin[1],
        emap.resolution, emap.width, emap.height,
    )
    Path(path).write_bytes(header + h32.tobytes(order="C"))


def load_map(path) -> ElevationMap:
    data = Path(path).read_bytes()
    if data.startswith(ASCII_MAGIC.encode()):
        return _load_ascii_map(data.decode("ascii"))
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated elevation map")
    magic, version, ox, oy, res, width, height = _HEADER.unpack_from(data)
    if magic != MAP_MAGIC:
        raise FormatError(f"{path}: not an elevation map")
    if version != MAP_VERSION:
        raise FormatError(f"{path}: unsupported map version {version}")
    body = data[_HEADER.size:]
    if len(body) != 4 * width * height:
        raise FormatError(f"{path}: expected {width * height} heights")
    h = np.frombuffer(body, dtype="<f4").reshape(height, width).astype(float)
    return ElevationMap((ox, oy), res, h)


def to_ascii(emap: ElevationMap) -> str:
    lines = [
        f"{ASCII_MAGIC} {MAP_VERSION}",
        f"origin {emap.origin[0]!r} {emap.origin[1]!r}",
        f"resolution {emap.resolution!r}",
        f"size {emap.width} {emap.height}",
    ]
    lines += [" ".join(repr(float(v)) for v in row) for row in emap.heights]
    return "\n".join(lines) + "\n"


def save_ascii_map(emap: ElevationMap, path) -> None:
    Path(path).write_text(to_ascii(emap))


def _load_ascii_map(text: str) -> ElevationMap:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    try:
        magic, version = lines[0].split()
        if magic != ASCII_MAGIC or int(version) != MAP_VERSION:
            raise FormatError("unsupported ASCII map header")
        _, ox, oy = lines[1].split()
        _, res = lines[2].split()
        _, width, height = lines[3].split()
        rows = [[float(v) for v in ln.split()] for ln in lines[4:]]
        h = np.array(rows, dtype=float)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"malformed ASCII elevation map: {exc}") from exc
    if h.shape != (int(height), int(width)):
        raise FormatError(f"ASCII map grid is {h.shape}, header says {(int(height), int(width))}")
    return ElevationMap((float(ox), float(oy)), float(res), h)
