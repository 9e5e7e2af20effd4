"""Elevation rasters (DSM / DHM) and path profiles.

Grids are read from ESRI-style ASCII files. Internally every raster is held in
meters, row 0 is the southernmost row and nodata cells are stored as NaN.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .exceptions import (
    EmptyNeighborhood,
    MalformedHeader,
    NoDataNeighborhood,
    NonNumericCell,
    OutOfExtent,
    RowLengthMismatch,
    ZeroLengthPath,
)
from .geodesy import GeoPoint, LocalXY

FEET_TO_METERS = 0.3048
HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")
MIN_PROFILE_SAMPLES = 64
DEFAULT_NODATA = -9999.0


@dataclass(frozen=True, eq=False)
class Raster:
    """Georeferenced grid of heights in meters.

    ``values[i, j]`` is the cell whose center is at
    ``(xll + (j + 0.5) * cellsize, yll + (i + 0.5) * cellsize)``.
    """

    values: np.ndarray
    xll: float
    yll: float
    cellsize: float
    nodata: float = DEFAULT_NODATA
    origin: Optional[GeoPoint] = None

    def __post_init__(self):
        if self.cellsize <= 0:
            raise MalformedHeader("cellsize must be positive")
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.size == 0:
            raise MalformedHeader("raster values must be a non-empty 2-D grid")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def nrows(self) -> int:
        return self.values.shape[0]

    @property
    def ncols(self) -> int:
        return self.values.shape[1]

    @property
    def extent(self):
        """``(xmin, ymin, xmax, ymax)`` of the covered area."""
        return (
            self.xll,
            self.yll,
            self.xll + self.ncols * self.cellsize,
            self.yll + self.nrows * self.cellsize,
        )

    def contains(self, x, y):
        xmin, ymin, xmax, ymax = self.extent
        x = np.asarray(x)
        y = np.asarray(y)
        return (x >= xmin) & (x <= xmax) & (y >= ymin) & (y <= ymax)

    def cell_centers(self):
        xs = self.xll + (np.arange(self.ncols) + 0.5) * self.cellsize
        ys = self.yll + (np.arange(self.nrows) + 0.5) * self.cellsize
        return xs, ys

    def sample(self, x, y) -> np.ndarray:
        """Vectorised bilinear sampling between cell centers."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if not np.all(self.contains(x, y)):
            raise OutOfExtent("sample point outside raster extent")
        fx = np.clip((x - self.xll) / self.cellsize - 0.5, 0.0, self.ncols - 1)
        fy = np.clip((y - self.yll) / self.cellsize - 0.5, 0.0, self.nrows - 1)
        j0 = np.minimum(np.floor(fx).astype(int), max(self.ncols - 2, 0))
        i0 = np.minimum(np.floor(fy).astype(int), max(self.nrows - 2, 0))
        j1 = np.minimum(j0 + 1, self.ncols - 1)
        i1 = np.minimum(i0 + 1, self.nrows - 1)
        tx = fx - j0
        ty = fy - i0
        v = self.values
        out = np.zeros_like(x)
        for vi, vj, w in (
            (i0, j0, (1 - tx) * (1 - ty)),
            (i0, j1, tx * (1 - ty)),
            (i1, j0, (1 - tx) * ty),
            (i1, j1, tx * ty),
        ):
            cell = v[vi, vj]
            used = w > 0
            if np.any(np.isnan(cell) & used):
                raise NoDataNeighborhood("nodata cell in interpolation neighbourhood")
            out += np.where(used, cell * w, 0.0)
        return out

    def with_values(self, values) -> "Raster":
        return Raster(values, self.xll, self.yll, self.cellsize, self.nodata, self.origin)


@dataclass(frozen=True, eq=False)
class Profile:
    """Heights sampled uniformly along a straight path, starting at the BS."""

    distances: np.ndarray
    ground: np.ndarray
    surface: np.ndarray
    clutter: np.ndarray = field(default=None)

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=float)
        g = np.asarray(self.ground, dtype=float)
        s = np.asarray(self.surface, dtype=float)
        c = s - g if self.clutter is None else np.asarray(self.clutter, dtype=float)
        if not (len(d) == len(g) == len(s) == len(c)) or len(d) < 2:
            raise ValueError("profile arrays must have equal length >= 2")
        if np.any(np.diff(d) <= 0):
            raise ValueError("profile distances must be strictly increasing")
        for name, arr in (("distances", d), ("ground", g), ("surface", s), ("clutter", c)):
            object.__setattr__(self, name, arr)

    @property
    def length(self) -> float:
        return float(self.distances[-1])

    def __len__(self):
        return len(self.distances)


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def parse_ascii_grid(text: Union[bytes, str], units: str = "meters") -> Raster:
    if isinstance(text, bytes):
        text = text.decode("ascii", errors="replace")
    lines = [ln for ln in io.StringIO(text).read().splitlines() if ln.strip()]
    header = {}
    pos = 0
    while pos < len(lines):
        parts = lines[pos].split()
        key = parts[0].lower()
        if key not in HEADER_KEYS:
            break
        if len(parts) != 2:
            raise MalformedHeader(f"bad header line {lines[pos]!r}")
        header[key] = parts[1]
        pos += 1
    missing = [k for k in HEADER_KEYS if k not in header]
    if missing:
        raise MalformedHeader(f"missing header keys: {', '.join(missing)}")
    try:
        ncols = int(header["ncols"])
        nrows = int(header["nrows"])
        xll = float(header["xllcorner"])
        yll = float(header["yllcorner"])
        cellsize = float(header["cellsize"])
        nodata = float(header["nodata_value"])
    except ValueError as exc:
        raise MalformedHeader(str(exc)) from None
    if ncols <= 0 or nrows <= 0 or cellsize <= 0:
        raise MalformedHeader("ncols, nrows and cellsize must be positive")

    body = lines[pos:]
    if len(body) != nrows:
        raise RowLengthMismatch(f"expected {nrows} rows, found {len(body)}")
    grid = np.empty((nrows, ncols))
    for i, line in enumerate(body):
        tokens = line.split()
        if len(tokens) != ncols:
            raise RowLengthMismatch(f"row {i} has {len(tokens)} values, expected {ncols}")
        try:
            grid[i] = np.array(tokens, dtype=float)
        except ValueError:
            bad = next(t for t in tokens if not _is_number(t))
            raise NonNumericCell(f"row {i}: non-numeric cell value {bad!r}") from None
    # file rows run north to south
    grid = grid[::-1].copy()
    grid[grid == nodata] = np.nan

    if units.lower() in ("feet", "ft", "foot"):
        grid *= FEET_TO_METERS
        xll *= FEET_TO_METERS
        yll *= FEET_TO_METERS
        cellsize *= FEET_TO_METERS
    elif units.lower() not in ("meters", "m", "metres", "meter"):
        raise MalformedHeader(f"unknown raster units {units!r}")
    return Raster(grid, xll, yll, cellsize, nodata)


def read_ascii_grid(path, units: str = "meters") -> Raster:
    with open(path, "rb") as fh:
        return parse_ascii_grid(fh.read(), units=units)


def format_ascii_grid(r: Raster, fmt: str = "%.3f") -> str:
    out = io.StringIO()
    out.write(f"ncols {r.ncols}\nnrows {r.nrows}\n")
    out.write(f"xllcorner {r.xll!r}\nyllcorner {r.yll!r}\ncellsize {r.cellsize!r}\n")
    out.write(f"NODATA_value {r.nodata:g}\n")
    grid = np.where(np.isnan(r.values), r.nodata, r.values)[::-1]
    np.savetxt(out, grid, fmt=fmt)
    return out.getvalue()


def write_ascii_grid(r: Raster, path, fmt: str = "%.3f"):
    with open(path, "w") as fh:
        fh.write(format_ascii_grid(r, fmt))


def sample_bilinear(r: Raster, x: float, y: float) -> float:
    return float(r.sample(x, y)[0])


def default_step(r: Raster) -> float:
    return min(r.cellsize, 5.0)


def extract_profile(dsm: Raster, dhm: Raster, a: LocalXY, b: LocalXY, step: Optional[float] = None) -> Profile:
    """Sample DSM and DHM along the straight line from ``a`` to ``b``."""
    if step is None:
        step = default_step(dsm)
    if step <= 0:
        raise ValueError("profile step must be positive")
    dist = math.hypot(b.x - a.x, b.y - a.y)
    if dist == 0.0:
        raise ZeroLengthPath("profile endpoints coincide")
    n = max(MIN_PROFILE_SAMPLES, math.ceil(dist / step)) + 1
    t = np.linspace(0.0, 1.0, n)
    xs = a.x + t * (b.x - a.x)
    ys = a.y + t * (b.y - a.y)
    surface = dsm.sample(xs, ys)
    clutter = dhm.sample(xs, ys)
    return Profile(t * dist, surface - clutter, surface, clutter)


def _disk_cells(r: Raster, cx: float, cy: float, radius: float):
    j_lo = max(int(math.floor((cx - radius - r.xll) / r.cellsize - 0.5)), 0)
    j_hi = min(int(math.ceil((cx + radius - r.xll) / r.cellsize - 0.5)), r.ncols - 1)
    i_lo = max(int(math.floor((cy - radius - r.yll) / r.cellsize - 0.5)), 0)
    i_hi = min(int(math.ceil((cy + radius - r.yll) / r.cellsize - 0.5)), r.nrows - 1)
    if j_lo > j_hi or i_lo > i_hi:
        return np.empty(0)
    xs = r.xll + (np.arange(j_lo, j_hi + 1) + 0.5) * r.cellsize
    ys = r.yll + (np.arange(i_lo, i_hi + 1) + 0.5) * r.cellsize
    inside = (xs[None, :] - cx) ** 2 + (ys[:, None] - cy) ** 2 <= radius * radius
    block = r.values[i_lo : i_hi + 1, j_lo : j_hi + 1][inside]
    return block[~np.isnan(block)]


def neighborhood_stats(r: Raster, center: LocalXY, radius: float) -> dict:
    """Mean / min / max over the cell centers within ``radius`` of ``center``.

    A radius smaller than half a cell still picks up the cell that contains
    ``center``, so the result is never empty while the center is on the grid.
    """
    vals = _disk_cells(r, center.x, center.y, radius)
    if vals.size == 0 and bool(r.contains(center.x, center.y)):
        j = min(int((center.x - r.xll) / r.cellsize), r.ncols - 1)
        i = min(int((center.y - r.yll) / r.cellsize), r.nrows - 1)
        v = r.values[i, j]
        vals = np.array([] if np.isnan(v) else [v])
    if vals.size == 0:
        raise EmptyNeighborhood(f"no valid cells within {radius} m of ({center.x}, {center.y})")
    return {"mean": float(vals.mean()), "min": float(vals.min()), "max": float(vals.max())}


@dataclass(frozen=True, eq=False)
class TerrainDataset:
    """DSM / DHM pair sharing one local frame."""

    dsm: Raster
    dhm: Raster
    origin: GeoPoint

    def __post_init__(self):
        if self.dsm.values.shape != self.dhm.values.shape:
            raise MalformedHeader("DSM and DHM grids differ in shape")
        ground = self.dsm.values - self.dhm.values
        object.__setattr__(self, "ground", self.dsm.with_values(ground))


def parse_kv(text: str) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MalformedHeader(f"line {n}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_dataset_manifest(path) -> TerrainDataset:
    """Read a dataset manifest naming ``dsm``, ``dhm``, ``units``,
    ``origin_lat`` and ``origin_lon``. Relative paths resolve against the
    manifest's directory."""
    with open(path) as fh:
        kv = parse_kv(fh.read())
    base = os.path.dirname(os.path.abspath(path))
    return load_terrain(kv, base)


def load_terrain(kv: dict, base: str = ".") -> TerrainDataset:
    try:
        origin = GeoPoint(float(kv["origin_lat"]), float(kv["origin_lon"]))
        units = kv.get("units", "meters")
        dsm = read_ascii_grid(os.path.join(base, kv["dsm"]), units)
        dhm = read_ascii_grid(os.path.join(base, kv["dhm"]), units)
    except KeyError as exc:
        raise MalformedHeader(f"dataset manifest missing key {exc}") from None
    dsm = Raster(dsm.values, dsm.xll, dsm.yll, dsm.cellsize, dsm.nodata, origin)
    dhm = Raster(dhm.values, dhm.xll, dhm.yll, dhm.cellsize, dhm.nodata, origin)
    return TerrainDataset(dsm, dhm, origin)
