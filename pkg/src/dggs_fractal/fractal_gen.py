"""Synthetic fractal test sets: chaos-game Sierpinski points and Koch L-system curves."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CoordinateOverflowError, GeometryError, UnsupportedSymbolError
from .features import GeoFeatureSet
from .sphere_geom import GeoPoint

MAX_ITERATIONS = 200_000
SIERPINSKI_VERTICES = (GeoPoint(-30.0, 0.0), GeoPoint(0.0, 60.0), GeoPoint(30.0, 0.0))

TURN_SYMBOLS = {"+": 1.0, "-": -1.0}
# typographic minus is accepted and stored as ASCII
_ALIASES = {"−": "-", "–": "-"}
DRAW_SYMBOLS = frozenset("FG")
MOVE_SYMBOLS = frozenset("f")


@dataclass(frozen=True)
class ChaosGameSpec:
    vertices: tuple = SIERPINSKI_VERTICES
    start: GeoPoint = GeoPoint(0.0, 0.0)
    iterations: int = MAX_ITERATIONS
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if len(self.vertices) != 3:
            raise ValueError("chaos game needs exactly 3 vertices")
        v = np.array([[p.lon, p.lat] for p in self.vertices])
        cross = (v[1, 0] - v[0, 0]) * (v[2, 1] - v[0, 1]) - (v[1, 1] - v[0, 1]) * (v[2, 0] - v[0, 0])
        if abs(cross) < 1e-12:
            raise GeometryError("chaos game vertices are collinear")


def chaos_game_xy(spec: ChaosGameSpec) -> np.ndarray:
    """Raw (x, y) sequence: P(0) = start, P(i+1) = midpoint of P(i) and a random vertex."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    choice = np.floor(3.0 * rng.random(spec.iterations - 1)).astype(np.int64)
    verts = np.array([[p.lon, p.lat] for p in spec.vertices], dtype=float)
    out = np.empty((spec.iterations, 2))
    x, y = float(spec.start.lon), float(spec.start.lat)
    out[0] = x, y
    vx, vy = verts[choice, 0], verts[choice, 1]
    # sequential by nature; plain Python floats keep the arithmetic identical everywhere
    for i in range(spec.iterations - 1):
        x = (x + vx[i]) / 2.0
        y = (y + vy[i]) / 2.0
        out[i + 1, 0] = x
        out[i + 1, 1] = y
    return out


def chaos_game(spec: ChaosGameSpec = ChaosGameSpec()) -> GeoFeatureSet:
    return GeoFeatureSet(points=chaos_game_xy(spec))


def normalize_symbols(s: str) -> str:
    s = "".join(_ALIASES.get(c, c) for c in s)
    allowed = DRAW_SYMBOLS | MOVE_SYMBOLS | set(TURN_SYMBOLS)
    bad = sorted(set(s) - allowed)
    if bad:
        raise UnsupportedSymbolError(f"unsupported L-system symbols: {''.join(bad)!r}")
    return s


@dataclass(frozen=True)
class LSystem:
    axiom: str
    rules: dict = field(default_factory=dict)
    angle: float = 60.0
    step: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.angle < 180.0:
            raise ValueError("turn angle must lie in (0, 180) degrees")
        object.__setattr__(self, "axiom", normalize_symbols(self.axiom))
        object.__setattr__(self, "rules", {normalize_symbols(k): normalize_symbols(v)
                                           for k, v in self.rules.items()})
        for k in self.rules:
            if len(k) != 1:
                raise UnsupportedSymbolError(f"rule key {k!r} must be a single symbol")


KOCH = LSystem("F", {"F": "F+F--F+F"}, 60.0, 1.0)


def expand_lsystem(sys: LSystem, iterations: int) -> str:
    """Parallel rewriting; symbols without a rule are copied."""
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    s = sys.axiom
    table = str.maketrans({k: v for k, v in sys.rules.items()})
    for _ in range(iterations):
        s = s.translate(table)
    return s


def turtle_xy(s: str, angle: float, step: float = 1.0) -> np.ndarray:
    """Planar turtle walk from the origin heading +x; one vertex per drawn step."""
    s = normalize_symbols(s)
    a = math.radians(angle)
    heading = 0
    # integer heading count keeps directions exact for repeated turns
    x, y = 0.0, 0.0
    pts = [(x, y)]
    cos_cache = {}
    for c in s:
        if c in TURN_SYMBOLS:
            heading += int(TURN_SYMBOLS[c])
            continue
        d = cos_cache.get(heading)
        if d is None:
            d = cos_cache[heading] = (math.cos(heading * a), math.sin(heading * a))
        x += step * d[0]
        y += step * d[1]
        if c in DRAW_SYMBOLS:
            pts.append((x, y))
    return np.array(pts)


def turtle_decode(s: str, angle: float = 60.0, scale: float = 0.5, step: float = 1.0,
                  as_line: bool = False) -> GeoFeatureSet:
    """Turtle coordinates scaled about the origin and read as (lon, lat) degrees."""
    xy = turtle_xy(s, angle, step) * scale
    if np.any(np.abs(xy[:, 1]) >= 90.0):
        raise CoordinateOverflowError("turtle walk reaches |lat| >= 90 after scaling; lower the scale")
    if np.any(xy[:, 0] <= -180.0) or np.any(xy[:, 0] > 180.0):
        raise CoordinateOverflowError("turtle walk leaves lon (-180, 180] after scaling; lower the scale")
    if as_line:
        return GeoFeatureSet(lines=[xy])
    return GeoFeatureSet(points=xy)


def koch_curve(iterations: int = 5, scale: float = 0.5, as_line: bool = False) -> GeoFeatureSet:
    return turtle_decode(expand_lsystem(KOCH, iterations), KOCH.angle, scale, KOCH.step, as_line)


# ---------------------------------------------------------------- raster field

def midpoint_displacement(size_exp: int, roughness: float = 0.5, seed: int = 0) -> np.ndarray:
    """Diamond-square height field of shape (2**size_exp + 1, 2**size_exp + 1).

    Displacement amplitude shrinks by ``2**-roughness`` per level, so the
    iso-lines of the field are fractal with dimension rising as
    ``roughness`` falls.
    """
    n = 2 ** size_exp
    rng = np.random.Generator(np.random.PCG64(seed))
    f = np.zeros((n + 1, n + 1))
    f[::n, ::n] = rng.normal(size=(2, 2))
    amp = 1.0
    step = n
    while step > 1:
        half = step // 2
        amp *= 2.0 ** -roughness
        # diamond: centres of squares
        c = (f[0:-1:step, 0:-1:step] + f[step::step, 0:-1:step] + f[0:-1:step, step::step] + f[step::step, step::step]) / 4
        f[half::step, half::step] = c + amp * rng.normal(size=c.shape)
        # square: edge midpoints, averaging the available neighbours
        for r0, c0 in ((0, half), (half, 0)):
            rows = np.arange(r0, n + 1, step)
            cols = np.arange(c0, n + 1, step)
            rr, cc = np.meshgrid(rows, cols, indexing="ij")
            acc = np.zeros(rr.shape)
            cnt = np.zeros(rr.shape)
            for dr, dc in ((-half, 0), (half, 0), (0, -half), (0, half)):
                r2, c2 = rr + dr, cc + dc
                ok = (r2 >= 0) & (r2 <= n) & (c2 >= 0) & (c2 <= n)
                acc[ok] += f[r2[ok], c2[ok]]
                cnt[ok] += 1
            f[rr, cc] = acc / cnt + amp * rng.normal(size=rr.shape)
        step = half
    return f


def synthetic_cloud_grid(seed: int = 0, size_exp: int = 9, roughness: float = 0.6, cellsize: float = 0.08,
                         xllcorner: float | None = None, yllcorner: float | None = None,
                         opaque_fraction: float = 0.4):
    """Classified stand-in for an opaque-cloud product.

    A midpoint-displacement field is cut at quantiles: the top
    ``opaque_fraction`` becomes DN 3 (opaque), the next 20 percent DN 2,
    the rest DN 0. The grid is centred on (0, 0) unless corners are given.
    """
    from .raster_ingest import AsciiGrid

    n = 2 ** size_exp
    f = midpoint_displacement(size_exp, roughness, seed)[:n, :n]
    hi = np.quantile(f, 1.0 - opaque_fraction)
    mid = np.quantile(f, max(0.0, 1.0 - opaque_fraction - 0.2))
    vals = np.where(f > hi, 3, np.where(f > mid, 2, 0)).astype(np.int64)
    half = n * cellsize / 2.0
    xll = -half if xllcorner is None else xllcorner
    yll = -half if yllcorner is None else yllcorner
    return AsciiGrid(n, n, xll, yll, cellsize, -9999, vals)
