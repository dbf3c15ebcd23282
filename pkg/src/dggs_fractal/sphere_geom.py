"""Geometry on the unit sphere.

Points are unit 3-vectors (numpy arrays with a trailing axis of length 3).
Edges are minor great-circle arcs. Degrees appear only in the lon/lat
conversion helpers; everything else works in radians.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import AntipodalArcError, EmptySetError, GeometryError, PoleSpanningError

AUTHALIC_RADIUS_KM = 6371.0072
BOUNDARY_EPS = 1e-12
# edges longer than this get densified before taking a polygon diameter
DIAMETER_DENSIFY_ABOVE = math.radians(10.0)
DIAMETER_DENSIFY_POINTS = 4


# --------------------------------------------------------------------------
# conversions
# --------------------------------------------------------------------------

def normalize(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def lonlat_to_vec(lon, lat):
    """Degrees to unit vectors; broadcasts over array inputs."""
    lon = np.radians(np.asarray(lon, dtype=float))
    lat = np.radians(np.asarray(lat, dtype=float))
    c = np.cos(lat)
    return np.stack([c * np.cos(lon), c * np.sin(lon), np.sin(lat)], axis=-1)


def vec_to_lonlat(v):
    """Unit vectors to ``(lon, lat)`` in degrees, lon in (-180, 180]."""
    v = np.asarray(v, dtype=float)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    lon = np.degrees(np.arctan2(y, x))
    lat = np.degrees(np.arctan2(z, np.hypot(x, y)))
    lon = np.where(lon <= -180.0, lon + 360.0, lon)
    return lon, lat


def wrap_lon(lon):
    """Wrap degrees into (-180, 180]."""
    lon = np.asarray(lon, dtype=float)
    out = np.mod(lon + 180.0, 360.0) - 180.0
    return np.where(out == -180.0, 180.0, out)


@dataclass(frozen=True)
class GeoPoint:
    lon: float
    lat: float

    def to_vec(self):
        return lonlat_to_vec(self.lon, self.lat)

    @classmethod
    def from_vec(cls, v):
        lon, lat = vec_to_lonlat(v)
        return cls(float(lon), float(lat))


# --------------------------------------------------------------------------
# primitives
# --------------------------------------------------------------------------

def great_circle_distance(p, q):
    """Angle between unit vectors, in radians, via atan2 (stable near 0 and pi)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    cross = np.linalg.norm(np.cross(p, q), axis=-1)
    dot = np.sum(p * q, axis=-1)
    return np.arctan2(cross, dot)


def slerp(a, b, t):
    """Points along the minor arc a->b at fractions ``t`` (1-D array)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t = np.asarray(t, dtype=float)
    omega = float(great_circle_distance(a, b))
    if omega < 1e-15:
        return np.repeat(a[None, :], len(t), axis=0)
    s = math.sin(omega)
    wa = np.sin((1.0 - t) * omega) / s
    wb = np.sin(t * omega) / s
    return wa[:, None] * a[None, :] + wb[:, None] * b[None, :]


def densify_ring(ring, points_per_edge):
    """Insert ``points_per_edge`` evenly spaced points on every closing edge."""
    ring = np.asarray(ring, dtype=float)
    if points_per_edge <= 0:
        return ring
    t = np.arange(points_per_edge + 1) / (points_per_edge + 1)
    out = []
    n = len(ring)
    for i in range(n):
        out.append(slerp(ring[i], ring[(i + 1) % n], t))
    return np.concatenate(out, axis=0)


@dataclass(frozen=True, eq=False)
class Arc:
    """Minor great-circle arc between two unit vectors."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = normalize(self.a)
        b = normalize(self.b)
        if np.dot(a, b) < -1.0 + 1e-15 and np.linalg.norm(np.cross(a, b)) < 1e-9:
            raise AntipodalArcError("arc endpoints are antipodal; minor arc undefined")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def length(self):
        return float(great_circle_distance(self.a, self.b))


class Location(enum.Enum):
    INSIDE = 1
    OUTSIDE = 0
    BOUNDARY = -1


@dataclass(frozen=True, eq=False)
class SphericalPolygon:
    """Closed ring of unit vectors, counter-clockwise seen from outside.

    The closing edge (last -> first) is implicit.
    """

    ring: np.ndarray
    holes: tuple = field(default=())

    def __post_init__(self):
        ring = np.asarray(self.ring, dtype=float)
        if ring.ndim != 2 or ring.shape[1] != 3 or len(ring) < 3:
            raise GeometryError("polygon ring needs at least 3 unit vectors")
        object.__setattr__(self, "ring", normalize(ring))

    @classmethod
    def from_lonlat(cls, lonlat: Sequence[Sequence[float]], holes=()):
        arr = np.asarray(lonlat, dtype=float)
        if len(arr) > 1 and np.allclose(arr[0], arr[-1]):
            arr = arr[:-1]
        return cls(lonlat_to_vec(arr[:, 0], arr[:, 1]), holes=tuple(holes))

    def lonlat(self):
        lon, lat = vec_to_lonlat(self.ring)
        return np.stack([lon, lat], axis=-1)

    def edges(self):
        return self.ring, np.roll(self.ring, -1, axis=0)

    @property
    def area(self):
        return polygon_area(self)

    @property
    def diameter(self):
        return polygon_diameter(self)

    def contains(self, p):
        return point_in_polygon(p, self)


# --------------------------------------------------------------------------
# polygon measures
# --------------------------------------------------------------------------

def _ring(poly):
    return poly.ring if isinstance(poly, SphericalPolygon) else np.asarray(poly, dtype=float)


def polygon_diameter(poly):
    """Max great-circle distance over ring vertex pairs.

    Rings with an edge longer than 10 degrees are densified first.
    """
    ring = _ring(poly)
    nxt = np.roll(ring, -1, axis=0)
    if np.max(great_circle_distance(ring, nxt)) > DIAMETER_DENSIFY_ABOVE:
        ring = densify_ring(ring, DIAMETER_DENSIFY_POINTS)
    return float(np.max(great_circle_distance(ring[:, None, :], ring[None, :, :])))


def ring_diameters(rings):
    """Vectorised vertex-pair diameter for a stack of rings, shape (n, m, 3).

    The largest chord gives the largest angle, so pairs are compared by
    squared chord length and only the winner is converted.
    """
    rings = np.asarray(rings, dtype=float)
    best = np.zeros(rings.shape[0])
    m = rings.shape[1]
    for i in range(m - 1):
        diff = rings[:, i + 1:, :] - rings[:, i:i + 1, :]
        best = np.maximum(best, np.sum(diff * diff, axis=-1).max(axis=1))
    return 2.0 * np.arcsin(np.minimum(np.sqrt(best) / 2.0, 1.0))


def _triangle_excess(a, b, c):
    # Oosterom & Strackee: tan(E/2) = a.(b x c) / (1 + a.b + b.c + c.a)
    num = np.sum(a * np.cross(b, c), axis=-1)
    den = 1.0 + np.sum(a * b, axis=-1) + np.sum(b * c, axis=-1) + np.sum(c * a, axis=-1)
    return 2.0 * np.arctan2(num, den)


def ring_areas(rings):
    """Vectorised fan area for a stack of small rings, shape (n, m, 3).

    Rings must be well inside a hemisphere around their vertex mean (true
    for grid cells). Repeated vertices contribute nothing.
    """
    rings = np.asarray(rings, dtype=float)
    c = normalize(rings.sum(axis=1))[:, None, :]
    nb = np.roll(rings, -1, axis=1)
    return np.sum(_triangle_excess(np.broadcast_to(c, rings.shape), rings, nb), axis=1)


def polygon_area(poly):
    """Signed spherical area in steradians; positive for CCW rings."""
    ring = _ring(poly)
    centre = ring.sum(axis=0)
    norm = np.linalg.norm(centre)
    if norm > 1e-6 * len(ring):
        c = centre / norm
        b = ring
        nb = np.roll(ring, -1, axis=0)
        fan = float(np.sum(_triangle_excess(np.broadcast_to(c, b.shape), b, nb)))
        if abs(fan) < 2.0 * math.pi - 1e-6:
            return fan
    # angle-sum fallback for rings whose vertex mean vanishes (hemispheres)
    prev = np.roll(ring, 1, axis=0)
    nxt = np.roll(ring, -1, axis=0)
    t_in = np.cross(np.cross(prev, ring), ring)
    t_out = np.cross(np.cross(ring, nxt), ring)
    # turning angle at each vertex, positive for left turns
    turn = np.arctan2(np.sum(ring * np.cross(t_in, t_out), axis=-1), np.sum(t_in * t_out, axis=-1))
    return float(2.0 * math.pi - np.sum(turn))


# --------------------------------------------------------------------------
# predicates
# --------------------------------------------------------------------------

def _on_arc(x, a, b, n_hat, eps=BOUNDARY_EPS):
    """x assumed on the great circle (a, b); true if within the minor arc."""
    return (np.sum(np.cross(a, x) * n_hat, axis=-1) >= -eps) & (
        np.sum(np.cross(x, b) * n_hat, axis=-1) >= -eps
    )


def locate_point(p, poly) -> Location:
    """Classify ``p`` against a CCW ring by winding number.

    Points within 1e-12 of an edge plane, inside that edge's extent, are
    reported as BOUNDARY.
    """
    ring = _ring(poly)
    p = np.asarray(p, dtype=float)
    a = ring
    b = np.roll(ring, -1, axis=0)
    n = np.cross(a, b)
    nn = np.linalg.norm(n, axis=-1, keepdims=True)
    n_hat = np.divide(n, nn, out=np.zeros_like(n), where=nn > 0)
    dist = n_hat @ p
    near = (np.abs(dist) < BOUNDARY_EPS) & (nn[:, 0] > 0)
    if np.any(near):
        proj = p[None, :] - dist[:, None] * n_hat
        if np.any(near & _on_arc(proj, a, b, n_hat)):
            return Location.BOUNDARY
    if np.any(great_circle_distance(a, p) < BOUNDARY_EPS):
        return Location.BOUNDARY
    t = a - (a @ p)[:, None] * p[None, :]
    t_next = np.roll(t, -1, axis=0)
    ang = np.arctan2(np.cross(t, t_next) @ p, np.sum(t * t_next, axis=-1))
    return Location.INSIDE if ang.sum() > math.pi else Location.OUTSIDE


def point_in_polygon(p, poly) -> bool:
    """Closed-polygon membership: boundary points count as inside."""
    return locate_point(p, poly) is not Location.OUTSIDE


def points_in_polygon(points, poly):
    """Vectorised closed membership of many points in one polygon."""
    ring = _ring(poly)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    t = ring[None, :, :] - (pts @ ring.T)[:, :, None] * pts[:, None, :]
    t_next = np.roll(t, -1, axis=1)
    ang = np.arctan2(np.sum(np.cross(t, t_next) * pts[:, None, :], axis=-1), np.sum(t * t_next, axis=-1))
    inside = ang.sum(axis=1) > math.pi
    a, b = ring, np.roll(ring, -1, axis=0)
    n = np.cross(a, b)
    nn = np.linalg.norm(n, axis=-1, keepdims=True)
    n_hat = np.divide(n, nn, out=np.zeros_like(n), where=nn > 0)
    dist = pts @ n_hat.T
    near = (np.abs(dist) < BOUNDARY_EPS) & (nn[:, 0] > 0)[None, :]
    if np.any(near):
        rows, cols = np.nonzero(near)
        proj = pts[rows] - dist[rows, cols][:, None] * n_hat[cols]
        on = _on_arc(proj, a[cols], b[cols], n_hat[cols])
        inside[rows[on]] = True
    return inside


def _cross(u, v):
    # component form; faster than np.cross on large broadcast arrays
    u0, u1, u2 = u[..., 0], u[..., 1], u[..., 2]
    v0, v1, v2 = v[..., 0], v[..., 1], v[..., 2]
    return np.stack([u1 * v2 - u2 * v1, u2 * v0 - u0 * v2, u0 * v1 - u1 * v0], axis=-1)


def _dot(u, v):
    return u[..., 0] * v[..., 0] + u[..., 1] * v[..., 1] + u[..., 2] * v[..., 2]


def _arc_frame(a, b):
    """Unit normal and the two half-space normals bounding the minor arc a -> b."""
    n = np.cross(a, b)
    ln = np.linalg.norm(n, axis=-1, keepdims=True)
    n = n / np.where(ln > 0, ln, 1.0)
    # x on the circle lies on the arc iff x.(n x a) >= 0 and x.(b x n) >= 0
    return n, ln[..., 0] > 1e-300, np.cross(n, a), np.cross(b, n)


def arcs_intersect_many(a1, b1, a2, b2, eps=BOUNDARY_EPS):
    """Broadcasting arc-arc intersection test. Zero-length arcs never intersect."""
    a1, b1, a2, b2 = (np.asarray(x, dtype=float) for x in (a1, b1, a2, b2))
    if max(a1.ndim, b1.ndim, a2.ndim, b2.ndim) == 1:
        return bool(arcs_intersect_many(a1[None], b1[None], a2[None], b2[None], eps)[0])
    # frames on the un-broadcast inputs, so per-arc work is not repeated per pair
    n1, g1, p1, q1 = _arc_frame(a1, b1)
    n2, g2, p2, q2 = _arc_frame(a2, b2)
    x = _cross(n1, n2)
    lx = np.sqrt(_dot(x, x))
    collinear = lx < 1e-14
    x = x / np.where(lx > 0, lx, 1.0)[..., None]
    s1, t1 = _dot(x, p1), _dot(x, q1)
    s2, t2 = _dot(x, p2), _dot(x, q2)
    proper = ((s1 >= -eps) & (t1 >= -eps) & (s2 >= -eps) & (t2 >= -eps)) | (
        (s1 <= eps) & (t1 <= eps) & (s2 <= eps) & (t2 <= eps))
    out = g1 & g2 & proper
    if np.any(collinear):
        # same great circle: overlap iff some endpoint lies on the other arc
        shape = out.shape
        idx = np.nonzero(collinear)
        A1, B1, A2, B2, N1, N2 = (np.broadcast_to(v, shape + (3,))[idx] for v in (a1, b1, a2, b2, n1, n2))
        G = (np.broadcast_to(g1, shape) & np.broadcast_to(g2, shape))[idx]
        coplanar = np.abs(_dot(N1, A2)) < 1e-12
        overlap = (_on_arc(A2, A1, B1, N1, eps) | _on_arc(B2, A1, B1, N1, eps)
                   | _on_arc(A1, A2, B2, N2, eps) | _on_arc(B1, A2, B2, N2, eps))
        same_side = _dot(A1 + B1, A2 + B2) > 0
        out = out.copy() if not out.flags.writeable else out
        out[idx] = G & coplanar & overlap & same_side
    return out


def arcs_intersect(u: Arc, v: Arc) -> bool:
    """True iff the two minor arcs share at least one point."""
    if u.length < 1e-15:
        return _point_on_arc(u.a, v)
    if v.length < 1e-15:
        return _point_on_arc(v.a, u)
    return bool(arcs_intersect_many(u.a, u.b, v.a, v.b))


def _point_on_arc(p, arc: Arc):
    n = np.cross(arc.a, arc.b)
    ln = np.linalg.norm(n)
    if ln < 1e-15:
        return bool(great_circle_distance(p, arc.a) < BOUNDARY_EPS)
    n = n / ln
    return bool(abs(n @ p) < BOUNDARY_EPS and _on_arc(p, arc.a, arc.b, n))


# --------------------------------------------------------------------------
# bounding box
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GeodesicBBox:
    """Lat/lon-aligned box. ``lon_max`` may exceed 180 when crossing the antimeridian."""

    lon_min: float
    lon_max: float
    lat_min: float
    lat_max: float

    def __post_init__(self):
        if self.lat_min > self.lat_max:
            raise GeometryError("lat_min > lat_max")

    @property
    def width(self):
        return self.lon_max - self.lon_min

    def ring_lonlat(self, step_deg=0.5):
        """CCW boundary with parallels densified every ``step_deg`` degrees."""
        n = max(1, int(math.ceil(self.width / step_deg)))
        lons = np.linspace(self.lon_min, self.lon_max, n + 1)
        south = np.stack([lons, np.full_like(lons, self.lat_min)], axis=-1)
        north = np.stack([lons[::-1], np.full_like(lons, self.lat_max)], axis=-1)
        return np.concatenate([south, north], axis=0)

    def to_polygon(self, step_deg=0.5):
        ll = self.ring_lonlat(step_deg)
        return SphericalPolygon(lonlat_to_vec(ll[:, 0], ll[:, 1]))


def _min_lon_interval(lons):
    lons = np.unique(np.mod(np.asarray(lons, dtype=float), 360.0))
    if len(lons) == 1:
        v = float(wrap_lon(lons[0]))
        return v, v
    gaps = np.diff(np.concatenate([lons, [lons[0] + 360.0]]))
    i = int(np.argmax(gaps))
    start = lons[(i + 1) % len(lons)]
    width = 360.0 - gaps[i]
    lo = float(wrap_lon(start))
    return lo, lo + float(width)


def bbox_of(features) -> GeodesicBBox:
    """Smallest lat/lon-aligned box around every vertex of a feature set.

    ``features`` is a GeoFeatureSet or an (n, 2) array of lon/lat degrees.
    """
    if hasattr(features, "vertices_lonlat"):
        ll = features.vertices_lonlat()
    else:
        ll = np.asarray(features, dtype=float).reshape(-1, 2)
    if len(ll) == 0:
        raise EmptySetError("bounding box of an empty feature set")
    lat = ll[:, 1]
    if np.any(np.abs(lat) >= 90.0):
        raise PoleSpanningError("feature set touches a pole")
    lo, hi = _min_lon_interval(ll[:, 0])
    if hi - lo >= 180.0:
        raise PoleSpanningError("feature set spans 180 degrees of longitude or more")
    return GeodesicBBox(lo, hi, float(lat.min()), float(lat.max()))


# --------------------------------------------------------------------------
# many points against many polygons
# --------------------------------------------------------------------------

class PolygonIndex:
    """Point-in-polygon for many points against a set of rings.

    Casts a meridian ray from each query point to the north pole and
    counts great-circle edge crossings per ring (odd = inside). Edges are
    bucketed by longitude so each query only sees nearby edges. Rings must
    not contain the north pole.
    """

    def __init__(self, rings: Iterable[np.ndarray], n_bins=None, owners=None):
        """``owners[i]`` groups ring i with others under even-odd parity (holes)."""
        starts, ends, owner = [], [], []
        for k, ring in enumerate(rings):
            ring = np.asarray(ring, dtype=float)
            starts.append(ring)
            ends.append(np.roll(ring, -1, axis=0))
            owner.append(np.full(len(ring), k if owners is None else owners[k]))
        if not starts:
            self.n_edges = 0
            return
        a = np.concatenate(starts)
        b = np.concatenate(ends)
        own = np.concatenate(owner)
        lon_a, _ = vec_to_lonlat(a)
        lon_b, _ = vec_to_lonlat(b)
        dlon = wrap_lon(lon_b - lon_a)
        keep = np.abs(dlon) > 0.0  # meridian edges can never cross a meridian ray
        self.a, self.b, self.owner = a[keep], b[keep], own[keep]
        self.lon_a, self.dlon = lon_a[keep], dlon[keep]
        n = np.cross(self.a, self.b)
        self.normal = n
        self.n_edges = len(self.a)
        if self.n_edges == 0:
            return
        if n_bins is None:
            n_bins = int(np.clip(4 * math.sqrt(self.n_edges), 36, 36000))
        self.n_bins = n_bins
        self.bin_w = 360.0 / n_bins
        lo = np.where(self.dlon > 0, self.lon_a, self.lon_a + self.dlon)
        first = np.floor((lo + 180.0) / self.bin_w).astype(np.int64)
        span = np.floor((lo + np.abs(self.dlon) + 180.0) / self.bin_w).astype(np.int64) - first + 1
        edge_ids = np.repeat(np.arange(self.n_edges), span)
        offs = np.arange(len(edge_ids)) - np.repeat(np.cumsum(span) - span, span)
        bins = np.mod(np.repeat(first, span) + offs, n_bins)
        order = np.argsort(bins, kind="stable")
        self._edge_ids = edge_ids[order]
        counts = np.bincount(bins, minlength=n_bins)
        self._bin_start = np.concatenate([[0], np.cumsum(counts)])

    def contains(self, lon, lat, chunk=4_000_000):
        """Boolean array: point lies inside at least one ring."""
        lon = np.asarray(lon, dtype=float).ravel()
        lat = np.asarray(lat, dtype=float).ravel()
        result = np.zeros(len(lon), dtype=bool)
        if self.n_edges == 0 or len(lon) == 0:
            return result
        pbin = np.mod(np.floor((wrap_lon(lon) + 180.0) / self.bin_w).astype(np.int64), self.n_bins)
        cnt = self._bin_start[pbin + 1] - self._bin_start[pbin]
        # process query points in chunks bounded by candidate-pair count
        cum = np.cumsum(cnt)
        start = 0
        while start < len(lon):
            base = cum[start - 1] if start else 0
            stop = int(np.searchsorted(cum, base + chunk, side="right"))
            stop = max(stop, start + 1)
            self._contains_chunk(lon, lat, pbin, cnt, start, min(stop, len(lon)), result)
            start = stop
        return result

    def _contains_chunk(self, lon, lat, pbin, cnt, s, e, result):
        c = cnt[s:e]
        if c.sum() == 0:
            return
        q = np.repeat(np.arange(s, e), c)
        offs = np.arange(len(q)) - np.repeat(np.cumsum(c) - c, c)
        ed = self._edge_ids[np.repeat(self._bin_start[pbin[s:e]], c) + offs]
        lq = lon[q]
        da = wrap_lon(lq - self.lon_a[ed])
        db = da - self.dlon[ed]
        # half-open straddle rule on longitude; da, db measured from each end
        straddle = ((da >= 0) & (db < 0)) | ((db >= 0) & (da < 0))
        q, ed, lq = q[straddle], ed[straddle], lq[straddle]
        if len(q) == 0:
            return
        n = self.normal[ed]
        lr = np.radians(lq)
        horiz = n[:, 0] * np.cos(lr) + n[:, 1] * np.sin(lr)
        cross_lat = np.degrees(np.arctan2(-horiz, n[:, 2]))
        cross_lat = np.where(cross_lat > 90.0, cross_lat - 180.0, cross_lat)
        cross_lat = np.where(cross_lat < -90.0, cross_lat + 180.0, cross_lat)
        north = cross_lat > lat[q]
        q, own = q[north], self.owner[ed[north]]
        if len(q) == 0:
            return
        key = q.astype(np.int64) * (int(self.owner.max()) + 1) + own
        uk, kc = np.unique(key, return_counts=True)
        inside_q = uk[kc % 2 == 1] // (int(self.owner.max()) + 1)
        result[inside_q] = True
