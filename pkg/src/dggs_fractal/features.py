"""Feature sets on the sphere and their GeoJSON form."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInputError, ParseError
from .sphere_geom import SphericalPolygon, lonlat_to_vec


@dataclass
class GeoFeatureSet:
    """Points, polylines and polygons in lon/lat degrees.

    ``points`` is an (n, 2) array; ``lines`` a list of (m, 2) arrays;
    ``polygons`` a list of rings, each a list ``[outer, hole, ...]`` of
    (m, 2) arrays without the closing vertex. Every ring is stored
    counter-clockwise (seen from outside the sphere) whatever its input
    winding, so a ring always means the smaller region it bounds.
    """

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    lines: list = field(default_factory=list)
    polygons: list = field(default_factory=list)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.lines = [np.asarray(l, dtype=float).reshape(-1, 2) for l in self.lines]
        self.polygons = [[_ccw(np.asarray(r, dtype=float).reshape(-1, 2)) for r in p] for p in self.polygons]

    def is_empty(self):
        return len(self.points) == 0 and not self.lines and not self.polygons

    def __len__(self):
        return len(self.points) + len(self.lines) + len(self.polygons)

    def vertices_lonlat(self):
        parts = [self.points]
        parts += self.lines
        parts += [r for p in self.polygons for r in p]
        return np.concatenate(parts) if parts else np.zeros((0, 2))

    def point_vecs(self):
        return lonlat_to_vec(self.points[:, 0], self.points[:, 1]) if len(self.points) else np.zeros((0, 3))

    def line_vecs(self):
        return [lonlat_to_vec(l[:, 0], l[:, 1]) for l in self.lines]

    def spherical_polygons(self):
        return [SphericalPolygon.from_lonlat(p[0], holes=p[1:]) for p in self.polygons]

    # ------------------------------------------------------------- GeoJSON

    def to_geojson(self, multipoint=False, properties=None):
        props = properties or {}
        feats = []
        if len(self.points):
            if multipoint:
                feats.append(_feature({"type": "MultiPoint", "coordinates": self.points.tolist()}, props))
            else:
                for p in self.points:
                    feats.append(_feature({"type": "Point", "coordinates": p.tolist()}, props))
        for l in self.lines:
            feats.append(_feature({"type": "LineString", "coordinates": l.tolist()}, props))
        for poly in self.polygons:
            rings = [np.vstack([r, r[:1]]).tolist() for r in poly]
            feats.append(_feature({"type": "Polygon", "coordinates": rings}, props))
        return {"type": "FeatureCollection", "features": feats}

    def write_geojson(self, path, multipoint=False, properties=None):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_geojson(multipoint, properties), fh)
            fh.write("\n")

    @classmethod
    def from_geojson(cls, obj):
        pts, lines, polys = [], [], []

        def ring(coords):
            r = np.asarray(coords, dtype=float)
            if r.ndim != 2 or r.shape[1] < 2:
                raise ParseError("polygon ring must be a list of coordinate pairs")
            r = r[:, :2]
            if len(r) > 1 and np.all(r[0] == r[-1]):
                r = r[:-1]
            if len(r) < 3:
                raise ParseError("polygon ring needs at least 3 distinct vertices")
            return r

        def geom(g):
            if g is None:
                return
            t = g.get("type")
            c = g.get("coordinates")
            if t == "Point":
                pts.append(np.asarray(c, dtype=float)[:2])
            elif t == "MultiPoint":
                pts.extend(np.asarray(p, dtype=float)[:2] for p in c)
            elif t == "LineString":
                lines.append(np.asarray(c, dtype=float)[:, :2])
            elif t == "MultiLineString":
                lines.extend(np.asarray(l, dtype=float)[:, :2] for l in c)
            elif t == "Polygon":
                polys.append([ring(r) for r in c])
            elif t == "MultiPolygon":
                polys.extend([ring(r) for r in p] for p in c)
            elif t == "GeometryCollection":
                for sub in g.get("geometries", []):
                    geom(sub)
            else:
                raise ParseError(f"unsupported geometry type {t!r}")

        t = obj.get("type") if isinstance(obj, dict) else None
        try:
            if t == "FeatureCollection":
                for f in obj.get("features", []):
                    geom(f.get("geometry"))
            elif t == "Feature":
                geom(obj.get("geometry"))
            elif t is not None:
                geom(obj)
            else:
                raise ParseError("not a GeoJSON object")
        except (TypeError, ValueError, IndexError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"malformed GeoJSON coordinates: {exc}") from None
        return cls(np.array(pts).reshape(-1, 2), lines, polys)

    @classmethod
    def read_geojson(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
        fs = cls.from_geojson(obj)
        if fs.is_empty():
            raise EmptyInputError(f"{path}: no features")
        return fs


def _feature(geometry, props):
    return {"type": "Feature", "properties": dict(props), "geometry": geometry}


def _ccw(ring):
    if len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
        ring = ring[:-1]
    if len(ring) < 3:
        return ring
    v = lonlat_to_vec(ring[:, 0], ring[:, 1])
    c = v.sum(axis=0)
    # signed turning about the vertex mean; negative means clockwise
    turn = np.einsum("j,ij->", c, np.cross(v, np.roll(v, -1, axis=0)))
    return ring[::-1].copy() if turn < 0 else ring

