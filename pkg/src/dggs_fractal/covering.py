"""Counting grid cells that meet a feature set, per resolution.

Cells are the chord polygons of ``Level.boundary_rings(densify=0)``:
great-circle edges through the projected corners and face-edge crossings.
Adjacent cells share those vertices, so the polygons tile the sphere and
all point/arc predicates below are exact on them. Cells are closed:
a point on a shared edge counts for every cell touching it.

``cell_intersects`` is the direct per-cell predicate. ``CoverEngine`` gets
the same answer level by level without visiting every cell:

* points and dense samples of every arc are located in their cells;
* cells touching a sampled cell get an exact arc/edge test against the
  arc pieces sampled next to them (a sample spacing well below the cell
  width means no crossed cell is further away);
* polygon interiors propagate down the hierarchy: candidates are the
  children of the previous level's cells, children of interior cells are
  interior, and the rest are classified by their centre.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .dggs.grid import Cell, GridKind, Level, get_dggs
from .dggs.isea import DEFAULT_ORIENTATION
from .errors import EmptySetError, ResolutionOverflowError
from .features import GeoFeatureSet
from .sphere_geom import (AUTHALIC_RADIUS_KM, BOUNDARY_EPS, GeodesicBBox, PolygonIndex, arcs_intersect_many,
                          bbox_of, great_circle_distance, lonlat_to_vec, normalize, points_in_polygon,
                          vec_to_lonlat)

CANDIDATE_CAP = 5_000_000
SAMPLE_SPACING = 0.25  # arc sample step, in units of sqrt(mean cell area)


@dataclass(frozen=True)
class CoverRecord:
    grid: GridKind
    resolution: int
    delta: float
    n_cells: int
    n_bbox_cells: int

    @property
    def delta_km(self):
        return self.delta * AUTHALIC_RADIUS_KM


@dataclass
class CoverTable:
    records: list = field(default_factory=list)
    truncated: bool = False  # auto range stopped at the candidate cap

    @property
    def grid(self):
        return self.records[0].grid if self.records else None

    def resolutions(self):
        return [r.resolution for r in self.records]

    def arrays(self):
        k = np.array([r.resolution for r in self.records])
        d = np.array([r.delta for r in self.records])
        n = np.array([r.n_cells for r in self.records])
        b = np.array([r.n_bbox_cells for r in self.records])
        return k, d, n, b

    def to_csv(self, path):
        write_cover_csv(self, path)


CSV_HEADER = ["grid", "resolution", "delta_km", "delta_rad", "n_cells", "n_bbox_cells"]


def _g12(x):
    return f"{x:.12g}"


def write_cover_csv(table: CoverTable, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in table.records:
            w.writerow([r.grid.value, r.resolution, _g12(r.delta_km), _g12(r.delta), r.n_cells, r.n_bbox_cells])


# ---------------------------------------------------------------- reference

def _feature_arcs(features: GeoFeatureSet):
    a, b = [], []
    for line in features.line_vecs():
        if len(line) >= 2:
            a.append(line[:-1])
            b.append(line[1:])
    for poly in features.polygons:
        for ring in poly:
            v = lonlat_to_vec(ring[:, 0], ring[:, 1])
            a.append(v)
            b.append(np.roll(v, -1, axis=0))
    if not a:
        return np.zeros((0, 3)), np.zeros((0, 3))
    return np.concatenate(a), np.concatenate(b)


def _polygon_vecs(features):
    return [[lonlat_to_vec(r[:, 0], r[:, 1]) for r in poly] for poly in features.polygons]


def _in_feature_polygon(pts, polys):
    """Closed even-odd membership of points in any feature polygon (holes excluded)."""
    inside = np.zeros(len(pts), dtype=bool)
    for rings in polys:
        par = np.zeros(len(pts), dtype=bool)
        on_edge = np.zeros(len(pts), dtype=bool)
        for ring in rings:
            closed = points_in_polygon(pts, ring)
            strict = _strictly_inside(pts, ring)
            par ^= strict
            on_edge |= closed & ~strict
        inside |= par | on_edge
    return inside


def _strictly_inside(pts, ring):
    t = ring[None, :, :] - (pts @ ring.T)[:, :, None] * pts[:, None, :]
    t_next = np.roll(t, -1, axis=1)
    ang = np.arctan2(np.sum(np.cross(t, t_next) * pts[:, None, :], axis=-1), np.sum(t * t_next, axis=-1))
    return ang.sum(axis=1) > math.pi


def cell_intersects(cell: Cell, features: GeoFeatureSet) -> bool:
    """Closed-cell intersection test against every feature kind."""
    ring = cell.boundary.ring
    pts = features.point_vecs()
    if len(pts) and np.any(points_in_polygon(pts, ring)):
        return True
    # a polyline lying wholly inside the cell is caught by its vertices
    for line in features.line_vecs():
        if np.any(points_in_polygon(line, ring)):
            return True
    fa, fb = _feature_arcs(features)
    if len(fa):
        ca, cb = ring, np.roll(ring, -1, axis=0)
        for s in range(0, len(fa), 4096):
            if np.any(arcs_intersect_many(fa[s:s + 4096, None, :], fb[s:s + 4096, None, :],
                                          ca[None, :, :], cb[None, :, :])):
                return True
    polys = _polygon_vecs(features)
    if polys:
        if np.any(_in_feature_polygon(ring, polys)):
            return True
        for rings in polys:
            if np.any(points_in_polygon(rings[0], ring)):
                return True
    return False


def exhaustive_cover(grid, resolution, features, orientation=DEFAULT_ORIENTATION):
    """Keys of every cell passing ``cell_intersects``, by visiting all cells."""
    lv = get_dggs(grid, orientation).level(resolution)
    keys = lv.all_keys()
    hit = [k for k in keys if cell_intersects(lv.cell(int(k)), features)]
    return np.array(sorted(hit), dtype=np.int64)


# --------------------------------------------------------------- fast paths

def _rings_contain(p, rings):
    """Per-row closed membership of p[i] in rings[i]; returns (closed, on_boundary)."""
    a = rings
    b = np.roll(rings, -1, axis=1)
    dot = np.einsum("nmk,nk->nm", a, p)
    t = a - dot[..., None] * p[:, None, :]
    t_next = np.roll(t, -1, axis=1)
    ang = np.arctan2(np.einsum("nmk,nk->nm", np.cross(t, t_next), p), np.sum(t * t_next, axis=-1))
    inside = ang.sum(axis=1) > math.pi
    n = np.cross(a, b)
    nn = np.linalg.norm(n, axis=-1)
    n_hat = n / np.where(nn > 0, nn, 1.0)[..., None]
    dist = np.einsum("nmk,nk->nm", n_hat, p)
    near = (np.abs(dist) < BOUNDARY_EPS) & (nn > 0)
    on = np.zeros(len(p), dtype=bool)
    if np.any(near):
        r, c = np.nonzero(near)
        x = p[r] - dist[r, c][:, None] * n_hat[r, c]
        ok = (np.sum(np.cross(a[r, c], x) * n_hat[r, c], axis=-1) >= -BOUNDARY_EPS) & (
            np.sum(np.cross(x, b[r, c]) * n_hat[r, c], axis=-1) >= -BOUNDARY_EPS)
        on[r[ok]] = True
    return inside | on, on


def locate(level: Level, p, chunk=500_000):
    """Pairs ``(point_index, key)``: every closed cover cell containing each point."""
    p = np.asarray(p, dtype=float).reshape(-1, 3)
    out_i, out_k = [], []
    for s in range(0, len(p), chunk):
        q = p[s:s + chunk]
        k0 = level.index_points(q)
        uk, inv = np.unique(k0, return_inverse=True)
        rings = level.boundary_rings(uk, 0)[inv]
        closed, on = _rings_contain(q, rings)
        good = closed & ~on
        idx = np.arange(len(q))
        out_i.append(idx[good] + s)
        out_k.append(k0[good])
        odd = np.nonzero(~good)[0]
        if len(odd):
            src, nk = level.touching(k0[odd])
            ci = np.concatenate([odd, odd[src]])
            ck = np.concatenate([k0[odd], nk])
            uk2, inv2 = np.unique(ck, return_inverse=True)
            r2 = level.boundary_rings(uk2, 0)[inv2]
            c2, _ = _rings_contain(q[ci], r2)
            found = np.zeros(len(q), dtype=bool)
            found[ci[c2]] = True
            out_i.append(ci[c2] + s)
            out_k.append(ck[c2])
            lost = odd[~found[odd]]
            # numerical corner case: keep the projected cell
            out_i.append(lost + s)
            out_k.append(k0[lost])
    return np.concatenate(out_i), np.concatenate(out_k)


def _sample_arcs(a, b, h):
    """Densify arcs at spacing <= h. Returns samples and segment endpoint indices."""
    length = great_circle_distance(a, b)
    npieces = np.maximum(np.ceil(length / h).astype(np.int64), 1)
    total = int(npieces.sum())
    arc = np.repeat(np.arange(len(a)), npieces)
    j = np.arange(total) - np.repeat(np.cumsum(npieces) - npieces, npieces)
    t0 = j / npieces[arc]
    t1 = (j + 1) / npieces[arc]
    om = length[arc]
    sin_om = np.sin(om)
    small = sin_om < 1e-15

    def pt(t):
        wa = np.where(small, 1.0 - t, np.sin((1.0 - t) * om) / np.where(small, 1.0, sin_om))
        wb = np.where(small, t, np.sin(t * om) / np.where(small, 1.0, sin_om))
        return normalize(wa[:, None] * a[arc] + wb[:, None] * b[arc])

    return pt(t0), pt(t1)


def arc_cells(level: Level, a, b, chunk=400_000):
    """Keys of every cover cell meeting at least one of the arcs a[i] -> b[i]."""
    if len(a) == 0:
        return np.zeros(0, dtype=np.int64)
    h = SAMPLE_SPACING * math.sqrt(level.cell_area)
    starts, ends = _sample_arcs(a, b, h)
    hit_parts = []
    seg_s, seg_k = [], []
    for s in range(0, len(starts), chunk):
        for pts in (starts[s:s + chunk], ends[s:s + chunk]):
            i, k = locate(level, pts)
            seg_s.append(i + s)
            seg_k.append(k)
    seg_s = np.concatenate(seg_s)
    seg_k = np.concatenate(seg_k)
    hit = np.unique(seg_k)
    # near cells: touch a hit cell but hold no sample
    src, nk = level.touching(hit)
    keep = ~np.isin(nk, hit)
    src, nk = src[keep], nk[keep]
    if len(nk) == 0:
        return hit
    pair = np.unique(np.stack([seg_k, seg_s], axis=1), axis=0)
    order_k = pair[:, 0]
    lo = np.searchsorted(order_k, hit[src], side="left")
    hi = np.searchsorted(order_k, hit[src], side="right")
    cnt = hi - lo
    near_of = np.repeat(nk, cnt)
    offs = np.arange(int(cnt.sum())) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    seg_of = pair[np.repeat(lo, cnt) + offs, 1]
    pr = np.unique(np.stack([near_of, seg_of], axis=1), axis=0)
    extra = []
    uk, inv = np.unique(pr[:, 0], return_inverse=True)
    for s in range(0, len(pr), 50_000):
        sl = slice(s, s + 50_000)
        rings = level.boundary_rings(uk[inv[sl]], 0)
        ca, cb = rings, np.roll(rings, -1, axis=1)
        sa = starts[pr[sl, 1]][:, None, :]
        sb = ends[pr[sl, 1]][:, None, :]
        ok = np.any(arcs_intersect_many(sa, sb, ca, cb), axis=1)
        extra.append(pr[sl, 0][ok])
    return np.union1d(hit, np.concatenate(extra))


class _Polygons:
    """Even-odd point-in-polygon over all feature polygons (holes included)."""

    def __init__(self, features: GeoFeatureSet):
        rings, owners = [], []
        for i, poly in enumerate(features.polygons):
            for r in poly:
                rings.append(lonlat_to_vec(r[:, 0], r[:, 1]))
                owners.append(i)
        self.n = len(features.polygons)
        self.index = PolygonIndex(rings, owners=owners) if rings else None
        self.a, self.b = _feature_arcs(GeoFeatureSet(polygons=features.polygons))

    def contains(self, p):
        if self.index is None:
            return np.zeros(len(p), dtype=bool)
        lon, lat = vec_to_lonlat(p)
        return self.index.contains(lon, lat)


class CoverEngine:
    """Level-by-level cover of one feature set on one grid.

    ``step()`` advances one resolution and returns the sorted keys of the
    cells meeting the features. Interior cells of the polygons are carried
    between levels.
    """

    def __init__(self, grid, features: GeoFeatureSet, orientation=DEFAULT_ORIENTATION):
        if features.is_empty():
            raise EmptySetError("cannot cover an empty feature set")
        self.dggs = get_dggs(grid, orientation)
        self.features = features
        self.points = features.point_vecs()
        la, lb = [], []
        for line in features.line_vecs():
            if len(line) >= 2:
                la.append(line[:-1])
                lb.append(line[1:])
            elif len(line) == 1:
                self.points = np.vstack([self.points, line])
        self.line_a = np.concatenate(la) if la else np.zeros((0, 3))
        self.line_b = np.concatenate(lb) if lb else np.zeros((0, 3))
        self.polys = _Polygons(features) if features.polygons else None
        self.resolution = -1
        self._poly_cells = None  # keys meeting polygons at the current level
        self._interior = None  # subset of those wholly inside
        self.last_candidates = 0

    def step(self):
        k = self.resolution + 1
        lv = self.dggs.level(k)
        parts = []
        if len(self.points):
            parts.append(np.unique(locate(lv, self.points)[1]))
        if len(self.line_a):
            parts.append(arc_cells(lv, self.line_a, self.line_b))
        self.last_candidates = 0
        if self.polys is not None:
            parts.append(self._polygon_step(lv))
        self.resolution = k
        keys = np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)
        return keys

    def _polygon_step(self, lv: Level):
        boundary = arc_cells(lv, self.polys.a, self.polys.b)
        if self._poly_cells is None:
            cand = lv.all_keys()
            from_interior = np.zeros(len(cand), dtype=bool)
        else:
            parent = self.dggs.level(lv.resolution - 1)
            ch = parent.children(self._poly_cells)
            inner = np.isin(self._poly_cells, self._interior)
            flat = ch.ravel()
            flag = np.repeat(inner, ch.shape[1])
            ok = flat >= 0
            flat, flag = flat[ok], flag[ok]
            order = np.lexsort((~flag, flat))
            flat, flag = flat[order], flag[order]
            first = np.ones(len(flat), dtype=bool)
            first[1:] = flat[1:] != flat[:-1]
            cand, from_interior = flat[first], flag[first]
        self.last_candidates = len(cand)
        off = ~np.isin(cand, boundary)
        cand, from_interior = cand[off], from_interior[off]
        test = ~from_interior
        inside = from_interior.copy()
        if np.any(test):
            inside[test] = self.polys.contains(lv.centers(cand[test]))
        interior = cand[inside]
        self._interior = interior
        self._poly_cells = np.union1d(boundary, interior)
        return self._poly_cells

    def estimate_next_candidates(self):
        """Rough candidate count for the next level, used against the cap."""
        if self.resolution < 0:
            return 0
        lv = self.dggs.level(self.resolution)
        nxt = self.resolution + 1
        if nxt > self.dggs.grid.max_resolution:
            return math.inf
        factor = 4 if lv.kind == "tri" else 7
        n = 0 if self._poly_cells is None else len(self._poly_cells) * factor
        arc_len = 0.0
        for a, b in ((self.line_a, self.line_b),) + (((self.polys.a, self.polys.b),) if self.polys else ()):
            if len(a):
                arc_len += float(great_circle_distance(a, b).sum())
        h = SAMPLE_SPACING * math.sqrt(self.dggs.level(nxt).cell_area)
        return n + arc_len / h + len(self.points)


def _bbox_features(bbox: GeodesicBBox) -> GeoFeatureSet:
    if bbox.width <= 0 and bbox.lat_max <= bbox.lat_min:
        return GeoFeatureSet(points=[[bbox.lon_min, bbox.lat_min]])
    if bbox.width <= 0:
        return GeoFeatureSet(lines=[[[bbox.lon_min, bbox.lat_min], [bbox.lon_min, bbox.lat_max]]])
    if bbox.lat_max <= bbox.lat_min:
        ring = bbox.ring_lonlat()
        lons = np.unique(ring[:, 0])
        return GeoFeatureSet(lines=[np.stack([lons, np.full(len(lons), bbox.lat_min)], axis=1)])
    return GeoFeatureSet(polygons=[[bbox.ring_lonlat()]])


def _record(lv: Level, keys, bbox_keys) -> CoverRecord:
    delta = float(lv.diameters(keys).max())
    return CoverRecord(lv.grid, lv.resolution, delta, int(len(keys)), int(len(bbox_keys)))


def cover_at_resolution(grid, k, features: GeoFeatureSet, orientation=DEFAULT_ORIENTATION) -> CoverRecord:
    table = build_cover_table(grid, k, k, features, orientation)
    return table.records[0]


def build_cover_table(grid, k_min, k_max, features: GeoFeatureSet, orientation=DEFAULT_ORIENTATION,
                      candidate_cap=CANDIDATE_CAP) -> CoverTable:
    """One record per resolution in ``k_min..k_max``.

    ``k_max=None`` runs until the next level would exceed ``candidate_cap``
    candidates (or the grid's finest level).
    """
    grid = GridKind.parse(grid.value if isinstance(grid, GridKind) else grid)
    if features.is_empty():
        raise EmptySetError("cannot cover an empty feature set")
    top = grid.max_resolution if k_max is None else k_max
    if k_min < 0 or top > grid.max_resolution:
        raise ResolutionOverflowError(f"{grid.value} supports resolutions 0..{grid.max_resolution}")
    if k_min > top:
        raise ValueError(f"empty resolution range {k_min}..{k_max}")
    bbox = bbox_of(features)
    eng = CoverEngine(grid, features, orientation)
    beng = CoverEngine(grid, _bbox_features(bbox), orientation)
    table = CoverTable()
    for k in range(0, top + 1):
        if k_max is None and k > k_min:
            if max(eng.estimate_next_candidates(), beng.estimate_next_candidates()) > candidate_cap:
                table.truncated = True
                break
        keys = eng.step()
        bkeys = beng.step()
        if k >= k_min:
            table.records.append(_record(eng.dggs.level(k), keys, bkeys))
    return table
