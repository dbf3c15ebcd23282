"""Icosahedral grid hierarchies: ISEA4T, ISEA4H and ISEA3H.

Cells are addressed by integer barycentric coordinates on a face lattice
with ``N`` subdivisions per icosahedron edge.

* Triangles (ISEA4T, ``N = 2**k``) are floor coordinates ``(i, j, k)``:
  ``i + j + k == N - 1`` for upward cells, ``N - 2`` for downward cells.
* Hexagons sit on lattice points ``(i, j, k)`` with ``i + j + k == N``.
  ISEA4H uses ``N = 2**k``. ISEA3H alternates: class I (even res ``2m``)
  uses ``N = 3**m``; class II (odd res ``2m + 1``) uses ``N = 3**(m + 1)``
  restricted to points with ``i = j = k (mod 3)``, a lattice rotated by
  30 degrees and scaled by sqrt(3).

Lattice points on face edges belong to two faces and icosahedron vertices
to five; the canonical address uses the lowest face index. Neighbouring
faces are reached by unfolding across the shared edge. The 12 vertex
cells of the hexagon grids are pentagons with 5/6 of a hexagon's area.

Vectorised routines work on int64 *keys* (see ``Level.encode``); the
scalar API (``children``, ``neighbors`` ...) wraps them.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..errors import GeometryError, ResolutionOverflowError
from ..sphere_geom import (DIAMETER_DENSIFY_ABOVE, SphericalPolygon, great_circle_distance, polygon_diameter,
                          ring_areas, ring_diameters, vec_to_lonlat)
from .isea import PLANAR_VERTS, IcosahedronOrientation, IseaProjection, DEFAULT_ORIENTATION


class GridKind(enum.Enum):
    ISEA4T = "ISEA4T"
    ISEA4H = "ISEA4H"
    ISEA3H = "ISEA3H"

    @property
    def aperture(self):
        return 3 if self is GridKind.ISEA3H else 4

    @property
    def shape(self):
        return "triangle" if self is GridKind.ISEA4T else "hexagon"

    @property
    def max_resolution(self):
        return 20 if self is GridKind.ISEA3H else 15

    @classmethod
    def parse(cls, name):
        try:
            return cls(str(name).upper())
        except ValueError:
            raise ValueError(f"unknown grid kind {name!r}; expected one of isea4t, isea4h, isea3h") from None


def cells_at_resolution(grid: GridKind, resolution: int) -> int:
    """Number of cells: 20*4^k, 10*4^k + 2 or 10*3^k + 2."""
    grid = GridKind.parse(grid.value if isinstance(grid, GridKind) else grid)
    if resolution < 0 or resolution > grid.max_resolution:
        raise ResolutionOverflowError(f"{grid.value} supports resolutions 0..{grid.max_resolution}")
    if grid is GridKind.ISEA4T:
        return 20 * 4 ** resolution
    return 10 * grid.aperture ** resolution + 2


@dataclass(frozen=True)
class CellId:
    grid: GridKind
    resolution: int
    face: int
    i: int
    j: int
    k: int

    @property
    def cls(self):
        """Rotation class for ISEA3H: 1 at even resolutions, 2 at odd ones."""
        if self.grid is GridKind.ISEA3H and self.resolution % 2:
            return 2
        return 1

    @property
    def ij(self):
        return (self.i, self.j)

    def __str__(self):
        return f"{self.grid.value}:{self.resolution}:{self.face}:{self.i},{self.j},{self.k}"

    def sort_key(self):
        return (self.grid.value, self.resolution, self.face, self.i, self.j, self.k)

    def __lt__(self, other):
        return self.sort_key() < other.sort_key()


@dataclass(frozen=True, eq=False)
class Cell:
    id: CellId
    boundary: SphericalPolygon
    center: np.ndarray
    diameter: float
    n_corners: int


def _sorted_steps(steps):
    steps = np.array(steps, dtype=np.int64)
    xy = steps @ PLANAR_VERTS
    return steps[np.argsort(np.arctan2(xy[:, 1], xy[:, 0]))]


_STEPS_I = _sorted_steps([(1, -1, 0), (1, 0, -1), (0, 1, -1), (-1, 1, 0), (-1, 0, 1), (0, -1, 1)])
_STEPS_II = _sorted_steps([(2, -1, -1), (1, 1, -2), (-1, 2, -1), (-2, 1, 1), (-1, -1, 2), (1, -2, 1)])
# hexagon corners relative to the cell centre, counter-clockwise, in lattice units
_CORNERS_I = (_STEPS_I + np.roll(_STEPS_I, -1, axis=0)) / 3.0
_CORNERS_II = (_STEPS_II + np.roll(_STEPS_II, -1, axis=0)) / 3.0
_E = np.eye(3, dtype=np.int64)


class Dggs:
    """One grid family on one icosahedron orientation."""

    def __init__(self, grid: GridKind, orientation: IcosahedronOrientation = DEFAULT_ORIENTATION):
        self.grid = GridKind.parse(grid.value if isinstance(grid, GridKind) else grid)
        self.projection = IseaProjection(_icosahedron(orientation))
        self.ico = self.projection.ico
        self._adj, self._perm = self.ico.adjacency
        self._levels = {}

    def __repr__(self):
        return f"Dggs({self.grid.value})"

    def level(self, resolution) -> "Level":
        if resolution < 0 or resolution > self.grid.max_resolution:
            raise ResolutionOverflowError(
                f"{self.grid.value} supports resolutions 0..{self.grid.max_resolution}, got {resolution}")
        lv = self._levels.get(resolution)
        if lv is None:
            lv = self._levels[resolution] = Level(self, resolution)
        return lv

    # ---------------------------------------------------------------- faces

    def unfold(self, face, coords):
        """Move points with one negative barycentric coordinate to the adjacent face.

        ``coords`` is float or int, shape (n, 3). Rows without a negative
        coordinate are returned unchanged. Zero coordinates are left alone.
        """
        face = np.array(face, dtype=np.int64, copy=True)
        coords = np.array(coords, copy=True)
        m = np.argmin(coords, axis=1)
        neg = coords[np.arange(len(coords)), m] < 0
        if np.any(neg):
            f, mm, c = face[neg], m[neg], coords[neg]
            face[neg], coords[neg] = self._cross_edge(f, mm, c)
        return face, coords

    def _cross_edge(self, face, m, coords):
        g = self._adj[face, m]
        perm = self._perm[face, m]  # g corner -> f corner
        xm = coords[np.arange(len(coords)), m]
        out = np.take_along_axis(coords, perm, axis=1) + xm[:, None]
        opp = perm == m[:, None]
        out = np.where(opp, -xm[:, None], out)
        return g, out


@lru_cache(maxsize=8)
def _icosahedron(orientation):
    from .isea import Icosahedron
    return Icosahedron(orientation)


@lru_cache(maxsize=32)
def get_dggs(grid: GridKind, orientation: IcosahedronOrientation = DEFAULT_ORIENTATION) -> Dggs:
    return Dggs(grid, orientation)


class Level:
    """One resolution of a grid: lattice constants plus vectorised cell operations."""

    def __init__(self, dggs: Dggs, resolution: int):
        self.dggs = dggs
        self.grid = dggs.grid
        self.resolution = resolution
        g = self.grid
        if g is GridKind.ISEA4T:
            self.N, self.kind = 2 ** resolution, "tri"
        elif g is GridKind.ISEA4H:
            self.N, self.kind = 2 ** resolution, "hex1"
        elif resolution % 2 == 0:
            self.N, self.kind = 3 ** (resolution // 2), "hex1"
        else:
            self.N, self.kind = 3 ** (resolution // 2 + 1), "hex2"
        self.M = self.N + 1
        self.n_cells = cells_at_resolution(g, resolution)
        self.cell_area = 4.0 * math.pi / self.n_cells
        if self.kind != "tri":
            self.steps = _STEPS_I if self.kind == "hex1" else _STEPS_II
            self.corner_offsets = _CORNERS_I if self.kind == "hex1" else _CORNERS_II
            self._init_vertex_tables()

    # ------------------------------------------------------------- encoding

    def encode(self, face, i, j, flag=0):
        return ((np.asarray(face, dtype=np.int64) * self.M + i) * self.M + j) * 2 + flag

    def decode(self, keys):
        keys = np.asarray(keys, dtype=np.int64)
        flag = keys % 2
        rest = keys // 2
        j = rest % self.M
        rest //= self.M
        i = rest % self.M
        face = rest // self.M
        if self.kind == "tri":
            k = self.N - 1 - flag - i - j
        else:
            k = self.N - i - j
        return face, np.stack([i, j, k], axis=1)

    def to_ids(self, keys):
        face, ijk = self.decode(keys)
        return [CellId(self.grid, self.resolution, int(f), int(a), int(b), int(c))
                for f, (a, b, c) in zip(face, ijk)]

    def from_id(self, cid: CellId):
        if cid.grid is not self.grid or cid.resolution != self.resolution:
            raise GeometryError(f"cell {cid} does not belong to {self.grid.value} res {self.resolution}")
        ijk = np.array([[cid.i, cid.j, cid.k]], dtype=np.int64)
        if np.any(ijk < 0) or not 0 <= cid.face < 20:
            raise GeometryError(f"invalid cell address {cid}")
        s = int(ijk.sum())
        if self.kind == "tri":
            if s not in (self.N - 1, self.N - 2):
                raise GeometryError(f"invalid triangle address {cid}")
            return self.encode([cid.face], ijk[:, 0], ijk[:, 1], int(s == self.N - 2))[0]
        if s != self.N:
            raise GeometryError(f"invalid hexagon address {cid}")
        if self.kind == "hex2" and not (cid.i % 3 == cid.j % 3 == cid.k % 3):
            raise GeometryError(f"{cid} is not a class II lattice point")
        key = self._canon_hex(np.array([cid.face]), ijk)[0]
        return key

    # ------------------------------------------------------------ hexagons

    def _init_vertex_tables(self):
        ico = self.dggs.ico
        N = self.N
        self.vertex_canon = np.zeros(12, dtype=np.int64)
        self.vertex_keys = np.zeros(12, dtype=np.int64)
        for v, inc in enumerate(ico.vertex_faces):
            f, m = min(inc)
            ijk = np.zeros(3, dtype=np.int64)
            ijk[m] = N
            self.vertex_keys[v] = self.encode(f, ijk[0], ijk[1])
        self._vertex_key_set = {int(k): v for v, k in enumerate(self.vertex_keys)}

    def _canon_hex(self, face, ijk):
        """Canonical keys for lattice points, any representation."""
        face = np.asarray(face, dtype=np.int64)
        ijk = np.asarray(ijk, dtype=np.int64)
        zeros = ijk == 0
        nz = zeros.sum(axis=1)
        face = face.copy()
        ijk = ijk.copy()
        edge = nz == 1
        if np.any(edge):
            m = np.argmax(zeros[edge], axis=1)
            g, alt = self.dggs._cross_edge(face[edge], m, ijk[edge])
            swap = g < face[edge]
            fe, ie = face[edge], ijk[edge]
            fe[swap], ie[swap] = g[swap], alt[swap]
            face[edge], ijk[edge] = fe, ie
        keys = self.encode(face, ijk[:, 0], ijk[:, 1])
        vert = nz == 2
        if np.any(vert):
            m = np.argmax(ijk[vert], axis=1)
            vid = self.dggs.ico.faces[face[vert], m]
            keys[vert] = self.vertex_keys[vid]
        return keys

    def is_pentagon(self, keys):
        if self.kind == "tri":
            return np.zeros(len(keys), dtype=bool)
        return np.isin(keys, self.vertex_keys)

    @property
    @lru_cache(maxsize=None)
    def _pentagon_neighbors(self):
        ico = self.dggs.ico
        out = {}
        for v, inc in enumerate(ico.vertex_faces):
            cand = []
            for f, m in inc:
                base = np.zeros(3, dtype=np.int64)
                base[m] = self.N
                pts = base[None, :] + self.steps
                ok = np.all(pts >= 0, axis=1)
                cand.append((np.full(ok.sum(), f), pts[ok]))
            faces = np.concatenate([c[0] for c in cand])
            pts = np.concatenate([c[1] for c in cand])
            keys = np.unique(self._canon_hex(faces, pts))
            keys = keys[keys != self.vertex_keys[v]]
            out[int(self.vertex_keys[v])] = keys
        return out

    def _hex_neighbors_from(self, face, ijk):
        """(n, 6) neighbour keys of lattice points given in any representation; -1 pads pentagons."""
        n = len(face)
        pts = ijk[:, None, :] + self.steps[None, :, :]
        f = np.repeat(face, 6)
        flat = pts.reshape(-1, 3)
        f, flat = self.dggs.unfold(f, flat)
        keys = self._canon_hex(f, flat).reshape(n, 6)
        vert = (ijk == 0).sum(axis=1) == 2
        if np.any(vert):
            vkeys = self._canon_hex(face[vert], ijk[vert])
            rows = np.nonzero(vert)[0]
            for r, vk in zip(rows, vkeys):
                nb = self._pentagon_neighbors[int(vk)]
                keys[r, :] = -1
                keys[r, :len(nb)] = nb
        return keys

    # ----------------------------------------------------------- neighbours

    def neighbors(self, keys):
        """(n, 6) edge-adjacent cells; unused slots are -1 (triangles use 3 columns)."""
        keys = np.asarray(keys, dtype=np.int64)
        face, ijk = self.decode(keys)
        if self.kind != "tri":
            return self._hex_neighbors_from(face, ijk)
        up = ijk.sum(axis=1) == self.N - 1
        out = np.full((len(keys), 3), -1, dtype=np.int64)
        # up cells border three down cells, possibly across a face edge
        for m in range(3):
            nb_floor = ijk - _E[m]
            corners = np.stack([nb_floor + 1 - _E[c] for c in range(3)], axis=1)
            out[up, m] = self._tri_from_corners(face[up], corners[up])
            out[~up, m] = self.encode(face[~up], ijk[~up, 0] + _E[m, 0], ijk[~up, 1] + _E[m, 1], 0)
        return out

    def _tri_from_corners(self, face, corners):
        n = len(face)
        f = np.repeat(face, 3)
        flat = corners.reshape(-1, 3)
        # every corner of a cross-edge neighbour has the same coordinate <= 0
        m = np.argmin(corners.sum(axis=1), axis=1)
        mm = np.repeat(m, 3)
        needs = np.repeat(np.any(corners < 0, axis=(1, 2)), 3)
        if np.any(needs):
            g, moved = self.dggs._cross_edge(f[needs], mm[needs], flat[needs])
            f = f.copy()
            flat = flat.copy()
            f[needs], flat[needs] = g, moved
        f = f.reshape(n, 3)[:, 0]
        floor = flat.reshape(n, 3, 3).min(axis=1)
        down = floor.sum(axis=1) == self.N - 2
        return self.encode(f, floor[:, 0], floor[:, 1], down.astype(np.int64))

    def _lattice_point_reps(self, face, pts):
        """All (src, face, coords) representations of lattice points."""
        n = len(face)
        src = [np.arange(n)]
        faces = [face]
        coords = [pts]
        zeros = pts == 0
        nz = zeros.sum(axis=1)
        e = np.nonzero(nz == 1)[0]
        if len(e):
            m = np.argmax(zeros[e], axis=1)
            g, alt = self.dggs._cross_edge(face[e], m, pts[e])
            src.append(e)
            faces.append(g)
            coords.append(alt)
        vrows = np.nonzero(nz == 2)[0]
        if len(vrows):
            ico = self.dggs.ico
            m = np.argmax(pts[vrows], axis=1)
            vid = ico.faces[face[vrows], m]
            for r, v in zip(vrows, vid):
                for f, mv in ico.vertex_faces[int(v)]:
                    c = np.zeros(3, dtype=np.int64)
                    c[mv] = self.N
                    src.append(np.array([r]))
                    faces.append(np.array([f]))
                    coords.append(c[None, :])
        return np.concatenate(src), np.concatenate(faces), np.concatenate(coords)

    def touching(self, keys):
        """Pairs ``(src_index, key)`` of cells sharing at least a point with ``keys[src]``.

        For hexagons this is edge adjacency; triangles also meet at vertices.
        """
        keys = np.asarray(keys, dtype=np.int64)
        if self.kind != "tri":
            nb = self.neighbors(keys)
            src = np.repeat(np.arange(len(keys)), nb.shape[1])
            flat = nb.ravel()
            ok = flat >= 0
            return src[ok], flat[ok]
        face, ijk = self.decode(keys)
        up = ijk.sum(axis=1) == self.N - 1
        corners = np.stack([np.where(up[:, None], ijk + _E[c], ijk + 1 - _E[c]) for c in range(3)], axis=1)
        csrc = np.repeat(np.arange(len(keys)), 3)
        cface = np.repeat(face, 3)
        src, rf, rp = self._lattice_point_reps(cface, corners.reshape(-1, 3))
        src = csrc[src]
        out_src, out_key = [], []
        for m in range(3):
            fl = rp - _E[m]
            ok = np.all(fl >= 0, axis=1)
            out_src.append(src[ok])
            out_key.append(self.encode(rf[ok], fl[ok, 0], fl[ok, 1], 0))
        for m in range(3):
            fl = rp - 1 + _E[m]
            ok = np.all(fl >= 0, axis=1)
            out_src.append(src[ok])
            out_key.append(self.encode(rf[ok], fl[ok, 0], fl[ok, 1], 1))
        s = np.concatenate(out_src)
        k = np.concatenate(out_key)
        pair = np.unique(np.stack([s, k], axis=1), axis=0)
        keep = pair[:, 1] != keys[pair[:, 0]]
        return pair[keep, 0], pair[keep, 1]

    # ------------------------------------------------------------- children

    def child_level(self):
        return self.dggs.level(self.resolution + 1)

    def children(self, keys):
        """(n, c) candidate child keys at the next resolution; -1 pads.

        Triangles: the 4 nested sub-triangles. Hexagons: the child at the same
        centre plus its ring of neighbours (7, or 6 around a pentagon).
        """
        keys = np.asarray(keys, dtype=np.int64)
        child = self.child_level()
        face, ijk = self.decode(keys)
        if self.kind == "tri":
            up = ijk.sum(axis=1) == self.N - 1
            out = np.zeros((len(keys), 4), dtype=np.int64)
            two = 2 * ijk
            for m in range(3):
                c_up = two + _E[m]
                c_dn = two + 1 - _E[m]
                out[:, m] = np.where(
                    up,
                    child.encode(face, c_up[:, 0], c_up[:, 1], 0),
                    child.encode(face, c_dn[:, 0], c_dn[:, 1], 1),
                )
            out[:, 3] = np.where(
                up,
                child.encode(face, two[:, 0], two[:, 1], 1),
                child.encode(face, two[:, 0] + 1, two[:, 1] + 1, 0),
            )
            return out
        scale = child.N // self.N
        cen = ijk * scale
        centre_keys = child._canon_hex(face, cen)
        ring = child._hex_neighbors_from(face, cen)
        return np.concatenate([centre_keys[:, None], ring], axis=1)

    def parents_of(self, keys):
        """Cells at this level whose children lists contain each key (index helper for tests)."""
        raise NotImplementedError

    # -------------------------------------------------------------- indexing

    def index_points(self, p):
        """Key of the cell containing each unit vector."""
        p = np.asarray(p, dtype=float).reshape(-1, 3)
        face, xy = self.dggs.projection.inverse(p)
        bary = xy @ _BARY_FROM_XY_T + _BARY_OFF
        return self.index_bary(face, bary)

    def index_bary(self, face, bary):
        N = self.N
        x = np.clip(bary, 0.0, None)
        x = x / x.sum(axis=1, keepdims=True) * N
        if self.kind == "tri":
            fl = np.floor(x).astype(np.int64)
            fl = np.minimum(fl, N - 1)
            s = fl.sum(axis=1)
            # a point exactly on a lattice vertex belongs to an adjacent up cell
            over = s >= N
            if np.any(over):
                rows = np.nonzero(over)[0]
                while len(rows):
                    m = np.argmax(x[rows] - fl[rows] + (fl[rows] > 0) * 10, axis=1)
                    fl[rows, m] -= 1
                    rows = rows[fl[rows].sum(axis=1) >= N]
            s = fl.sum(axis=1)
            down = s <= N - 2
            low = s < N - 2
            if np.any(low):
                rows = np.nonzero(low)[0]
                for r in rows:
                    while fl[r].sum() < N - 2:
                        fl[r, np.argmax(x[r] - fl[r])] += 1
            return self.encode(face, fl[:, 0], fl[:, 1], down.astype(np.int64))
        if self.kind == "hex1":
            fl = np.floor(x).astype(np.int64)
            fl = np.minimum(fl, N)
            s = fl.sum(axis=1)
            up = s == N - 1
            cands = []
            for m in range(3):
                cands.append(np.where(up[:, None], fl + _E[m], fl + 1 - _E[m]))
            cand = np.stack(cands, axis=1)
            exact = s == N
            cand[exact] = fl[exact][:, None, :]
        else:
            n = N // 3
            y = x / 3.0
            fl = np.minimum(np.floor(y).astype(np.int64), n)
            s = fl.sum(axis=1)
            up = s == n - 1
            cands = []
            for m in range(3):
                cands.append(3 * np.where(up[:, None], fl + _E[m], fl + 1 - _E[m]))
            cands.append(3 * fl + np.where(up, 1, 2)[:, None])
            cand = np.stack(cands, axis=1)
            exact = s == n
            cand[exact] = 3 * fl[exact][:, None, :]
        d = x[:, None, :] - cand
        dist = np.sum(d * d, axis=2)
        best = np.argmin(dist, axis=1)
        pts = cand[np.arange(len(cand)), best]
        pts = np.clip(pts, 0, N)
        return self._canon_hex(face, pts)

    # -------------------------------------------------------------- geometry

    def _planar(self, bary_units):
        return (bary_units / self.N) @ PLANAR_VERTS

    def centers(self, keys):
        keys = np.asarray(keys, dtype=np.int64)
        face, ijk = self.decode(keys)
        if self.kind == "tri":
            up = ijk.sum(axis=1) == self.N - 1
            c = np.where(up[:, None], ijk + 1.0 / 3.0, ijk + 2.0 / 3.0)
        else:
            c = ijk.astype(float)
        return self.dggs.projection.forward(face, self._planar(c), check=False)

    def _edges(self, keys):
        """Boundary as edges in face-unfolded coordinates: (face, start, end), shape (n, E, ...)."""
        face, ijk = self.decode(keys)
        n = len(keys)
        if self.kind == "tri":
            up = ijk.sum(axis=1) == self.N - 1
            corners = np.stack([np.where(up[:, None], ijk + _E[c], ijk + 1 - _E[c]) for c in range(3)], axis=1)
            corners = corners.astype(float)
            start = corners
            end = np.roll(corners, -1, axis=1)
            return np.repeat(face[:, None], 3, axis=1), start, end, np.full(n, 3)
        corners = ijk[:, None, :] + self.corner_offsets[None, :, :]
        start = corners
        end = np.roll(corners, -1, axis=1)
        efaces = np.repeat(face[:, None], 6, axis=1)
        ncorner = np.full(n, 6)
        pent = self.is_pentagon(keys)
        if np.any(pent):
            for r in np.nonzero(pent)[0]:
                f5, s5, e5 = self._pentagon_edges(int(keys[r]))
                efaces[r, :5], start[r, :5], end[r, :5] = f5, s5, e5
                efaces[r, 5], start[r, 5], end[r, 5] = f5[0], s5[0], s5[0]
                ncorner[r] = 5
        return efaces, start, end, ncorner

    @lru_cache(maxsize=64)
    def _pentagon_edges(self, key):
        v = self._vertex_key_set[key]
        ico = self.dggs.ico
        N = self.N
        rows = []
        for f, m in ico.vertex_faces[v]:
            u, w = (m + 1) % 3, (m + 2) % 3
            s = np.zeros(3)
            e = np.zeros(3)
            if self.kind == "hex1":
                # from this face's corner to the next face's corner, across edge (m, w)
                s[m], s[u], s[w] = N - 2 / 3, 1 / 3, 1 / 3
                e[m], e[w], e[u] = N - 1 / 3, 2 / 3, -1 / 3
            else:
                s[m], s[u] = N - 1, 1
                e[m], e[w] = N - 1, 1
            mid = self.dggs.projection.forward(f, self._planar((s + e) / 2 * 0.999 + np.eye(3)[m] * 0.001 * N),
                                               check=False)
            rows.append((f, s, e, mid))
        vpos = ico.vertices[v]
        ref = rows[0][3] - np.dot(rows[0][3], vpos) * vpos
        ref /= np.linalg.norm(ref)
        ref2 = np.cross(vpos, ref)

        def ang(pt):
            t = pt - np.dot(pt, vpos) * vpos
            return math.atan2(np.dot(t, ref2), np.dot(t, ref)) % (2 * math.pi)

        rows.sort(key=lambda r: ang(r[3]))
        return (np.array([r[0] for r in rows]), np.array([r[1] for r in rows]),
                np.array([r[2] for r in rows]))

    def boundary_rings(self, keys, densify=0):
        """Stacked boundary rings, shape (n, m, 3).

        Each edge contributes ``densify + 2`` points (start, ``densify``
        interior samples, and a face-edge crossing slot that duplicates the
        start when the edge stays on one face). Duplicates are harmless for
        every predicate here; ``Level.cell`` strips them.
        """
        keys = np.asarray(keys, dtype=np.int64)
        efaces, start, end, _ = self._edges(keys)
        n, E = efaces.shape
        t = np.arange(densify + 1) / (densify + 1.0)
        # crossing parameter where some coordinate changes sign strictly inside the edge
        diff = end - start
        with np.errstate(divide="ignore", invalid="ignore"):
            tc = np.where(start * end < 0, start / (start - end), np.inf)
        tcross = np.min(tc, axis=2)
        tcross = np.where(np.isfinite(tcross), tcross, 0.0)
        ts = np.concatenate([np.broadcast_to(t, (n, E, len(t))), tcross[..., None]], axis=2)
        ts = np.sort(ts, axis=2)
        pts = start[:, :, None, :] + ts[..., None] * diff[:, :, None, :]
        fac = np.broadcast_to(efaces[:, :, None], pts.shape[:3])
        flat = pts.reshape(-1, 3)
        ff = fac.reshape(-1)
        # the crossing slot repeats its predecessor when the edge stays on one face
        dup = np.zeros(ts.shape, dtype=bool)
        dup[..., 1:] = ts[..., 1:] == ts[..., :-1]
        dup = dup.reshape(-1)
        src = np.maximum.accumulate(np.where(dup, 0, np.arange(len(dup))))
        keep = ~dup
        flat, ff = flat[keep], ff[keep]
        flat = np.where(np.abs(flat) < 1e-9, 0.0, flat)
        ff, flat = self.dggs.unfold(ff, flat)
        flat = np.clip(flat, 0.0, None)
        vec = self.dggs.projection.forward(ff, self._planar(flat), check=False)
        slot = np.cumsum(keep) - 1
        return vec[slot[src]].reshape(n, -1, 3)

    def diameters(self, keys, chunk=200_000):
        """Diameters of the cover polygons (``boundary_rings`` at densify 0).

        Vertex pairs only; rings with an edge over 10 degrees go through
        ``polygon_diameter``, which densifies them first.
        """
        keys = np.asarray(keys, dtype=np.int64)
        out = np.empty(len(keys))
        for s in range(0, len(keys), chunk):
            rings = self.boundary_rings(keys[s:s + chunk], densify=0)
            d = ring_diameters(rings)
            edge = great_circle_distance(rings, np.roll(rings, -1, axis=1)).max(axis=1)
            for r in np.nonzero(edge > DIAMETER_DENSIFY_ABOVE)[0]:
                d[r] = polygon_diameter(rings[r])
            out[s:s + chunk] = d
        return out

    def cell_areas(self, keys, densify=32, chunk=20_000):
        """Areas of the true (curved) cells.

        The boundary is refined at ``densify`` and ``2 * densify`` samples per
        edge and the chord-polygon areas are Richardson-extrapolated; the
        chord error falls off as the inverse square of the sample count.
        """
        keys = np.asarray(keys, dtype=np.int64)
        out = np.empty(len(keys))
        for s in range(0, len(keys), chunk):
            k = keys[s:s + chunk]
            a1 = ring_areas(self.boundary_rings(k, densify - 1))
            a2 = ring_areas(self.boundary_rings(k, 2 * densify - 1))
            out[s:s + chunk] = (4.0 * a2 - a1) / 3.0
        return out

    def cell(self, key, densify=0) -> Cell:
        ring = self.boundary_rings(np.array([key]), densify=densify)[0]
        keep = np.ones(len(ring), dtype=bool)
        keep[1:] = np.linalg.norm(np.diff(ring, axis=0), axis=1) > 1e-15
        if np.linalg.norm(ring[-1] - ring[0]) <= 1e-15:
            keep[-1] = False
        ring = ring[keep]
        poly = SphericalPolygon(ring)
        n_corners = 3 if self.kind == "tri" else (5 if self.is_pentagon(np.array([key]))[0] else 6)
        diameter = polygon_diameter(poly)
        center = self.centers(np.array([key]))[0]
        cid = self.to_ids([key])[0]
        return Cell(cid, poly, center, diameter, n_corners)

    # ----------------------------------------------------------- enumeration

    def all_keys(self):
        N = self.N
        out = []
        if self.kind == "tri":
            for down, total in ((0, N - 1), (1, N - 2)):
                if total < 0:
                    continue
                i, j = np.meshgrid(np.arange(total + 1), np.arange(total + 1), indexing="ij")
                ok = i + j <= total
                i, j = i[ok], j[ok]
                for f in range(20):
                    out.append(self.encode(np.full(len(i), f), i, j, down))
            return np.sort(np.concatenate(out))
        i, j = np.meshgrid(np.arange(N + 1), np.arange(N + 1), indexing="ij")
        ok = i + j <= N
        i, j = i[ok], j[ok]
        k = N - i - j
        if self.kind == "hex2":
            ok = (i % 3 == j % 3) & (j % 3 == k % 3)
            i, j, k = i[ok], j[ok], k[ok]
        ijk = np.stack([i, j, k], axis=1)
        for f in range(20):
            out.append(self._canon_hex(np.full(len(i), f), ijk))
        return np.unique(np.concatenate(out))


def _bary_affine():
    from .isea import _BARY_FROM_XY
    return _BARY_FROM_XY[:, :2].T.copy(), _BARY_FROM_XY[:, 2].copy()


_BARY_FROM_XY_T, _BARY_OFF = _bary_affine()


# ------------------------------------------------------------------ scalar API

def _level_for(cid: CellId, orientation=DEFAULT_ORIENTATION):
    return get_dggs(cid.grid, orientation).level(cid.resolution)


def cell_boundary(cid: CellId, densify: int = 0, orientation=DEFAULT_ORIENTATION) -> Cell:
    lv = _level_for(cid, orientation)
    return lv.cell(lv.from_id(cid), densify=densify)


def children(cid: CellId, orientation=DEFAULT_ORIENTATION):
    if cid.resolution >= cid.grid.max_resolution:
        raise ResolutionOverflowError(f"{cid.grid.value} has no resolution {cid.resolution + 1}")
    lv = _level_for(cid, orientation)
    ch = lv.children(np.array([lv.from_id(cid)]))[0]
    return lv.child_level().to_ids(ch[ch >= 0])


def neighbors(cid: CellId, orientation=DEFAULT_ORIENTATION):
    lv = _level_for(cid, orientation)
    nb = lv.neighbors(np.array([lv.from_id(cid)]))[0]
    return lv.to_ids(nb[nb >= 0])


def cell_at(grid: GridKind, resolution: int, p, orientation=DEFAULT_ORIENTATION) -> CellId:
    lv = get_dggs(grid, orientation).level(resolution)
    return lv.to_ids(lv.index_points(np.asarray(p, dtype=float)[None, :]))[0]


def all_cells(grid: GridKind, resolution: int, orientation=DEFAULT_ORIENTATION):
    lv = get_dggs(grid, orientation).level(resolution)
    return lv.to_ids(lv.all_keys())


@dataclass(frozen=True)
class DiameterStats:
    min: float
    max: float
    mean: float
    relative_spread: float
    n_cells: int
    sampled: bool


def grid_diameter_stats(grid: GridKind, resolution: int, sample=200_000, seed=0,
                        orientation=DEFAULT_ORIENTATION, max_enumerate_resolution=8) -> DiameterStats:
    """Diameter statistics over every cell (k <= 8) or over cells hit by random points."""
    lv = get_dggs(grid, orientation).level(resolution)
    if resolution <= max_enumerate_resolution:
        keys = lv.all_keys()
        sampled = False
    else:
        rng = np.random.default_rng(seed)
        p = rng.normal(size=(sample, 3))
        p /= np.linalg.norm(p, axis=1, keepdims=True)
        keys = np.unique(np.concatenate([lv.index_points(p), lv.vertex_keys if lv.kind != "tri" else []]).astype(np.int64))
        sampled = True
    d = lv.diameters(keys)
    mean = float(d.mean())
    return DiameterStats(float(d.min()), float(d.max()), mean, float((d.max() - d.min()) / mean), len(keys), sampled)


def cells_geojson(grid: GridKind, resolution: int, keys=None, densify=0, orientation=DEFAULT_ORIENTATION):
    """Cell boundaries as a GeoJSON FeatureCollection (properties grid, resolution, cell_id)."""
    lv = get_dggs(grid, orientation).level(resolution)
    keys = lv.all_keys() if keys is None else np.asarray(keys, dtype=np.int64)
    rings = lv.boundary_rings(keys, densify=densify)
    feats = []
    for key, cid, ring in zip(keys.tolist(), lv.to_ids(keys), rings):
        keep = np.ones(len(ring), dtype=bool)
        keep[1:] = np.linalg.norm(np.diff(ring, axis=0), axis=1) > 1e-15
        lon, lat = vec_to_lonlat(ring[keep])
        # unwrap so cells straddling the antimeridian stay contiguous
        lon = np.degrees(np.unwrap(np.radians(lon)))
        coords = np.stack([lon, lat], axis=1)
        coords = np.vstack([coords, coords[:1]]).tolist()
        feats.append({"type": "Feature",
                      "properties": {"grid": grid.value, "resolution": resolution, "cell_id": str(cid)},
                      "geometry": {"type": "Polygon", "coordinates": [coords]}})
    return {"type": "FeatureCollection", "features": feats}
