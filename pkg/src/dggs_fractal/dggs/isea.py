"""Icosahedral Snyder Equal Area (ISEA) projection.

Each of the 20 icosahedron faces is a planar equilateral triangle with
circumradius 1, centred at the origin, vertices at polar angles 90, 210
and 330 degrees (counter-clockwise). The map between a planar face and
its spherical triangle splits the face into three sectors, one per
vertex; within a sector the azimuth about the face centre is adjusted so
that the planar and spherical sub-triangles (centre, vertex, ray hit on
the far edge) have proportional areas, and the radial coordinate follows
``rho = |CQ'| * sin(z/2) / sin(q/2)``. Together these are exactly
equal-area (Snyder 1992).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..errors import GeometryError, OutOfFaceError
from ..sphere_geom import lonlat_to_vec, normalize

# spherical angle at each face vertex is 72 deg; sectors use half of it
_G = math.radians(36.0)
# planar angle between vertex->centre and vertex->next vertex
_THETA = math.radians(30.0)
_PLANAR_ANGLES = np.radians([90.0, 210.0, 330.0])
PLANAR_VERTS = np.stack([np.cos(_PLANAR_ANGLES), np.sin(_PLANAR_ANGLES)], axis=-1)
_PLANAR_FACE_AREA = 3.0 * math.sqrt(3.0) / 4.0
_SPHERE_FACE_AREA = 4.0 * math.pi / 20.0
_AREA_SCALE = _PLANAR_FACE_AREA / _SPHERE_FACE_AREA
FACE_EDGE_TOL = 1e-9


def _canonical_vertices():
    lat = math.degrees(math.atan(0.5))
    verts = [(0.0, 90.0)]
    verts += [(72.0 * i, lat) for i in range(5)]
    verts += [(36.0 + 72.0 * i, -lat) for i in range(5)]
    verts.append((0.0, -90.0))
    ll = np.array(verts)
    return lonlat_to_vec(ll[:, 0], ll[:, 1])


def _canonical_faces():
    faces = []
    for i in range(5):
        faces.append((0, 1 + i, 1 + (i + 1) % 5))
    for i in range(5):
        u0, u1 = 1 + i, 1 + (i + 1) % 5
        l0, l1 = 6 + i, 6 + (i + 1) % 5
        faces.append((u0, l0, u1))
        faces.append((u1, l0, l1))
    for i in range(5):
        faces.append((11, 6 + (i + 1) % 5, 6 + i))
    return faces


@dataclass(frozen=True)
class IcosahedronOrientation:
    """Placement of vertex 0 and the azimuth (clockwise from north) to vertex 1."""

    pole_lon: float = 11.25
    pole_lat: float = 58.28252559
    azimuth: float = 0.0

    def rotation(self):
        t = lonlat_to_vec(self.pole_lon, self.pole_lat)
        lam, phi = math.radians(self.pole_lon), math.radians(self.pole_lat)
        north = np.array([-math.sin(phi) * math.cos(lam), -math.sin(phi) * math.sin(lam), math.cos(phi)])
        east = np.array([-math.sin(lam), math.cos(lam), 0.0])
        az = math.radians(self.azimuth)
        d = math.cos(az) * north + math.sin(az) * east
        if abs(self.pole_lat) > 90.0 - 1e-12:
            # at a pole "north" is undefined; use the meridian of pole_lon
            d = np.array([math.cos(lam + az), math.sin(lam + az), 0.0]) * (-1 if self.pole_lat > 0 else 1)
        # canonical vertex 0 sits on +z, vertex 1 lies along +x from it
        return np.stack([d, np.cross(t, d), t], axis=1)


DEFAULT_ORIENTATION = IcosahedronOrientation()


class Icosahedron:
    """An oriented icosahedron with per-face frames used by the projection."""

    def __init__(self, orientation: IcosahedronOrientation = DEFAULT_ORIENTATION):
        self.orientation = orientation
        rot = orientation.rotation()
        self.vertices = _canonical_vertices() @ rot.T
        faces = []
        for f in _canonical_faces():
            a, b, c = (self.vertices[i] for i in f)
            if np.dot(np.cross(a, b), c) < 0:
                f = (f[0], f[2], f[1])
            faces.append(f)
        self.faces = np.array(faces, dtype=np.int64)
        self.face_verts = self.vertices[self.faces]  # (20, 3, 3)
        self.centers = normalize(self.face_verts.sum(axis=1))
        cen = self.centers
        v0 = self.face_verts[:, 0, :]
        t0 = normalize(v0 - np.sum(v0 * cen, axis=-1, keepdims=True) * cen)
        t1 = np.cross(cen, t0)
        self._t0, self._t1 = t0, t1
        # azimuth (about the face centre) of each face vertex, measured from vertex 0
        az = []
        for m in range(3):
            v = self.face_verts[:, m, :]
            az.append(np.arctan2(np.sum(v * t1, -1), np.sum(v * t0, -1)))
        self._vert_az = np.mod(np.stack(az, axis=1), 2 * math.pi)
        self.g = float(np.arccos(np.clip(np.dot(cen[0], v0[0]), -1, 1)))
        self._edge_normals = np.stack(
            [np.cross(self.face_verts[:, m, :], self.face_verts[:, (m + 1) % 3, :]) for m in range(3)], axis=1
        )

    @cached_property
    def adjacency(self):
        """``adj[f, m] = (g, perm)``: face across the edge opposite corner m.

        ``perm[m'] `` gives, for each corner index of g, the matching corner of f
        (the opposite corner of g maps to m).
        """
        adj = np.zeros((20, 3), dtype=np.int64)
        perm = np.zeros((20, 3, 3), dtype=np.int64)
        for f in range(20):
            fv = list(self.faces[f])
            for m in range(3):
                shared = {fv[(m + 1) % 3], fv[(m + 2) % 3]}
                for g in range(20):
                    if g == f:
                        continue
                    gv = list(self.faces[g])
                    if shared.issubset(gv):
                        adj[f, m] = g
                        for mg in range(3):
                            perm[f, m, mg] = fv.index(gv[mg]) if gv[mg] in fv else m
                        break
        return adj, perm

    @cached_property
    def vertex_faces(self):
        """For each of the 12 vertices: list of (face, corner) incidences."""
        out = [[] for _ in range(12)]
        for f in range(20):
            for m in range(3):
                out[int(self.faces[f, m])].append((f, m))
        return out

    def face_of(self, p):
        """Index of the face whose spherical triangle contains ``p``.

        Nearest face centre; ties resolve to the lower index.
        """
        p = np.asarray(p, dtype=float)
        return np.argmax(p @ self.centers.T, axis=-1)


# --------------------------------------------------------------------------
# planar <-> barycentric helpers
# --------------------------------------------------------------------------

def bary_to_planar(bary):
    """Barycentric weights (..., 3), summing to 1, to planar face xy."""
    return np.asarray(bary, dtype=float) @ PLANAR_VERTS


def planar_to_bary(xy):
    xy = np.asarray(xy, dtype=float)
    # invert [P0 P1 P2; 1 1 1]
    m = np.vstack([PLANAR_VERTS.T, np.ones(3)])
    rhs = np.concatenate([xy, np.ones(xy.shape[:-1] + (1,))], axis=-1)
    return np.linalg.solve(m, rhs[..., None])[..., 0] if rhs.ndim > 1 else np.linalg.solve(m, rhs)


_BARY_FROM_XY = np.linalg.inv(np.vstack([PLANAR_VERTS.T, np.ones(3)]))


def planar_to_bary_fast(xy):
    xy = np.asarray(xy, dtype=float)
    return xy @ _BARY_FROM_XY[:, :2].T + _BARY_FROM_XY[:, 2]


# --------------------------------------------------------------------------
# the projection
# --------------------------------------------------------------------------

class IseaProjection:
    """Forward (plane -> sphere) and inverse (sphere -> plane) ISEA maps, vectorised."""

    def __init__(self, ico: Icosahedron | None = None):
        self.ico = ico or Icosahedron()
        self._cos_g = math.cos(self.ico.g)

    def _sector_frame(self, face, sector):
        # tangent unit vectors at the face centre: toward sector vertex, and 90 deg CCW
        ico = self.ico
        base = ico._vert_az[face, sector]
        t0, t1 = ico._t0[face], ico._t1[face]
        cb, sb = np.cos(base)[..., None], np.sin(base)[..., None]
        u0 = cb * t0 + sb * t1
        u1 = -sb * t0 + cb * t1
        return u0, u1

    def _far_edge_hit(self, face, sector, u):
        # ray from centre along tangent u meets the edge (sector vertex -> next vertex)
        c = self.ico.centers[face]
        n_ray = np.cross(c, u)
        n_edge = self.ico._edge_normals[face, sector]
        q = np.cross(n_ray, n_edge)
        q = q / np.linalg.norm(q, axis=-1, keepdims=True)
        q = np.where(np.sum(q * c, axis=-1, keepdims=True) < 0, -q, q)
        return np.arccos(np.clip(np.sum(q * c, axis=-1), -1.0, 1.0))

    def forward(self, face, xy, check=True):
        """Planar face coordinates to unit vectors."""
        face = np.asarray(face, dtype=np.int64)
        xy = np.asarray(xy, dtype=float)
        if check:
            bary = planar_to_bary_fast(xy)
            if np.any(bary < -FACE_EDGE_TOL):
                raise OutOfFaceError("planar point lies outside its face triangle")
        face, xy = np.broadcast_arrays(face, xy[..., 0])[0], xy
        rho = np.hypot(xy[..., 0], xy[..., 1])
        alpha = np.arctan2(xy[..., 1], xy[..., 0])
        rel = np.mod(alpha[..., None] - _PLANAR_ANGLES, 2 * math.pi)
        sector = np.argmin(rel, axis=-1)
        az_p = np.take_along_axis(rel, sector[..., None], axis=-1)[..., 0]
        az_p = np.minimum(az_p, 2 * math.pi / 3)
        s_ap = np.sin(az_p + _THETA)
        cq_planar = math.sin(_THETA) / s_ap
        tri_planar = math.sin(_THETA) * np.sin(az_p) / (2.0 * s_ap)
        excess = tri_planar / _AREA_SCALE
        kappa = math.pi - _G + excess
        az = np.arctan2(np.cos(kappa) + math.cos(_G), math.sin(_G) * self._cos_g - np.sin(kappa))
        az = np.mod(az, math.pi)
        # guard the start of the sector, where atan2 can land on pi
        az = np.where(az > 2 * math.pi / 3 + 1e-9, 0.0, az)
        u0, u1 = self._sector_frame(face, sector)
        u = np.cos(az)[..., None] * u0 + np.sin(az)[..., None] * u1
        q = self._far_edge_hit(face, sector, u)
        sz2 = np.clip(rho / cq_planar, 0.0, None) * np.sin(q / 2.0)
        z = 2.0 * np.arcsin(np.clip(sz2, -1.0, 1.0))
        c = self.ico.centers[face]
        p = np.cos(z)[..., None] * c + np.sin(z)[..., None] * u
        return p / np.linalg.norm(p, axis=-1, keepdims=True)

    def inverse(self, p, face=None):
        """Unit vectors to ``(face, xy)``. ``face`` may be forced (points near its edges)."""
        p = np.asarray(p, dtype=float)
        if face is None:
            face = self.ico.face_of(p)
        face = np.asarray(face, dtype=np.int64)
        ico = self.ico
        c = ico.centers[face]
        cosz = np.clip(np.sum(p * c, axis=-1), -1.0, 1.0)
        tan = p - cosz[..., None] * c
        az_all = np.arctan2(np.sum(tan * ico._t1[face], -1), np.sum(tan * ico._t0[face], -1))
        rel = np.mod(az_all[..., None] - ico._vert_az[face], 2 * math.pi)
        sector = np.argmin(rel, axis=-1)
        az = np.take_along_axis(rel, sector[..., None], axis=-1)[..., 0]
        az = np.minimum(az, 2 * math.pi / 3)
        z = np.arctan2(np.linalg.norm(np.cross(p, c), axis=-1), cosz)
        cos_h = np.sin(az) * math.sin(_G) * self._cos_g - np.cos(az) * math.cos(_G)
        h = np.arccos(np.clip(cos_h, -1.0, 1.0))
        excess = az + _G + h - math.pi
        tri_planar = excess * _AREA_SCALE
        k = 2.0 * tri_planar / math.sin(_THETA)
        az_p = np.arctan2(k * math.sin(_THETA), 1.0 - k * math.cos(_THETA))
        u0, u1 = self._sector_frame(face, sector)
        u = np.cos(az)[..., None] * u0 + np.sin(az)[..., None] * u1
        q = self._far_edge_hit(face, sector, u)
        cq_planar = math.sin(_THETA) / np.sin(az_p + _THETA)
        rho = cq_planar * np.sin(z / 2.0) / np.sin(q / 2.0)
        ang = az_p + _PLANAR_ANGLES[sector]
        xy = np.stack([rho * np.cos(ang), rho * np.sin(ang)], axis=-1)
        return face, xy


_DEFAULT = None


def default_projection():
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = IseaProjection()
    return _DEFAULT


def isea_forward(face, planar, projection: IseaProjection | None = None):
    """Planar face point -> unit vector. Raises OutOfFaceError outside the face."""
    proj = projection or default_projection()
    if not (0 <= int(np.min(face)) and int(np.max(face)) < 20):
        raise GeometryError("face index must be in 0..19")
    return proj.forward(face, planar)


def isea_inverse(p, projection: IseaProjection | None = None):
    """Unit vector -> (face, planar xy)."""
    proj = projection or default_projection()
    return proj.inverse(p)
