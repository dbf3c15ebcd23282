"""Classified rasters (ESRI ASCII grid) to polygon features."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatchError, ParseError
from .features import GeoFeatureSet

OPAQUE_CLOUD_DN = 3
_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


@dataclass
class AsciiGrid:
    ncols: int
    nrows: int
    xllcorner: float
    yllcorner: float
    cellsize: float
    nodata: float | None
    values: np.ndarray  # (nrows, ncols), row 0 is the northern edge

    def __post_init__(self):
        if self.ncols < 1 or self.nrows < 1:
            raise ParseError("grid needs ncols, nrows >= 1")
        if not self.cellsize > 0:
            raise ParseError("cellsize must be positive")
        if self.values.shape != (self.nrows, self.ncols):
            raise DimensionMismatchError(
                f"values have shape {self.values.shape}, header says ({self.nrows}, {self.ncols})")

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"ncols {self.ncols}\nnrows {self.nrows}\n")
            fh.write(f"xllcorner {self.xllcorner!r}\nyllcorner {self.yllcorner!r}\ncellsize {self.cellsize!r}\n")
            if self.nodata is not None:
                fh.write(f"NODATA_value {_fmt(self.nodata)}\n")
            for row in self.values:
                fh.write(" ".join(_fmt(v) for v in row))
                fh.write("\n")


def _fmt(v):
    return str(int(v)) if float(v).is_integer() else repr(float(v))


@dataclass
class BinaryMask:
    xllcorner: float
    yllcorner: float
    cellsize: float
    mask: np.ndarray

    @property
    def nrows(self):
        return self.mask.shape[0]

    @property
    def ncols(self):
        return self.mask.shape[1]


def read_ascii_grid(path) -> AsciiGrid:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header = {}
    lineno = 0
    center = False
    while lineno < len(lines):
        text = lines[lineno].strip()
        if not text:
            lineno += 1
            continue
        parts = text.split()
        key = parts[0].lower()
        if key in ("xllcenter", "yllcenter"):
            center = True
            key = key.replace("center", "corner")
        if key not in _HEADER_KEYS:
            break
        if len(parts) != 2:
            raise ParseError(f"header entry {parts[0]!r} needs exactly one value", line=lineno + 1)
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise ParseError(f"header value {parts[1]!r} is not a number", line=lineno + 1) from None
        lineno += 1
    missing = [k for k in _HEADER_KEYS[:5] if k not in header]
    if missing:
        raise ParseError(f"missing header entries: {', '.join(missing)}", line=lineno + 1)
    for k in ("ncols", "nrows"):
        if not header[k].is_integer() or header[k] < 1:
            raise ParseError(f"{k} must be a positive integer")
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    cs = header["cellsize"]
    xll, yll = header["xllcorner"], header["yllcorner"]
    if center:
        xll -= cs / 2.0
        yll -= cs / 2.0
    rows = []
    is_int = True
    for i in range(lineno, len(lines)):
        text = lines[i].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != ncols:
            raise DimensionMismatchError(f"row has {len(parts)} values, expected {ncols}", line=i + 1)
        try:
            row = [int(p) for p in parts]
        except ValueError:
            try:
                row = [float(p) for p in parts]
                is_int = False
            except ValueError:
                raise ParseError(f"non-numeric value in row: {text[:40]!r}", line=i + 1) from None
        rows.append(row)
    if len(rows) != nrows:
        raise DimensionMismatchError(f"found {len(rows)} data rows, header says {nrows}", line=len(lines))
    values = np.array(rows, dtype=np.int64 if is_int else float)
    return AsciiGrid(ncols, nrows, xll, yll, cs, header.get("nodata_value"), values)


def threshold(grid: AsciiGrid, value=OPAQUE_CLOUD_DN) -> BinaryMask:
    """True where the cell equals ``value``; nodata cells are always false."""
    mask = grid.values == value
    if grid.nodata is not None:
        mask &= grid.values != grid.nodata
    return BinaryMask(grid.xllcorner, grid.yllcorner, grid.cellsize, mask)


def label_components(mask, connectivity=4):
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    structure = ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=structure)
    return labels, n


# unit steps in (row, col) corner space; lat grows with -row
_DIRS = {(0, 1): 0, (-1, 0): 1, (0, -1): 2, (1, 0): 3}  # east, north, west, south (CCW order)


def _boundary_edges(labels):
    """Directed pixel edges with their component on the left, as corner (row, col) pairs."""
    padded = np.pad(labels, 1)
    core = padded[1:-1, 1:-1]
    r, c = np.nonzero(core)
    lab = core[r, c]
    out = []
    # neighbour offset -> (start corner, end corner) relative to pixel top-left corner
    for (dr, dc), (s, e) in {
        (1, 0): ((1, 0), (1, 1)),    # south neighbour: bottom edge heading east
        (0, 1): ((1, 1), (0, 1)),    # east neighbour: right edge heading north
        (-1, 0): ((0, 1), (0, 0)),   # north neighbour: top edge heading west
        (0, -1): ((0, 0), (1, 0)),   # west neighbour: left edge heading south
    }.items():
        nb = padded[r + 1 + dr, c + 1 + dc]
        sel = nb != lab
        out.append(np.stack([lab[sel], r[sel] + s[0], c[sel] + s[1], r[sel] + e[0], c[sel] + e[1]], axis=1))
    return np.concatenate(out) if out else np.zeros((0, 5), dtype=np.int64)


def trace_rings(labels, connectivity=4):
    """Closed corner rings per component label: ``{label: [ring, ...]}``.

    Ring vertices are (row, col) pixel corners with the component on the
    left, i.e. counter-clockwise around outer boundaries once rows are
    flipped to latitude. Where two pixels of a component touch only at a
    corner, 4-connectivity keeps their outlines apart (turn left) and
    8-connectivity joins them (turn right).
    """
    edges = _boundary_edges(labels)
    outgoing = defaultdict(list)
    for idx, (lab, r0, c0, _, _) in enumerate(edges.tolist()):
        outgoing[(lab, r0, c0)].append(idx)
    used = np.zeros(len(edges), dtype=bool)
    rings = defaultdict(list)
    prefer = 1 if connectivity == 4 else -1  # +1: leftmost turn first
    el = edges.tolist()
    for start in range(len(edges)):
        if used[start]:
            continue
        lab = el[start][0]
        ring = []
        cur = start
        while not used[cur]:
            used[cur] = True
            _, r0, c0, r1, c1 = el[cur]
            ring.append((r0, c0))
            cands = list(outgoing[(lab, r1, c1)])
            if len(cands) > 1:
                din = _DIRS[(r1 - r0, c1 - c0)]

                def turn(e):
                    _, a0, b0, a1, b1 = el[e]
                    t = (_DIRS[(a1 - a0, b1 - b0)] - din) % 4  # 1 = left, 3 = right, 0 = straight
                    return {1: 1, 0: 0, 3: -1}[t] * prefer
                cands.sort(key=turn, reverse=True)
            cur = cands[0]
        rings[lab].append(np.array(ring, dtype=np.int64))
    return rings


def _ring_area_rc(ring):
    # shoelace in (x = col, y = -row): positive for counter-clockwise
    x = ring[:, 1].astype(float)
    y = -ring[:, 0].astype(float)
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass
class PolygonizeResult:
    features: GeoFeatureSet
    pixel_counts: list
    holes: list = field(default_factory=list)  # per polygon, hole rings in lon/lat (not used for covering)
    n_components: int = 0

    def to_geojson(self):
        feats = []
        for outer, holes, n in zip(self.features.polygons, self.holes, self.pixel_counts):
            ring = np.vstack([outer[0], outer[0][:1]]).tolist()
            feats.append({
                "type": "Feature",
                "properties": {"pixel_count": int(n), "hole_rings": [np.vstack([h, h[:1]]).tolist() for h in holes]},
                "geometry": {"type": "Polygon", "coordinates": [ring]},
            })
        return {"type": "FeatureCollection", "features": feats}


def polygonize(mask: BinaryMask, connectivity: int = 4) -> PolygonizeResult:
    """One polygon (outer ring, lon/lat pixel corners) per connected component."""
    labels, n = label_components(mask.mask, connectivity)
    counts = np.bincount(labels.ravel(), minlength=n + 1)
    rings = trace_rings(labels, connectivity)
    cs = mask.cellsize
    nrows = mask.nrows

    def to_lonlat(ring):
        lon = mask.xllcorner + ring[:, 1] * cs
        lat = mask.yllcorner + (nrows - ring[:, 0]) * cs
        return np.stack([lon, lat], axis=1)

    polys, holes, pix = [], [], []
    for lab in range(1, n + 1):
        rs = rings.get(lab, [])
        areas = [_ring_area_rc(r) for r in rs]
        outer_i = int(np.argmax(areas))
        polys.append([to_lonlat(rs[outer_i])])
        holes.append([to_lonlat(r) for i, r in enumerate(rs) if i != outer_i])
        pix.append(int(counts[lab]))
    return PolygonizeResult(GeoFeatureSet(polygons=polys), pix, holes, n)
