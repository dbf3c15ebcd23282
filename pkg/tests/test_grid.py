import math

import numpy as np
import pytest

from dggs_fractal.covering import _rings_contain
from dggs_fractal.dggs.grid import (CellId, GridKind, cell_boundary, cells_at_resolution, cells_geojson, children,
                                    get_dggs, grid_diameter_stats, neighbors)
from dggs_fractal.errors import ResolutionOverflowError
from dggs_fractal.sphere_geom import point_in_polygon, polygon_area

from conftest import random_unit

GRIDS = list(GridKind)


def test_grid_kind_attributes():
    assert [g.aperture for g in GRIDS] == [4, 4, 3]
    assert [g.shape for g in GRIDS] == ["triangle", "hexagon", "hexagon"]
    assert GridKind.parse("isea3h") is GridKind.ISEA3H


@pytest.mark.parametrize("grid,k,n", [(GridKind.ISEA4T, 0, 20), (GridKind.ISEA4T, 3, 1280),
                                      (GridKind.ISEA3H, 1, 32), (GridKind.ISEA4H, 1, 42)])
def test_count_examples(grid, k, n):
    assert cells_at_resolution(grid, k) == n


def test_count_overflow():
    for g in GRIDS:
        cells_at_resolution(g, g.max_resolution)
        with pytest.raises(ResolutionOverflowError):
            cells_at_resolution(g, g.max_resolution + 1)
        with pytest.raises(ResolutionOverflowError):
            get_dggs(g).level(g.max_resolution + 1)


@pytest.mark.parametrize("grid", GRIDS)
@pytest.mark.parametrize("k", range(0, 5))
def test_enumeration_matches_formula(grid, k):
    lv = get_dggs(grid).level(k)
    keys = lv.all_keys()
    assert len(keys) == len(np.unique(keys)) == cells_at_resolution(grid, k)
    # canonical ids are unique and round-trip
    ids = lv.to_ids(keys)
    assert len(set(ids)) == len(ids)
    back = np.array([lv.from_id(c) for c in ids[:200]])
    assert np.array_equal(back, keys[:200])


@pytest.mark.parametrize("grid", GRIDS[1:])
@pytest.mark.parametrize("k", [0, 1, 3])
def test_twelve_pentagons(grid, k):
    lv = get_dggs(grid).level(k)
    keys = lv.all_keys()
    pent = lv.is_pentagon(keys)
    assert pent.sum() == 12
    nb = lv.neighbors(keys)
    deg = (nb >= 0).sum(axis=1)
    assert np.all(deg[pent] == 5) and np.all(deg[~pent] == 6)


def test_triangle_neighbors_are_face_adjacency():
    from dggs_fractal.dggs.isea import Icosahedron
    adj, _ = Icosahedron().adjacency
    cid = CellId(GridKind.ISEA4T, 0, 0, 0, 0, 0)
    got = sorted(c.face for c in neighbors(cid))
    assert got == sorted(adj[0].tolist())


@pytest.mark.parametrize("grid", GRIDS)
@pytest.mark.parametrize("k", range(0, 4))
def test_neighbor_symmetry(grid, k):
    lv = get_dggs(grid).level(k)
    keys = lv.all_keys()
    nb = lv.neighbors(keys)
    src = np.repeat(keys, nb.shape[1])
    dst = nb.ravel()
    ok = dst >= 0
    pairs = set(zip(src[ok].tolist(), dst[ok].tolist()))
    assert all((b, a) in pairs for a, b in pairs)
    assert not any(a == b for a, b in pairs)


@pytest.mark.parametrize("grid", GRIDS)
@pytest.mark.parametrize("k", range(0, 4))
def test_children_union_covers_next_level(grid, k):
    lv = get_dggs(grid).level(k)
    ch = lv.children(lv.all_keys())
    got = np.unique(ch[ch >= 0])
    assert np.array_equal(got, lv.child_level().all_keys())
    sizes = (ch >= 0).sum(axis=1)
    if grid is GridKind.ISEA4T:
        assert np.all(sizes == 4)
    else:
        assert set(np.unique(sizes)) <= {6, 7}


def _locate_all(lv, p):
    """Every chord cell among the projected cell and its touching cells that contains p."""
    from dggs_fractal.covering import locate
    return locate(lv, p)


@pytest.mark.parametrize("grid", GRIDS)
@pytest.mark.parametrize("k", range(0, 4))
def test_children_superset_guarantee(grid, k, rng):
    # an interior point shared by parent P and child C means C overlaps P; C must be among
    # the children of P or of its edge neighbours (chord cells are not exactly nested)
    lv = get_dggs(grid).level(k)
    cl = lv.child_level()
    p = random_unit(rng, 20_000)
    pi, pk = _locate_all(lv, p)
    ci, ck = _locate_all(cl, p)
    n_par = np.bincount(pi, minlength=len(p))
    n_kid = np.bincount(ci, minlength=len(p))
    interior = (n_par == 1) & (n_kid == 1)
    assert interior.mean() > 0.99
    par = np.zeros(len(p), dtype=np.int64)
    par[pi] = pk
    kid = np.zeros(len(p), dtype=np.int64)
    kid[ci] = ck
    par, kid = par[interior], kid[interior]
    uk = np.unique(par)
    nb = lv.neighbors(uk)
    own = lv.children(uk)
    ring = lv.children(np.where(nb >= 0, nb, uk[:, None]).ravel()).reshape(len(uk), -1)
    allowed = {int(u): set(np.concatenate([o, r]).tolist()) for u, o, r in zip(uk, own, ring)}
    assert all(int(c) in allowed[int(q)] for q, c in zip(par, kid))


def test_isea4t_children_tile_parent():
    cid = CellId(GridKind.ISEA4T, 2, 7, 1, 1, 1)
    lv = get_dggs(GridKind.ISEA4T).level(2)
    key = lv.all_keys()[37]
    parent_area = lv.cell_areas(np.array([key]))[0]
    ch = lv.children(np.array([key]))[0]
    assert len(ch) == 4
    kids = lv.child_level().cell_areas(ch).sum()
    assert kids == pytest.approx(parent_area, rel=1e-9)
    assert len(children(lv.to_ids([key])[0])) == 4
    del cid


@pytest.mark.parametrize("grid", GRIDS)
@pytest.mark.parametrize("k", range(0, 4))
def test_partition_random_points(grid, k, rng):
    lv = get_dggs(grid).level(k)
    p = random_unit(rng, 100_000)
    key = lv.index_points(p)
    all_keys = lv.all_keys()
    assert np.all(np.isin(key, all_keys))
    # chord cells: projected cell plus every cell touching it
    src, nk = lv.touching(key)
    ci = np.concatenate([np.arange(len(p)), src])
    ck = np.concatenate([key, nk])
    uk, inv = np.unique(ck, return_inverse=True)
    rings = lv.boundary_rings(uk, 0)[inv]
    closed, on = _rings_contain(p[ci], rings)
    hits = np.bincount(ci[closed], minlength=len(p))
    assert np.all(hits >= 1)
    # distance to the nearest edge plane of the containing cells decides "near a boundary"
    a, b = rings, np.roll(rings, -1, axis=1)
    n = np.cross(a, b)
    nn = np.linalg.norm(n, axis=-1)
    d = np.abs(np.einsum("nmk,nk->nm", n / np.where(nn > 0, nn, 1)[..., None], p[ci]))
    d = np.where(nn > 0, d, np.inf).min(axis=1)
    near = np.zeros(len(p), dtype=bool)
    np.logical_or.at(near, ci[closed], d[closed] < 1e-9)
    assert np.all(hits[~near] == 1)


@pytest.mark.parametrize("grid", GRIDS)
def test_equal_area_regular_cells(grid):
    for k in range(1, 4):
        lv = get_dggs(grid).level(k)
        keys = lv.all_keys()
        area = lv.cell_areas(keys)
        if grid is GridKind.ISEA4T:
            regular = area
        else:
            pent = lv.is_pentagon(keys)
            regular = area[~pent]
            # pentagons carry five of the six hexagon sub-triangles
            assert area[pent] / regular.mean() == pytest.approx(np.full(12, 5 / 6), rel=1e-6)
        assert regular.std() / regular.mean() < 1e-6
        assert area.sum() == pytest.approx(4 * math.pi, rel=1e-9)


def test_res0_face_cell():
    c = cell_boundary(CellId(GridKind.ISEA4T, 0, 0, 0, 0, 0))
    assert c.n_corners == 3
    assert c.diameter == pytest.approx(math.atan(2), abs=1e-12)
    assert polygon_area(c.boundary) == pytest.approx(4 * math.pi / 20, rel=1e-12)


@pytest.mark.parametrize("grid", GRIDS)
def test_cells_centre_inside_and_diameter(grid, rng):
    lv = get_dggs(grid).level(2)
    keys = lv.all_keys()
    for key in rng.choice(keys, 25, replace=False):
        c = lv.cell(int(key), densify=4)
        assert point_in_polygon(c.center, c.boundary)
        from dggs_fractal.sphere_geom import polygon_diameter
        assert c.diameter == polygon_diameter(c.boundary)


def test_isea4t_res1_area():
    lv = get_dggs(GridKind.ISEA4T).level(1)
    assert np.allclose(lv.cell_areas(lv.all_keys(), densify=512), 4 * math.pi / 80, rtol=1e-9, atol=0)


def test_diameter_stats():
    st = grid_diameter_stats(GridKind.ISEA4T, 0)
    assert st.min == pytest.approx(math.atan(2)) and st.max == pytest.approx(math.atan(2))
    assert st.relative_spread < 1e-12
    assert grid_diameter_stats(GridKind.ISEA3H, 2).relative_spread > 0
    with pytest.raises(ResolutionOverflowError):
        grid_diameter_stats(GridKind.ISEA4H, 16)


@pytest.mark.parametrize("grid", GRIDS)
def test_max_diameter_non_increasing(grid):
    mx = [grid_diameter_stats(grid, k).max for k in range(0, 7)]
    assert all(b <= a + 1e-15 for a, b in zip(mx, mx[1:]))


def test_sampled_diameter_stats_above_enumeration_limit():
    st = grid_diameter_stats(GridKind.ISEA4T, 9, sample=20_000)
    assert st.sampled and st.n_cells > 10_000
    full = grid_diameter_stats(GridKind.ISEA4T, 6)
    assert st.mean < full.mean


def test_cells_geojson():
    fc = cells_geojson(GridKind.ISEA3H, 1)
    assert len(fc["features"]) == 32
    props = fc["features"][0]["properties"]
    assert props["grid"] == "ISEA3H" and props["resolution"] == 1
    ring = fc["features"][0]["geometry"]["coordinates"][0]
    assert ring[0] == ring[-1]
