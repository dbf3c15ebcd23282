"""Command-line driver: generate, polygonize, cover, fit, run, grid-stats.

Exit codes: 0 success, 1 usage or parse error, 2 insufficient data,
3 internal invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict

import numpy as np

from . import covering, fractal_gen, raster_ingest, scaling
from .covering import CSV_HEADER, CoverRecord, CoverTable, build_cover_table, write_cover_csv
from .dggs.grid import GridKind, cells_geojson, grid_diameter_stats
from .dggs.isea import IcosahedronOrientation
from .errors import (CoordinateOverflowError, DegenerateAbscissaError, DggsFractalError, EmptyInputError,
                     EmptySetError, InsufficientRangeError, InvariantError, ParseError, PoleSpanningError,
                     ResolutionOverflowError)
from .features import GeoFeatureSet
from .sphere_geom import AUTHALIC_RADIUS_KM

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _grid_list(text):
    try:
        return [GridKind.parse(t.strip()) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _kmax(text):
    if text == "auto":
        return None
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected an integer or 'auto'") from None


def _add_orientation(p):
    g = p.add_argument_group("icosahedron orientation")
    g.add_argument("--pole-lon", type=float, default=11.25, help="longitude of vertex 0 in degrees (default 11.25)")
    g.add_argument("--pole-lat", type=float, default=58.28252559,
                   help="latitude of vertex 0 in degrees (default 58.28252559)")
    g.add_argument("--azimuth", type=float, default=0.0,
                   help="azimuth from vertex 0 to vertex 1 in degrees (default 0)")


def _orientation(args):
    return IcosahedronOrientation(args.pole_lon, args.pole_lat, args.azimuth)


def _add_policy(p):
    d = scaling.RangePolicy()
    g = p.add_argument_group("scaling-range policy")
    g.add_argument("--bbox-ratio-min", type=float, default=d.bbox_ratio_min,
                   help=f"drop rows whose N / N_bbox falls below this (default {d.bbox_ratio_min})")
    g.add_argument("--slope-low", type=float, default=d.slope_low,
                   help=f"drop steps with local slope below this (default {d.slope_low})")
    g.add_argument("--slope-high", type=float, default=d.slope_high,
                   help=f"drop steps with local slope above this (default {d.slope_high})")
    g.add_argument("--min-points", type=int, default=d.min_points,
                   help=f"fewest resolutions a fit may use (default {d.min_points})")


def _policy(args):
    try:
        return scaling.RangePolicy(args.bbox_ratio_min, args.slope_low, args.slope_high, args.min_points)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def build_parser():
    p = _Parser(prog="dggs-fractal", description="Box-counting dimension of geographic features on icosahedral grids.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("generate", help="write a synthetic fractal as GeoJSON (or a cloud mask as ASCII grid)")
    g.add_argument("kind", choices=["sierpinski", "koch", "cloudmask"])
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--seed", type=int, default=0, help="PRNG seed (default 0)")
    g.add_argument("--iterations", type=int, default=None,
                   help="chaos-game points (default 200000) or L-system iterations (default 5)")
    g.add_argument("--angle", type=float, default=60.0, help="Koch turn angle in degrees (default 60)")
    g.add_argument("--scale", type=float, default=0.5, help="Koch scale factor (default 0.5)")
    g.add_argument("--koch-geometry", choices=["line", "points"], default="line",
                   help="Koch output as one LineString or MultiPoint (default line)")
    g.add_argument("--size-exp", type=int, default=9, help="cloud mask side is 2**size_exp pixels (default 9)")
    g.add_argument("--cellsize", type=float, default=0.08, help="cloud mask pixel size in degrees (default 0.08)")

    q = sub.add_parser("polygonize", help="threshold an ESRI ASCII grid and clump pixels into polygons")
    q.add_argument("input")
    q.add_argument("-o", "--output", required=True)
    q.add_argument("--value", type=float, default=raster_ingest.OPAQUE_CLOUD_DN,
                   help="pixel value selected (default 3, opaque cloud)")
    q.add_argument("--connectivity", type=int, choices=[4, 8], default=4, help="pixel connectivity (default 4)")

    c = sub.add_parser("cover", help="count intersecting cells per resolution and write the cover CSV")
    c.add_argument("input", help="GeoJSON features")
    c.add_argument("--grid", type=GridKind.parse, default=GridKind.ISEA4T, help="isea4t, isea4h or isea3h (default isea4t)")
    c.add_argument("--k-min", type=int, default=0, help="first resolution (default 0)")
    c.add_argument("--k-max", type=_kmax, default=None, help="last resolution or 'auto' (default auto)")
    c.add_argument("--cap", type=int, default=covering.CANDIDATE_CAP,
                   help=f"auto range stops before a level with more candidates (default {covering.CANDIDATE_CAP})")
    c.add_argument("-o", "--output", required=True)
    _add_orientation(c)

    f = sub.add_parser("fit", help="fit the dimension from one or more cover CSV files")
    f.add_argument("inputs", nargs="+")
    f.add_argument("-o", "--output", help="JSON report path (default: stdout)")
    f.add_argument("--plot", help="write a log-log SVG here")
    _add_policy(f)

    r = sub.add_parser("run", help="cover with every grid, fit, aggregate")
    r.add_argument("input", help="GeoJSON features, an ESRI ASCII grid (.asc), or 'sierpinski' / 'koch'")
    r.add_argument("--grids", type=_grid_list, default=list(GridKind), help="comma list (default isea4t,isea4h,isea3h)")
    r.add_argument("--k-min", type=int, default=0, help="first resolution (default 0)")
    r.add_argument("--k-max", type=_kmax, default=None, help="last resolution or 'auto' (default auto)")
    r.add_argument("--cap", type=int, default=covering.CANDIDATE_CAP,
                   help=f"auto range stops before a level with more candidates (default {covering.CANDIDATE_CAP})")
    r.add_argument("--seed", type=int, default=0, help="PRNG seed for generated inputs (default 0)")
    r.add_argument("--value", type=float, default=raster_ingest.OPAQUE_CLOUD_DN, help="raster value selected (default 3)")
    r.add_argument("--connectivity", type=int, choices=[4, 8], default=4, help="raster pixel connectivity (default 4)")
    r.add_argument("--out-dir", default="run_output", help="output directory (default run_output)")
    r.add_argument("--plot", action="store_true", help="also write fit.svg")
    r.add_argument("--jobs", type=int, default=0, help="worker processes, one grid each (default: one per grid)")
    _add_orientation(r)
    _add_policy(r)

    s = sub.add_parser("grid-stats", help="cell diameter statistics for one grid level")
    s.add_argument("--grid", type=GridKind.parse, required=True)
    s.add_argument("--resolution", type=int, required=True)
    s.add_argument("--sample", type=int, default=200_000, help="random points used above resolution 8 (default 200000)")
    s.add_argument("--seed", type=int, default=0, help="sampling seed (default 0)")
    s.add_argument("--export", help="also write every cell boundary of the level as GeoJSON (resolution <= 6)")
    _add_orientation(s)
    return p


# ------------------------------------------------------------------ commands

def cmd_generate(args):
    if args.kind == "sierpinski":
        n = fractal_gen.MAX_ITERATIONS if args.iterations is None else args.iterations
        fs = fractal_gen.chaos_game(fractal_gen.ChaosGameSpec(iterations=n, seed=args.seed))
        fs.write_geojson(args.output)
        print(f"{len(fs.points)} points -> {args.output}")
    elif args.kind == "koch":
        n = 5 if args.iterations is None else args.iterations
        s = fractal_gen.expand_lsystem(fractal_gen.LSystem("F", {"F": "F+F--F+F"}, args.angle), n)
        fs = fractal_gen.turtle_decode(s, args.angle, args.scale, as_line=args.koch_geometry == "line")
        fs.write_geojson(args.output, multipoint=True)
        count = len(fs.lines[0]) if fs.lines else len(fs.points)
        print(f"{count} points -> {args.output}")
    else:
        g = fractal_gen.synthetic_cloud_grid(seed=args.seed, size_exp=args.size_exp, cellsize=args.cellsize)
        g.write(args.output)
        print(f"{g.nrows}x{g.ncols} grid, {(g.values == 3).sum()} opaque pixels -> {args.output}")
    return EXIT_OK


def _polygonize_file(path, value, connectivity):
    grid = raster_ingest.read_ascii_grid(path)
    return raster_ingest.polygonize(raster_ingest.threshold(grid, value), connectivity)


def cmd_polygonize(args):
    res = _polygonize_file(args.input, args.value, args.connectivity)
    with open(args.output, "w", encoding="utf-8") as fh:
        json.dump(res.to_geojson(), fh)
        fh.write("\n")
    print(f"{res.n_components} polygons, {sum(res.pixel_counts)} pixels -> {args.output}")
    return EXIT_OK


def check_table(table: CoverTable):
    """Cover invariants; a failure means a bug, not bad input."""
    from .dggs.grid import cells_at_resolution

    for r in table.records:
        if not r.n_cells >= 1:
            raise InvariantError(f"resolution {r.resolution}: no cells meet a non-empty feature set")
        if r.n_cells > r.n_bbox_cells:
            raise InvariantError(f"resolution {r.resolution}: more feature cells than bbox cells")
        if not r.delta > 0:
            raise InvariantError(f"resolution {r.resolution}: non-positive delta")
        if r.n_cells > cells_at_resolution(r.grid, r.resolution):
            raise InvariantError(f"resolution {r.resolution}: more cells than the grid has")


def _cover(features, grid, k_min, k_max, cap, orientation):
    table = build_cover_table(grid, k_min, k_max, features, orientation, candidate_cap=cap)
    check_table(table)
    return table


def cmd_cover(args):
    fs = GeoFeatureSet.read_geojson(args.input)
    table = _cover(fs, args.grid, args.k_min, args.k_max, args.cap, _orientation(args))
    write_cover_csv(table, args.output)
    print(f"{len(table.records)} resolutions -> {args.output}")
    return EXIT_OK


def read_cover_csv(path) -> CoverTable:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CSV_HEADER:
        raise ParseError(f"{path}: header must be {','.join(CSV_HEADER)}", line=1)
    recs = []
    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise ParseError(f"{path}: expected {len(CSV_HEADER)} fields", line=i)
        try:
            recs.append(CoverRecord(GridKind.parse(row[0]), int(row[1]), float(row[3]), int(row[4]), int(row[5])))
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}", line=i) from None
    if not recs:
        raise InsufficientRangeError(f"{path}: no data rows")
    grids = {r.grid for r in recs}
    if len(grids) > 1:
        raise ParseError(f"{path}: rows mix several grids")
    recs.sort(key=lambda r: r.resolution)
    return CoverTable(recs)


def _fit_tables(tables, policy):
    fits = []
    for t in tables:
        retained = scaling.select_range(t, policy)
        fits.append(scaling.fit_dimension(t, retained, policy))
    agg = scaling.aggregate(fits)
    report = {
        "fits": [f.to_dict(policy) for f in fits],
        "d_b_mean": agg.d_b_mean,
        "se_mean": agg.se_mean,
        "policy": asdict(policy),
    }
    return fits, report


def _plot(tables, fits, path, title):
    from .svgplot import loglog_svg

    series = []
    for t, f in zip(tables, fits):
        k, d, n, b = t.arrays()
        series.append({"label": t.grid.value, "x": -np.log(d), "y": np.log(n),
                       "used": np.isin(k, f.k_used), "slope": f.d_b, "intercept": f.intercept})
    loglog_svg(series, path, title)


def _emit(report, output):
    text = json.dumps(report, indent=2)
    if output:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_fit(args):
    policy = _policy(args)
    tables = [read_cover_csv(p) for p in args.inputs]
    fits, report = _fit_tables(tables, policy)
    _emit(report, args.output)
    if args.plot:
        _plot(tables, fits, args.plot, "log-log cover counts")
    return EXIT_OK


def _load_input(args):
    src = args.input
    if src == "sierpinski":
        return fractal_gen.chaos_game(fractal_gen.ChaosGameSpec(seed=args.seed)), "sierpinski"
    if src == "koch":
        return fractal_gen.koch_curve(5, 0.5, as_line=True), "koch"
    if src.lower().endswith((".asc", ".txt")):
        return _polygonize_file(src, args.value, args.connectivity).features, os.path.basename(src)
    return GeoFeatureSet.read_geojson(src), os.path.basename(src)


def cmd_run(args):
    policy = _policy(args)
    features, name = _load_input(args)
    os.makedirs(args.out_dir, exist_ok=True)
    orientation = _orientation(args)
    jobs = args.jobs or min(len(args.grids), os.cpu_count() or 1)
    work = [(features, g, args.k_min, args.k_max, args.cap, orientation) for g in args.grids]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            tables = list(pool.map(_cover, *zip(*work)))
    else:
        tables = [_cover(*w) for w in work]
    # written in grid order whatever the completion order
    for g, t in zip(args.grids, tables):
        write_cover_csv(t, os.path.join(args.out_dir, f"cover_{g.value.lower()}.csv"))
    fits, report = _fit_tables(tables, policy)
    report = {"input": name, "seed": args.seed,
              "orientation": {"pole_lon": orientation.pole_lon, "pole_lat": orientation.pole_lat,
                              "azimuth": orientation.azimuth},
              **report,
              "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}
    _emit(report, os.path.join(args.out_dir, "report.json"))
    if args.plot:
        _plot(tables, fits, os.path.join(args.out_dir, "fit.svg"), f"{name}: log-log cover counts")
    for f in fits:
        print(f"{f.grid.value}: D_B = {f.d_b:.4f} +/- {f.se_corrected:.4f} (k {f.k_used[0]}..{f.k_used[-1]})")
    print(f"mean: D_B = {report['d_b_mean']:.4f} +/- {report['se_mean']:.4f}")
    return EXIT_OK


def cmd_grid_stats(args):
    st = grid_diameter_stats(args.grid, args.resolution, sample=args.sample, seed=args.seed,
                             orientation=_orientation(args))
    out = {"grid": args.grid.value, "resolution": args.resolution, "min": st.min, "max": st.max,
           "mean": st.mean, "relative_spread": st.relative_spread, "n_cells": st.n_cells,
           "sampled": st.sampled, "mean_km": st.mean * AUTHALIC_RADIUS_KM}
    if args.export:
        if args.resolution > 6:
            raise UsageError("--export is limited to resolution 6")
        with open(args.export, "w", encoding="utf-8") as fh:
            json.dump(cells_geojson(args.grid, args.resolution, orientation=_orientation(args)), fh)
    print(json.dumps(out, indent=2))
    return EXIT_OK


_COMMANDS = {"generate": cmd_generate, "polygonize": cmd_polygonize, "cover": cmd_cover, "fit": cmd_fit,
             "run": cmd_run, "grid-stats": cmd_grid_stats}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except (InsufficientRangeError, EmptySetError, EmptyInputError, DegenerateAbscissaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ParseError, ResolutionOverflowError, CoordinateOverflowError, PoleSpanningError, UsageError,
            OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvariantError, DggsFractalError, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
