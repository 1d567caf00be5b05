#!/usr/bin/env python3
"""Render paper-style figures from the experiment CSVs.

Kinds:
    loglog   log-log error plot (convergence / stability / timeshift CSVs)
             with a dashed reference-slope guide anchored at the first point
    heatmap  error over the (gap, mesh) grid (heatmap CSV)
    surface  3-D surface of the same grid

Usage:
    render.py --in convergence.csv --kind loglog --slope 0.5 --out conv.png

The renderer never recomputes statistics; it draws exactly what the CSV says.
Output bytes are a pure function of the CSV (fixed figure size and DPI, no
timestamps embedded), so identical inputs give identical images.
"""

import argparse
import csv
import sys

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

LOGLOG_SCHEMAS = {
    "mesh,lp_error,p,n_paths,n_diverged,seed": "mesh",
    "gap,lp_error,p,n_paths,n_diverged,seed": "gap",
    "ds,lp_error,p,n_paths,n_diverged,seed": "ds",
}
HEATMAP_SCHEMA = "gap,mesh,lp_error,p,n_paths,n_diverged,seed"

AXIS_LABELS = {"mesh": "step size", "gap": "initial gap", "ds": "start-time gap"}

FIGSIZE = (6.4, 4.8)
DPI = 120


class SchemaError(ValueError):
    pass


def read_table(path):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file")
        rows = [row for row in reader if row]
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    cols = {name: np.array([float(r[i]) for r in rows])
            for i, name in enumerate(header)}
    return ",".join(header), cols


def render_loglog(cols, abscissa, slope, out):
    x = cols[abscissa]
    y = cols["lp_error"]
    keep = (x > 0) & (y > 0)
    if not keep.any():
        raise SchemaError("no positive rows to plot")
    x, y = x[keep], y[keep]
    order = np.argsort(x)
    x, y = x[order], y[order]
    fig, ax = plt.subplots(figsize=FIGSIZE, dpi=DPI)
    ax.plot(x, y, "o-", color="#1f5fa8", label="measured error")
    if slope is not None:
        guide = y[0] * (x / x[0]) ** slope
        ax.plot(x, guide, "--", color="#777777", label=f"slope {slope:g}")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log", base=2)
    ax.set_xlabel(AXIS_LABELS[abscissa])
    ax.set_ylabel("L^p error")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out, metadata=_clean_metadata(out))
    plt.close(fig)


def _pivot(cols):
    gaps = np.unique(cols["gap"])
    meshes = np.unique(cols["mesh"])
    grid = np.full((gaps.size, meshes.size), np.nan)
    for g, m, e in zip(cols["gap"], cols["mesh"], cols["lp_error"]):
        grid[np.searchsorted(gaps, g), np.searchsorted(meshes, m)] = e
    if np.isnan(grid).any():
        raise SchemaError("heatmap CSV does not cover the full (gap, mesh) grid")
    return gaps, meshes, grid


def render_heatmap(cols, out):
    gaps, meshes, grid = _pivot(cols)
    fig, ax = plt.subplots(figsize=FIGSIZE, dpi=DPI)
    im = ax.pcolormesh(np.log2(meshes), np.log10(gaps), np.log10(grid),
                       shading="nearest", cmap="viridis")
    fig.colorbar(im, ax=ax, label="log10 L^p error")
    ax.set_xlabel("log2 step size")
    ax.set_ylabel("log10 initial gap")
    fig.tight_layout()
    fig.savefig(out, metadata=_clean_metadata(out))
    plt.close(fig)


def render_surface(cols, out):
    gaps, meshes, grid = _pivot(cols)
    fig = plt.figure(figsize=FIGSIZE, dpi=DPI)
    ax = fig.add_subplot(projection="3d")
    mg, gg = np.meshgrid(np.log2(meshes), np.log10(gaps))
    ax.plot_surface(mg, gg, np.log10(grid), cmap="viridis")
    ax.set_xlabel("log2 step size")
    ax.set_ylabel("log10 initial gap")
    ax.set_zlabel("log10 L^p error")
    fig.savefig(out, metadata=_clean_metadata(out))
    plt.close(fig)


def _clean_metadata(out):
    # SVG would otherwise embed a creation date; PNG metadata is static
    if str(out).endswith(".svg"):
        return {"Date": None}
    return None


def render(in_path, kind, slope, out_path):
    header, cols = read_table(in_path)
    if kind == "loglog":
        if header not in LOGLOG_SCHEMAS:
            raise SchemaError(
                f"{in_path}: header {header!r} is not a log-log table schema")
        render_loglog(cols, LOGLOG_SCHEMAS[header], slope, out_path)
    elif kind == "heatmap":
        if header != HEATMAP_SCHEMA:
            raise SchemaError(f"{in_path}: header {header!r} is not the "
                              "heatmap schema")
        render_heatmap(cols, out_path)
    elif kind == "surface":
        if header != HEATMAP_SCHEMA:
            raise SchemaError(f"{in_path}: header {header!r} is not the "
                              "heatmap schema")
        render_surface(cols, out_path)
    else:
        raise SchemaError(f"unknown kind {kind!r}")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--in", dest="in_path", required=True, help="input CSV")
    ap.add_argument("--kind", required=True,
                    choices=["loglog", "heatmap", "surface"])
    ap.add_argument("--slope", type=float, default=None,
                    help="reference slope to overlay (log-log plots)")
    ap.add_argument("--out", required=True, help="output image (.png or .svg)")
    args = ap.parse_args(argv)
    try:
        render(args.in_path, args.kind, args.slope, args.out)
    except SchemaError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
