"""Figure construction and deterministic file output."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .spec import KINDS, PlotSpec, SchemaError, read_table

FIGSIZE = (5.0, 3.75)
DPI = 160

_RC = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "llplots",
    "figure.max_open_warning": 0,
}


def _floats(cols, name, keep=None):
    vals, kept = [], []
    for i, cell in enumerate(cols[name]):
        try:
            vals.append(float(cell))
            kept.append(i)
        except ValueError:
            continue  # footer rows such as "Order" carry non-numeric cells
    if keep is not None:
        keep.append(kept)
    return np.array(vals)


def _data_rows(cols, key_col):
    """Indices of rows whose key column parses as a number."""
    rows = []
    for i, cell in enumerate(cols[key_col]):
        try:
            float(cell)
            rows.append(i)
        except ValueError:
            continue
    return rows


def _column(cols, name, rows):
    return np.array([float(cols[name][i]) for i in rows])


def _convergence(ax, spec):
    markers = ("o", "s", "^", "d")
    h_all = None
    for k, path in enumerate(spec.input_csv):
        cols = read_table(path, "convergence")
        rows = _data_rows(cols, "H")
        H = _column(cols, "H", rows)
        l2 = _column(cols, "l2_error", rows)
        h1 = _column(cols, "h1_error", rows)
        label = "" if len(spec.input_csv) == 1 else f" [{k}]"
        ax.loglog(H, l2, marker=markers[k % 4], color="C0",
                  label=f"$L^2$ error{label}")
        ax.loglog(H, h1, marker=markers[(k + 1) % 4], color="C1",
                  label=f"$H^1$ error{label}")
        h_all = H if h_all is None else np.concatenate([h_all, H])
        if k == 0:
            # anchor the guide lines at the coarsest data point
            for order, style, err0 in ((2, ":", h1[0]), (3, "--", l2[0])):
                guide = err0 * (H / H[0]) ** order
                ax.loglog(H, guide, style, color="0.4",
                          label=f"order {order}")
    ax.set_xlabel(spec.xlabel or "$H$")
    ax.set_ylabel(spec.ylabel or "error")
    ax.invert_xaxis()
    ax.legend(loc="best", fontsize=8)


def _decay(ax, spec):
    for k, path in enumerate(spec.input_csv):
        cols = read_table(path, "decay")
        rows = _data_rows(cols, "layers")
        ell = _column(cols, "layers", rows)
        dist = _column(cols, "basis_distance", rows)
        proj = _column(cols, "projection_error", rows)
        ax.semilogy(ell, dist, marker="o", color="C0",
                    label="basis distance")
        ax.semilogy(ell, proj, marker="s", color="C1",
                    label="projection error")
    ax.set_xlabel(spec.xlabel or "patch layers $\\ell$")
    ax.set_ylabel(spec.ylabel or "energy-norm distance")
    ax.legend(loc="best", fontsize=8)


def _cross_section(ax, spec):
    for path in spec.input_csv:
        cols = read_table(path, "cross_section")
        rows = _data_rows(cols, "coordinate")
        s = _column(cols, "coordinate", rows)
        for c, color in (("m1", "C0"), ("m2", "C1"), ("m3", "C2")):
            ax.plot(s, _column(cols, f"{c}_ref", rows), "-", color=color,
                    label=f"$m_{c[1]}$ reference")
            ax.plot(s, _column(cols, f"{c}_lod", rows), "--", color=color,
                    label=f"$m_{c[1]}$ multiscale")
    ax.set_xlabel(spec.xlabel or "coordinate")
    ax.set_ylabel(spec.ylabel or "magnetization component")
    ax.legend(loc="best", fontsize=7, ncol=3)


def _grid_from_long_form(cols, rows):
    x = _column(cols, "x", rows)
    y = _column(cols, "y", rows)
    v = _column(cols, "value", rows)
    xu, xi = np.unique(x, return_inverse=True)
    yu, yi = np.unique(y, return_inverse=True)
    grid = np.full((yu.size, xu.size), np.nan)
    grid[yi, xi] = v
    if np.isnan(grid).any():
        raise SchemaError("x/y samples do not form a complete grid")
    return xu, yu, grid


def _heatmap(ax, spec):
    cols = read_table(spec.input_csv[0], "coefficient_heatmap")
    xu, yu, grid = _grid_from_long_form(cols, _data_rows(cols, "x"))
    mesh = ax.pcolormesh(xu, yu, grid, cmap="viridis", shading="nearest")
    ax.figure.colorbar(mesh, ax=ax)
    ax.set_aspect("equal")
    ax.set_xlabel(spec.xlabel or "$x$")
    ax.set_ylabel(spec.ylabel or "$y$")
    ax.grid(False)


def _contour(ax, spec):
    cols = read_table(spec.input_csv[0], "contour")
    xu, yu, grid = _grid_from_long_form(cols, _data_rows(cols, "x"))
    cs = ax.contour(xu, yu, grid, levels=10, cmap="viridis")
    ax.clabel(cs, inline=True, fontsize=6)
    ax.set_aspect("equal")
    ax.set_xlabel(spec.xlabel or "$x$")
    ax.set_ylabel(spec.ylabel or "$y$")


_BUILDERS = {
    "convergence": _convergence,
    "decay": _decay,
    "cross_section": _cross_section,
    "coefficient_heatmap": _heatmap,
    "contour": _contour,
}


def build_figure(spec: PlotSpec):
    """Build the matplotlib Figure for a plot description."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=FIGSIZE, dpi=DPI)
        _BUILDERS[spec.kind](ax, spec)
        if spec.title:
            ax.set_title(spec.title)
        fig.tight_layout()
    return fig


def render(spec: PlotSpec) -> list:
    """Render a plot to <output>.png and <output>.svg; returns the paths."""
    fig = build_figure(spec)
    stem = spec.output
    for ext in (".png", ".svg"):
        if stem.endswith(ext):
            stem = stem[: -len(ext)]
    written = []
    try:
        with plt.rc_context(_RC):
            for ext in (".png", ".svg"):
                path = stem + ext
                # empty Date metadata keeps repeated renders byte-identical
                fig.savefig(path, metadata={"Date": None}, dpi=DPI)
                written.append(path)
    finally:
        plt.close(fig)
    return written
