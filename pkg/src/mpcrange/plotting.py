"""Figures rendered from the CSV files written by the CLI.

Every function reads only its CSV, so figures can be regenerated from saved
results without rerunning experiments.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "savefig.dpi": 150,
}

# synchronous estimators black, asynchronous red
COLORS = {
    "SyncMLE": ("k", ":"),
    "SyncUMVUE": ("k", "--"),
    "SyncNoisyMLE": ("k", "-"),
    "AsyncMLE": ("tab:red", ":"),
    "AsyncUMVUE": ("tab:red", "--"),
    "AsyncNoisyMLE": ("tab:red", "-"),
}


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _by_method(rows, x, *ys):
    out = defaultdict(lambda: defaultdict(list))
    for r in rows:
        out[r["method"]][x].append(float(r[x]))
        for y in ys:
            out[r["method"]][y].append(float(r[y]))
    return out


def plot_sweep(csv_path, png_path=None) -> Path:
    rows = _read(csv_path)
    series = _by_method(rows, "axis", "rel_bias", "rel_rmse")
    axis = Path(csv_path).stem.split("_")[-1]
    xlabel = "number of common detected MPCs $K$" if axis == "k" else r"normalized error std $c\sigma/d$"
    with plt.rc_context(STYLE):
        fig, (ax_b, ax_r) = plt.subplots(2, 1, sharex=True, figsize=(6.4, 6.0))
        for m, s in series.items():
            color, ls = COLORS.get(m, (None, "-"))
            ax_b.plot(s["axis"], s["rel_bias"], ls, color=color, marker=".", label=m)
            ax_r.plot(s["axis"], s["rel_rmse"], ls, color=color, marker=".", label=m)
        ax_b.set_ylabel("relative bias")
        ax_r.set_ylabel("relative RMSE")
        ax_r.set_xlabel(xlabel)
        ax_b.legend(ncol=2)
        fig.tight_layout()
        return _save(fig, csv_path, png_path)


def plot_heatmap(csv_path, png_path=None, label="value") -> Path:
    rows = _read(csv_path)
    x = np.array([float(r["x"]) for r in rows])
    y = np.array([float(r["y"]) for r in rows])
    v = np.array([float(r["value"]) if r["value"] not in ("", "nan") else np.nan for r in rows])
    xs, ys = np.unique(x), np.unique(y)
    grid = np.full((ys.size, xs.size), np.nan)
    grid[np.searchsorted(ys, y), np.searchsorted(xs, x)] = v
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        step = xs[1] - xs[0] if xs.size > 1 else 1.0
        extent = (xs[0] - step / 2, xs[-1] + step / 2, ys[0] - step / 2, ys[-1] + step / 2)
        im = ax.imshow(np.ma.masked_invalid(grid), origin="lower", extent=extent, aspect="equal")
        fig.colorbar(im, ax=ax, label=label)
        ax.set_xlabel("$x$ [m]")
        ax.set_ylabel("$y$ [m]")
        fig.tight_layout()
        return _save(fig, csv_path, png_path)


def plot_circle(csv_path, png_path=None) -> Path:
    rows = _read(csv_path)
    series = _by_method(rows, "d", "rmse")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for m, s in series.items():
            color, ls = COLORS.get(m, (None, "-"))
            ax.plot(s["d"], s["rmse"], ls, color=color, marker=".", label=m)
        ax.set_xlabel("distance $d$ [m]")
        ax.set_ylabel("distance RMSE [m]")
        ax.legend()
        fig.tight_layout()
        return _save(fig, csv_path, png_path)


def _save(fig, csv_path, png_path) -> Path:
    out = Path(png_path) if png_path else Path(csv_path).with_suffix(".png")
    fig.savefig(out)
    plt.close(fig)
    return out


SCRIPT_TEMPLATE = '''"""Regenerate {png} from {csv}."""
from pathlib import Path

from mpcrange.plotting import {func}

here = Path(__file__).resolve().parent
{func}(here / "{csv}", here / "{png}"{extra})
'''


def write_plot_script(csv_path, func: str, extra: str = "") -> Path:
    csv_path = Path(csv_path)
    script = csv_path.with_name(f"plot_{csv_path.stem}.py")
    script.write_text(
        SCRIPT_TEMPLATE.format(csv=csv_path.name, png=csv_path.with_suffix(".png").name, func=func, extra=extra)
    )
    return script
