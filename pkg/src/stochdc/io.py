"""CSV writers and optional SVG rendering.

Numbers use ``repr``-style 17-significant-digit formatting, which Python
produces independently of the process locale.
"""
from __future__ import annotations

import csv
import io
import json
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np


def fmt(x) -> str:
    return format(float(x), ".17g")


@contextmanager
def _sink(path):
    if path is None or str(path) == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            yield fh


def write_table(path, header, rows):
    """Write a header plus numeric rows; ``path`` of None or '-' means stdout."""
    with _sink(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def table_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float).reshape(len(rows) - 1, len(rows[0]))


def trajectory_rows(traj):
    return ["time"] + list(traj.columns), np.column_stack([traj.times, traj.data])


def ensemble_rows(result):
    header = ["time", "count"]
    for c in result.columns:
        header += [f"{c}_mean", f"{c}_se", f"{c}_min", f"{c}_max"]
    se = result.standard_error()
    stacked = np.stack([result.mean, se, result.min, result.max], axis=2).reshape(len(result.times), -1)
    return header, np.column_stack([result.times, result.count, stacked])


def scan_rows(V, P, L):
    VV, PP = np.meshgrid(V, P)
    return ["V", "P_star", "L_ii"], np.column_stack([VV.ravel(), PP.ravel(), L.ravel()])


def write_json(path, payload):
    text = json.dumps(payload, indent=2, sort_keys=False, default=_jsonable)
    with _sink(path) as fh:
        fh.write(text + "\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


# ------------------------------------------------------------------ plots

def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise RuntimeError("SVG output needs matplotlib (pip install stochdc[plot])") from exc
    matplotlib.use("svg", force=True)
    import matplotlib.pyplot as plt
    return plt


def plot_trajectory(path, traj):
    plt = _pyplot()
    fig, (a, b) = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
    for i in range(traj.n):
        a.plot(traj.times, traj.I_g[:, i], lw=0.8, label=f"node {i}")
        b.plot(traj.times, traj.V[:, i], lw=0.8)
    a.set_ylabel("I_g [A]")
    b.set_ylabel("V [V]")
    b.set_xlabel("t [s]")
    a.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(Path(path), format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_scan(path, V, P, L):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4.5))
    mesh = ax.pcolormesh(V, P, L, shading="auto")
    if L.min() < 0.0 < L.max():
        ax.contour(V, P, L, levels=[0.0], colors="k", linewidths=0.8)
    fig.colorbar(mesh, ax=ax, label="L_ii")
    ax.set_xlabel("V [V]")
    ax.set_ylabel("P* [W]")
    fig.tight_layout()
    fig.savefig(Path(path), format="svg", metadata={"Date": None})
    plt.close(fig)
