"""CSV and SVG output for experiment reports.

Every file starts with a header block holding the resolved run configuration
and the library version, one ``# key = value`` line per entry (inside an XML
comment for SVG). Floats are written with 17 significant digits.

    positivity CSV:   scheme,positive,negative,blown_up,total
    convergence CSV:  scheme,tau,error,stderr
"""
from __future__ import annotations

import csv
import io
import os
from typing import Dict, Mapping

from . import __version__


def fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def header_lines(config: Mapping[str, object]) -> list:
    lines = [f"possplit_version = {__version__}"]
    lines += [f"{k} = {fmt(v)}" for k, v in config.items()]
    return lines


def _write_csv(path, config, columns, rows):
    buf = io.StringIO()
    for line in header_lines(config):
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def write_positivity_csv(path, report, config) -> None:
    rows = [(s, c.positive, c.negative, c.blown_up, c.total) for s, c in report.counts.items()]
    _write_csv(path, config, ["scheme", "positive", "negative", "blown_up", "total"], rows)


def write_convergence_csv(path, report, config) -> None:
    rows = [(s, float(tau), float(e), float(se))
            for s in report.errors
            for tau, e, se in zip(report.tau_values, report.errors[s], report.stderr[s])]
    _write_csv(path, config, ["scheme", "tau", "error", "stderr"], rows)


def write_table_csv(path, config, columns, rows) -> None:
    _write_csv(path, config, columns, rows)


def write_loglog_svg(path, report, config, title: str = "") -> None:
    """Log-log error plot with reference slopes 1/4 and 1/2. Decorative only."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    matplotlib.rcParams["svg.hashsalt"] = "possplit"
    tau = np.asarray(report.tau_values)
    fig, ax = plt.subplots(figsize=(5, 4))
    finite = []
    for s, errs in report.errors.items():
        e = np.asarray(errs, float)
        ok = np.isfinite(e) & (e > 0)
        if ok.any():
            slope = report.fitted_slope.get(s, float("nan"))
            ax.loglog(tau[ok], e[ok], "o-", label=f"{s} (slope {slope:.2f})")
            finite.append(e[ok])
    if finite:
        anchor = max(float(np.max(f)) for f in finite)
        for p, style in ((0.25, ":"), (0.5, "--")):
            ax.loglog(tau, anchor * (tau / tau[0]) ** p, "k" + style, lw=0.8, label=f"slope {p:g}")
    ax.set_xlabel("time step")
    ax.set_ylabel("mean-square error")
    if title:
        ax.set_title(title, fontsize=9)
    ax.legend(fontsize=7)
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    svg = buf.getvalue()
    comment = "<!--\n" + "".join(f"  {line}\n" for line in header_lines(config)) + "-->\n"
    decl_end = svg.find("?>") + 2 if svg.startswith("<?xml") else 0
    svg = svg[:decl_end] + "\n" + comment + svg[decl_end:].lstrip("\n")
    with open(path, "w") as fh:
        fh.write(svg)


def output_path(directory, stem: str, ext: str) -> str:
    return os.path.join(directory, f"{stem}.{ext}")


def slug(config: Dict[str, object], *keys) -> str:
    parts = []
    for k in keys:
        v = config[k]
        parts.append(f"{k}{fmt(v) if not isinstance(v, float) else format(v, 'g')}")
    return "_".join(p.replace("/", "-").replace(" ", "") for p in parts)
