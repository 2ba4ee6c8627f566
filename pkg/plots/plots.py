#!/usr/bin/env python3
"""Render figures from the experiment CSV artifacts.

Three figure kinds, matching the harness output schemas exactly:

  energy   columns t, explicit_euler, nominal_vi, gpvi_n10, gpvi_n20
           absolute energy error over time, log y axis
  drift    columns t, explicit_euler, gpvi_projected
           max constraint violation over time, log y axis
  sweep    columns n_samples, variant, median_mse, p10, p90, failures
           median with 10/90 percentile band vs training size, log-log

Usage:
  plots.py --kind {energy|drift|sweep} --in <csv> [<csv> ...] --out <png>

Rendering is deterministic: fixed style, no timestamps or other volatile
metadata, so identical inputs produce identical image bytes.
"""

import argparse
import csv
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

# Color convention: black = explicit Euler / nominal, blue = minimal,
# red = sin/cos, green = maximal.
VARIANT_COLORS = {
    "nominal": "black",
    "minimal": "tab:blue",
    "sincos": "tab:red",
    "maximal": "tab:green",
}
SERIES_COLORS = {
    "explicit_euler": "black",
    "nominal_vi": "tab:gray",
    "gpvi_n10": "tab:blue",
    "gpvi_n20": "tab:red",
    "gpvi_projected": "tab:blue",
}
SERIES_LABELS = {
    "explicit_euler": "explicit Euler",
    "nominal_vi": "nominal variational",
    "gpvi_n10": "trained (N=10)",
    "gpvi_n20": "trained (N=20)",
    "gpvi_projected": "trained, projected",
}

SCHEMAS = {
    "energy": ["t", "explicit_euler", "nominal_vi", "gpvi_n10", "gpvi_n20"],
    "drift": ["t", "explicit_euler", "gpvi_projected"],
    "sweep": ["n_samples", "variant", "median_mse", "p10", "p90", "failures"],
}


class FigureSpecError(ValueError):
    """Input CSV does not match the expected schema or invariants."""


def read_rows(path, kind):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FigureSpecError(f"{path}: empty file")
        expected = SCHEMAS[kind]
        missing = [c for c in expected if c not in header]
        if missing:
            raise FigureSpecError(
                f"{path}: missing column(s) {', '.join(missing)}")
        rows = [dict(zip(header, row)) for row in reader if row]
    if not rows:
        raise FigureSpecError(f"{path}: no data rows")
    return rows


def _style_axes(ax):
    ax.grid(True, which="both", alpha=0.3, linewidth=0.5)
    ax.tick_params(direction="in")


def render_energy(paths, out_path):
    rows = read_rows(paths[0], "energy")
    t = [float(r["t"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6.0, 3.6), dpi=150)
    for col in SCHEMAS["energy"][1:]:
        vals = [max(float(r[col]), 1e-16) for r in rows]
        ax.plot(t, vals, color=SERIES_COLORS[col], label=SERIES_LABELS[col],
                linewidth=1.2)
    ax.set_yscale("log")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("|energy error| [J]")
    ax.legend(loc="lower right", fontsize=8)
    _style_axes(ax)
    _save(fig, out_path)


def render_drift(paths, out_path):
    rows = read_rows(paths[0], "drift")
    t = [float(r["t"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6.0, 3.6), dpi=150)
    for col in SCHEMAS["drift"][1:]:
        vals = [max(float(r[col]), 1e-16) for r in rows]
        ax.plot(t, vals, color=SERIES_COLORS[col], label=SERIES_LABELS[col],
                linewidth=1.2)
    ax.set_yscale("log")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("max constraint violation")
    ax.legend(loc="lower right", fontsize=8)
    _style_axes(ax)
    _save(fig, out_path)


def render_sweep(paths, out_path):
    fig, axes = plt.subplots(1, len(paths), figsize=(5.0 * len(paths), 3.8),
                             dpi=150, squeeze=False)
    for ax, path in zip(axes[0], paths):
        rows = read_rows(path, "sweep")
        by_variant = {}
        nominal = None
        for r in rows:
            med = float(r["median_mse"])
            p10 = float(r["p10"])
            p90 = float(r["p90"])
            if not (p10 <= med <= p90):
                raise FigureSpecError(
                    f"{path}: percentile ordering violated for variant "
                    f"{r['variant']} at n={r['n_samples']}")
            if r["variant"] == "nominal":
                nominal = med
                continue
            by_variant.setdefault(r["variant"], []).append(
                (int(r["n_samples"]), med, p10, p90))
        for variant in ("minimal", "sincos", "maximal"):
            if variant not in by_variant:
                continue
            pts = sorted(by_variant[variant])
            n = [p[0] for p in pts]
            med = [p[1] for p in pts]
            lo = [max(p[2], 1e-16) for p in pts]
            hi = [p[3] for p in pts]
            color = VARIANT_COLORS[variant]
            ax.plot(n, med, marker="o", markersize=3, color=color,
                    label=variant, linewidth=1.2)
            ax.fill_between(n, lo, hi, color=color, alpha=0.15, linewidth=0)
        if nominal is not None:
            ax.axhline(nominal, color=VARIANT_COLORS["nominal"],
                       linestyle="--", linewidth=1.0, label="nominal")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("training samples")
        ax.set_ylabel("median 20-step MSE [m$^2$]")
        ax.legend(fontsize=8)
        _style_axes(ax)
    _save(fig, out_path)


def _save(fig, out_path):
    fig.tight_layout()
    # strip volatile metadata so identical inputs give identical bytes
    fig.savefig(out_path, metadata={"Software": None})
    plt.close(fig)


RENDERERS = {"energy": render_energy, "drift": render_drift,
             "sweep": render_sweep}


def render(kind, paths, out_path):
    """Render one figure; raises FigureSpecError on schema violations."""
    if kind not in RENDERERS:
        raise FigureSpecError(f"unknown figure kind {kind!r}")
    RENDERERS[kind](paths, out_path)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="render figures from experiment CSV artifacts")
    parser.add_argument("--kind", required=True,
                        choices=sorted(RENDERERS))
    parser.add_argument("--in", dest="inputs", nargs="+", required=True,
                        help="input CSV file(s); sweep accepts several")
    parser.add_argument("--out", required=True, help="output image path")
    args = parser.parse_args(argv)
    try:
        render(args.kind, args.inputs, args.out)
    except FileNotFoundError as exc:
        print(f"plots: {exc}", file=sys.stderr)
        return 3
    except FigureSpecError as exc:
        print(f"plots: {exc}", file=sys.stderr)
        return 4
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
