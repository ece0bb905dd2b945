"""Figure builders; every routine returns the exact arrays it draws.

Slopes annotated on log-log panels come from the run's own ratefits.csv when
present; otherwise a least-squares trend line is fitted to the displayed
points (presentation-level only; nothing physical is recomputed).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .loading import MissingData, read_csv

_STYLE = {
    "figure.figsize": (6.0, 4.2),
    "figure.dpi": 120,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.markersize": 5,
}

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fit_loglog(x, y):
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    lx = lx - lx.mean()
    return float(lx @ (ly - ly.mean()) / (lx @ lx))


def make_rate_plot(results_csv, out_path, ratefits_csv=None):
    """Log-log weak error against N, one panel per k, slopes annotated.

    Returns {"figure": path, "panels": {k: {t: {"N", "weak_error",
    "mc_stderr", "slope"}}}} with the arrays exactly as read from the CSV.
    Needs at least 3 distinct N values; an empty CSV raises before any file
    is written.
    """
    cols = read_csv(
        results_csv, required=("t", "N", "k", "weak_error", "mc_stderr")
    )
    n_distinct = sorted(set(cols["N"]))
    if len(n_distinct) < 3:
        raise MissingData(f"rate plot needs >= 3 N values, found {len(n_distinct)}")
    fits = {}
    if ratefits_csv is not None and Path(ratefits_csv).exists():
        fc = read_csv(ratefits_csv, required=("t", "k", "slope"))
        fits = {
            (fc["k"][i], fc["t"][i]): fc["slope"][i] for i in range(len(fc["t"]))
        }
    panels = {}
    ks = sorted(set(cols["k"]))
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    written = []
    with plt.rc_context(_STYLE):
        for k in ks:
            fig, ax = plt.subplots()
            panels[k] = {}
            for j, t in enumerate(sorted(set(cols["t"]))):
                sel = [
                    i
                    for i in range(len(cols["t"]))
                    if cols["t"][i] == t and cols["k"][i] == k
                ]
                sel.sort(key=lambda i: cols["N"][i])
                N = [cols["N"][i] for i in sel]
                err = [cols["weak_error"][i] for i in sel]
                se = [cols["mc_stderr"][i] for i in sel]
                slope = fits.get((k, t))
                if slope is None:
                    slope = _fit_loglog(N, np.maximum(err, 1e-300))
                panels[k][t] = {
                    "N": N,
                    "weak_error": err,
                    "mc_stderr": se,
                    "slope": slope,
                }
                color = _COLORS[j % len(_COLORS)]
                ax.errorbar(
                    N, err, yerr=se, marker="o", color=color,
                    label=f"t={t:g} (slope {slope:+.2f})",
                )
            ax.set_xscale("log")
            ax.set_yscale("log")
            ax.set_xlabel("N")
            ax.set_ylabel("weak error")
            ax.set_title(f"marginal order k={int(k)}")
            ax.legend(fontsize=7)
            target = (
                out_path
                if len(ks) == 1
                else out_path.with_name(f"{out_path.stem}_k{int(k)}{out_path.suffix}")
            )
            fig.savefig(target)
            plt.close(fig)
            written.append(target)
    return {"figures": [str(p) for p in written], "panels": panels}


def make_ladder_plot(run_dirs, out_path):
    """Correlation-norm decay across oracle runs, bound overlay included.

    ``run_dirs`` holds oracle run directories (manifest + oracle.csv); the
    plot shows sup_t of each order's norm against N with the CSV's own bound
    column overlaid.  Single-point series are drawn as scatter without a
    fitted trend and noted in the warnings.
    Returns the plotted arrays, annotated slopes, and warnings.
    """
    from .loading import load_manifest

    series = {}  # n -> list of (N, sup_norm, sup_bound)
    for rd in run_dirs:
        man = load_manifest(rd)
        cols = read_csv(
            Path(rd) / "oracle.csv", required=("t", "n", "corr_norm", "bound")
        )
        N = man.config["N"]
        for n in sorted(set(int(v) for v in cols["n"])):
            sel = [i for i in range(len(cols["n"])) if int(cols["n"][i]) == n]
            sup_norm = max(cols["corr_norm"][i] for i in sel)
            bound = max(cols["bound"][i] for i in sel)
            series.setdefault(n, []).append((N, sup_norm, bound))
    warnings = []
    out = {"orders": {}, "warnings": warnings}
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for j, n in enumerate(sorted(series)):
            pts = sorted(series[n])
            Ns = [p[0] for p in pts]
            norms = [p[1] for p in pts]
            bounds = [p[2] for p in pts]
            color = _COLORS[j % len(_COLORS)]
            slope = None
            if len(pts) >= 2 and min(norms) > 0:
                slope = _fit_loglog(Ns, norms)
                label = f"n={n} (slope {slope:+.2f})"
            else:
                warnings.append(f"order {n}: single point, drawn without a fit")
                label = f"n={n}"
            ax.plot(Ns, norms, "o" + ("-" if len(pts) > 1 else ""), color=color, label=label)
            ax.plot(Ns, bounds, "--", color=color, alpha=0.5)
            out["orders"][n] = {
                "N": Ns,
                "sup_norm": norms,
                "bound": bounds,
                "slope": slope,
            }
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("N")
        ax.set_ylabel("sup_t correlation norm")
        ax.set_title("ladder decay (dashed: a priori bound)")
        ax.legend(fontsize=7)
        fig.savefig(out_path)
        plt.close(fig)
    out["figure"] = str(out_path)
    return out


def make_hierarchy_plot(hierarchy_csv, out_path):
    """Residual trends per order and the generating-function curves."""
    cols = read_csv(
        hierarchy_csv, required=("t", "n", "residual", "projected_residual", "lambda_f")
    )
    z_cols = [c for c in cols if c.startswith("Z_r")]
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    data = {"residual": {}, "Z": {}, "lambda_f": None}
    with plt.rc_context(_STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 4.0))
        for j, n in enumerate(sorted(set(int(v) for v in cols["n"]))):
            sel = [i for i in range(len(cols["n"])) if int(cols["n"][i]) == n]
            sel.sort(key=lambda i: cols["t"][i])
            t = [cols["t"][i] for i in sel]
            r = [cols["residual"][i] for i in sel]
            p = [cols["projected_residual"][i] for i in sel]
            data["residual"][n] = {"t": t, "residual": r, "projected": p}
            color = _COLORS[j % len(_COLORS)]
            ax1.plot(t, r, "-o", color=color, label=f"n={n}")
            ax1.plot(t, p, ":", color=color)
        ax1.set_xlabel("t")
        ax1.set_ylabel("residual (dotted: projected)")
        ax1.set_yscale("log")
        ax1.legend(fontsize=7)
        seen = sorted({cols["t"][i] for i in range(len(cols["t"]))})
        first_rows = {}
        for i in range(len(cols["t"])):
            first_rows.setdefault(cols["t"][i], i)
        tgrid = seen
        lam = [cols["lambda_f"][first_rows[t]] for t in tgrid]
        data["lambda_f"] = {"t": tgrid, "lambda_f": lam}
        for zc in z_cols:
            z = [cols[zc][first_rows[t]] for t in tgrid]
            data["Z"][zc] = {"t": tgrid, "Z": z}
            ax2.plot(tgrid, z, "-o", label=zc)
        ax2.plot(tgrid, lam, "--k", label="coupling norm")
        ax2.set_xlabel("t")
        ax2.legend(fontsize=7)
        fig.savefig(out_path)
        plt.close(fig)
    data["figure"] = str(out_path)
    return data


def make_diagnostics_plot(diagnostics_csv, out_path):
    """Mass defect, Fisher information and coupling norm over time."""
    cols = read_csv(diagnostics_csv, required=("t", "mass", "fisher", "lambda_f"))
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        t = cols["t"]
        ax.plot(t, np.abs(np.asarray(cols["mass"]) - 1.0), "-o", label="|mass - 1|")
        ax.plot(t, cols["fisher"], "-s", label="fisher")
        lam = np.asarray(cols["lambda_f"], dtype=float)
        if np.all(np.isfinite(lam)):
            ax.plot(t, lam, "-^", label="coupling norm")
        ax.set_xlabel("t")
        ax.set_yscale("log")
        ax.legend(fontsize=7)
        fig.savefig(out_path)
        plt.close(fig)
    return {"figure": str(out_path), "t": t, "mass": cols["mass"], "fisher": cols["fisher"]}
