"""Assemble a Markdown or HTML summary of one or many run directories."""

from __future__ import annotations

import html
import json
from pathlib import Path

from . import plots
from .loading import MissingManifest, ReportError, load_manifest, read_csv


def discover_runs(root) -> list:
    """The root itself if it is a run directory, else its run subdirectories."""
    root = Path(root)
    if (root / "manifest.json").exists():
        return [root]
    runs = sorted(p.parent for p in root.glob("*/manifest.json"))
    if not runs:
        raise MissingManifest(f"no manifest.json under {root} or its children")
    return runs


def _suite_table(run_dir) -> list:
    suite = json.loads((Path(run_dir) / "suite.json").read_text())
    rows = []
    for name in sorted(suite):
        c = suite[name]
        rows.append(
            (
                name,
                "PASS" if c["pass"] else "FAIL",
                c["value"],
                c["sense"],
                c["threshold"],
            )
        )
    return rows


def _section_for_run(run_dir, fig_dir) -> dict:
    man = load_manifest(run_dir)
    section = {
        "kind": man.kind,
        "run_dir": str(run_dir),
        "run_hash": man.raw.get("run_hash", ""),
        "figures": [],
        "tables": {},
        "warnings": [],
        "notes": man.notes,
    }
    fig_dir = Path(fig_dir)
    stem = f"{man.kind}-{man.raw.get('run_hash', 'run')}"
    try:
        if man.kind == "chaos":
            rate = plots.make_rate_plot(
                Path(run_dir) / "results.csv",
                fig_dir / f"{stem}-rate.png",
                ratefits_csv=Path(run_dir) / "ratefits.csv",
            )
            section["figures"] += rate["figures"]
            section["tables"]["rate_slopes"] = [
                ("k", "t", "slope")
            ] + [
                (int(k), t, panel["slope"])
                for k, by_t in rate["panels"].items()
                for t, panel in sorted(by_t.items())
            ]
        elif man.kind == "oracle":
            lad = plots.make_ladder_plot([run_dir], fig_dir / f"{stem}-ladder.png")
            section["figures"].append(lad["figure"])
            section["warnings"] += lad["warnings"]
            if (Path(run_dir) / "suite.json").exists():
                section["tables"]["suite"] = [
                    ("check", "status", "value", "sense", "threshold")
                ] + _suite_table(run_dir)
        elif man.kind == "hierarchy":
            h = plots.make_hierarchy_plot(
                Path(run_dir) / "hierarchy.csv", fig_dir / f"{stem}-hierarchy.png"
            )
            section["figures"].append(h["figure"])
        elif man.kind == "meanfield":
            d = plots.make_diagnostics_plot(
                Path(run_dir) / "diagnostics.csv", fig_dir / f"{stem}-diagnostics.png"
            )
            section["figures"].append(d["figure"])
        elif man.kind == "simulate":
            cols = read_csv(Path(run_dir) / "trajectories.csv")
            names = sorted(set(cols["observable_name"]))
            section["tables"]["observables"] = [("observable", "rows")] + [
                (nm, sum(1 for v in cols["observable_name"] if v == nm)) for nm in names
            ]
    except ReportError as exc:
        section["warnings"].append(str(exc))
    return section


def render_markdown(sections) -> str:
    lines = ["# Run report", ""]
    for s in sections:
        lines.append(f"## {s['kind']} ({s['run_hash']})")
        lines.append("")
        lines.append(f"source: `{s['run_dir']}`")
        lines.append("")
        for name, table in s["tables"].items():
            lines.append(f"### {name}")
            header, *rows = table
            lines.append("| " + " | ".join(str(h) for h in header) + " |")
            lines.append("|" + "---|" * len(header))
            for row in rows:
                lines.append(
                    "| "
                    + " | ".join(
                        f"{v:.6g}" if isinstance(v, float) else str(v) for v in row
                    )
                    + " |"
                )
            lines.append("")
        for fig in s["figures"]:
            lines.append(f"![{Path(fig).stem}]({fig})")
            lines.append("")
        for w in s["warnings"]:
            lines.append(f"> warning: {w}")
            lines.append("")
    return "\n".join(lines)


def render_html(sections) -> str:
    parts = ["<html><head><title>Run report</title></head><body>", "<h1>Run report</h1>"]
    for s in sections:
        parts.append(f"<h2>{html.escape(s['kind'])} ({html.escape(s['run_hash'])})</h2>")
        parts.append(f"<p>source: <code>{html.escape(s['run_dir'])}</code></p>")
        for name, table in s["tables"].items():
            parts.append(f"<h3>{html.escape(name)}</h3><table border='1'>")
            header, *rows = table
            parts.append(
                "<tr>" + "".join(f"<th>{html.escape(str(h))}</th>" for h in header) + "</tr>"
            )
            for row in rows:
                parts.append(
                    "<tr>"
                    + "".join(
                        "<td>%s</td>"
                        % html.escape(f"{v:.6g}" if isinstance(v, float) else str(v))
                        for v in row
                    )
                    + "</tr>"
                )
            parts.append("</table>")
        for fig in s["figures"]:
            parts.append(f"<img src='{html.escape(str(fig))}' width='640'/>")
        for w in s["warnings"]:
            parts.append(f"<p><em>warning: {html.escape(w)}</em></p>")
    parts.append("</body></html>")
    return "\n".join(parts)


def make_report(root_dir, out_dir=None, fmt="md") -> Path:
    """Build the report for a run directory (or a directory of runs)."""
    runs = discover_runs(root_dir)
    out_dir = Path(out_dir) if out_dir else Path(root_dir) / "report"
    out_dir.mkdir(parents=True, exist_ok=True)
    sections = [_section_for_run(r, out_dir / "figures") for r in runs]
    if fmt == "md":
        out = out_dir / "report.md"
        out.write_text(render_markdown(sections))
    elif fmt == "html":
        out = out_dir / "report.html"
        out.write_text(render_html(sections))
    else:
        raise ReportError(f"unknown format {fmt!r}")
    return out
