"""Render evaluation reports to CSV tables and SVG bar charts.

One CSV per protocol plus a bar chart per figure shape: accuracy by
prompt policy for classification runs, precision@K by query for
retrieval runs. Output is plain text built in sorted order, so identical
reports produce identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .errors import SchemaMismatch
from .evaluation import EvalReport

_CLASSIFICATION_PROTOCOLS = ("zero_shot", "leave_one_out", "finetune",
                             "run_matrix")
_PALETTE = ("#4878a8", "#e49444", "#d1615d", "#85b6b2", "#6a9f58",
            "#e7ca60", "#a87c9f", "#967662")


def _load_reports(paths: list[str | Path]) -> list[tuple[str, EvalReport]]:
    if not paths:
        raise SchemaMismatch("no report files given")
    loaded = []
    for p in paths:
        path = Path(p)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
            report = EvalReport.from_dict(doc)
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise SchemaMismatch(f"{path}: not a valid report: {exc}") from exc
        loaded.append((_report_label(path, report), report))
    return loaded


def _report_label(path: Path, report: EvalReport) -> str:
    meta = report.metadata or {}
    for key in ("policy", "held_out"):
        if meta.get(key):
            return str(meta[key])
    return path.stem


def _classification_csv(rows: list[tuple[str, EvalReport]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["report", "class", "support", "accuracy"])
    for label, report in rows:
        for cls in sorted(report.per_class):
            writer.writerow([label, cls, report.supports.get(cls, 0),
                             f"{report.per_class[cls]:.6f}"])
        writer.writerow([label, "overall", sum(report.supports.values()),
                         f"{report.accuracy:.6f}"])
    return buf.getvalue()


def _retrieval_csv(rows: list[tuple[str, EvalReport]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["report", "query", "k", "precision"])
    for label, report in rows:
        table = report.precision_at_k or {}
        for query in sorted(table):
            for k in sorted(table[query], key=int):
                writer.writerow([label, query, k,
                                 f"{table[query][k]:.6f}"])
    return buf.getvalue()


def _svg_escape(s: str) -> str:
    return (s.replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;"))


def grouped_bar_svg(title: str, group_labels: list[str],
                    series_labels: list[str],
                    values: dict[str, dict[str, float]]) -> str:
    """Grouped vertical bars; values[group][series] in [0, 1]."""
    bar_w = 18
    gap = 14
    group_w = bar_w * max(1, len(series_labels)) + gap
    margin_left, margin_top = 50, 40
    plot_h = 220
    width = margin_left + group_w * max(1, len(group_labels)) + 180
    height = margin_top + plot_h + 110

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" font-family="sans-serif" font-size="11">',
        f'<text x="{margin_left}" y="20" font-size="14">'
        f'{_svg_escape(title)}</text>',
    ]
    # y axis with 0.25 gridlines
    for i in range(5):
        frac = i / 4
        y = margin_top + plot_h * (1 - frac)
        parts.append(f'<line x1="{margin_left}" y1="{y:.1f}" '
                     f'x2="{width - 160}" y2="{y:.1f}" stroke="#ddd"/>')
        parts.append(f'<text x="{margin_left - 34}" y="{y + 4:.1f}">'
                     f'{frac:.2f}</text>')
    for gi, group in enumerate(group_labels):
        x0 = margin_left + gi * group_w
        for si, series in enumerate(series_labels):
            v = max(0.0, min(1.0, values.get(group, {}).get(series, 0.0)))
            bh = plot_h * v
            x = x0 + si * bar_w
            y = margin_top + plot_h - bh
            color = _PALETTE[si % len(_PALETTE)]
            parts.append(
                f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w - 2}" '
                f'height="{bh:.1f}" fill="{color}"/>'
            )
        lx = x0 + (group_w - gap) / 2
        ly = margin_top + plot_h + 12
        parts.append(
            f'<text x="{lx:.1f}" y="{ly}" text-anchor="end" '
            f'transform="rotate(-35 {lx:.1f} {ly})">'
            f'{_svg_escape(group)}</text>'
        )
    # legend
    lx = width - 150
    for si, series in enumerate(series_labels):
        y = margin_top + si * 18
        color = _PALETTE[si % len(_PALETTE)]
        parts.append(f'<rect x="{lx}" y="{y}" width="12" height="12" '
                     f'fill="{color}"/>')
        parts.append(f'<text x="{lx + 18}" y="{y + 10}">'
                     f'{_svg_escape(series)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_reports(report_paths: list[str | Path],
                   out_dir: str | Path) -> list[Path]:
    """Write CSV tables and SVG charts for a set of report files.

    Returns the list of files written. Classification reports share an
    accuracy-by-policy chart; retrieval reports get one precision@K chart
    per K with queries on the x axis.
    """
    loaded = _load_reports(report_paths)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    by_protocol: dict[str, list[tuple[str, EvalReport]]] = {}
    for label, report in loaded:
        by_protocol.setdefault(report.protocol, []).append((label, report))

    for protocol in sorted(by_protocol):
        rows = by_protocol[protocol]
        if protocol in _CLASSIFICATION_PROTOCOLS:
            csv_text = _classification_csv(rows)
            chart = grouped_bar_svg(
                f"accuracy by run ({protocol})",
                group_labels=[label for label, _ in rows],
                series_labels=["accuracy"],
                values={label: {"accuracy": r.accuracy}
                        for label, r in rows},
            )
            files = {f"{protocol}.csv": csv_text,
                     f"{protocol}_accuracy.svg": chart}
        elif protocol == "retrieval":
            csv_text = _retrieval_csv(rows)
            files = {f"{protocol}.csv": csv_text}
            ks = sorted({
                k for _, r in rows for row in (r.precision_at_k or {}).values()
                for k in row
            }, key=int)
            queries = sorted({
                q for _, r in rows for q in (r.precision_at_k or {})
            })
            for k in ks:
                chart = grouped_bar_svg(
                    f"precision@{k} by query",
                    group_labels=queries,
                    series_labels=[label for label, _ in rows],
                    values={
                        q: {
                            label: (r.precision_at_k or {})
                            .get(q, {}).get(k, 0.0)
                            for label, r in rows
                        }
                        for q in queries
                    },
                )
                files[f"{protocol}_p_at_{k}.svg"] = chart
        else:
            raise SchemaMismatch(f"unknown protocol {protocol!r}")

        for name in sorted(files):
            path = out / name
            path.write_text(files[name], encoding="utf-8")
            written.append(path)
    return written
