"""Render a campaign summary to JSON, CSV tables, a text digest, and SVG figures.

Everything written here is a pure function of the summary object: no
timestamps, no environment lookups, no dict iteration over unsorted inputs.
Rendering the same summary twice produces byte-identical files. JSON keeps
full float precision; CSV and text display values rounded to three decimals
with absent cells shown as an em dash placeholder ("--") next to their
counts.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .analysis import CampaignSummary, DosePoint

ABSENT = "--"


def _fmt(value: object, digits: int = 3) -> str:
    if value is None:
        return ABSENT
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        if math.isnan(value):
            return ABSENT
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.{digits}f}"
    return str(value)


def _fmt_p(p: float | None) -> str:
    if p is None:
        return ABSENT
    if p != 0 and p < 1e-3:
        return f"{p:.2e}"
    return f"{p:.3f}"


def _json_default(obj: object) -> object:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return dataclasses.asdict(obj)
    if isinstance(obj, frozenset):
        return sorted(obj)
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _text_table(title: str, header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [len(h) for h in header]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))

    def line(cells: Sequence[str]) -> str:
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()

    rule = "-" * len(line(header))
    body = [title, rule, line(header), rule]
    body.extend(line(r) for r in rows)
    body.append("")
    return "\n".join(body)


def _attack_rows(summary: CampaignSummary) -> tuple[list[str], list[list[str]]]:
    header = [
        "condition", "n", "mean_ade_m", "mean_delta_ade_m", "coc_change_rate",
        "exceed_rate", "p_value", "p_adjusted", "significant", "cohens_dz",
    ]
    rows = [
        [
            r.condition, str(r.n), _fmt(r.mean_ade), _fmt(r.mean_delta_ade),
            _fmt(r.coc_change_rate), _fmt(r.exceed_rate), _fmt_p(r.p_value),
            _fmt_p(r.p_adjusted), _fmt(r.significant), _fmt(r.cohens_dz),
        ]
        for r in summary.attack_table
    ]
    return header, rows


def _dose_rows(summary: CampaignSummary) -> tuple[list[str], list[list[str]]]:
    header = ["sigma", "n", "mean_ade_m", "ci_lo", "ci_hi", "mean_delta_ade_m"]
    points = summary.dose_response.points if summary.dose_response else ()
    rows = [
        [_fmt(p.sigma, 1), str(p.n), _fmt(p.mean_ade), _fmt(p.ci_lo), _fmt(p.ci_hi), _fmt(p.mean_delta_ade)]
        for p in points
    ]
    return header, rows


def _fit_rows(summary: CampaignSummary) -> tuple[list[str], list[list[str]]]:
    header = ["family", "aic", "delta_aic", "r_squared"]
    rows: list[list[str]] = []
    dr = summary.dose_response
    if dr is not None:
        for family, aic, delta in dr.ranking:
            rows.append([family, _fmt(aic), _fmt(delta), _fmt(dr.fits[family].r_squared)])
        for family in sorted(dr.fit_failures):
            rows.append([family, ABSENT, ABSENT, ABSENT])
    return header, rows


def _partition_rows(summary: CampaignSummary) -> tuple[list[str], list[list[str]]]:
    header = ["group", "n", "mean_l2_m", "median_l2_m"]
    p = summary.partition
    if p is None:
        return header, []
    rows = [
        ["coc_changed", str(p.n_changed), _fmt(p.mean_changed), _fmt(p.median_changed)],
        ["coc_unchanged", str(p.n_unchanged), _fmt(p.mean_unchanged), _fmt(p.median_unchanged)],
        ["ratio", "", _fmt(p.mean_ratio), _fmt(p.median_ratio)],
    ]
    return header, rows


def _biserial_rows(summary: CampaignSummary) -> tuple[list[str], list[list[str]]]:
    header = ["condition", "n", "n_changed", "r_pb", "mean_l2_changed", "mean_l2_unchanged", "ratio"]
    rows = [
        [
            r.condition, str(r.n), str(r.n_changed), _fmt(r.r_pb),
            _fmt(r.mean_l2_changed), _fmt(r.mean_l2_unchanged), _fmt(r.ratio),
        ]
        for r in summary.biserial
    ]
    return header, rows


def _monitor_rows(summary: CampaignSummary) -> tuple[list[str], list[list[str]]]:
    header = ["condition", "n", "tp", "fp", "fn", "tn", "precision", "recall", "fpr", "auroc"]
    labels = sorted(k for k in summary.monitor if k != "aggregate")
    if "aggregate" in summary.monitor:
        labels.append("aggregate")
    rows = []
    for label in labels:
        m = summary.monitor[label]
        rows.append(
            [
                label, str(m.n), str(m.tp), str(m.fp), str(m.fn), str(m.tn),
                _fmt(m.precision), _fmt(m.recall), _fmt(m.fpr), _fmt(m.auroc),
            ]
        )
    return header, rows


def _ablation_rows(summary: CampaignSummary) -> tuple[list[str], list[list[str]]]:
    header = [
        "condition", "n", "ade_with_coc_m", "ade_without_coc_m", "delta_m",
        "pct_improvement", "cohens_dz", "p_t", "p_wilcoxon",
    ]
    rows = [
        [
            r.condition, str(r.n), _fmt(r.ade_with), _fmt(r.ade_without), _fmt(r.delta),
            _fmt(r.pct_improvement, 1), _fmt(r.cohens_dz), _fmt_p(r.p_t), _fmt_p(r.p_wilcoxon),
        ]
        for r in summary.ablation
    ]
    avg = summary.ablation_averages
    if avg is not None:
        rows.append(
            [
                "average", "", _fmt(avg.mean_ade_with), _fmt(avg.mean_ade_without),
                _fmt(avg.mean_delta), _fmt(avg.mean_pct_improvement, 1),
                _fmt(avg.mean_cohens_dz), "", "",
            ]
        )
    return header, rows


def _defense_rows(summary: CampaignSummary) -> tuple[list[str], list[list[str]]]:
    conditions: list[str] = []
    for row in summary.defense_table:
        for c in row.mean_l2_by_condition:
            if c not in conditions:
                conditions.append(c)
    header = ["defense"] + conditions + ["avg_delta_vs_none"]
    rows = [
        [row.defense]
        + [_fmt(row.mean_l2_by_condition.get(c)) for c in conditions]
        + [_fmt(row.avg_delta_vs_none)]
        for row in summary.defense_table
    ]
    return header, rows


def _severity_rows(summary: CampaignSummary) -> tuple[list[str], list[list[str]]]:
    header = ["defense", "bucket", "n_pairs", "mean_undefended_l2", "mean_defended_l2", "delta"]
    rows: list[list[str]] = []
    names = sorted(k for k in summary.severity_defense if k != "all")
    if "all" in summary.severity_defense:
        names.append("all")
    for name in names:
        for bucket in summary.severity_defense[name]:
            rows.append(
                [
                    name, bucket.bucket, str(bucket.n_pairs),
                    _fmt(bucket.mean_undefended), _fmt(bucket.mean_defended), _fmt(bucket.delta),
                ]
            )
    return header, rows


def _heatmap_rows(summary: CampaignSummary) -> tuple[list[str], list[list[str]]]:
    header = ["category", "condition", "n", "mean_delta_ade_m"]
    rows = [
        [c.category, c.condition, str(c.n), _fmt(c.mean_delta_ade)]
        for c in summary.heatmap
    ]
    return header, rows


def _baseline_rows(summary: CampaignSummary) -> tuple[list[str], list[list[str]]]:
    header = ["n", "baseline_mean_ade_m", "model_mean_ade_m", "improvement_pct", "t", "p_value"]
    b = summary.baseline
    if b is None:
        return header, []
    return header, [
        [str(b.n), _fmt(b.baseline_mean_ade), _fmt(b.model_mean_ade), _fmt(b.improvement_pct, 1), _fmt(b.t), _fmt_p(b.p_value)]
    ]


def _failure_rows(summary: CampaignSummary) -> tuple[list[str], list[list[str]]]:
    header = [
        "condition", "n_flips", "action_word_change", "object_reference_change",
        "shifted_focus", "paraphrase_only", "action_or_object_rate",
    ]
    rows = [
        [
            f.condition, str(f.n_flips),
            _fmt(f.fractions.get("action_word_change")),
            _fmt(f.fractions.get("object_reference_change")),
            _fmt(f.fractions.get("shifted_focus")),
            _fmt(f.fractions.get("paraphrase_only")),
            _fmt(f.action_or_object_rate),
        ]
        for f in summary.failure_modes
    ]
    return header, rows


def _cross_attack_rows(summary: CampaignSummary) -> tuple[list[str], list[list[str]]]:
    header = ["n_failing_attacks", "n_clips"]
    ca = summary.cross_attack
    if ca is None:
        return header, []
    rows = [[str(k), str(ca.distribution[k])] for k in sorted(ca.distribution)]
    rows.append([f">={ca.k}", _fmt(ca.fraction_at_k)])
    return header, rows


_TABLES = {
    "attack_table": _attack_rows,
    "dose_response": _dose_rows,
    "dose_fits": _fit_rows,
    "partition": _partition_rows,
    "biserial": _biserial_rows,
    "monitor": _monitor_rows,
    "ablation": _ablation_rows,
    "defense": _defense_rows,
    "severity_defense": _severity_rows,
    "heatmap": _heatmap_rows,
    "baseline": _baseline_rows,
    "failure_modes": _failure_rows,
    "cross_attack": _cross_attack_rows,
}

_TITLES = {
    "attack_table": "Per-attack trajectory impact",
    "dose_response": "Noise dose-response (mean ADE vs sigma)",
    "dose_fits": "Dose-response model selection (AIC)",
    "partition": "L2 deviation partitioned by CoC flip",
    "biserial": "Per-attack point-biserial (flip vs L2)",
    "monitor": "CoC-flip monitor confusion and discrimination",
    "ablation": "CoC ablation (with vs without reasoning)",
    "defense": "Mean L2 deviation under input defenses",
    "severity_defense": "Defense delta conditioned on undefended severity",
    "heatmap": "Mean delta-ADE by scenario category and attack",
    "baseline": "Model vs constant-velocity baseline (clean)",
    "failure_modes": "CoC failure-mode distribution among flips",
    "cross_attack": "Clips failing under k attacks",
}


# Figures ------------------------------------------------------------------


def _svg(width: int, height: int, body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
    )
    return head + "\n".join(body) + "\n</svg>\n"


def _num(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def dose_response_svg(summary: CampaignSummary) -> str:
    dr = summary.dose_response
    width, height = 560, 400
    if dr is None or not dr.points:
        return _svg(width, height, ['<text x="40" y="60" font-size="14">no noise records</text>'])
    left, right, top, bottom = 70, 30, 40, 60
    pw, ph = width - left - right, height - top - bottom
    points: Sequence[DosePoint] = dr.points
    xs = [p.sigma for p in points]
    y_all = [v for p in points for v in (p.ci_lo, p.ci_hi, p.mean_ade)]
    x_max = max(xs) * 1.1
    y_min, y_max = min(y_all), max(y_all)
    pad = 0.1 * (y_max - y_min) if y_max > y_min else max(0.1 * abs(y_max), 0.1)
    y_min, y_max = y_min - pad, y_max + pad

    def sx(x: float) -> float:
        return left + pw * x / x_max

    def sy(y: float) -> float:
        return top + ph * (1 - (y - y_min) / (y_max - y_min))

    body = [
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
        f'<text x="{left + pw / 2:.1f}" y="{height - 15}" font-size="13" text-anchor="middle">noise sigma</text>',
        f'<text x="18" y="{top + ph / 2:.1f}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 18 {top + ph / 2:.1f})">mean ADE (m)</text>',
        f'<text x="{left + pw / 2:.1f}" y="24" font-size="14" text-anchor="middle">Dose-response with 95% bootstrap CI</text>',
    ]
    for p in points:
        body.append(
            f'<text x="{sx(p.sigma):.1f}" y="{top + ph + 18}" font-size="11" text-anchor="middle">{_num(p.sigma)}</text>'
        )
    ticks = 5
    for i in range(ticks + 1):
        y = y_min + (y_max - y_min) * i / ticks
        body.append(
            f'<text x="{left - 8}" y="{sy(y) + 4:.1f}" font-size="11" text-anchor="end">{y:.2f}</text>'
        )
    if dr.ols is not None:
        b0, b1 = dr.ols.params
        y0, y1 = b0, b0 + b1 * x_max
        body.append(
            f'<line x1="{sx(0):.1f}" y1="{sy(y0):.1f}" x2="{sx(x_max):.1f}" y2="{sy(y1):.1f}" '
            f'stroke="#888" stroke-dasharray="5 4"/>'
        )
        body.append(
            f'<text x="{left + pw - 4}" y="{top + 16}" font-size="11" text-anchor="end">'
            f"slope={b1:.4f} m/sigma, R2={dr.ols.r_squared:.3f}</text>"
        )
    for p in points:
        x = sx(p.sigma)
        body.append(
            f'<line x1="{x:.1f}" y1="{sy(p.ci_lo):.1f}" x2="{x:.1f}" y2="{sy(p.ci_hi):.1f}" stroke="#1f5fa6" stroke-width="1.5"/>'
        )
        for bound in (p.ci_lo, p.ci_hi):
            body.append(
                f'<line x1="{x - 5:.1f}" y1="{sy(bound):.1f}" x2="{x + 5:.1f}" y2="{sy(bound):.1f}" stroke="#1f5fa6" stroke-width="1.5"/>'
            )
    poly = " ".join(f"{sx(p.sigma):.1f},{sy(p.mean_ade):.1f}" for p in points)
    body.append(f'<polyline points="{poly}" fill="none" stroke="#1f5fa6" stroke-width="2"/>')
    for p in points:
        body.append(f'<circle cx="{sx(p.sigma):.1f}" cy="{sy(p.mean_ade):.1f}" r="4" fill="#1f5fa6"/>')
    return _svg(width, height, body)


def partition_svg(summary: CampaignSummary) -> str:
    width, height = 420, 360
    p = summary.partition
    if p is None or p.mean_changed is None or p.mean_unchanged is None:
        return _svg(width, height, ['<text x="40" y="60" font-size="14">partition unavailable</text>'])
    left, top, bottom = 70, 50, 70
    ph = height - top - bottom
    y_max = max(p.mean_changed, p.mean_unchanged) * 1.15
    bars = [
        ("CoC unchanged", p.mean_unchanged, p.n_unchanged, "#7aa6c9"),
        ("CoC changed", p.mean_changed, p.n_changed, "#c85a54"),
    ]
    body = [
        f'<text x="{width / 2:.0f}" y="26" font-size="14" text-anchor="middle">Mean L2 deviation by CoC stability</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{width - 40}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for i in range(6):
        y = y_max * i / 5
        yy = top + ph * (1 - y / y_max)
        body.append(f'<text x="{left - 8}" y="{yy + 4:.1f}" font-size="11" text-anchor="end">{y:.1f}</text>')
    bar_w = 90
    for i, (name, value, n, color) in enumerate(bars):
        x = left + 40 + i * (bar_w + 60)
        h = ph * value / y_max
        y = top + ph - h
        body.append(f'<rect x="{x}" y="{y:.1f}" width="{bar_w}" height="{h:.1f}" fill="{color}"/>')
        body.append(
            f'<text x="{x + bar_w / 2:.1f}" y="{y - 6:.1f}" font-size="12" text-anchor="middle">{value:.2f} m</text>'
        )
        body.append(
            f'<text x="{x + bar_w / 2:.1f}" y="{top + ph + 18}" font-size="12" text-anchor="middle">{name}</text>'
        )
        body.append(
            f'<text x="{x + bar_w / 2:.1f}" y="{top + ph + 34}" font-size="11" text-anchor="middle">n={n}</text>'
        )
    if p.mean_ratio is not None:
        body.append(
            f'<text x="{width / 2:.0f}" y="{height - 12}" font-size="12" text-anchor="middle">'
            f"mean ratio {p.mean_ratio:.1f}x</text>"
        )
    return _svg(width, height, body)


def heatmap_svg(summary: CampaignSummary) -> str:
    cells = summary.heatmap
    if not cells:
        return _svg(420, 200, ['<text x="40" y="60" font-size="14">no heatmap cells</text>'])
    categories: list[str] = []
    conditions: list[str] = []
    for c in cells:
        if c.category not in categories:
            categories.append(c.category)
        if c.condition not in conditions:
            conditions.append(c.condition)
    cell_w, cell_h, left, top = 64, 34, 170, 90
    width = left + cell_w * len(conditions) + 30
    height = top + cell_h * len(categories) + 40
    values = {(c.category, c.condition): c.mean_delta_ade for c in cells}
    v_max = max(abs(c.mean_delta_ade) for c in cells) or 1.0

    def color(v: float) -> str:
        # white at zero to a saturated red at the max observed |delta ADE|
        frac = min(abs(v) / v_max, 1.0)
        g = int(round(255 - 195 * frac))
        return f"rgb(255,{g},{g})" if v >= 0 else f"rgb({g},{g},255)"

    body = [
        f'<text x="{left + cell_w * len(conditions) / 2:.0f}" y="26" font-size="14" '
        f'text-anchor="middle">Mean delta-ADE (m) by category and attack</text>'
    ]
    for j, cond in enumerate(conditions):
        x = left + j * cell_w + cell_w / 2
        body.append(
            f'<text x="{x:.1f}" y="{top - 8}" font-size="10" text-anchor="end" '
            f'transform="rotate(-35 {x:.1f} {top - 8})">{cond}</text>'
        )
    for i, cat in enumerate(categories):
        y = top + i * cell_h
        body.append(
            f'<text x="{left - 8}" y="{y + cell_h / 2 + 4:.1f}" font-size="11" text-anchor="end">{cat}</text>'
        )
        for j, cond in enumerate(conditions):
            x = left + j * cell_w
            v = values.get((cat, cond))
            if v is None:
                body.append(
                    f'<rect x="{x}" y="{y}" width="{cell_w - 2}" height="{cell_h - 2}" fill="#eee"/>'
                )
                body.append(
                    f'<text x="{x + cell_w / 2 - 1:.1f}" y="{y + cell_h / 2 + 4:.1f}" font-size="11" '
                    f'text-anchor="middle">{ABSENT}</text>'
                )
            else:
                body.append(
                    f'<rect x="{x}" y="{y}" width="{cell_w - 2}" height="{cell_h - 2}" fill="{color(v)}"/>'
                )
                body.append(
                    f'<text x="{x + cell_w / 2 - 1:.1f}" y="{y + cell_h / 2 + 4:.1f}" font-size="11" '
                    f'text-anchor="middle">{v:.2f}</text>'
                )
    return _svg(width, height, body)


def write_report(summary: CampaignSummary, out_dir: str | Path) -> dict[str, Path]:
    """Write summary.json, tables/*.csv, tables.txt, and figures/*.svg.

    Returns a name-to-path map of everything written.
    """
    out = Path(out_dir)
    tables_dir = out / "tables"
    figures_dir = out / "figures"
    tables_dir.mkdir(parents=True, exist_ok=True)
    figures_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}

    summary_path = out / "summary.json"
    with open(summary_path, "w") as fh:
        json.dump(summary.to_dict(), fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    written["summary"] = summary_path

    digest: list[str] = [
        f"records: {summary.n_records}   clips: {summary.n_clips}   seed: {summary.seed}",
        f"unsafe threshold: {summary.unsafe_threshold_m} m",
        "",
    ]
    for name, builder in _TABLES.items():
        header, rows = builder(summary)
        path = tables_dir / f"{name}.csv"
        _write_csv(path, header, rows)
        written[name] = path
        if rows:
            digest.append(_text_table(_TITLES[name], header, rows))
    if summary.category_counts:
        digest.append(
            _text_table(
                "Clips per scenario category",
                ["category", "n_clips"],
                [[k, str(v)] for k, v in summary.category_counts.items()],
            )
        )
    text_path = out / "tables.txt"
    with open(text_path, "w") as fh:
        fh.write("\n".join(digest))
    written["tables_txt"] = text_path

    for name, render in (
        ("dose_response", dose_response_svg),
        ("partition", partition_svg),
        ("heatmap", heatmap_svg),
    ):
        path = figures_dir / f"{name}.svg"
        with open(path, "w") as fh:
            fh.write(render(summary))
        written[f"figure_{name}"] = path
    return written
