"""Metrics for a solved game, and the tables and figures written from them.

Text formats carry a ``dr-stackelberg v1`` header comment; see
``docs/formats.md`` for the column layouts.
"""

from __future__ import annotations

import csv
import io
from typing import Sequence

import numpy as np

from .model import (
    CallVector,
    Scenario,
    ShiftVector,
    SolutionReport,
    SolverDiagnostics,
    bill_and_reward,
    call_variance,
    follower_objective,
    leader_objective,
)

FORMAT_TAG = "dr-stackelberg v1"
COMPLIANCE_RTOL = 1e-6

CSV_COLUMNS = (
    "id",
    "baseline",
    "call",
    "shift_fraction",
    "shifted_kwh",
    "compliance",
    "bill",
    "reward",
)
FIGURE_COLUMNS = ("series", "consumer", "baseline", "call", "shifted_kwh")
SWEEP_COLUMNS = ("gamma", "achieved_kwh", "commission", "call_variance")


def is_full_compliance(shifted_kwh: float, call: float) -> bool:
    return abs(shifted_kwh - call) <= COMPLIANCE_RTOL * max(1.0, call)


def build_report(
    scenario: Scenario,
    calls: CallVector,
    shifts: ShiftVector,
    diagnostics: SolverDiagnostics | None = None,
) -> SolutionReport:
    c = calls.as_array()
    s = shifts.as_array()
    n = scenario.n
    if len(c) != n or len(s) != n:
        raise ValueError(f"expected {n} calls and shifts, got {len(c)} and {len(s)}")
    B = scenario.baselines
    kwh = s * B
    achieved = float(np.sum(kwh))
    bills, rewards = zip(*(bill_and_reward(scenario, i, float(s[i])) for i in range(n)))
    return SolutionReport(
        calls=calls,
        shifts=shifts,
        leader_objective=leader_objective(scenario, c, s),
        follower_objectives=tuple(follower_objective(scenario, i, float(s[i])) for i in range(n)),
        bills=tuple(bills),
        rewards=tuple(rewards),
        commission=scenario.commission_coef * achieved,
        achieved_kwh=achieved,
        achievement_rate=achieved / scenario.target,
        call_variance=call_variance(c),
        compliance=tuple(is_full_compliance(float(kwh[i]), float(c[i])) for i in range(n)),
        solver=diagnostics or SolverDiagnostics(method="external"),
        baselines=tuple(float(b) for b in B),
    )


def fmt(x: float) -> str:
    """Six significant digits; negative zero prints as 0."""
    text = f"{float(x):.6g}"
    return "0" if text == "-0" else text


def _writer(buf):
    return csv.writer(buf, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)


def _table(columns, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {FORMAT_TAG}\r\n")
    w = _writer(buf)
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def to_csv(report: SolutionReport) -> str:
    """Per-consumer table with a ``total`` footer row."""
    calls = report.calls.calls
    shifts = report.shifts.shifts
    kwh = report.shifted_kwh
    rows = []
    for i, b in enumerate(report.baselines):
        rows.append(
            [
                i,
                fmt(b),
                fmt(calls[i]),
                fmt(shifts[i]),
                fmt(kwh[i]),
                "full" if report.compliance[i] else "partial",
                fmt(report.bills[i]),
                fmt(report.rewards[i]),
            ]
        )
    rows.append(
        [
            "total",
            fmt(sum(report.baselines)),
            fmt(sum(calls)),
            "",
            fmt(sum(kwh)),
            "",
            fmt(sum(report.bills)),
            fmt(sum(report.rewards)),
        ]
    )
    return _table(CSV_COLUMNS, rows)


def sweep_csv(points: Sequence[tuple[float, SolutionReport]]) -> str:
    rows = [
        [fmt(g), fmt(r.achieved_kwh), fmt(r.commission), fmt(r.call_variance)]
        for g, r in points
    ]
    return _table(SWEEP_COLUMNS, rows)


# -- figures ---------------------------------------------------------------------

BAR_COLORS = ("#9e9e9e", "#1f77b4", "#ff7f0e")
BAR_NAMES = ("baseline", "call", "shifted")
PANEL_W, PANEL_H = 640, 240
MARGIN_L, MARGIN_T, MARGIN_B = 56, 28, 36


def _f(x: float) -> str:
    return f"{x:.2f}"


def _nice_max(v: float) -> float:
    if v <= 0:
        return 1.0
    mag = 10 ** np.floor(np.log10(v))
    for m in (1, 2, 2.5, 5, 10):
        if m * mag >= v:
            return float(m * mag)
    return float(10 * mag)


def _panel(report: SolutionReport, label: str, top: float, ymax: float) -> list[str]:
    n = len(report.baselines)
    plot_w = PANEL_W - MARGIN_L - 16
    plot_h = PANEL_H - MARGIN_T - MARGIN_B
    y0 = top + MARGIN_T + plot_h
    group_w = plot_w / n
    bar_w = group_w * 0.8 / 3
    out = ['<g class="series">', f'<text x="{MARGIN_L}" y="{_f(top + 18)}" font-size="13">{_escape(label)}</text>']
    out.append(
        f'<line x1="{MARGIN_L}" y1="{_f(y0)}" x2="{MARGIN_L + plot_w}" y2="{_f(y0)}" stroke="#000"/>'
    )
    for k in range(5):
        v = ymax * k / 4
        y = y0 - plot_h * k / 4
        out.append(
            f'<text x="{MARGIN_L - 4}" y="{_f(y + 4)}" font-size="10" text-anchor="end">{fmt(v)}</text>'
        )
    values = zip(report.baselines, report.calls.calls, report.shifted_kwh)
    for i, triple in enumerate(values):
        gx = MARGIN_L + i * group_w + group_w * 0.1
        for j, v in enumerate(triple):
            h = plot_h * max(v, 0.0) / ymax
            out.append(
                f'<rect x="{_f(gx + j * bar_w)}" y="{_f(y0 - h)}" width="{_f(bar_w)}"'
                f' height="{_f(h)}" fill="{BAR_COLORS[j]}"/>'
            )
        out.append(
            f'<text x="{_f(gx + 1.5 * bar_w)}" y="{_f(y0 + 14)}" font-size="10"'
            f' text-anchor="middle">{i}</text>'
        )
    out.append("</g>")
    return out


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def to_svg(reports: Sequence[SolutionReport], labels: Sequence[str]) -> str:
    ymax = _nice_max(
        max(max(max(r.baselines), max(r.calls.calls), max(r.shifted_kwh)) for r in reports)
    )
    height = PANEL_H * len(reports) + 24
    lines = [
        f"<!-- {FORMAT_TAG} -->",
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W}" height="{height}"'
        f' viewBox="0 0 {PANEL_W} {height}" font-family="sans-serif">',
        f'<rect width="{PANEL_W}" height="{height}" fill="#fff"/>',
    ]
    for k, (r, label) in enumerate(zip(reports, labels)):
        lines += _panel(r, label, k * PANEL_H, ymax)
    # legend
    y = PANEL_H * len(reports) + 8
    for j, (name, color) in enumerate(zip(BAR_NAMES, BAR_COLORS)):
        x = MARGIN_L + j * 110
        lines.append(f'<rect x="{x}" y="{y}" width="12" height="12" fill="{color}"/>')
        lines.append(f'<text x="{x + 16}" y="{y + 10}" font-size="11">{name} (kWh)</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def to_figure_data(reports, labels: Sequence[str] | None = None) -> tuple[str, str]:
    """Grouped bars (baseline, call, shifted) per consumer, as ``(csv, svg)``.

    Several reports give one panel each, stacked vertically on a shared scale.
    """
    if isinstance(reports, SolutionReport):
        reports = [reports]
    reports = list(reports)
    if not reports:
        raise ValueError("at least one report is required")
    if labels is None:
        labels = [f"series {k}" for k in range(len(reports))]
    labels = list(labels)
    if len(labels) != len(reports):
        raise ValueError("one label per report is required")
    rows = []
    for label, r in zip(labels, reports):
        for i, (b, c, t) in enumerate(zip(r.baselines, r.calls.calls, r.shifted_kwh)):
            rows.append([label, i, fmt(b), fmt(c), fmt(t)])
    return _table(FIGURE_COLUMNS, rows), to_svg(reports, labels)
