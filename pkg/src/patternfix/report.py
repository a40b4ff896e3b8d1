"""Render evaluation reports: aligned tables, delimited files, figures."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .evaluation import CweRow, EvalReport, round_rate  # noqa: E402

_PNG_METADATA = {"Software": "patternfix"}  # keep PNG bytes run-independent


def _format_rows(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) if rows
              else len(header[i]) for i in range(len(header))]
    out = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    out.append("  ".join("-" * w for w in widths))
    for row in rows:
        out.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(out) + "\n"


def render_table(report: EvalReport) -> str:
    header = ["CWE ID", "CWE Name", "Success", "Total", "Rate (%)"]
    rows = [[r.cwe_id, r.cwe_name, str(r.success), str(r.total), f"{r.rate:.2f}"]
            for r in report.per_cwe]
    summary = (f"Overall: {report.em_true}/{report.n} exact matches "
               f"({round_rate(report.em_percent):.2f}%) at k={report.k}\n")
    return _format_rows(header, rows) + summary


def format_rate_change(delta: float) -> str:
    if delta > 0:
        return f"↑{delta:.2f}%"
    if delta < 0:
        return f"↓{abs(delta):.2f}%"
    return "0.00%"


def _aligned_rows(base: EvalReport, other: EvalReport) -> list[tuple[str, CweRow | None, CweRow | None]]:
    by_id_base = {r.cwe_id: r for r in base.per_cwe}
    by_id_other = {r.cwe_id: r for r in other.per_cwe}
    ordered = [r.cwe_id for r in base.per_cwe]
    ordered += [c for c in (r.cwe_id for r in other.per_cwe) if c not in by_id_base]
    return [(cwe_id, by_id_base.get(cwe_id), by_id_other.get(cwe_id))
            for cwe_id in ordered]


def render_comparison_table(base: EvalReport, other: EvalReport,
                            base_label: str = "base",
                            other_label: str = "ours") -> str:
    header = ["CWE ID", "CWE Name",
              f"{base_label} Success", "Total", f"{base_label} Rate (%)",
              f"{other_label} Success", f"{other_label} Rate (%)",
              "Rate Change"]
    rows = []
    for cwe_id, row_b, row_o in _aligned_rows(base, other):
        name = (row_b or row_o).cwe_name
        b_succ, b_rate = (row_b.success, row_b.rate) if row_b else (0, 0.0)
        o_succ, o_rate = (row_o.success, row_o.rate) if row_o else (0, 0.0)
        total = row_b.total if row_b else row_o.total
        rows.append([cwe_id, name, str(b_succ), str(total), f"{b_rate:.2f}",
                     str(o_succ), f"{o_rate:.2f}",
                     format_rate_change(round_rate(o_rate - b_rate))])
    summary = (f"Overall: {base_label} {round_rate(base.em_percent):.2f}% -> "
               f"{other_label} {round_rate(other.em_percent):.2f}% "
               f"({format_rate_change(round_rate(other.em_percent - base.em_percent))})\n")
    return _format_rows(header, rows) + summary


def write_delimited(report: EvalReport, path: str | Path, sep: str = "\t") -> None:
    lines = [sep.join(["cwe_id", "cwe_name", "success", "total", "rate"])]
    for r in report.per_cwe:
        lines.append(sep.join([r.cwe_id, r.cwe_name, str(r.success),
                               str(r.total), f"{r.rate:.2f}"]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_comparison_delimited(base: EvalReport, other: EvalReport,
                               path: str | Path, sep: str = "\t") -> None:
    lines = [sep.join(["cwe_id", "cwe_name", "base_success", "total",
                       "base_rate", "other_success", "other_rate",
                       "rate_change"])]
    for cwe_id, row_b, row_o in _aligned_rows(base, other):
        name = (row_b or row_o).cwe_name
        b_succ, b_rate = (row_b.success, row_b.rate) if row_b else (0, 0.0)
        o_succ, o_rate = (row_o.success, row_o.rate) if row_o else (0, 0.0)
        total = row_b.total if row_b else row_o.total
        lines.append(sep.join([cwe_id, name, str(b_succ), str(total),
                               f"{b_rate:.2f}", str(o_succ), f"{o_rate:.2f}",
                               f"{round_rate(o_rate - b_rate):+.2f}"]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def plot_per_cwe_rates(report: EvalReport, path: str | Path) -> None:
    rows = report.per_cwe
    fig, ax = plt.subplots(figsize=(max(6.0, 0.6 * len(rows) + 2), 4.0))
    xs = range(len(rows))
    ax.bar(xs, [r.rate for r in rows], color="#4477aa")
    ax.set_xticks(list(xs))
    ax.set_xticklabels([r.cwe_id for r in rows], rotation=45, ha="right")
    ax.set_ylabel("Exact-match rate (%)")
    ax.set_title(f"Repair rate per CWE (k={report.k})")
    ax.set_ylim(0, 100)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_METADATA)
    plt.close(fig)


def plot_rate_comparison(base: EvalReport, other: EvalReport,
                         path: str | Path, base_label: str = "base",
                         other_label: str = "ours") -> None:
    aligned = _aligned_rows(base, other)
    labels = [cwe_id for cwe_id, _, _ in aligned]
    base_rates = [row_b.rate if row_b else 0.0 for _, row_b, _ in aligned]
    other_rates = [row_o.rate if row_o else 0.0 for _, _, row_o in aligned]
    width = 0.38
    fig, ax = plt.subplots(figsize=(max(6.0, 0.8 * len(labels) + 2), 4.0))
    xs = range(len(labels))
    ax.bar([x - width / 2 for x in xs], base_rates, width,
           label=base_label, color="#999999")
    ax.bar([x + width / 2 for x in xs], other_rates, width,
           label=other_label, color="#4477aa")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_ylabel("Exact-match rate (%)")
    ax.set_title("Repair rate per CWE: comparison")
    ax.set_ylim(0, 100)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_METADATA)
    plt.close(fig)


def plot_em_curve(report: EvalReport, path: str | Path) -> None:
    if not report.em_at_k_curve:
        raise ValueError("report carries no em@k curve")
    ks = [k for k, _ in report.em_at_k_curve]
    ems = [v for _, v in report.em_at_k_curve]
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    ax.plot(ks, ems, marker="o", color="#4477aa")
    ax.set_xlabel("k (candidates considered)")
    ax.set_ylabel("EM@k (%)")
    ax.set_title("Exact match vs. candidate budget")
    ax.set_ylim(0, 100)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_METADATA)
    plt.close(fig)
