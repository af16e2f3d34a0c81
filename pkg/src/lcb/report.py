"""Result emission: verdict tables, long-format statistics CSV, figures.

All CSV files carry a comment header with the config hash so any artifact can
be traced to the exact configuration bytes that produced it.  Numbers are
written in full-precision scientific notation."""

from __future__ import annotations

import csv

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .montecarlo import Verdict
from .paths import STATUS_NAMES, Path

__all__ = [
    "verdicts_to_csv",
    "text_report",
    "stats_long_csv",
    "marginal_stat_rows",
    "paths_to_csv",
    "render_margins_png",
    "render_paths_png",
    "render_stats_png",
]


def _fmt(x: float) -> str:
    return format(float(x), ".17e")


def verdicts_to_csv(verdicts: list[Verdict], path, cfg_hash: str = "") -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# lcb-verdicts config={cfg_hash}\n")
        w = csv.writer(fh)
        w.writerow(["name", "lhs", "rhs", "pass", "margin", "detail"])
        for v in verdicts:
            w.writerow([v.name, _fmt(v.lhs), _fmt(v.rhs), str(v.passed).lower(),
                        _fmt(v.margin), v.detail])
            for s in v.subresults:
                w.writerow([f"  {s.name}", _fmt(s.lhs), _fmt(s.rhs),
                            str(s.passed).lower(), _fmt(s.margin), s.detail])


def text_report(verdicts: list[Verdict], cfg_hash: str = "") -> str:
    lines = [f"verdict report (config {cfg_hash})", "=" * 60]
    for v in verdicts:
        tag = "PASS" if v.passed else "FAIL"
        lines.append(f"[{tag}] {v.name}  margin={v.margin:.3f}  "
                     f"lhs={v.lhs:.6g}  rhs={v.rhs:.6g}")
        if v.detail:
            lines.append(f"       {v.detail}")
        for s in v.subresults:
            stag = "pass" if s.passed else "FAIL"
            lines.append(f"       - {stag} {s.name}  margin={s.margin:.3f}  "
                         f"lhs={s.lhs:.6g}  rhs={s.rhs:.6g}")
    n_fail = sum(not v.passed for v in verdicts)
    lines.append("=" * 60)
    lines.append(f"{len(verdicts) - n_fail}/{len(verdicts)} passed")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# simulation statistics


def marginal_stat_rows(times, checkpoint_matrix: np.ndarray, statuses: np.ndarray) -> list:
    """Long-format (t, statistic, value) rows: mean and quantiles over finite
    paths per checkpoint, boundary-mass fractions, final status counts."""
    rows = []
    for t, vals in zip(times, checkpoint_matrix):
        finite = np.isfinite(vals)
        n = vals.size
        rows.append((t, "finite_frac", finite.mean()))
        rows.append((t, "zero_frac", np.mean(vals[finite] == 0.0) * finite.mean() if n else 0.0))
        rows.append((t, "inf_frac", np.mean(~finite)))
        if finite.any():
            f = vals[finite]
            rows.append((t, "mean", f.mean()))
            for q in (0.1, 0.5, 0.9):
                rows.append((t, f"q{int(q * 100)}", float(np.quantile(f, q))))
    t_end = times[-1]
    for code, name in enumerate(STATUS_NAMES):
        rows.append((t_end, f"count-{name}", int(np.sum(statuses == code))))
    return rows


def stats_long_csv(rows, path, cfg_hash: str = "") -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# lcb-stats config={cfg_hash}\n")
        w = csv.writer(fh)
        w.writerow(["t", "statistic", "value"])
        for t, stat, value in rows:
            w.writerow([_fmt(t), stat, _fmt(value)])


def paths_to_csv(paths: list[Path], path, cfg_hash: str = "") -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# lcb-paths config={cfg_hash}\n")
        w = csv.writer(fh)
        w.writerow(["path_id", "t", "value", "status"])
        for i, p in enumerate(paths):
            for t, v in zip(p.times, p.values):
                w.writerow([i, _fmt(t), _fmt(v), p.status])


# ---------------------------------------------------------------------------
# figures


def render_margins_png(verdicts: list[Verdict], path) -> None:
    fig, ax = plt.subplots(figsize=(8, max(2.5, 0.45 * len(verdicts))))
    names = [v.name for v in verdicts]
    margins = [min(v.margin, 20.0) for v in verdicts]
    colors = ["tab:green" if v.passed else "tab:red" for v in verdicts]
    ax.barh(range(len(verdicts)), margins, color=colors)
    ax.set_yticks(range(len(verdicts)))
    ax.set_yticklabels(names, fontsize=8)
    ax.axvline(3.0, color="k", linestyle="--", linewidth=0.8)
    ax.set_xlabel("margin (SE units, capped at 20)")
    ax.invert_yaxis()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_paths_png(paths: list[Path], path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for p in paths:
        finite = np.isfinite(p.values)
        ax.plot(np.asarray(p.times)[finite], np.asarray(p.values)[finite], lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("value")
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_stats_png(rows, path, title: str = "") -> None:
    by_stat: dict = {}
    for t, stat, value in rows:
        if stat.startswith("count-"):
            continue
        by_stat.setdefault(stat, []).append((t, value))
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for stat in ("mean", "q10", "q50", "q90"):
        if stat in by_stat:
            pts = np.array(by_stat[stat])
            ax.plot(pts[:, 0], pts[:, 1], label=stat)
    ax.set_xlabel("t")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
