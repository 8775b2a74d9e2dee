"""Seed-wise summaries, pairwise deltas and hand-written SVG plots from metrics.csv."""
from __future__ import annotations

from collections import OrderedDict
from itertools import combinations
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .config import ExperimentConfig

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")
SUMMARY_FIELDS = ["experiment", "arm", "condition", "seeds", "SR_mean", "SR_sd", "SPL_mean", "SPL_sd",
                  "config_hash"]
DELTA_FIELDS = ["experiment", "condition", "arm_a", "arm_b", "dSR_mean", "dSR_sd", "config_hash"]


def summarize(rows) -> list[dict]:
    """Mean and sd (ddof 0) over seeds per (arm, condition), in first-seen order."""
    groups = OrderedDict()
    for r in rows:
        groups.setdefault((r["arm"], r["condition"]), []).append(r)
    out = []
    for (arm, cond), rs in groups.items():
        sr = np.array([float(r["SR"]) for r in rs])
        sp = np.array([float(r["SPL"]) for r in rs])
        out.append({"experiment": rs[0]["experiment"], "arm": arm, "condition": cond,
                    "seeds": " ".join(str(r["seed"]) for r in rs),
                    "SR_mean": f"{sr.mean():.6f}", "SR_sd": f"{sr.std():.6f}",
                    "SPL_mean": f"{sp.mean():.6f}", "SPL_sd": f"{sp.std():.6f}",
                    "config_hash": rs[0]["config_hash"]})
    return out


def deltas(rows) -> list[dict]:
    """Seed-paired SR differences arm_a - arm_b for every arm pair under each condition."""
    by = OrderedDict()
    for r in rows:
        by.setdefault(r["condition"], OrderedDict()).setdefault(r["arm"], {})[str(r["seed"])] = float(r["SR"])
    out = []
    for cond, arms in by.items():
        for a, b in combinations(arms, 2):
            seeds = [s for s in arms[a] if s in arms[b]]
            d = np.array([arms[a][s] - arms[b][s] for s in seeds])
            out.append({"experiment": rows[0]["experiment"], "condition": cond, "arm_a": a, "arm_b": b,
                        "dSR_mean": f"{d.mean():.6f}", "dSR_sd": f"{d.std():.6f}",
                        "config_hash": rows[0]["config_hash"]})
    return out


# ---------------------------------------------------------------- SVG

def _frame(title, xlabel, ylabel, w=520, h=360):
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" '
            f'font-family="sans-serif" font-size="11">',
            f'<rect width="{w}" height="{h}" fill="white"/>',
            f'<text x="{w / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
            f'<text x="{w / 2:.1f}" y="{h - 6}" text-anchor="middle">{escape(xlabel)}</text>',
            f'<text x="14" y="{h / 2:.1f}" text-anchor="middle" transform="rotate(-90 14 {h / 2:.1f})">'
            f'{escape(ylabel)}</text>']


def line_plot(series: dict, title: str, xlabel: str, ylabel: str = "success rate", logx: bool = False) -> str:
    """series: name -> list of (x, y, sd)."""
    W, H, L, R, T, B = 520, 360, 60, 150, 30, 45
    xs = [p[0] for pts in series.values() for p in pts]
    tx = (lambda x: np.log10(x)) if logx else (lambda x: x)
    x0, x1 = tx(min(xs)), tx(max(xs))
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    px = lambda x: L + (tx(x) - x0) / (x1 - x0) * (W - L - R)
    py = lambda y: T + (1 - y) * (H - T - B)
    el = _frame(title, xlabel, ylabel, W, H)
    for k in range(6):
        y = k / 5
        el.append(f'<line x1="{L}" y1="{py(y):.1f}" x2="{W - R}" y2="{py(y):.1f}" stroke="#ddd"/>')
        el.append(f'<text x="{L - 6}" y="{py(y) + 4:.1f}" text-anchor="end">{y:.1f}</text>')
    for x in sorted(set(xs)):
        el.append(f'<text x="{px(x):.1f}" y="{H - B + 16}" text-anchor="middle">{x:g}</text>')
    for i, (name, pts) in enumerate(series.items()):
        col = PALETTE[i % len(PALETTE)]
        pts = sorted(pts)
        d = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y, _ in pts)
        el.append(f'<polyline points="{d}" fill="none" stroke="{col}" stroke-width="2"/>')
        for x, y, sd in pts:
            el.append(f'<line x1="{px(x):.1f}" y1="{py(min(1, y + sd)):.1f}" x2="{px(x):.1f}" '
                      f'y2="{py(max(0, y - sd)):.1f}" stroke="{col}"/>')
            el.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="3" fill="{col}"/>')
        ly = T + 14 + 16 * i
        el.append(f'<line x1="{W - R + 10}" y1="{ly - 4}" x2="{W - R + 28}" y2="{ly - 4}" stroke="{col}" '
                  f'stroke-width="2"/>')
        el.append(f'<text x="{W - R + 32}" y="{ly}">{escape(name)}</text>')
    el.append("</svg>")
    return "\n".join(el) + "\n"


def bar_plot(labels, means, sds, title: str, ylabel: str = "success rate") -> str:
    W, H, L, T, B = 560, 360, 60, 30, 70
    n = max(len(labels), 1)
    bw = (W - L - 20) / n
    py = lambda y: T + (1 - y) * (H - T - B)
    el = _frame(title, "", ylabel, W, H)
    for k in range(6):
        y = k / 5
        el.append(f'<line x1="{L}" y1="{py(y):.1f}" x2="{W - 20}" y2="{py(y):.1f}" stroke="#ddd"/>')
        el.append(f'<text x="{L - 6}" y="{py(y) + 4:.1f}" text-anchor="end">{y:.1f}</text>')
    for i, (lab, m, sd) in enumerate(zip(labels, means, sds)):
        x = L + i * bw + 0.15 * bw
        el.append(f'<rect x="{x:.1f}" y="{py(m):.1f}" width="{0.7 * bw:.1f}" height="{py(0) - py(m):.1f}" '
                  f'fill="{PALETTE[i % len(PALETTE)]}"/>')
        cx = x + 0.35 * bw
        el.append(f'<line x1="{cx:.1f}" y1="{py(min(1, m + sd)):.1f}" x2="{cx:.1f}" y2="{py(max(0, m - sd)):.1f}" '
                  f'stroke="black"/>')
        el.append(f'<text x="{cx:.1f}" y="{H - B + 14}" text-anchor="end" '
                  f'transform="rotate(-30 {cx:.1f} {H - B + 14})">{escape(lab)}</text>')
    el.append("</svg>")
    return "\n".join(el) + "\n"


def write_report(cfg: ExperimentConfig, out_dir) -> dict:
    """summary.csv, deltas.csv and plot(s) from out_dir/metrics.csv."""
    from .experiments import read_csv, write_csv

    out = Path(out_dir)
    rows = read_csv(out / "metrics.csv")
    if not rows:
        raise ValueError(f"no metric rows in {out / 'metrics.csv'}")
    summ = summarize(rows)
    paths = {"summary": write_csv(out / "summary.csv", SUMMARY_FIELDS, summ),
             "deltas": write_csv(out / "deltas.csv", DELTA_FIELDS, deltas(rows))}
    if cfg.experiment == "illumination":
        series = OrderedDict()
        for s in summ:
            cond = s["condition"]
            m, l = cond[len("map"):].split("_eval")
            series.setdefault(f"{s['arm']} (map {m})", []).append((float(l), float(s["SR_mean"]),
                                                                   float(s["SR_sd"])))
        svg = line_plot(series, "SR vs illumination", "evaluation light level")
        name = "sr_vs_illumination.svg"
    elif cfg.experiment == "data_scale":
        series = OrderedDict()
        pts = []
        for s in summ:
            frac = cfg.budget_fraction if s["arm"] != "dagger" else 1.0
            pts.append((cfg.rounds * cfg.samples_per_round * frac, float(s["SR_mean"]), float(s["SR_sd"])))
        series["DAgger"] = pts
        svg = line_plot(series, "SR vs sample budget", "training samples", logx=True)
        name = "sr_vs_budget.svg"
    else:
        labels = [f"{s['arm']} / {s['condition']}" for s in summ]
        svg = bar_plot(labels, [float(s["SR_mean"]) for s in summ], [float(s["SR_sd"]) for s in summ],
                       f"{cfg.experiment}: SR (mean, sd over seeds)")
        name = "sr_by_arm.svg"
    (out / name).write_text(svg)
    paths["plot"] = out / name
    return paths
