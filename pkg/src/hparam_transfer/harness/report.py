"""Report files: per-image CSV, per-(method, seed) summary, JSON, TSV plot data, figures."""

from __future__ import annotations

import csv
import io
import json
import os
from collections import defaultdict
from pathlib import Path

import numpy as np

BASE_COLUMNS = ["method", "seed", "dataset", "config", "image_id", "p_delta", "p_lambda",
                "p_gamma", "psnr", "oracle_psnr", "gap"]
SUMMARY_COLUMNS = ["method", "seed", "dataset", "config", "n_images", "mean_psnr", "mean_gap",
                   "std_psnr_over_seeds", "std_gap_over_seeds"]


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def extra_columns(rows) -> list[str]:
    keys = []
    for row in rows:
        for k in row:
            if k not in BASE_COLUMNS and k not in keys:
                keys.append(k)
    return keys


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\r\n", extrasaction="ignore")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(row.get(k, "")) for k in columns})
    return buf.getvalue()


def summarize(rows) -> list[dict]:
    """Mean PSNR and gap per (method, seed, dataset, config, extras), plus std over seeds."""
    extras = extra_columns(rows)
    keys = ["method", "seed", "dataset", "config", *extras]
    cells = defaultdict(list)
    for row in rows:
        cells[tuple(row.get(k, "") for k in keys)].append(row)
    out = []
    for key, items in cells.items():
        rec = dict(zip(keys, key))
        rec["n_images"] = len(items)
        rec["mean_psnr"] = float(np.mean([r["psnr"] for r in items]))
        rec["mean_gap"] = float(np.mean([r["gap"] for r in items]))
        out.append(rec)
    # spread over seeds of each (method, dataset, config, extras) group
    groups = defaultdict(list)
    for rec in out:
        groups[tuple(rec[k] for k in keys if k != "seed")].append(rec)
    for items in groups.values():
        sp = float(np.std([r["mean_psnr"] for r in items]))
        sg = float(np.std([r["mean_gap"] for r in items]))
        for rec in items:
            rec["std_psnr_over_seeds"] = sp
            rec["std_gap_over_seeds"] = sg
    out.sort(key=lambda r: tuple(str(r[k]) for k in keys))
    return out


def method_means(summary, **where) -> dict:
    """Mean over seeds of the per-seed mean PSNR and gap for each method."""
    acc = defaultdict(lambda: {"psnr": [], "gap": []})
    for rec in summary:
        if any(str(rec.get(k)) != str(v) for k, v in where.items()):
            continue
        acc[rec["method"]]["psnr"].append(rec["mean_psnr"])
        acc[rec["method"]]["gap"].append(rec["mean_gap"])
    return {m: {"mean_psnr": float(np.mean(v["psnr"])), "std_psnr": float(np.std(v["psnr"])),
                "mean_gap": float(np.mean(v["gap"])), "std_gap": float(np.std(v["gap"])),
                "n_seeds": len(v["psnr"])} for m, v in sorted(acc.items())}


def curve_rows(summary, x_key: str) -> list[dict]:
    """Plot rows (method, x, seed, mean PSNR, mean gap): one per summary row that has ``x_key``."""
    out = []
    for rec in summary:
        if rec.get(x_key, "") == "":
            continue
        out.append({"method": rec["method"], "x": rec[x_key], "seed": rec["seed"],
                    "mean_psnr": rec["mean_psnr"], "mean_gap": rec["mean_gap"]})
    return out


def write_report(out_dir, experiment: str, rows, seeds, extra_summary: dict | None = None,
                 curve_key: str | None = None, read_record: dict | None = None,
                 figures: bool = True) -> dict:
    """Write every report artifact for one run; returns the JSON summary object."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    extras = extra_columns(rows)
    _atomic_write(out / "rows.csv", rows_to_csv(rows, BASE_COLUMNS + extras))
    summary = summarize(rows)
    _atomic_write(out / "summary.csv", rows_to_csv(summary, SUMMARY_COLUMNS[:4] + extras
                                                   + SUMMARY_COLUMNS[4:]))
    obj = {"experiment": experiment, "seeds": list(seeds), "methods": method_means(summary)}
    if extra_summary:
        obj.update(extra_summary)
    if read_record is not None:
        obj["label_reads"] = read_record
    plot_dir = out / "plot_data"
    plot_dir.mkdir(exist_ok=True)
    if curve_key:
        curve = curve_rows(summary, curve_key)
    else:
        curve = [{"method": r["method"], "x": r["seed"], "seed": r["seed"],
                  "mean_psnr": r["mean_psnr"], "mean_gap": r["mean_gap"]} for r in summary]
    by_method = defaultdict(list)
    for c in curve:
        by_method[c["method"]].append(c)
    for method, items in sorted(by_method.items()):
        lines = ["x\tmean_psnr\tseed\tmean_gap"]
        lines += [f"{c['x']}\t{c['mean_psnr']!r}\t{c['seed']}\t{c['mean_gap']!r}" for c in items]
        _atomic_write(plot_dir / f"{method}.tsv", "\n".join(lines) + "\n")
    obj["plot_files"] = sorted(f"plot_data/{m}.tsv" for m in by_method)
    if figures:
        obj["figures"] = render_figures(out, experiment, summary, curve if curve_key else None,
                                        curve_key)
    _atomic_write(out / "summary.json", json.dumps(obj, indent=1, sort_keys=True))
    return obj


def render_figures(out: Path, experiment: str, summary, curve=None, x_label=None) -> list[str]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    files = []
    means = method_means(summary)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    names = list(means)
    ax.bar(range(len(names)), [means[m]["mean_gap"] for m in names],
           yerr=[means[m]["std_gap"] for m in names], color="0.6", capsize=3)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("mean gap to oracle (dB)")
    ax.set_title(experiment, fontsize=9)
    fig.tight_layout()
    fig.savefig(out / "gap_by_method.png", dpi=120)
    plt.close(fig)
    files.append("gap_by_method.png")
    if curve:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        by = defaultdict(lambda: defaultdict(list))
        for c in curve:
            by[c["method"]][float(c["x"])].append(c["mean_psnr"])
        for method, pts in sorted(by.items()):
            xs = sorted(pts)
            ys = [np.mean(pts[x]) for x in xs]
            es = [np.std(pts[x]) for x in xs]
            ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=method)
        ax.set_xscale("log", base=2)
        ax.set_xlabel(x_label or "x")
        ax.set_ylabel("mean PSNR (dB)")
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(out / "curve.png", dpi=120)
        plt.close(fig)
        files.append("curve.png")
    return files


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for k in ("psnr", "oracle_psnr", "gap", "p_delta", "p_lambda", "p_gamma"):
            if k in row and row[k] != "":
                row[k] = float(row[k])
    return rows
