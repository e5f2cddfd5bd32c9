"""Figures for attack-strength curves and hyperparameter sensitivity.

Each figure is written as a PNG next to a tab-separated table holding the
plotted numbers, so any plot can be regenerated without rerunning anything.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiment import ResultRecord  # noqa: E402

SUMMARY_COLUMNS = ("seed", "acc_base", "acc_novel", "hm", "wsr", "p_value", "harmless")


def write_table(path, columns: Sequence[str], rows) -> None:
    table = np.asarray(rows, dtype=np.float64).reshape(-1, len(columns))
    np.savetxt(path, table, delimiter="\t", header="\t".join(columns), comments="", fmt="%.10g")


def read_table(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        columns = fh.readline().rstrip("\n").split("\t")
    table = np.loadtxt(path, delimiter="\t", skiprows=1, ndmin=2)
    return {c: table[:, i] for i, c in enumerate(columns)}


def _seed(rec: ResultRecord) -> int:
    return int(rec.config["run"]["seed"])


def _curve(rec: ResultRecord, attack: str):
    try:
        return rec.attack(attack)["post"].get("curve")
    except KeyError:
        return None


def _plot_curves(path, series, xlabel, title):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, x, y, style in series:
        ax.plot(x, y, style, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def emit_plots(records: Iterable[ResultRecord], out_dir) -> list[Path]:
    """Write every figure the records have data for; returns the written paths."""
    records = list(records)
    if not records:
        raise ValueError("emit_plots needs at least one record")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def both(stem, columns, rows, series, xlabel, title):
        write_table(out / f"{stem}.tsv", columns, rows)
        _plot_curves(out / f"{stem}.png", series, xlabel, title)
        written.extend([out / f"{stem}.png", out / f"{stem}.tsv"])

    rows = [[_seed(r)] + [np.nan if getattr(r, c) is None else float(getattr(r, c)) for c in SUMMARY_COLUMNS[1:]]
            for r in records]
    write_table(out / "summary.tsv", SUMMARY_COLUMNS, rows)
    written.append(out / "summary.tsv")

    for attack, key, xlabel, title in (("finetune", "epoch", "fine-tuning epochs", "WSR under fine-tuning"),
                                       ("prune", "fraction", "pruned fraction", "WSR and ACC under pruning")):
        rows, series = [], []
        for r in records:
            curve = _curve(r, attack)
            if not curve:
                continue
            x = [c[key] for c in curve]
            rows += [[_seed(r), c[key], c["wsr"], c["acc_base"], c["acc_novel"]] for c in curve]
            series.append((f"WSR seed {_seed(r)}", x, [c["wsr"] for c in curve], "o-"))
            series.append((f"ACC novel seed {_seed(r)}", x, [c["acc_novel"] for c in curve], "s--"))
        if rows:
            both(f"{attack}_curve", ("seed", key, "wsr", "acc_base", "acc_novel"), rows, series, xlabel, title)

    for param, symbol in (("epsilon", "margin epsilon"), ("lambda", "loss weight lambda")):
        rows, series = [], []
        for r in records:
            pts = r.sweeps.get(param)
            if not pts:
                continue
            x = [p["value"] for p in pts]
            rows += [[_seed(r), p["value"], p["wsr"], p["acc_base"], p["acc_novel"]] for p in pts]
            series.append((f"WSR seed {_seed(r)}", x, [p["wsr"] for p in pts], "o-"))
            series.append((f"ACC novel seed {_seed(r)}", x, [p["acc_novel"] for p in pts], "s--"))
        if rows:
            both(f"sensitivity_{param}", ("seed", "value", "wsr", "acc_base", "acc_novel"), rows, series,
                 symbol, f"sensitivity to {symbol}")
    return written
