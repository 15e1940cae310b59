#!/usr/bin/env python3
"""Plot per-estimator RMSE bars across (p, q) operating points from a grid CSV.

Usage: plot_rmse.py [grid.csv] [out.png]
"""
import csv
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def main():
    src = sys.argv[1] if len(sys.argv) > 1 else "grid.csv"
    dst = sys.argv[2] if len(sys.argv) > 2 else "grid.png"

    # (p, q) -> {estimator: rmse_total}
    points = defaultdict(dict)
    with open(src, newline="") as f:
        for row in csv.DictReader(f):
            key = (row["p"], row["q"])
            points[key][row["estimator"]] = float(row["rmse_total"])

    keys = sorted(points, key=lambda k: (float(k[1] or 0), float(k[0] or 0)))
    estimators = sorted({e for cell in points.values() for e in cell})
    width = 0.8 / len(estimators)

    fig, ax = plt.subplots(figsize=(8, 4.5))
    for j, est in enumerate(estimators):
        xs = [i + (j - (len(estimators) - 1) / 2) * width for i in range(len(keys))]
        ys = [points[k].get(est, float("nan")) for k in keys]
        ax.bar(xs, ys, width=width, label=est)
    ax.set_xticks(range(len(keys)))
    ax.set_xticklabels([f"p={p}\nq={q}" for p, q in keys], fontsize=8)
    ax.set_yscale("log")
    ax.set_ylabel("RMSE")
    ax.set_title("Estimation error by network operating point")
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(dst, dpi=150)
    print(f"wrote {dst}")


if __name__ == "__main__":
    main()
