#!/usr/bin/env python3
"""Plot mean age versus admission rate from an age-sweep CSV.

Usage: plot_age_sweep.py [age_sweep.csv] [out.png]
"""
import csv
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def main():
    src = sys.argv[1] if len(sys.argv) > 1 else "age_sweep.csv"
    dst = sys.argv[2] if len(sys.argv) > 2 else "age_sweep.png"

    # (q, p) -> list of per-seed mean ages
    cells = defaultdict(list)
    with open(src, newline="") as f:
        for row in csv.DictReader(f):
            cells[(float(row["q"]), float(row["p"]))].append(float(row["mean_age"]))

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for q in sorted({q for q, _ in cells}):
        pts = sorted((p, vals) for (qq, p), vals in cells.items() if qq == q)
        ps = [p for p, _ in pts]
        means = [sum(v) / len(v) for _, v in pts]
        ax.plot(ps, means, marker="o", label=f"q = {q:g}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("admission probability p")
    ax.set_ylabel("mean age (slots)")
    ax.set_title("Average age of the delivered measurement")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(dst, dpi=150)
    print(f"wrote {dst}")


if __name__ == "__main__":
    main()
