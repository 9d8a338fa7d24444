"""Render CKA grid CSVs (as written by `pipeinv report`) to PNG heatmaps.

    python scripts/plot_cka.py runs/two_view_mnist/report/cka/*.csv
"""

import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def read_grid(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    cols = rows[0][1:]
    names = [r[0] for r in rows[1:]]
    return names, cols, np.array([[float(v) for v in r[1:]] for r in rows[1:]])


def plot(path):
    names, cols, values = read_grid(path)
    fig, ax = plt.subplots(figsize=(4, 3.5))
    im = ax.imshow(values, vmin=0, vmax=1, cmap="magma", origin="lower")
    ax.set_xticks(range(len(cols)), cols, rotation=45)
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("view b model")
    ax.set_ylabel("view a model")
    ax.set_title(Path(path).stem)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    out = Path(path).with_suffix(".png")
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


if __name__ == "__main__":
    for p in sys.argv[1:]:
        print(plot(p))
