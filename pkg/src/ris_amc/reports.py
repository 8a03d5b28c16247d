"""Tab-separated text reports; every file starts with ``#`` provenance lines."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import signal

from .metrics import ConfusionMatrix

REPORT_VERSION = 1


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, kind: str, columns, rows, meta=None):
    """``# ris-amc <kind> v1`` and ``# key=value`` lines, then a header row and the rows."""
    lines = [f"# ris-amc {kind} v{REPORT_VERSION}"]
    lines += [f"# {k}={v}" for k, v in (meta or {}).items()]
    lines.append("\t".join(columns))
    lines += ["\t".join(_fmt(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_table(path):
    """(meta dict, column names, rows as lists of strings)."""
    meta, cols, rows = {}, None, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            if "=" in line:
                k, v = line[1:].strip().split("=", 1)
                meta[k] = v
            continue
        if cols is None:
            cols = line.split("\t")
        else:
            rows.append(line.split("\t"))
    return meta, cols, rows


def write_history(path, history, meta=None):
    cols = ["epoch", "iterations", "lr", "train_loss", "train_acc", "val_loss", "val_acc"]
    write_table(path, "history", cols, [[getattr(r, c) for c in cols] for r in history], meta)


def write_confusion(path, cm: ConfusionMatrix, label: str, meta=None):
    """Counts and row percentages in one file, labelled with their provenance."""
    meta = {"matrix": label, "accuracy": repr(cm.accuracy), "total": cm.total, **(meta or {})}
    pct = cm.row_percent()
    rows = [["counts", name, *cm.counts[i]] for i, name in enumerate(cm.class_names)]
    rows += [["percent", name, *np.round(pct[i], 4)] for i, name in enumerate(cm.class_names)]
    write_table(path, "confusion", ["table", "truth", *cm.class_names], rows, meta)


def write_trace(path, result, meta=None):
    rows = []
    for e in result.trace:
        acc = e.evaluation.accuracy
        rows.append([e.iteration, e.config.to_hex(), acc.get("user1", ""), acc.get("user2", ""),
                     e.value, e.best_value])
    write_table(path, "trace", ["iteration", "config_hex", "acc_user1", "acc_user2", "value", "best_so_far"],
                rows, meta)


def write_pairs(path, table, threshold, meta=None):
    rows = [[c.to_hex(), a, b, int(min(a, b) > threshold)]
            for c, a, b in zip(table.configs, table.acc_user1, table.acc_user2)]
    meta = {"threshold": threshold, "both_above": len(table.both_above(threshold)), **(meta or {})}
    write_table(path, "pairs", ["config_hex", "acc_user1", "acc_user2", "both_above"], rows, meta)


SPEC_WINDOW = 128
SPEC_HOP = 64


def spectrogram(samples, fs=200e3, window=SPEC_WINDOW, hop=SPEC_HOP):
    """Two-sided short-time DFT magnitude, Hann window, normalised to peak 1.

    Returns (frequencies ascending, segment centre times, grid of shape
    (segments, window)).
    """
    x = np.asarray(samples)
    f, t, s = signal.spectrogram(x, fs=fs, window="hann", nperseg=window, noverlap=window - hop,
                                 detrend=False, return_onesided=False, scaling="spectrum",
                                 mode="magnitude")
    f = np.fft.fftshift(f)
    grid = np.fft.fftshift(s, axes=0).T
    peak = grid.max()
    return f, t, grid / peak if peak > 0 else grid


def write_spectrogram(path, samples, fs=200e3, meta=None):
    f, t, grid = spectrogram(samples, fs)
    rows = [[repr(float(ti)), *(repr(float(v)) for v in row)] for ti, row in zip(t, grid)]
    write_table(path, "spectrogram", ["time_s", *(repr(float(fi)) for fi in f)], rows,
                {"window": SPEC_WINDOW, "hop": SPEC_HOP, "fs_hz": fs, **(meta or {})})
    return grid
