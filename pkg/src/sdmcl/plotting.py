"""Figures for the ``report`` command. Everything renders to files (Agg backend)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.linewidth": 0.8,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path


def accuracy_curves(runs, path, title=None):
    """Overall validation accuracy against training epoch.

    ``runs`` maps a method label to a list of per-seed record lists; the mean
    over seeds is drawn with a band of one standard error.
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        boundaries = set()
        for label, seeds in sorted(runs.items()):
            curves = []
            for records in seeds:
                task_recs = [r for r in records if r["phase"] == "task"]
                curves.append([(r["global_epoch"], r["overall_acc"]) for r in task_recs])
                for prev, cur in zip(task_recs, task_recs[1:]):
                    if cur["task"] != prev["task"]:
                        boundaries.add(prev["global_epoch"])
            length = min(len(c) for c in curves)
            if length == 0:
                continue
            x = np.array([p[0] for p in curves[0][:length]])
            acc = np.array([[p[1] for p in c[:length]] for c in curves])
            mean = acc.mean(axis=0)
            (line,) = ax.plot(x, mean, label=label, lw=1.2)
            if len(acc) > 1:
                sem = acc.std(axis=0, ddof=1) / np.sqrt(len(acc))
                ax.fill_between(x, mean - sem, mean + sem, color=line.get_color(), alpha=0.2, lw=0)
        for b in sorted(boundaries):
            ax.axvline(b, color="0.8", lw=0.6, zorder=0)
        ax.set_xlabel("epoch")
        ax.set_ylabel("validation accuracy (all classes)")
        ax.set_ylim(0, 1)
        if title:
            ax.set_title(title)
        ax.legend(loc="upper right")
        return _save(fig, path)


def per_task_accuracy(records, path, title=None):
    """Accuracy on each task's classes as training moves through the tasks."""
    task_recs = [r for r in records if r["phase"] == "task"]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if task_recs:
            x = [r["global_epoch"] for r in task_recs]
            per = np.array([r["per_task_acc"] for r in task_recs], dtype=float)
            for t in range(per.shape[1]):
                ax.plot(x, per[:, t], lw=1.0, label=f"task {t + 1}")
        ax.set_xlabel("epoch")
        ax.set_ylabel("accuracy on task classes")
        ax.set_ylim(0, 1.02)
        if title:
            ax.set_title(title)
        ax.legend(ncol=5, loc="upper center", bbox_to_anchor=(0.5, 1.15))
        return _save(fig, path)


def intersection_curves(rows, path, title=None):
    """Normalized circle-intersection size against query-pattern distance."""
    rows = np.asarray(rows, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for col, label, style in ((1, "binary", "-"), (2, "linear", "--"), (3, "exp", ":")):
            ax.plot(rows[:, 0], rows[:, col], style, label=label, lw=1.2)
        ax.set_xlabel("Hamming distance between query and pattern")
        ax.set_ylabel("normalized intersection")
        if title:
            ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def probe_deltas(traces, path):
    """Per-step update magnitude for each optimizer in the sparse-gradient probe."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, rows in sorted(traces.items()):
            ax.plot([r["step"] for r in rows], [r["delta"] for r in rows], lw=1.0, label=name)
        ax.set_xlabel("step")
        ax.set_ylabel("update (before learning rate)")
        ax.set_yscale("symlog", linthresh=0.1)
        ax.legend()
        return _save(fig, path)


def active_counts(b_values, counts, path):
    """Active excitatory units against the inhibitory threshold."""
    counts = np.asarray(counts, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        mean = counts.mean(axis=1)
        ax.errorbar(b_values, mean, yerr=counts.std(axis=1), marker="o", ms=3, lw=1.0, capsize=2)
        ax.set_xlabel("inhibitory threshold b_i")
        ax.set_ylabel("active excitatory units")
        return _save(fig, path)
