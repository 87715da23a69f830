"""Report figures written next to the CSV/JSON outputs.

Uses the non-interactive Agg backend so figures render without a display.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}

# no timestamps or version strings, so reruns produce identical files
PNG_METADATA = {"Software": None}


def _save(fig, path):
    fig.savefig(path, metadata=PNG_METADATA)
    plt.close(fig)


def plot_history(history, path):
    """Loss curves, dev CER and learning rate per epoch.

    ``history`` is a sequence of records with ``epoch``, ``train_loss``,
    ``dev_loss``, ``dev_cer`` and ``lr`` attributes.
    """
    epochs = [r.epoch for r in history]
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_cer) = plt.subplots(1, 2, figsize=(8, 3))
        ax_loss.plot(epochs, [r.train_loss for r in history], label="train")
        ax_loss.plot(epochs, [r.dev_loss for r in history], label="dev")
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("CTC loss")
        ax_loss.set_yscale("log")
        ax_loss.legend(frameon=False)

        ax_cer.plot(epochs, [r.dev_cer for r in history], color="C2")
        ax_cer.set_xlabel("epoch")
        ax_cer.set_ylabel("dev CER")
        ax_lr = ax_cer.twinx()
        ax_lr.step(epochs, [r.lr for r in history], where="post", color="C3", alpha=0.6)
        ax_lr.set_yscale("log")
        ax_lr.set_ylabel("learning rate", color="C3")
        fig.tight_layout()
        _save(fig, path)


def plot_error_rates(report, path):
    """Per-utterance CER and SER bars with the pooled rates as reference lines."""
    utts = report["utterances"]
    x = np.arange(len(utts))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4, 0.3 * len(utts) + 2), 3))
        ax.bar(x - 0.2, [u["cer"] for u in utts], width=0.4, label="CER")
        ax.bar(x + 0.2, [u["ser"] for u in utts], width=0.4, label="SER")
        ax.axhline(report["cer"], color="C0", ls="--", lw=0.8)
        ax.axhline(report["ser"], color="C1", ls="--", lw=0.8)
        ax.set_xticks(x)
        ax.set_xticklabels([u["clip_id"] for u in utts], rotation=90)
        ax.set_ylabel("error rate")
        ax.set_title(f"pooled CER {report['cer']:.2%}  SER {report['ser']:.2%}")
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def plot_features(frames, path, title=""):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3))
        im = ax.imshow(np.asarray(frames).T, origin="lower", aspect="auto", cmap="magma")
        ax.set_xlabel("frame")
        ax.set_ylabel("frequency bin")
        if title:
            ax.set_title(title)
        fig.colorbar(im, ax=ax)
        fig.tight_layout()
        _save(fig, path)
