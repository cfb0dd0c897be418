"""Report emission: delimited tables, aligned text tables, and figures.

Every report writer produces a ``.tsv`` for machines, a ``.txt`` rendering
of the same numbers for reading, and a ``.png`` figure next to them. All
files embed the run configuration and a build identifier in comment lines
so results carry their provenance; numbers are formatted with a fixed
precision, making reruns byte-identical.
"""

from __future__ import annotations

import subprocess
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from . import __version__
from .config import RunConfig
from .metrics import EvalReport

_PNG_META = {"Software": "plainer"}


def build_identifier() -> str:
    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        if described.returncode == 0:
            return f"plainer-{__version__}+g{described.stdout.strip()}"
    except OSError:
        pass
    return f"plainer-{__version__}"


def _header_lines(config: RunConfig | None) -> list[str]:
    lines = [f"# build: {build_identifier()}"]
    if config is not None:
        lines.extend(f"# config: {line}" for line in config.to_text().strip().splitlines())
    return lines


def _write(path: Path, lines: list[str]) -> None:
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# ---------------------------------------------------------------------------
# Evaluation tables
# ---------------------------------------------------------------------------


def write_eval_reports(reports: list[EvalReport], stem, config: RunConfig | None = None) -> dict:
    """Emit <stem>.tsv, <stem>.txt and <stem>.png for one or more systems."""
    stem = Path(stem)
    columns = ("Model",) + EvalReport.COLUMNS
    rows = [[r.name] + [f"{v:.4f}" for v in r.values()] for r in reports]

    tsv = _header_lines(config)
    tsv.append("\t".join(columns))
    tsv.extend("\t".join(row) for row in rows)
    _write(stem.with_suffix(".tsv"), tsv)

    widths = [max(len(columns[i]), *(len(row[i]) for row in rows)) for i in range(len(columns))]
    txt = _header_lines(config)
    txt.append("  ".join(c.ljust(w) for c, w in zip(columns, widths)))
    txt.append("  ".join("-" * w for w in widths))
    txt.extend("  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in rows)
    _write(stem.with_suffix(".txt"), txt)

    fig_path = stem.with_suffix(".png")
    _eval_figure(reports, fig_path)
    return {"tsv": stem.with_suffix(".tsv"), "txt": stem.with_suffix(".txt"), "png": fig_path}


def _eval_figure(reports: list[EvalReport], path: Path) -> None:
    fig, (left, right) = plt.subplots(1, 2, figsize=(11, 4))
    names = [r.name for r in reports]
    x = range(len(names))
    width = 0.2
    for i, (label, pick) in enumerate(
        [
            ("SARI", lambda r: r.sari.sari),
            ("Add", lambda r: r.sari.f_add),
            ("Delete", lambda r: r.sari.f_delete),
            ("Keep", lambda r: r.sari.f_keep),
        ]
    ):
        left.bar([v + (i - 1.5) * width for v in x], [pick(r) for r in reports], width, label=label)
    left.set_xticks(list(x))
    left.set_xticklabels(names, rotation=20, ha="right")
    left.set_ylabel("score")
    left.set_title("SARI and operation F1")
    left.legend(fontsize=8)

    for i, (label, pick) in enumerate(
        [
            ("Prec", lambda r: 100 * r.rule_util.precision),
            ("Recall", lambda r: 100 * r.rule_util.recall),
            ("F1", lambda r: 100 * r.rule_util.f1),
        ]
    ):
        right.bar([v + (i - 1) * width for v in x], [pick(r) for r in reports], width, label=label)
    right.set_xticks(list(x))
    right.set_xticklabels(names, rotation=20, ha="right")
    right.set_title("rule utilization")
    right.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Training reports
# ---------------------------------------------------------------------------


def write_training_report(
    losses, phases, validation, stem, config: RunConfig | None = None, term_counts=None
) -> dict:
    """Per-step training log plus a loss-curve figure."""
    stem = Path(stem)
    tsv = _header_lines(config)
    tsv.append("step\tphase\tloss\tcritic_terms")
    counts = term_counts if term_counts is not None else [0] * len(losses)
    for step, (loss, phase, n) in enumerate(zip(losses, phases, counts)):
        tsv.append(f"{step}\t{phase}\t{loss:.6f}\t{n}")
    _write(stem.with_suffix(".tsv"), tsv)

    fig, ax = plt.subplots(figsize=(7, 4))
    seq_steps = [i for i, p in enumerate(phases) if p == "seq"]
    ax.plot(seq_steps, [losses[i] for i in seq_steps], label="sequence loss", lw=1)
    critic_steps = [i for i, p in enumerate(phases) if p == "critic"]
    if critic_steps:
        ax.plot(critic_steps, [losses[i] for i in critic_steps], label="critic loss", lw=1, alpha=0.7)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    if validation:
        twin = ax.twinx()
        twin.plot(*zip(*validation), color="tab:green", marker="o", label="validation SARI")
        twin.set_ylabel("SARI")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(stem.with_suffix(".png"), metadata=_PNG_META)
    plt.close(fig)
    return {"tsv": stem.with_suffix(".tsv"), "png": stem.with_suffix(".png")}


# ---------------------------------------------------------------------------
# Ablation grid
# ---------------------------------------------------------------------------


def write_ablation_report(cells: list[dict], stem, config: RunConfig | None = None) -> dict:
    """Rows of {layers, heads, sari, ...} from a layer/head sweep."""
    stem = Path(stem)
    keys = ["layers", "heads", "fkgl", "wlen", "slen", "sari", "add", "delete", "keep"]
    tsv = _header_lines(config)
    tsv.append("\t".join(keys))
    for cell in cells:
        tsv.append(
            "\t".join(
                str(cell[k]) if k in ("layers", "heads") else f"{cell[k]:.4f}" for k in keys
            )
        )
    _write(stem.with_suffix(".tsv"), tsv)

    fig, ax = plt.subplots(figsize=(6, 4))
    heads = sorted({c["heads"] for c in cells})
    for h in heads:
        points = sorted((c["layers"], c["sari"]) for c in cells if c["heads"] == h)
        ax.plot([p[0] for p in points], [p[1] for p in points], marker="o", label=f"{h} heads")
    ax.set_xlabel("encoder/decoder layers")
    ax.set_ylabel("SARI")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(stem.with_suffix(".png"), metadata=_PNG_META)
    plt.close(fig)
    return {"tsv": stem.with_suffix(".tsv"), "png": stem.with_suffix(".png")}
