"""Accuracy reports, cross-pattern matrices, ablation tables and plots."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigDriftError, ConfigurationError, ValidationError
from .failures import evaluate

RESULTS_HEADER = ["model", "method", "repaired_on", "eval_on", "split", "accuracy", "seed", "config_hash"]


def accuracy_on(model, dataset) -> float:
    return evaluate(model, dataset)[1]


@dataclass
class RepairReport:
    model_id: str
    method: str                      # e.g. "stylerepair-clustering", "augmix", "original"
    repaired_on: str                 # pattern kind, or "" for the source model
    accuracy_heldout: dict = field(default_factory=dict)
    accuracy_clean: float | None = None
    accuracy_corrupted_full: dict = field(default_factory=dict)
    baseline_id: str = ""            # the source model the repair started from
    seed: int = 0
    config_hash: str = ""
    sampler: str = ""

    def __post_init__(self):
        for v in self._accuracies():
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"accuracy {v} outside [0, 1]")

    def _accuracies(self):
        vals = list(self.accuracy_heldout.values()) + list(self.accuracy_corrupted_full.values())
        return vals + ([self.accuracy_clean] if self.accuracy_clean is not None else [])

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def rows(self):
        base = [self.model_id, self.method, self.repaired_on]
        tail = [str(self.seed), self.config_hash]
        out = []
        for kind in sorted(self.accuracy_heldout):
            out.append(base + [kind, "heldout", f"{self.accuracy_heldout[kind]:.6f}"] + tail)
        for kind in sorted(self.accuracy_corrupted_full):
            out.append(base + [kind, "corrupted", f"{self.accuracy_corrupted_full[kind]:.6f}"] + tail)
        if self.accuracy_clean is not None:
            out.append(base + ["clean", "clean", f"{self.accuracy_clean:.6f}"] + tail)
        return out


def make_report(model, method, repaired_on, splits, clean_test=None, corrupted=None, **provenance):
    """Evaluate ``model`` on every held-out failure set and optional clean/corrupted sets."""
    heldout = {k: accuracy_on(model, s.heldout) for k, s in splits.items() if len(s.heldout)}
    full = {k: accuracy_on(model, d) for k, d in (corrupted or {}).items()}
    clean = accuracy_on(model, clean_test) if clean_test is not None else None
    return RepairReport(getattr(model, "model_id", ""), method, repaired_on, heldout, clean, full,
                        **provenance)


@dataclass
class CrossMatrix:
    """``values[i, j]``: model repaired on ``rows[i]`` evaluated on held-out set ``cols[j]``."""
    rows: list
    cols: list
    values: np.ndarray
    method: str = ""

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["repaired_on"] + list(self.cols))
        for r, vals in zip(self.rows, self.values):
            w.writerow([r] + [repr(float(v)) for v in vals])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, method=""):
        rows = list(csv.reader(io.StringIO(text)))
        cols = rows[0][1:]
        return cls([r[0] for r in rows[1:]], cols,
                   np.array([[float(v) for v in r[1:]] for r in rows[1:]]), method)


def cross_robustness(repaired_models: dict, splits: dict, method="") -> CrossMatrix:
    """Accuracy of each pattern's repaired model on every pattern's held-out failures."""
    sources = {s.model_id for s in splits.values()}
    if len(sources) > 1:
        raise ConfigurationError(f"splits come from different source models: {sorted(sources)}")
    source = sources.pop() if sources else None
    missing = set(repaired_models) - set(splits)
    if missing:
        raise ConfigurationError(f"no split for repaired patterns {sorted(missing)}")
    for kind, model in repaired_models.items():
        meta = getattr(model, "metadata", {}) or {}
        if meta.get("source_model") not in (None, source):
            raise ConfigurationError(
                f"model repaired on {kind} starts from {meta['source_model']}, splits from {source}")
    rows, cols = list(repaired_models), list(splits)
    values = np.array([[accuracy_on(repaired_models[r], splits[c].heldout) for c in cols]
                       for r in rows])
    return CrossMatrix(rows, cols, values, method)


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def check_ablation_configs(configs: dict, allowed=("sampler.strategy",)):
    """Raise :class:`ConfigDriftError` unless the arms differ only in ``allowed`` keys."""
    flat = [_flatten(c) for c in configs.values()]
    keys = set().union(*flat)
    drift = {k for k in keys if len({json.dumps(f.get(k), sort_keys=True) for f in flat}) > 1}
    drift -= set(allowed)
    if drift:
        raise ConfigDriftError(drift)


def ablation_compare(reports: dict, configs: dict | None = None):
    """Side-by-side held-out accuracy of the ``uniform`` and ``clustering`` arms.

    Returns rows ``[pattern, uniform, clustering]``, one per evaluated pattern.
    No ordering between arms is enforced.
    """
    if set(reports) != {"uniform", "clustering"}:
        raise ValidationError(f"ablation needs 'uniform' and 'clustering' arms, got {sorted(reports)}")
    if configs is not None:
        check_ablation_configs(configs)
    uni, clu = reports["uniform"], reports["clustering"]
    if (uni.seed, uni.baseline_id, uni.repaired_on) != (clu.seed, clu.baseline_id, clu.repaired_on):
        raise ConfigDriftError({"seed/baseline_id/repaired_on"})
    kinds = sorted(set(uni.accuracy_heldout) | set(clu.accuracy_heldout))
    return [[k, uni.accuracy_heldout.get(k), clu.accuracy_heldout.get(k)] for k in kinds]


def ablation_csv(rows, repaired_on="") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["repaired_on", "eval_on", "uniform", "clustering"])
    for k, u, c in rows:
        w.writerow([repaired_on, k, "" if u is None else f"{u:.6f}", "" if c is None else f"{c:.6f}"])
    return buf.getvalue()


def results_csv(reports) -> str:
    rows = sorted(r for rep in reports for r in rep.rows())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULTS_HEADER)
    w.writerows(rows)
    return buf.getvalue()


def _plot_radar(reports, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    kinds = sorted({k for r in reports for k in r.accuracy_corrupted_full})
    fig = plt.figure(figsize=(6, 6))
    ax = fig.add_subplot(111, polar=True)
    if kinds:
        angles = np.linspace(0, 2 * np.pi, len(kinds), endpoint=False).tolist()
        for r in reports:
            vals = [r.accuracy_corrupted_full.get(k, np.nan) for k in kinds]
            label = f"{r.method}{'@' + r.repaired_on if r.repaired_on else ''}"
            ax.plot(angles + angles[:1], vals + vals[:1], label=f"{label} corrupted")
            if r.accuracy_clean is not None:
                ax.plot(angles + angles[:1], [r.accuracy_clean] * (len(kinds) + 1), "--",
                        label=f"{label} clean")
        ax.set_xticks(angles)
        ax.set_xticklabels(kinds)
    ax.set_ylim(0, 1)
    ax.legend(loc="lower left", fontsize=6, bbox_to_anchor=(-0.1, -0.15))
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def _plot_cross(matrix: CrossMatrix, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(matrix.cols)), 4))
    width = 0.8 / max(1, len(matrix.rows))
    x = np.arange(len(matrix.cols))
    for i, r in enumerate(matrix.rows):
        ax.bar(x + i * width, matrix.values[i], width, label=f"repaired on {r}")
    ax.set_xticks(x + width * (len(matrix.rows) - 1) / 2)
    ax.set_xticklabels(matrix.cols)
    ax.set_ylabel("held-out failure accuracy")
    ax.set_ylim(0, 1)
    ax.set_title(matrix.method)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def emit_report(reports, out_dir, matrices=(), ablation_rows=None, plots=True):
    """Write ``results.csv`` (and ``cross_matrix.csv``, ``ablation.csv``, plots) under ``out_dir``."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out_dir}: {exc}") from exc
    written = [out_dir / "results.csv"]
    _write(written[0], results_csv(reports))
    if matrices:
        parts = []
        for m in matrices:
            parts.append(f"# method={m.method}\n" + m.to_csv())
        written.append(out_dir / "cross_matrix.csv")
        _write(written[-1], "".join(parts))
    if ablation_rows:
        written.append(out_dir / "ablation.csv")
        _write(written[-1], "".join(ablation_csv(rows, kind) if i == 0 else
                                    ablation_csv(rows, kind).split("\n", 1)[1]
                                    for i, (kind, rows) in enumerate(sorted(ablation_rows.items()))))
    if plots:
        (out_dir / "plots").mkdir(exist_ok=True)
        _plot_radar(reports, out_dir / "plots" / "clean_vs_corrupted.png")
        written.append(out_dir / "plots" / "clean_vs_corrupted.png")
        for m in matrices:
            p = out_dir / "plots" / f"cross_{m.method or 'matrix'}.png"
            _plot_cross(m, p)
            written.append(p)
    return written


def load_cross_matrices(path):
    text = Path(path).read_text()
    out = []
    for chunk in text.split("# method=")[1:]:
        method, body = chunk.split("\n", 1)
        out.append(CrossMatrix.from_csv(body, method))
    return out
