"""Ranking metrics for node importance.

Conventions (written into every report header):

* NDCG uses linear gain on the raw true score, ``rel / log2(rank + 1)``.
* Predicted rankings break ties by node index ascending.
* Spearman is the Pearson correlation of average ranks.
* Fold aggregates use the population standard deviation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

DEFAULT_KS = (20, 50, 100, 200)
CONVENTIONS = "gain=linear\ttie_break=node_index_asc\tspearman=average_ranks\tstd=population"


class ConstantInputWarning(RuntimeWarning):
    pass


def ranking_order(scores) -> np.ndarray:
    """Indices sorted by score descending, ties by index ascending."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(len(scores)), -scores))


def ndcg_at_k(pred, true, k: int) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ValueError("pred and true must have equal length")
    if k < 1:
        raise ValueError("k must be >= 1")
    k = min(k, len(true))
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    dcg = float(true[ranking_order(pred)[:k]] @ discounts)
    idcg = float(np.sort(true)[::-1][:k] @ discounts)
    if idcg == 0:
        return 1.0
    return dcg / idcg


def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    boundaries = np.flatnonzero(np.diff(xs)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(x)]))
    ranks = np.empty(len(x))
    ranks[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    return ranks


def spearman(pred, true) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ValueError("pred and true must have equal length")
    if len(pred) < 2:
        raise ValueError("spearman needs at least two values")
    a = average_ranks(pred)
    b = average_ranks(true)
    a -= a.mean()
    b -= b.mean()
    denom = np.sqrt((a @ a) * (b @ b))
    if denom == 0:
        warnings.warn("spearman of a constant vector; returning 0", ConstantInputWarning,
                      stacklevel=2)
        return 0.0
    return float(np.clip((a @ b) / denom, -1.0, 1.0))


def evaluate_scores(pred, true, ks=DEFAULT_KS) -> dict:
    out = {"spearman": spearman(pred, true)}
    for k in ks:
        out[f"ndcg@{k}"] = ndcg_at_k(pred, true, k)
    return out


@dataclass
class MetricReport:
    """Per-fold metric values and their aggregate."""

    folds: list = field(default_factory=list)  # one dict per fold
    ks: tuple = DEFAULT_KS

    def add(self, values: dict):
        self.folds.append(dict(values))

    @property
    def names(self):
        return ["spearman"] + [f"ndcg@{k}" for k in self.ks]

    def mean(self, name) -> float:
        return float(np.mean([f[name] for f in self.folds]))

    def std(self, name) -> float:
        return float(np.std([f[name] for f in self.folds]))

    @property
    def spearman(self):
        return self.mean("spearman")

    @property
    def ndcg_at(self):
        return {k: self.mean(f"ndcg@{k}") for k in self.ks}

    def summary(self) -> dict:
        return {n: (self.mean(n), self.std(n)) for n in self.names}

    def format_table(self) -> str:
        return "  ".join(f"{n}={m:.3f} ± {s:.3f}" for n, (m, s) in self.summary().items())

    def to_tsv(self, config_echo: str = "") -> str:
        lines = [f"# {CONVENTIONS}"]
        lines += [f"# config\t{ln}" for ln in config_echo.splitlines() if ln.strip()]
        lines.append("\t".join(["fold"] + self.names))
        for i, f in enumerate(self.folds):
            lines.append("\t".join([str(i)] + [f"{f[n]:.6f}" for n in self.names]))
        lines.append("\t".join(["mean"] + [f"{self.mean(n):.6f}" for n in self.names]))
        lines.append("\t".join(["std"] + [f"{self.std(n):.6f}" for n in self.names]))
        return "\n".join(lines) + "\n"
