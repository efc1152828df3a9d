"""Cross-fitted welfare signals and empirical welfare maximisation over finite
classes of assignment rules defined on binary features.

Cells are ordered with feature 1 as the most significant digit and the value 1
before 0; for two features the order is (1,1), (1,0), (0,1), (0,0). A rule is a
0/1 vector over cells.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, IndexU
from .errors import ConfigError, DataError, OcppeError
from .inference import multiplier_matrix
from .interventions import Intervention
from .score import EstimatorConfig, ProcessFit, orthogonal_score

MAX_FEATURES = 4
_OPS = ("eq", "gt", "ge")


@dataclass(frozen=True)
class Feature:
    """Binary transform ``column op threshold``; threshold may be "median"."""

    column: str
    op: str = "eq"
    threshold: float | str = 1.0

    def __post_init__(self):
        if self.op not in _OPS:
            raise ConfigError(f"feature op must be one of {_OPS}, got {self.op!r}")
        if isinstance(self.threshold, str) and self.threshold != "median":
            raise ConfigError("feature threshold must be a number or 'median'")

    def resolve(self, data: Dataset) -> "Feature":
        """Fix a data-dependent threshold (the median) on ``data``."""
        if self.threshold == "median":
            return Feature(self.column, self.op, float(np.median(data.column(self.column))))
        return self

    def __call__(self, data: Dataset) -> np.ndarray:
        v = data.column(self.column)
        t = self.resolve(data).threshold
        if self.op == "eq":
            return (v == t).astype(int)
        if self.op == "gt":
            return (v > t).astype(int)
        return (v >= t).astype(int)

    def label(self):
        sym = {"eq": "==", "gt": ">", "ge": ">="}[self.op]
        return f"{self.column}{sym}{self.threshold:g}" if not isinstance(self.threshold, str) else \
            f"{self.column}{sym}{self.threshold}"


@dataclass
class PolicyClass:
    features: tuple[Feature, ...]
    rules: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        k = len(self.features)
        if not 1 <= k <= MAX_FEATURES:
            raise ConfigError(f"policy class needs 1 to {MAX_FEATURES} features, got {k}")
        self.features = tuple(self.features)
        cells = 2**k
        rules = np.array(list(itertools.product((0, 1), repeat=cells)), dtype=np.int8)
        # Fewer treated cells first, then treat earlier cells first.
        order = sorted(range(rules.shape[0]), key=lambda r: (int(rules[r].sum()), tuple(-rules[r])))
        self.rules = rules[order]

    @property
    def n_cells(self) -> int:
        return 2 ** len(self.features)

    def cell_labels(self):
        return [tuple(1 - b for b in bits) for bits in itertools.product((0, 1), repeat=len(self.features))]

    def cells(self, data: Dataset) -> np.ndarray:
        """Cell index of each observation."""
        k = len(self.features)
        idx = np.zeros(data.n, dtype=int)
        for j, f in enumerate(self.features):
            idx += (1 - f(data)) * 2 ** (k - 1 - j)
        return idx

    def resolve(self, data: Dataset) -> "PolicyClass":
        return PolicyClass(tuple(f.resolve(data) for f in self.features))

    def index_of(self, rule) -> int:
        rule = np.asarray(rule, dtype=np.int8)
        hits = np.flatnonzero(np.all(self.rules == rule, axis=1))
        if hits.size == 0:
            raise ValueError(f"rule {tuple(rule)} is not in the class")
        return int(hits[0])


# ---------------------------------------------------------------------------
# Cross-fitting


@dataclass
class CrossfitSignals:
    signals: np.ndarray
    folds: np.ndarray
    K: int
    seed: int
    u: IndexU

    @property
    def theta(self) -> float:
        return float(np.mean(self.signals))


def make_folds(n: int, K: int, seed: int) -> np.ndarray:
    """Fold label per observation; fold sizes differ by at most one."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 104729]))
    labels = np.arange(n) % K
    return labels[rng.permutation(n)]


def _fold_signals(data: Dataset, train, test, u: IndexU, intervention: Intervention, config):
    tr = data.subset(train)
    proc = ProcessFit(tr, [(u.tau1, u.tau2)], config)
    member = intervention.at(u.sigma) if u.sigma else intervention
    eta = proc.nuisance(u, member)
    return orthogonal_score(data.y[test], data.d[test], data.x[test], 0.0, eta)


def crossfit_scores(data: Dataset, u: IndexU, intervention: Intervention, K: int = 5, seed: int = 0,
                    config: EstimatorConfig | None = None, folds=None, n_jobs: int = 1) -> CrossfitSignals:
    """Score at theta = 0 for each observation, with nuisances fitted off its fold."""
    if K < 2:
        raise ConfigError("cross-fitting needs K >= 2")
    if data.n < 10 * K:
        raise DataError(f"cross-fitting with K={K} needs n >= {10 * K}, got {data.n}")
    folds = make_folds(data.n, K, seed) if folds is None else np.asarray(folds)
    jobs = [(np.flatnonzero(folds != k), np.flatnonzero(folds == k)) for k in range(K)]

    def run(k):
        try:
            return _fold_signals(data, *jobs[k], u, intervention, config)
        except OcppeError as exc:
            raise type(exc)(f"fold {k}: {exc}") from exc

    if n_jobs == 1:
        parts = [run(k) for k in range(K)]
    else:
        from joblib import Parallel, delayed

        parts = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(run)(k) for k in range(K))
    w = np.empty(data.n)
    for (_, test), part in zip(jobs, parts):
        w[test] = part
    return CrossfitSignals(w, folds, K, int(seed), u)


# ---------------------------------------------------------------------------
# Welfare and rule selection


def welfare(w, rule, cells) -> tuple[float, float]:
    """V_hat(pi) = mean(pi(X_i) w_i) and its standard error."""
    w = np.asarray(w, dtype=float)
    pi = np.asarray(rule)[np.asarray(cells)]
    v = pi * w
    V = float(v.mean())
    return V, float(np.std(v - V) / math.sqrt(w.shape[0]))


def rule_objectives(w, cells, n_cells: int, rules: np.ndarray) -> np.ndarray:
    """sum_i (2 pi(X_i) - 1) w_i for every rule, via per-cell sums."""
    s = np.bincount(np.asarray(cells), weights=np.asarray(w, dtype=float), minlength=n_cells)
    return (2 * rules - 1) @ s


def _argmax_first(obj: np.ndarray) -> int:
    # Rules are stored in tie-break order, so the first maximiser wins.
    return int(np.flatnonzero(obj == obj.max())[0])


@dataclass
class WelfareReport:
    rules: list
    values: np.ndarray
    se_analytic: np.ndarray
    se_bootstrap: np.ndarray
    selected: tuple
    fold_selections: list
    votes: list
    baseline: float
    cell_labels: list
    features: list
    u: IndexU
    K: int
    seed: int
    B: int

    def to_dict(self):
        return {
            "tau1": self.u.tau1,
            "tau2": self.u.tau2,
            "sigma": list(self.u.sigma),
            "features": self.features,
            "cells": [list(c) for c in self.cell_labels],
            "K": self.K,
            "seed": self.seed,
            "B": self.B,
            "baseline_treat_all": self.baseline,
            "selected_rule": list(self.selected),
            "fold_selections": [list(r) for r in self.fold_selections],
            "votes": self.votes,
            "rules": [
                {"rule": list(r), "gain": float(v), "se_analytic": float(a), "se_bootstrap": float(b)}
                for r, v, a, b in zip(self.rules, self.values, self.se_analytic, self.se_bootstrap)
            ],
        }


def ewm_select(w, cells, folds, pclass: PolicyClass):
    """Per-fold exhaustive argmax, then cell-wise majority vote (ties: do not treat)."""
    folds = np.asarray(folds)
    K = int(folds.max()) + 1
    picks = []
    for k in range(K):
        m = folds == k
        obj = rule_objectives(np.asarray(w)[m], np.asarray(cells)[m], pclass.n_cells, pclass.rules)
        picks.append(pclass.rules[_argmax_first(obj)])
    votes = np.sum(picks, axis=0)
    final = (2 * votes > K).astype(np.int8)
    return tuple(int(v) for v in final), [tuple(int(v) for v in p) for p in picks], votes.tolist()


def policy_report(data: Dataset, u: IndexU, intervention: Intervention, features: Sequence[Feature],
                  K: int = 5, seed: int = 0, B: int = 1000, config: EstimatorConfig | None = None,
                  n_jobs: int = 1, signals: CrossfitSignals | None = None) -> WelfareReport:
    pclass = PolicyClass(tuple(features)).resolve(data)
    cf = signals or crossfit_scores(data, u, intervention, K, seed, config, n_jobs=n_jobs)
    cells = pclass.cells(data)
    w = cf.signals
    n = data.n
    rules = pclass.rules
    # One-dimensional means keep V(0) = 0 and V(1) = mean(w) exact.
    V = np.array([np.mean(r[cells] * w) for r in rules])
    k = pclass.n_cells
    sq = np.bincount(cells, weights=w * w, minlength=k)
    se = np.sqrt(np.maximum(rules @ sq / n - V**2, 0.0)) / math.sqrt(n)
    # Bootstrap draws of mean(xi * (pi w - V)) through per-cell multiplier sums.
    xi = multiplier_matrix(n, B, seed, "gaussian")
    onehot = np.zeros((n, k))
    onehot[np.arange(n), cells] = w
    T = xi @ onehot
    boot = (T @ rules.T - xi.sum(axis=1)[:, None] * V[None, :]) / n
    se_b = boot.std(axis=0)
    selected, fold_sel, votes = ewm_select(w, cells, cf.folds, pclass)
    return WelfareReport(
        [tuple(int(v) for v in r) for r in pclass.rules], V, se, se_b, selected, fold_sel, votes,
        float(np.mean(w)), pclass.cell_labels(), [f.label() for f in pclass.features], u, K, int(seed), B,
    )
