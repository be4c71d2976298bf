"""Comparison estimators: K2 structure search, single-graph plug-in, and IPW."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exact import PriorConfig, _Family, _graph_columns, plugin_effect
from .scm import CandidateSpace, Dag, Dataset


@dataclass(frozen=True)
class K2Step:
    node: str
    edge: tuple[str, str]
    accepted: bool


@dataclass(frozen=True)
class K2Trace:
    selected: Dag
    score_history: list[float]
    steps: list[K2Step] = field(default_factory=list)


def _log_odds(p: float) -> float:
    if p <= 0.0:
        return -np.inf
    if p >= 1.0:
        return np.inf
    return float(np.log(p) - np.log1p(-p))


def k2_search(space: CandidateSpace, data: Dataset, prior: PriorConfig) -> K2Trace:
    """Greedy forward parent selection, one pass per node in topological order.

    An edge is kept iff it strictly raises the node's log evidence plus the
    edge's prior log odds. ``score_history`` holds the graph's log posterior
    (up to the evidence normaliser) after every scanned edge.
    """
    fam = _Family(_graph_columns(data, space.dag_full), prior)
    nodes = space.nodes
    parents: dict[int, list[int]] = {j: [] for j in range(len(nodes))}
    node_score = {j: fam.posterior(j, [], with_cov=False).log_evidence for j in parents}
    with np.errstate(divide="ignore"):
        log_prior = float(np.sum(np.log1p(-np.asarray(space.edge_prob))))
    total = sum(node_score.values()) + log_prior
    history = [total]
    steps = []
    kept = []
    for j in space.dag_full.order:
        for k in space.incoming(j):
            i = space.edges[k][0]
            odds = _log_odds(space.edge_prob[k])
            cand = fam.posterior(j, parents[j] + [i], with_cov=False).log_evidence
            gain = cand - node_score[j] + odds
            accepted = bool(gain > 0)
            if accepted:
                parents[j].append(i)
                node_score[j] = cand
                kept.append(space.edges[k])
                # recompute rather than accumulate: a forced edge takes the prior from -inf
                total = sum(node_score.values()) + _kept_log_prior(space, kept)
            history.append(total)
            steps.append(K2Step(nodes[j], (nodes[i], nodes[j]), accepted))
    return K2Trace(space.dag_full.subgraph(kept), history, steps)


def _kept_log_prior(space: CandidateSpace, kept: Sequence[tuple[int, int]]) -> float:
    chosen = set(kept)
    with np.errstate(divide="ignore"):
        return float(sum(np.log(p) if e in chosen else np.log1p(-p)
                         for e, p in zip(space.edges, space.edge_prob)))


def estimate_via_graph(
    g: Dag, data: Dataset, prior: PriorConfig, x, y, x_value: float = 1.0
) -> float:
    """Effect of ``x`` on ``y`` under a single fixed graph with posterior-mean weights."""
    return plugin_effect(data, g, prior, x, y) * x_value


@dataclass(frozen=True)
class PropensityModel:
    coefficients: np.ndarray
    intercept: float
    penalty: float
    n_iter: int = 0
    converged: bool = False
    objective_history: tuple[float, ...] = ()

    def predict_proba(self, features) -> np.ndarray:
        z = np.asarray(features, dtype=float) @ self.coefficients + self.intercept
        return _sigmoid(z)


@dataclass(frozen=True)
class LogisticConfig:
    max_iter: int = 5000
    tol: float = 1e-6
    step: float = 1.0


class DegenerateInputError(ValueError):
    """Raised when a binary variable has only one observed class."""


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _nll(w, b, feats, labels):
    z = feats @ w + b
    # mean of log(1 + e^z) - y z, computed stably
    return float(np.mean(np.logaddexp(0.0, z) - labels * z))


def _nll_grad(w, b, feats, labels):
    r = _sigmoid(feats @ w + b) - labels
    return feats.T @ r / len(labels), float(r.mean())


def _soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _check_binary(labels: np.ndarray) -> np.ndarray:
    values = set(np.unique(labels).tolist())
    if not values <= {0.0, 1.0}:
        raise ValueError("labels must be 0/1")
    if len(values) < 2:
        raise DegenerateInputError("binary variable has a single class; both 0 and 1 are required")
    return labels


def logistic_l1_fit(
    features, labels, lam: float, config: LogisticConfig | None = None
) -> PropensityModel:
    """L1-penalised logistic regression by proximal gradient with backtracking.

    Minimises mean negative log likelihood + lam * sum |w|; the intercept is
    not penalised.
    """
    config = config or LogisticConfig()
    feats = np.asarray(features, dtype=float)
    if feats.ndim == 1:
        feats = feats[:, None]
    labels = _check_binary(np.asarray(labels, dtype=float))
    if lam < 0:
        raise ValueError("lam must be non-negative")
    n, d = feats.shape
    if len(labels) != n:
        raise ValueError("features and labels differ in length")
    w = np.zeros(d)
    ybar = labels.mean()
    b = float(np.log(ybar) - np.log1p(-ybar))
    step = config.step
    obj = _nll(w, b, feats, labels) + lam * np.abs(w).sum()
    history = [obj]
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        f0 = _nll(w, b, feats, labels)
        gw, gb = _nll_grad(w, b, feats, labels)
        while True:
            w_new = _soft_threshold(w - step * gw, step * lam)
            b_new = b - step * gb
            dw, db = w_new - w, b_new - b
            f1 = _nll(w_new, b_new, feats, labels)
            bound = f0 + gw @ dw + gb * db + (dw @ dw + db * db) / (2.0 * step)
            if f1 <= bound + 1e-15 or step < 1e-12:
                break
            step *= 0.5
        grad_map = np.sqrt(dw @ dw + db * db) / step
        new_obj = f1 + lam * np.abs(w_new).sum()
        if new_obj > obj:
            # sufficient-decrease guarantees this only at round-off level
            new_obj = obj
            w_new, b_new = w, b
        w, b, obj = w_new, b_new, new_obj
        history.append(obj)
        if grad_map < config.tol:
            converged = True
            break
        step *= 2.0
    if not np.all(np.isfinite(w)) or not np.isfinite(b):
        raise FloatingPointError("logistic fit produced non-finite coefficients")
    return PropensityModel(w, float(b), float(lam), it, converged, tuple(history))


def ipw_ate(
    data: Dataset,
    treatment: str,
    outcome: str,
    covariates: Sequence[str],
    lam: float | None = None,
    clip: float = 0.01,
) -> float:
    """Horvitz-Thompson ATE with an L1-logistic propensity on standardised covariates.

    ``lam`` defaults to 1/sqrt(N); propensities are clipped to [clip, 1 - clip].
    """
    x = _check_binary(data.column(treatment))
    y = data.column(outcome)
    n = data.n
    if covariates:
        w = data.aligned_to(covariates)
        sd = w.std(axis=0)
        sd[sd == 0] = 1.0
        w = (w - w.mean(axis=0)) / sd
    else:
        w = np.zeros((n, 0))
    lam = 1.0 / np.sqrt(n) if lam is None else lam
    model = logistic_l1_fit(w, x, lam)
    e = np.clip(model.predict_proba(w), clip, 1.0 - clip)
    return float(np.mean(x * y / e - (1.0 - x) * y / (1.0 - e)))
