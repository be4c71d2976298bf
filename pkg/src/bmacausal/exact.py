"""Conjugate linear-Gaussian inference and exact Bayesian model averaging.

Every node's structural equation has a zero-mean Gaussian prior with
variance ``coeff_var`` on each incoming coefficient and known noise
precision, so per-node posteriors and evidences are closed form. Graph
evidences are sums of per-node ("family") terms, which lets the enumeration
reuse one computation per (node, parent set).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import linalg

from .scm import (
    ENUMERATION_CAP,
    CandidateSpace,
    Dag,
    Dataset,
    effects_from_matrices,
    has_directed_path,
    log_prior_masks,
    total_effect,
)

LOG_2PI = np.log(2.0 * np.pi)
# candidate graphs per batched solve in the averaged estimators
_CHUNK = 4096


@dataclass(frozen=True)
class PriorConfig:
    coeff_var: float = 1.0
    noise_precision: float = 1.0

    def __post_init__(self) -> None:
        if not self.coeff_var > 0 or not self.noise_precision > 0:
            raise ValueError("coeff_var and noise_precision must be positive")


@dataclass(frozen=True)
class NodePosterior:
    node: int
    parents: tuple[int, ...]
    mean: np.ndarray
    cov: np.ndarray
    log_evidence: float


class _Family:
    """Sufficient statistics shared by all per-node computations on one dataset."""

    def __init__(self, values: np.ndarray, prior: PriorConfig):
        self.n = values.shape[0]
        self.gram = values.T @ values
        self.prior = prior

    def posterior(self, j: int, parents: Sequence[int], with_cov: bool = True) -> NodePosterior:
        s_eps = self.prior.noise_precision
        prec = 1.0 / self.prior.coeff_var
        parents = tuple(parents)
        k = len(parents)
        xx = self.gram[j, j]
        base = 0.5 * self.n * (np.log(s_eps) - LOG_2PI)
        if k == 0:
            log_ev = base - 0.5 * s_eps * xx
            return NodePosterior(j, parents, np.zeros(0), np.zeros((0, 0)), float(log_ev))
        idx = list(parents)
        g_ss = self.gram[np.ix_(idx, idx)]
        g_sj = self.gram[idx, j]
        a = s_eps * g_ss + prec * np.eye(k)
        chol = linalg.cho_factor(a, lower=True, check_finite=False)
        mu = s_eps * linalg.cho_solve(chol, g_sj, check_finite=False)
        resid = xx - 2.0 * mu @ g_sj + mu @ g_ss @ mu
        energy = 0.5 * s_eps * resid + 0.5 * prec * mu @ mu
        log_det_a = 2.0 * np.sum(np.log(np.diag(chol[0])))
        log_ev = 0.5 * k * np.log(prec) + base - energy - 0.5 * log_det_a
        cov = linalg.cho_solve(chol, np.eye(k), check_finite=False) if with_cov else None
        if cov is not None:
            cov = 0.5 * (cov + cov.T)
        return NodePosterior(j, parents, mu, cov, float(log_ev))


def _resolve(data: Dataset, nodes: Sequence[str | int]) -> list[int]:
    return [data.index(v) for v in nodes]


def node_posterior(
    data: Dataset, node: str | int, parents: Sequence[str | int], prior: PriorConfig
) -> NodePosterior:
    """Gaussian posterior of the coefficients on ``parents`` in the equation for ``node``.

    Sigma = (s_eps X'X + I / tau)^-1 and mu = s_eps Sigma X'x. Indices in the
    result refer to dataset columns.
    """
    j = data.index(node)
    pa = _resolve(data, parents)
    if j in pa:
        raise ValueError("a node cannot be its own parent")
    if len(set(pa)) != len(pa):
        raise ValueError("duplicate parents")
    return _Family(data.values, prior).posterior(j, pa)


def _graph_columns(data: Dataset, g: Dag) -> np.ndarray:
    try:
        return data.aligned_to(g.nodes)
    except KeyError as exc:
        raise ValueError(f"graph node missing from dataset: {exc}") from None


def log_marginal_graph(data: Dataset, g: Dag, prior: PriorConfig) -> float:
    """ln p(D | G): sum of per-node log evidences."""
    fam = _Family(_graph_columns(data, g), prior)
    return float(sum(fam.posterior(j, g.parents(j), with_cov=False).log_evidence
                     for j in range(g.n_nodes)))


def posterior_means(data: Dataset, g: Dag, prior: PriorConfig) -> dict[tuple[int, int], float]:
    """Posterior-mean coefficient for every edge of ``g`` (keys index ``g.nodes``)."""
    fam = _Family(_graph_columns(data, g), prior)
    weights = {}
    for j in range(g.n_nodes):
        post = fam.posterior(j, g.parents(j), with_cov=False)
        for i, w in zip(post.parents, post.mean):
            weights[(i, j)] = float(w)
    return weights


class _FamilyTable:
    """Per-node evidences and posteriors for every subset of each node's candidate parents."""

    def __init__(self, space: CandidateSpace, data: Dataset, prior: PriorConfig, with_cov=False):
        fam = _Family(_graph_columns(data, space.dag_full), prior)
        self.space = space
        self.incoming = [space.incoming(j) for j in range(len(space.nodes))]
        self.log_ev = []
        self.posts: list[list[NodePosterior]] = []
        for j, inc in enumerate(self.incoming):
            cand = [space.edges[k][0] for k in inc]
            lev, posts = [], []
            for code in range(2 ** len(inc)):
                pa = [cand[b] for b in range(len(inc)) if code >> b & 1]
                post = fam.posterior(j, pa, with_cov=with_cov)
                lev.append(post.log_evidence)
                posts.append(post)
            self.log_ev.append(np.array(lev))
            self.posts.append(posts)

    def codes(self, masks: np.ndarray) -> list[np.ndarray]:
        out = []
        for inc in self.incoming:
            code = np.zeros(masks.shape[0], dtype=np.int64)
            for b, k in enumerate(inc):
                code |= masks[:, k].astype(np.int64) << b
            out.append(code)
        return out

    def mean_table(self, j: int) -> np.ndarray:
        """Row ``code`` holds the posterior means on all candidate parents (0 where absent)."""
        inc = self.incoming[j]
        table = np.zeros((2 ** len(inc), len(inc)))
        for code, post in enumerate(self.posts[j]):
            cols = [b for b in range(len(inc)) if code >> b & 1]
            table[code, cols] = post.mean
        return table


@dataclass(frozen=True)
class GraphPosterior:
    """Posterior over every candidate graph, in enumeration order."""

    space: CandidateSpace
    masks: np.ndarray
    log_weights: np.ndarray
    weights: np.ndarray

    @cached_property
    def graphs(self) -> list[Dag]:
        return [self.space.graph_from_mask(row) for row in self.masks]

    def map_graph(self) -> Dag:
        return self.space.graph_from_mask(self.masks[int(np.argmax(self.log_weights))])

    def edge_marginals(self) -> np.ndarray:
        return self.weights @ self.masks


def normalize_log_weights(log_w: np.ndarray) -> np.ndarray:
    top = np.max(log_w)
    if not np.isfinite(top):
        raise ValueError("no candidate graph has positive posterior mass")
    w = np.exp(log_w - top)
    return w / w.sum()


def _posterior_from_table(table: _FamilyTable, masks: np.ndarray) -> GraphPosterior:
    log_w = log_prior_masks(table.space, masks)
    for lev, code in zip(table.log_ev, table.codes(masks)):
        log_w = log_w + lev[code]
    return GraphPosterior(table.space, masks, log_w, normalize_log_weights(log_w))


def graph_posterior(
    space: CandidateSpace, data: Dataset, prior: PriorConfig, cap: int = ENUMERATION_CAP
) -> GraphPosterior:
    """p(G | D) over all 2^|E| candidates: evidence times edge prior, max-shift normalized."""
    masks = space.edge_masks(cap)
    return _posterior_from_table(_FamilyTable(space, data, prior), masks)


def _endpoints(space: CandidateSpace, x, y) -> tuple[int, int]:
    xi, yi = space.dag_full.index(x), space.dag_full.index(y)
    if xi == yi:
        raise ValueError("x and y must differ")
    return xi, yi


def bma_mie_quasi(
    space: CandidateSpace,
    data: Dataset,
    prior: PriorConfig,
    x: str | int,
    y: str | int,
    x_value: float = 1.0,
    cap: int = ENUMERATION_CAP,
) -> float:
    """Posterior-weighted average of per-graph plug-in effects (posterior means as weights)."""
    xi, yi = _endpoints(space, x, y)
    masks = space.edge_masks(cap)
    table = _FamilyTable(space, data, prior)
    post = _posterior_from_table(table, masks)
    codes = table.codes(masks)
    mean_tables = [table.mean_table(j) for j in range(len(space.nodes))]
    m = len(space.nodes)
    effects = np.empty(masks.shape[0])
    for start in range(0, masks.shape[0], _CHUNK):
        sl = slice(start, start + _CHUNK)
        theta = np.zeros((len(effects[sl]), m, m))
        for j, inc in enumerate(table.incoming):
            if not inc:
                continue
            vals = mean_tables[j][codes[j][sl]]
            for b, k in enumerate(inc):
                theta[:, space.edges[k][0], j] = vals[:, b]
        effects[sl] = effects_from_matrices(theta, xi, yi)
    return float(post.weights @ effects) * x_value


def bma_mie_mc(
    space: CandidateSpace,
    data: Dataset,
    prior: PriorConfig,
    x: str | int,
    y: str | int,
    x_value: float = 1.0,
    n_samples: int = 1000,
    rng_seed=None,
    cap: int = ENUMERATION_CAP,
    return_stderr: bool = False,
):
    """Model average of the posterior-mean effect, with the inner integral done by sampling.

    For each graph with nonzero posterior weight and a directed x->y path,
    coefficients are drawn from the per-node Gaussian posteriors and the
    total effect is averaged over draws. With ``return_stderr`` the Monte
    Carlo standard error is returned as well.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    xi, yi = _endpoints(space, x, y)
    rng = np.random.default_rng(rng_seed)
    masks = space.edge_masks(cap)
    table = _FamilyTable(space, data, prior, with_cov=True)
    post = _posterior_from_table(table, masks)
    codes = table.codes(masks)
    m = len(space.nodes)
    estimate, variance = 0.0, 0.0
    for g_idx, weight in enumerate(post.weights):
        if weight == 0.0:
            continue
        g = space.graph_from_mask(masks[g_idx])
        if not has_directed_path(g, xi, yi):
            continue
        theta = np.zeros((n_samples, m, m))
        for j in range(m):
            node_post = table.posts[j][codes[j][g_idx]]
            if not node_post.parents:
                continue
            draws = rng.multivariate_normal(node_post.mean, node_post.cov, size=n_samples,
                                            method="cholesky")
            theta[:, list(node_post.parents), j] = draws
        effects = effects_from_matrices(theta, xi, yi)
        estimate += weight * effects.mean()
        if n_samples > 1:
            variance += weight**2 * effects.var(ddof=1) / n_samples
    if return_stderr:
        return estimate * x_value, np.sqrt(variance) * abs(x_value)
    return estimate * x_value


def plugin_effect(data: Dataset, g: Dag, prior: PriorConfig, x, y) -> float:
    """Total effect of ``g`` with its posterior-mean coefficients."""
    return total_effect(g, posterior_means(data, g, prior), x, y)
