"""Variational Bayes for per-node regressions under a Gaussian scale mixture prior.

Each coefficient theta_i gets a Gaussian prior with its own variance tau_i;
tau_i has an exponential mixing density with rate alpha_i, and alpha_i a
Gamma(kappa, nu) hyperprior. The factorised posterior q(theta) q(tau) q(alpha)
is Gaussian x GIG(1/2) x Gamma, updated by coordinate ascent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .scm import CandidateSpace, Dataset, total_effect


@dataclass(frozen=True)
class VBConfig:
    kappa: float = 1e-6
    nu: float = 1e-6
    noise_precision: float = 1.0
    max_iter: int = 500
    tol: float = 1e-6

    def __post_init__(self) -> None:
        if self.kappa < 0 or not self.nu > 0 or not self.noise_precision > 0:
            raise ValueError("need kappa >= 0, nu > 0 and noise_precision > 0")
        if self.max_iter < 1 or not self.tol > 0:
            raise ValueError("need max_iter >= 1 and tol > 0")


@dataclass(frozen=True)
class MixingModel:
    """Mixing distribution for the local variances. Only one kind is implemented."""

    kind: str = "exponential-gamma"

    def __post_init__(self) -> None:
        if self.kind != "exponential-gamma":
            raise ValueError(f"unsupported mixing distribution {self.kind!r}")


@dataclass(frozen=True)
class VBNodeState:
    node: int
    parents: tuple[int, ...]
    theta_mean: np.ndarray
    theta_cov: np.ndarray
    tau_mean: np.ndarray
    inv_tau_mean: np.ndarray
    alpha_mean: np.ndarray
    iterations: int
    converged: bool

    def as_weights(self) -> dict[tuple[int, int], float]:
        return {(i, self.node): float(w) for i, w in zip(self.parents, self.theta_mean)}


class VBDivergenceError(FloatingPointError):
    def __init__(self, node: int, iteration: int):
        super().__init__(f"non-finite variational parameter for node {node} at iteration {iteration}")
        self.node = node
        self.iteration = iteration


def vb_expectations(a, b, kappa: float, nu: float, tau_mean):
    """Moments needed by the updates.

    Returns ``(E[tau], E[1/tau])`` under GIG(a, b, 1/2) with density
    proportional to tau^(-1/2) exp(-(a tau + b / tau) / 2), and the mean of
    Gamma(kappa + 1, nu + tau_mean / 2). Works elementwise on arrays.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    tau_mean = np.asarray(tau_mean, dtype=float)
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("GIG parameters must be positive")
    rate = nu + 0.5 * tau_mean
    if np.any(rate <= 0):
        raise ValueError("gamma rate nu + tau_mean / 2 must be positive")
    gig_mean = (1.0 + np.sqrt(a * b)) / a
    gig_inv_mean = np.sqrt(a / b)
    gamma_mean = (kappa + 1.0) / rate
    if gig_mean.ndim == 0:
        return float(gig_mean), float(gig_inv_mean), float(gamma_mean)
    return gig_mean, gig_inv_mean, gamma_mean


def _sweep(gram_s, xty_s, inv_tau, alpha, config: VBConfig):
    """One update of (theta, Sigma), then (E[tau], E[1/tau]), then E[alpha].

    ``gram_s`` and ``xty_s`` are already multiplied by the noise precision.
    Moments are inlined from :func:`vb_expectations` without its checks.
    """
    cov = np.linalg.inv(gram_s + np.diag(inv_tau))
    cov = 0.5 * (cov + cov.T)
    theta = cov @ xty_s
    second = theta * theta + cov.diagonal()
    tau = (1.0 + np.sqrt(alpha * second)) / alpha
    inv_tau_new = np.sqrt(alpha / second)
    alpha_new = (config.kappa + 1.0) / (config.nu + 0.5 * tau)
    return theta, cov, tau, inv_tau_new, alpha_new


def _flat(params: tuple) -> np.ndarray:
    theta, cov, tau, inv_tau, alpha = params
    return np.concatenate((theta, cov.ravel(), tau, inv_tau, alpha))


def _initial(k: int, config: VBConfig):
    inv_tau = np.ones(k)
    alpha = np.full(k, (config.kappa + 1.0) / config.nu)
    return inv_tau, alpha


def _empty_state(j: int) -> VBNodeState:
    z = np.zeros(0)
    return VBNodeState(j, (), z, np.zeros((0, 0)), z, z, z, 0, True)


def vb_fit_node(
    data: Dataset, node: str | int, allowed_parents: Sequence[str | int], config: VBConfig
) -> VBNodeState:
    """Coordinate ascent for one node's coefficient vector.

    One sweep updates q(theta), then q(tau) (giving E[tau] and E[1/tau]),
    then q(alpha). Stops when no variational parameter moves by ``tol`` or
    more, or after ``max_iter`` sweeps.
    """
    j = data.index(node)
    pa = tuple(data.index(p) for p in allowed_parents)
    if j in pa or len(set(pa)) != len(pa):
        raise ValueError("allowed parents must be distinct and exclude the node itself")
    if not pa:
        return _empty_state(j)
    cols = data.values[:, list(pa)]
    gram = cols.T @ cols
    xty = cols.T @ data.values[:, j]
    return _iterate(j, pa, gram, xty, config)


def _iterate(j, pa, gram, xty, config: VBConfig, start=None) -> VBNodeState:
    k = len(pa)
    if start is None:
        inv_tau, alpha = _initial(k, config)
        params = (np.zeros(k), np.zeros((k, k)), np.zeros(k), inv_tau, alpha)
    else:
        params = start
    converged = False
    it = 0
    with np.errstate(all="ignore"):
        gram_s = config.noise_precision * gram
        xty_s = config.noise_precision * xty
    flat = _flat(params)
    for it in range(1, config.max_iter + 1):
        with np.errstate(all="ignore"):
            try:
                new = _sweep(gram_s, xty_s, params[3], params[4], config)
            except np.linalg.LinAlgError:
                raise VBDivergenceError(j, it) from None
            new_flat = _flat(new)
            # NaN or inf anywhere in the new parameters propagates into ``change``
            change = np.abs(new_flat - flat).max()
        if not np.isfinite(change):
            raise VBDivergenceError(j, it)
        params, flat = new, new_flat
        if change < config.tol:
            converged = True
            break
    theta, cov, tau, inv_tau, alpha = params
    return VBNodeState(j, pa, theta, cov, tau, inv_tau, alpha, it, converged)


def vb_step(data: Dataset, state: VBNodeState, config: VBConfig) -> VBNodeState:
    """Apply exactly one more update sweep to ``state``."""
    if not state.parents:
        return state
    cols = data.values[:, list(state.parents)]
    gram = cols.T @ cols
    xty = cols.T @ data.values[:, state.node]
    start = (state.theta_mean, state.theta_cov, state.tau_mean, state.inv_tau_mean,
             state.alpha_mean)
    one = VBConfig(config.kappa, config.nu, config.noise_precision, 1, config.tol)
    out = _iterate(state.node, state.parents, gram, xty, one, start=start)
    return VBNodeState(out.node, out.parents, out.theta_mean, out.theta_cov, out.tau_mean,
                       out.inv_tau_mean, out.alpha_mean, state.iterations + 1, out.converged)


def vb_fit_all(
    data: Dataset, space: CandidateSpace, config: VBConfig, order: Sequence[int] | None = None
) -> dict[str, VBNodeState]:
    """Fit every node that has candidate parents; keys are node names.

    State indices refer to dataset columns. ``order`` only changes the
    sequence in which the independent fits run.
    """
    nodes = space.nodes
    order = range(len(nodes)) if order is None else order
    states = {}
    for j in order:
        inc = space.incoming(j)
        if not inc:
            continue
        parents = [nodes[space.edges[k][0]] for k in inc]
        states[nodes[j]] = vb_fit_node(data, nodes[j], parents, config)
    return {n: states[n] for n in nodes if n in states}


def vb_mie(
    states: Mapping[str, VBNodeState],
    space: CandidateSpace,
    x: str | int,
    y: str | int,
    x_value: float = 1.0,
    columns: Sequence[str] | None = None,
) -> float:
    """Plug-in effect over the full candidate graph using the variational means.

    ``columns`` names the dataset columns the state indices refer to; by
    default they are assumed to follow the space's node order.
    """
    nodes = space.nodes
    columns = nodes if columns is None else tuple(columns)
    weights = {}
    for j, name in enumerate(nodes):
        inc = space.incoming(j)
        if not inc:
            continue
        if name not in states:
            raise KeyError(f"no variational state for node {name!r}")
        st = states[name]
        fitted = {columns[i]: w for i, w in zip(st.parents, st.theta_mean)}
        for k in inc:
            parent = nodes[space.edges[k][0]]
            if parent not in fitted:
                raise KeyError(f"state for {name!r} lacks candidate parent {parent!r}")
            weights[space.edges[k]] = fitted[parent]
    return total_effect(space.dag_full, weights, x, y) * x_value
