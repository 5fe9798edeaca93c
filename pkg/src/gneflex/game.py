"""Aggregator objectives and their stacked partial gradients.

Each aggregator's revenue couples to the other bids only through the bid
total, which makes the stacked gradient affine in the bids for the affine
prosumer pricing used here. The extended variant replaces the true bid
average by a per-agent local estimate and is the nonlinearity driving the
distributed solver's forward step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market import AggregatorParams, FeasibleSet, MarketInstance, build_feasible_set


@dataclass(frozen=True)
class GameModel:
    """Market instance bundled with its admissible-bid region."""

    inst: MarketInstance
    fs: FeasibleSet

    @classmethod
    def from_instance(cls, inst: MarketInstance) -> "GameModel":
        return cls(inst=inst, fs=build_feasible_set(inst))


@dataclass(frozen=True)
class AffineForm:
    """Closed form of the stacked gradient: F(beta) = mat @ beta + vec."""

    mat: np.ndarray
    vec: np.ndarray

    def __call__(self, beta) -> np.ndarray:
        return self.mat @ np.asarray(beta, dtype=float) + self.vec


def cost(params: AggregatorParams, x: float) -> float:
    """Payment from an aggregator to its prosumers for adjustment x (kWh)."""
    return params.a * x * x + params.b * x


def marginal_cost(params: AggregatorParams, x: float) -> float:
    """Derivative of the prosumer payment at adjustment x."""
    return 2.0 * params.a * x + params.b


def objective(gm: GameModel, n: int, beta) -> float:
    """Net payment of agent n (cost minus revenue) at a bid profile.

    Expressed directly on the bids by substituting the cleared price and
    allocation; agrees with the cost-minus-price-times-adjustment form to
    machine precision.
    """
    inst = gm.inst
    beta = np.asarray(beta, dtype=float)
    N = inst.n_agents
    resid = inst.r - beta.sum()
    x_n = resid / N + beta[n]
    return cost(inst.agents[n], x_n) - (resid + N * beta[n]) * resid / (inst.alpha * N * N)


def pseudo_gradient(gm: GameModel, beta) -> np.ndarray:
    """Stacked per-agent partial derivatives of the objectives in own bids."""
    inst = gm.inst
    beta = np.asarray(beta, dtype=float)
    N = inst.n_agents
    if beta.shape != (N,):
        raise ValueError(f"expected a bid vector of length {N}, got shape {beta.shape}")
    resid = inst.r - beta.sum()
    x = resid / N + beta
    marg = 2.0 * inst.a_vec * x + inst.b_vec
    return (N - 1) / N * marg + (-resid * (N - 2) + N * beta) / (inst.alpha * N * N)


def extended_pseudo_gradient(gm: GameModel, beta, sigma) -> np.ndarray:
    """Stacked gradient with the bid average replaced by local estimates.

    Coincides with :func:`pseudo_gradient` whenever every entry of sigma
    equals the true bid average.
    """
    inst = gm.inst
    beta = np.asarray(beta, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    N = inst.n_agents
    if beta.shape != (N,) or sigma.shape != (N,):
        raise ValueError("bid and estimate vectors must both have length "
                         f"{N}, got {beta.shape} and {sigma.shape}")
    x = (inst.r - N * sigma) / N + beta
    marg = 2.0 * inst.a_vec * x + inst.b_vec
    return (N - 1) / N * marg + ((N * sigma - inst.r) * (N - 2) + N * beta) / (
        inst.alpha * N * N
    )


def affine_form(gm: GameModel) -> AffineForm:
    """Matrix/offset pair reproducing the stacked gradient exactly."""
    inst = gm.inst
    N = inst.n_agents
    a = inst.a_vec
    alpha = inst.alpha
    mat = (
        (2.0 * (N - 1) / N) * (a[:, None] * inst.centering)
        + (N - 2) / (alpha * N * N) * np.ones((N, N))
        + np.eye(N) / (alpha * N)
    )
    vec = (N - 1) / N * (2.0 * a * inst.r / N + inst.b_vec) - inst.r * (N - 2) / (
        alpha * N * N
    )
    return AffineForm(mat=mat, vec=vec)
