"""Full-information reference solver and equilibrium certifier.

Solves the variational inequality whose solution is the shared-multiplier
equilibrium of the bidding game, entirely independently of the distributed
iteration: an extragradient loop on the closed-form affine gradient with
Euclidean projections onto the admissible-bid region. Also provides the
equilibrium-condition residual, per-agent best responses, and a brute-force
grid certification for desk-size problems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .errors import ConvergenceError, InfeasibleError
from .game import GameModel, affine_form, objective, pseudo_gradient
from .graphs import CommGraph, build_graph
from .market import (
    AggregatorParams,
    MarketInstance,
    TransmissionLine,
    build_feasible_set,
    project_feasible,
    slater_point,
)
from .tuning import uniformity_gap


@dataclass(frozen=True)
class VgneCertificate:
    """Solution bundle: bids, shared multiplier, and how well they certify.

    ``kkt_residual`` is the worst violation of the equilibrium conditions;
    ``best_response_gap[n]`` is how far agent n's bid sits from its own best
    response against the others.
    """

    beta_star: np.ndarray
    gamma2: np.ndarray
    kkt_residual: float
    best_response_gap: np.ndarray

    def to_dict(self) -> dict:
        return {
            "beta_star": self.beta_star.tolist(),
            "gamma2": self.gamma2.tolist(),
            "kkt_residual": self.kkt_residual,
            "best_response_gap": self.best_response_gap.tolist(),
        }


def solve_vgne(gm: GameModel, tol: float = 1e-8, max_iter: int = 200000) -> VgneCertificate:
    """Reference equilibrium via an extragradient iteration.

    The step size is 0.9 over the norm of the affine gradient matrix; the
    loop terminates once the unit-step natural residual
    ``max |beta - proj(beta - F(beta))|`` reaches tol. The shared
    multiplier is reconstructed afterwards from the active rows.

    Raises
    ------
    InfeasibleError
        If the admissible region is empty or has no strictly feasible point.
    ConvergenceError
        If the iteration cap is reached first.
    """
    fs = gm.fs
    start = slater_point(fs)
    af = affine_form(gm)
    gamma = 0.9 / np.linalg.norm(af.mat, 2)
    proj_tol = min(1e-12, tol * 1e-3)

    x = start
    corr_half = corr_full = corr_check = None
    # The step-scaled residual bounds the unit-step one from above once
    # divided by the step, so checking at gamma * tol is conservative.
    trigger = gamma * tol * 0.5
    for _ in range(max_iter):
        y, corr_half, _ = project_feasible(fs, x - gamma * af(x), tol=proj_tol, corrections=corr_half)
        x_next, corr_full, _ = project_feasible(fs, x - gamma * af(y), tol=proj_tol, corrections=corr_full)
        moved = float(np.abs(x_next - x).max())
        half_res = float(np.abs(y - x).max())
        x = x_next
        if moved <= trigger and half_res <= trigger:
            check, corr_check, _ = project_feasible(fs, x - af(x), tol=proj_tol, corrections=corr_check)
            natural = float(np.abs(x - check).max())
            if natural <= tol:
                gamma2 = _recover_multiplier(gm, x)
                return VgneCertificate(
                    beta_star=x,
                    gamma2=gamma2,
                    kkt_residual=kkt_residual(gm, x, gamma2),
                    best_response_gap=np.array(
                        [abs(best_response(gm, n, np.delete(x, n)) - x[n]) for n in range(x.size)]
                    ),
                )
    check, _, _ = project_feasible(fs, x - af(x), tol=proj_tol)
    natural = float(np.abs(x - check).max())
    raise ConvergenceError(
        f"extragradient did not reach tolerance {tol:.1e} within {max_iter} "
        f"iterations (natural residual {natural:.3e})",
        residual=natural,
        iterations=max_iter,
    )


def _recover_multiplier(gm: GameModel, beta_star: np.ndarray) -> np.ndarray:
    """Nonnegative multiplier on the active coupling rows.

    Solves a nonnegative least-squares fit of the stationarity condition,
    with slack variables for the box-active coordinates, and scatters the
    row weights back into a full-length multiplier vector.
    """
    fs = gm.fs
    n, m = fs.n_agents, fs.n_rows
    grad = pseudo_gradient(gm, beta_star)

    scale = 1.0 + float(np.abs(fs.d).max())
    active = np.abs(fs.A_tilde @ beta_star - fs.d) <= 1e-6 * scale
    span = 1.0 + abs(fs.beta_max) + abs(fs.beta_min)
    at_lower = np.abs(beta_star - fs.beta_min) <= 1e-7 * span
    at_upper = np.abs(beta_star - fs.beta_max) <= 1e-7 * span

    design = np.hstack(
        [fs.A_tilde.T[:, active], -np.eye(n)[:, at_lower], np.eye(n)[:, at_upper]]
    )
    if design.shape[1] == 0:
        return np.zeros(m)
    weights, _ = nnls(design, -grad)
    gamma2 = np.zeros(m)
    gamma2[active] = weights[: int(active.sum())]
    return gamma2


def kkt_residual(gm: GameModel, beta, gamma2) -> float:
    """Worst violation of the equilibrium conditions at (bids, multiplier).

    The maximum of: the distance of the negated multiplier-augmented
    gradient to the bid box's normal cone, the worst primal violation (box
    or coupling rows), and the complementarity mismatch between the
    multiplier and the coupling slack.
    """
    fs = gm.fs
    beta = np.asarray(beta, dtype=float)
    gamma2 = np.asarray(gamma2, dtype=float)
    if gamma2.shape != (fs.n_rows,):
        raise ValueError(f"expected a multiplier of length {fs.n_rows}, got {gamma2.shape}")
    if np.any(gamma2 < -1e-12):
        raise ValueError("multiplier must be nonnegative")
    gamma2 = np.maximum(gamma2, 0.0)

    v = -(pseudo_gradient(gm, beta) + fs.A_tilde.T @ gamma2)
    span = 1.0 + abs(fs.beta_max) + abs(fs.beta_min)
    at_lower = np.abs(beta - fs.beta_min) <= 1e-8 * span
    at_upper = np.abs(beta - fs.beta_max) <= 1e-8 * span
    dist = np.abs(v)
    # At the lower bound any nonpositive entry is in the cone; at the upper
    # bound any nonnegative one. Coordinates on both bounds are free.
    dist[at_lower] = np.maximum(v[at_lower], 0.0)
    dist[at_upper] = np.maximum(-v[at_upper], 0.0)
    dist[at_lower & at_upper] = 0.0
    stationarity = float(dist.max())

    slack = fs.d - fs.A_tilde @ beta
    primal = max(
        float(np.maximum(-slack, 0.0).max(initial=0.0)),
        float(np.maximum(fs.beta_min - beta, 0.0).max()),
        float(np.maximum(beta - fs.beta_max, 0.0).max()),
    )
    complementarity = float(abs(gamma2 @ slack))
    return max(stationarity, primal, complementarity)


def _own_bid_interval(gm: GameModel, n: int, beta_others) -> tuple:
    """Feasible interval for agent n's bid with the other bids fixed.

    Raises
    ------
    InfeasibleError
        If the interval is empty (the others exhaust the coupling budget).
    """
    fs = gm.fs
    beta_others = np.asarray(beta_others, dtype=float)
    if beta_others.shape != (fs.n_agents - 1,):
        raise ValueError(
            f"expected the other {fs.n_agents - 1} bids, got shape {beta_others.shape}"
        )
    full = np.insert(beta_others, n, 0.0)
    rhs = fs.d - fs.A_tilde @ full
    col = fs.A_tilde[:, n]
    lo, hi = fs.beta_min, fs.beta_max
    tiny = 1e-12 * (1.0 + float(np.abs(col).max()))
    feas_tol = 1e-9 * (1.0 + float(np.abs(fs.d).max()))
    for i in range(fs.n_rows):
        if col[i] > tiny:
            hi = min(hi, rhs[i] / col[i])
        elif col[i] < -tiny:
            lo = max(lo, rhs[i] / col[i])
        elif rhs[i] < -feas_tol:
            raise InfeasibleError(
                f"coupling row {i} cannot be satisfied by agent {n} alone"
            )
    if lo > hi + 1e-12 * (1.0 + abs(hi)):
        raise InfeasibleError(
            f"agent {n} has no admissible bid against the given profile "
            f"(interval [{lo:.6g}, {hi:.6g}])"
        )
    return lo, min(hi, fs.beta_max)


def best_response(gm: GameModel, n: int, beta_others) -> float:
    """Agent n's optimal bid against fixed opponent bids.

    The objective is a strictly convex parabola in the own bid and the
    admissible set an interval, so the optimum is the unconstrained vertex
    clamped to that interval.
    """
    lo, hi = _own_bid_interval(gm, n, beta_others)
    af = affine_form(gm)
    full = np.insert(np.asarray(beta_others, dtype=float), n, 0.0)
    slope_rest = float(af.mat[n] @ full + af.vec[n])
    vertex = -slope_rest / float(af.mat[n, n])
    return min(max(vertex, lo), hi)


def grid_certify(gm: GameModel, beta_star, grid_step: float = 0.01, tol: float = 1e-6) -> bool:
    """Brute-force equilibrium check for desk-size games (at most 3 agents).

    Scans each agent's admissible interval on a grid and verifies that no
    unilateral deviation improves that agent's objective by more than tol.
    """
    beta_star = np.asarray(beta_star, dtype=float)
    n_agents = gm.inst.n_agents
    if n_agents > 3:
        raise ValueError("grid certification is limited to three agents")
    for n in range(n_agents):
        others = np.delete(beta_star, n)
        lo, hi = _own_bid_interval(gm, n, others)
        grid = np.arange(lo, hi, grid_step)
        grid = np.append(grid, hi)
        base = objective(gm, n, beta_star)
        candidate = beta_star.copy()
        for value in grid:
            candidate[n] = value
            if objective(gm, n, candidate) < base - tol:
                return False
    return True


def random_instance(seed=None, rng=None):
    """Reproducible random problem with a strictly feasible region.

    Draws 2..6 agents and 0..3 lines, sizes capacities and line limits so
    the uniform allocation is strictly feasible, and redraws curvatures in
    the rare case the cost-uniformity requirement fails. Returns
    (instance, graph).
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    while True:
        n = int(rng.integers(2, 7))
        h = int(rng.integers(0, 4))
        r = float(rng.uniform(5.0, 50.0)) * n
        alpha = float(rng.uniform(0.5, 2.0))
        a = rng.uniform(0.001, 0.02, n)
        b = rng.uniform(0.1, 1.0, n)
        share = r / n
        hi = share * float(rng.uniform(1.6, 2.5))
        lo = 0.0 if rng.random() < 0.5 else -0.3 * hi
        xhat = share * rng.uniform(1.2, 2.0, n)
        e = rng.uniform(-hi, hi, n)
        pi = rng.uniform(-1.0, 1.0, (h, n))
        base_flow = np.abs(pi @ (e - share)) if h else np.zeros(0)
        fhat = base_flow * rng.uniform(1.3, 2.0, h) + rng.uniform(0.05, 0.2, h) * r

        inst = MarketInstance(
            r=r,
            alpha=alpha,
            beta_min=float(lo),
            beta_max=float(hi),
            agents=tuple(
                AggregatorParams(a=float(a[i]), b=float(b[i]), e=float(e[i]), xhat=float(xhat[i]))
                for i in range(n)
            ),
            lines=tuple(
                TransmissionLine(pi_row=pi[l], fhat=float(fhat[l])) for l in range(h)
            ),
        )
        gap, _ = uniformity_gap(inst)
        if gap < 0:
            continue

        edges = [(i, i + 1, float(rng.uniform(0.5, 2.0))) for i in range(n - 1)]
        for u in range(n):
            for v in range(u + 2, n):
                if rng.random() < 0.3:
                    edges.append((u, v, float(rng.uniform(0.5, 2.0))))
        graph = build_graph(n, edges)

        # The uniform allocation share is a strictly feasible bid profile by
        # construction; fail loudly if the draw ever breaks that.
        slater_point(build_feasible_set(inst))
        return inst, graph
