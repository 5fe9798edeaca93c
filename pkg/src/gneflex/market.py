"""Demand-response market model.

Price clearing, load-adjustment allocation, and the polyhedral region of
admissible bids, in both its global form (a stacked inequality system over
all bids) and its per-agent split form used by the distributed solver.

Units: energy quantities are kWh, prices are currency/kWh, cost curvatures
currency/kWh^2. All operations are pure functions of their inputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import linprog

from .errors import InfeasibleError


@dataclass(frozen=True)
class AggregatorParams:
    """Cost and flexibility data for a single aggregator.

    Attributes
    ----------
    a : float
        Cost curvature, currency/kWh^2. Must be positive.
    b : float
        Cost intercept, currency/kWh. Must be positive.
    e : float
        Pre-scheduled net load, kWh.
    xhat : float
        Load adjustment capacity, kWh. Must be nonnegative.
    """

    a: float
    b: float
    e: float
    xhat: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"cost curvature must be positive, got a={self.a}")
        if not self.b > 0:
            raise ValueError(f"cost intercept must be positive, got b={self.b}")
        if self.xhat < 0:
            raise ValueError(f"adjustment capacity must be >= 0, got xhat={self.xhat}")


@dataclass(frozen=True)
class TransmissionLine:
    """A congestible line: flow sensitivities to per-agent net load plus a
    symmetric capacity limit.

    pi_row[n] is the (dimensionless) sensitivity of this line's flow to the
    net load of agent n; fhat is the capacity in kWh.
    """

    pi_row: np.ndarray
    fhat: float

    def __post_init__(self):
        object.__setattr__(self, "pi_row", np.asarray(self.pi_row, dtype=float))
        if self.fhat < 0:
            raise ValueError(f"line capacity must be >= 0, got fhat={self.fhat}")


@dataclass(frozen=True)
class MarketInstance:
    """All public data of one demand-response clearing problem.

    Attributes
    ----------
    r : float
        Total load adjustment requirement, kWh (>= 0).
    alpha : float
        Price sensitivity imposed by the utility, positive.
    beta_min, beta_max : float
        Admissible bid box, kWh, identical for every agent.
    agents : tuple of AggregatorParams
        Per-agent data; at least two agents.
    lines : tuple of TransmissionLine
        Congestible lines; may be empty.
    """

    r: float
    alpha: float
    beta_min: float
    beta_max: float
    agents: tuple
    lines: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "lines", tuple(self.lines))
        if len(self.agents) < 2:
            raise ValueError("need at least two aggregators")
        if not self.alpha > 0:
            raise ValueError(f"price sensitivity must be positive, got alpha={self.alpha}")
        if self.r < 0:
            raise ValueError(f"adjustment requirement must be >= 0, got r={self.r}")
        if self.beta_min > self.beta_max:
            raise ValueError(
                f"empty bid box: beta_min={self.beta_min} > beta_max={self.beta_max}"
            )
        for line in self.lines:
            if line.pi_row.shape != (self.n_agents,):
                raise ValueError(
                    f"line sensitivity row has length {line.pi_row.size}, "
                    f"expected {self.n_agents}"
                )

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @cached_property
    def a_vec(self) -> np.ndarray:
        return np.array([p.a for p in self.agents])

    @cached_property
    def b_vec(self) -> np.ndarray:
        return np.array([p.b for p in self.agents])

    @cached_property
    def e_vec(self) -> np.ndarray:
        return np.array([p.e for p in self.agents])

    @cached_property
    def xhat_vec(self) -> np.ndarray:
        return np.array([p.xhat for p in self.agents])

    @cached_property
    def pi_matrix(self) -> np.ndarray:
        if not self.lines:
            return np.zeros((0, self.n_agents))
        return np.vstack([line.pi_row for line in self.lines])

    @cached_property
    def fhat_vec(self) -> np.ndarray:
        return np.array([line.fhat for line in self.lines])

    @cached_property
    def centering(self) -> np.ndarray:
        """The mean-removing projector applied to bids when allocating load."""
        n = self.n_agents
        return np.eye(n) - np.ones((n, n)) / n

    @cached_property
    def uniform_share(self) -> np.ndarray:
        """Per-agent share of the requirement under all-equal bids, kWh."""
        return np.full(self.n_agents, self.r / self.n_agents)


@dataclass(frozen=True)
class FeasibleSet:
    """Admissible-bid region: the box plus a stacked inequality system.

    ``A_tilde @ beta <= d`` collects the adjustment-capacity rows and the
    line-flow rows. ``d_split`` decomposes d into one vector per agent (the
    split isolates each agent's private e and xhat data); the rows of
    d_split sum to d.
    """

    A_tilde: np.ndarray
    d: np.ndarray
    d_split: np.ndarray
    beta_min: float
    beta_max: float

    @property
    def n_agents(self) -> int:
        return self.A_tilde.shape[1]

    @property
    def n_rows(self) -> int:
        return self.A_tilde.shape[0]

    @property
    def box(self) -> tuple:
        return (self.beta_min, self.beta_max)

    def agent_column(self, n: int) -> np.ndarray:
        return self.A_tilde[:, n]

    def to_dict(self) -> dict:
        return {
            "A_tilde": self.A_tilde.tolist(),
            "d": self.d.tolist(),
            "d_split": self.d_split.tolist(),
            "beta_min": self.beta_min,
            "beta_max": self.beta_max,
        }


@dataclass(frozen=True)
class FeasibilityReport:
    """Outcome of checking one bid vector against a FeasibleSet."""

    box_ok: bool
    coupling_ok: bool
    violated_rows: tuple = ()
    box_violations: tuple = ()
    max_violation: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.box_ok and self.coupling_ok


def _as_bid_vector(inst_or_fs, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    n = inst_or_fs.n_agents
    if beta.shape != (n,):
        raise ValueError(f"expected a bid vector of length {n}, got shape {beta.shape}")
    return beta


def clearing_price(inst: MarketInstance, beta) -> float:
    """Price cleared by the utility for a submitted bid vector.

    The price penalizes the gap between the requirement and the total bid;
    it is total: bids outside the box only trigger a warning.
    """
    beta = _as_bid_vector(inst, beta)
    if np.any(beta < inst.beta_min) or np.any(beta > inst.beta_max):
        warnings.warn("clearing a bid vector outside the admissible box", stacklevel=2)
    return float((inst.r - beta.sum()) / (inst.alpha * inst.n_agents))


def load_adjustment(inst: MarketInstance, beta) -> np.ndarray:
    """Per-agent cleared load adjustment, kWh.

    Each agent receives an equal share of the residual requirement plus its
    own bid; the result always sums to the requirement r exactly.
    """
    beta = _as_bid_vector(inst, beta)
    return (inst.r - beta.sum()) / inst.n_agents + beta


def build_feasible_set(inst: MarketInstance) -> FeasibleSet:
    """Assemble the stacked bid constraints and their per-agent split.

    Row blocks, in order: adjustment upper bounds, adjustment lower bounds,
    and (when lines are present) lower and upper line-flow limits, all
    expressed on bids through the mean-removing allocation map.
    """
    n = inst.n_agents
    A = inst.centering
    c = inst.uniform_share
    Pi = inst.pi_matrix
    fhat = inst.fhat_vec
    h = Pi.shape[0]

    PiA = Pi @ A
    A_tilde = np.vstack([A, -A, -PiA, PiA])
    flow = Pi @ (inst.e_vec - c)
    d = np.concatenate([inst.xhat_vec - c, c, fhat - flow, fhat + flow])

    # Uniform share of the public right-hand side, plus agent-n's private
    # capacity entry and net-load column terms.
    base = np.concatenate([-c, c, fhat + Pi @ c, fhat - Pi @ c]) / n
    d_split = np.tile(base, (n, 1))
    for i in range(n):
        d_split[i, i] += inst.agents[i].xhat
        if h:
            col = Pi[:, i] * inst.agents[i].e
            d_split[i, 2 * n : 2 * n + h] -= col
            d_split[i, 2 * n + h :] += col

    return FeasibleSet(
        A_tilde=A_tilde,
        d=d,
        d_split=d_split,
        beta_min=inst.beta_min,
        beta_max=inst.beta_max,
    )


def check_feasibility(fs: FeasibleSet, beta, tol: float = 1e-9) -> FeasibilityReport:
    """Check a bid vector against the box and the coupling rows.

    Returns a report listing every violated coupling row (index and amount)
    and every agent whose bid leaves the box.
    """
    beta = _as_bid_vector(fs, beta)
    box_viol = [
        (int(i), float(max(fs.beta_min - b, b - fs.beta_max)))
        for i, b in enumerate(beta)
        if b < fs.beta_min - tol or b > fs.beta_max + tol
    ]
    slack = fs.A_tilde @ beta - fs.d
    rows = [(int(i), float(s)) for i, s in enumerate(slack) if s > tol]
    worst = float(max([v for _, v in rows + box_viol], default=0.0))
    return FeasibilityReport(
        box_ok=not box_viol,
        coupling_ok=not rows,
        violated_rows=tuple(rows),
        box_violations=tuple(box_viol),
        max_violation=worst,
    )


def _project_halfspace(y, row, rhs, row_norm2):
    viol = row @ y - rhs
    if viol > 0.0:
        return y - row * (viol / row_norm2)
    return y


def project_feasible(
    fs: FeasibleSet,
    point,
    tol: float = 1e-10,
    max_cycles: int = 10**5,
    corrections: np.ndarray | None = None,
):
    """Euclidean projection onto the admissible-bid region.

    Cyclic Dykstra iteration over the coupling halfspaces and the box, with
    the box last so the result satisfies it exactly. ``corrections`` may
    carry the correction table of a previous call at a nearby point to warm
    start the iteration (shape (n_rows + 1, n_agents)).

    Returns
    -------
    (projected, corrections, cycles)

    Raises
    ------
    InfeasibleError
        If the region is empty (detected by a separate feasibility check
        when the iteration fails to settle).
    """
    v = _as_bid_vector(fs, point)
    m = fs.n_rows
    rows = fs.A_tilde
    row_norm2 = np.einsum("ij,ij->i", rows, rows)
    rhs = fs.d

    # A zero row encodes a constant constraint: infeasible iff its rhs < 0.
    degenerate = row_norm2 <= 1e-300
    if np.any(degenerate & (rhs < -tol)):
        raise InfeasibleError("empty feasible set: a constant coupling row is violated")

    if corrections is None:
        corrections = np.zeros((m + 1, v.size))
    elif corrections.shape != (m + 1, v.size):
        raise ValueError("corrections table has wrong shape")

    x = v.copy()
    for cycle in range(1, max_cycles + 1):
        drift = 0.0
        for i in range(m):
            if degenerate[i]:
                continue
            y = x + corrections[i]
            x = _project_halfspace(y, rows[i], rhs[i], row_norm2[i])
            new_corr = y - x
            drift += float(np.abs(new_corr - corrections[i]).max())
            corrections[i] = new_corr
        y = x + corrections[m]
        x = np.clip(y, fs.beta_min, fs.beta_max)
        new_corr = y - x
        drift += float(np.abs(new_corr - corrections[m]).max())
        corrections[m] = new_corr
        if drift <= tol:
            return x, corrections, cycle

    report = check_feasibility(fs, x, tol=10 * tol)
    if not report.feasible:
        raise InfeasibleError(
            "empty feasible set: projection did not settle within "
            f"{max_cycles} cycles (max violation {report.max_violation:.3e})"
        )
    return x, corrections, max_cycles


def modify_bids(fs: FeasibleSet, beta, tol: float = 1e-10, max_cycles: int = 10**5) -> np.ndarray:
    """Replace an inadmissible bid vector by the closest admissible one.

    Euclidean projection onto the admissible region; already-admissible bids
    are returned unchanged up to the projection tolerance.

    Raises
    ------
    InfeasibleError
        If the admissible region is empty.
    """
    beta = _as_bid_vector(fs, beta)
    _, radius = chebyshev_center(fs)
    if radius < -tol:
        raise InfeasibleError("empty feasible set")
    projected, _, _ = project_feasible(fs, beta, tol=tol, max_cycles=max_cycles)
    return projected


def chebyshev_center(fs: FeasibleSet):
    """Most interior bid vector and its slack radius.

    Maximizes s over (beta, s) subject to every coupling row holding with
    slack at least s * ||row|| and the box shrunk by s. A negative optimal
    radius certifies an empty region; a positive one certifies a strictly
    feasible point.
    """
    n = fs.n_agents
    norms = np.sqrt(np.einsum("ij,ij->i", fs.A_tilde, fs.A_tilde))
    keep = norms > 1e-300
    a_ub = np.hstack([fs.A_tilde[keep], norms[keep, None]])
    b_ub = fs.d[keep]
    if np.any(~keep & (fs.d < 0)):
        raise InfeasibleError("empty feasible set: a constant coupling row is violated")

    half_width = 0.5 * (fs.beta_max - fs.beta_min)
    c = np.zeros(n + 1)
    c[-1] = -1.0
    bounds = [(fs.beta_min, fs.beta_max)] * n + [(None, half_width)]
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not res.success:
        # HiGHS reports infeasibility only when even s -> -inf cannot
        # satisfy the box, i.e. the box itself is degenerate.
        raise InfeasibleError(f"feasibility probe failed: {res.message}")
    return res.x[:n], float(res.x[-1])


def slater_point(fs: FeasibleSet, min_slack: float = 1e-9) -> np.ndarray:
    """A strictly feasible bid vector, or an error when none exists.

    Uses the most interior point of the region and requires its coupling
    slack to clear ``min_slack``.
    """
    point, radius = chebyshev_center(fs)
    if radius < min_slack:
        raise InfeasibleError(
            f"no strictly feasible bid vector: interior radius {radius:.3e} "
            f"is below the required slack {min_slack:.1e}"
        )
    return point
