"""Round-synchronous distributed equilibrium seeking.

Each agent holds a bid, an estimate of the average bid, a multiplier
estimate for the coupling rows, and two consensus auxiliaries. A round has
two message exchanges along graph edges: agents first share their estimate,
auxiliaries and multipliers, update their bid and auxiliaries, then share
the refreshed auxiliaries, and finally update estimate and multipliers.
No bids are ever transmitted.

Two engines execute the identical round: a pure-Python per-agent loop and
an optional compiled kernel (built from ``_fastround.pyx``), selected at
import time. ``step`` always runs the message-level Python path, which is
also the reference for the information contract: an agent's round output is
a function of its own local state and the payloads received from its
neighbors, nothing else.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import GneflexError
from .game import GameModel, extended_pseudo_gradient
from .graphs import CommGraph
from .market import AggregatorParams, FeasibleSet, MarketInstance
from .tuning import GainSet

try:
    from . import _fastround
except ImportError:  # pure-Python fallback
    _fastround = None


def available_engines() -> tuple:
    """Engines usable in this installation, fastest last."""
    return ("python", "compiled") if _fastround is not None else ("python",)


def _resolve_engine(name: str) -> str:
    if name == "auto":
        return "compiled" if _fastround is not None else "python"
    if name not in available_engines():
        raise GneflexError(
            f"engine {name!r} not available; choose from {available_engines()} or 'auto'"
        )
    return name


# ---------------------------------------------------------------------------
# state


@dataclass
class SolverState:
    """Full solver iterate plus the problem data it refers to.

    Arrays: beta, psi, sigma are (N,); z and lam are (N, M) with one row
    per agent. ``lam`` stays elementwise nonnegative and ``beta`` inside
    the bid box after every round (the projections are applied last).
    """

    inst: MarketInstance
    fs: FeasibleSet
    graph: CommGraph
    gains: GainSet
    beta: np.ndarray
    psi: np.ndarray
    sigma: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    k: int = 0

    def copy(self) -> "SolverState":
        return replace(
            self,
            beta=self.beta.copy(),
            psi=self.psi.copy(),
            sigma=self.sigma.copy(),
            z=self.z.copy(),
            lam=self.lam.copy(),
        )

    def omega(self) -> np.ndarray:
        """Stacked iterate (bids, psi, estimates, z, multipliers)."""
        return np.concatenate(
            [self.beta, self.psi, self.sigma, self.z.ravel(), self.lam.ravel()]
        )

    def agent(self, n: int) -> "AgentLocal":
        """Agent n's local view: its state plus its private problem data."""
        return AgentLocal(
            n=n,
            beta=float(self.beta[n]),
            psi=float(self.psi[n]),
            sigma=float(self.sigma[n]),
            z=self.z[n].copy(),
            lam=self.lam[n].copy(),
            params=self.inst.agents[n],
            coupling_col=self.fs.A_tilde[:, n].copy(),
            d_n=self.fs.d_split[n].copy(),
            tau=float(self.gains.tau[n]),
            upsilon=float(self.gains.upsilon[n]),
            rho=float(self.gains.rho[n]),
            delta=float(self.gains.delta[n]),
            eta=float(self.gains.eta[n]),
            kappa=self.gains.kappa,
            n_agents=self.inst.n_agents,
            r=self.inst.r,
            alpha=self.inst.alpha,
            beta_min=self.inst.beta_min,
            beta_max=self.inst.beta_max,
        )


@dataclass(frozen=True)
class AgentLocal:
    """Everything one agent may read while updating: its own state slice,
    its private data, its step sizes, and the public market scalars."""

    n: int
    beta: float
    psi: float
    sigma: float
    z: np.ndarray
    lam: np.ndarray
    params: AggregatorParams
    coupling_col: np.ndarray
    d_n: np.ndarray
    tau: float
    upsilon: float
    rho: float
    delta: float
    eta: float
    kappa: float
    n_agents: int
    r: float
    alpha: float
    beta_min: float
    beta_max: float


@dataclass(frozen=True)
class Phase1Messages:
    """First-exchange payloads one agent receives: per neighbor its current
    estimate, both auxiliaries and multipliers. Bids are never included."""

    senders: np.ndarray
    weights: np.ndarray
    sigma: np.ndarray
    psi: np.ndarray
    z: np.ndarray
    lam: np.ndarray


@dataclass(frozen=True)
class Phase2Messages:
    """Second-exchange payloads: the neighbors' refreshed auxiliaries."""

    senders: np.ndarray
    weights: np.ndarray
    psi: np.ndarray
    z: np.ndarray


@dataclass(frozen=True)
class RoundMessages:
    """All payloads of one round, indexed by receiving agent."""

    phase1: tuple
    phase2: tuple


# ---------------------------------------------------------------------------
# per-agent updates (information contract surface)


def _scalar_forward(a, b, n_agents, r, alpha, beta_n, sigma_n):
    """One agent's extended gradient from its bid and local estimate."""
    x = (r - n_agents * sigma_n) / n_agents + beta_n
    marg = 2.0 * a * x + b
    return (n_agents - 1) / n_agents * marg + (
        (n_agents * sigma_n - r) * (n_agents - 2) + n_agents * beta_n
    ) / (alpha * n_agents * n_agents)


def agent_phase1(local: AgentLocal, msgs: Phase1Messages):
    """Bid and auxiliary updates from the first exchange.

    Returns (beta_new, psi_new, z_new).
    """
    fh = _scalar_forward(
        local.params.a, local.params.b, local.n_agents, local.r, local.alpha,
        local.beta, local.sigma,
    )
    atl = float(local.coupling_col @ local.lam)
    beta_new = min(max(local.beta - local.tau * (fh + atl), local.beta_min), local.beta_max)
    psi_new = local.psi + local.upsilon * float(msgs.weights @ (local.sigma - msgs.sigma))
    z_new = local.z + local.delta * (msgs.weights @ (local.lam - msgs.lam))
    return beta_new, psi_new, z_new


def agent_phase2(
    local: AgentLocal,
    beta_new: float,
    psi_new: float,
    z_new: np.ndarray,
    msgs1: Phase1Messages,
    msgs2: Phase2Messages,
):
    """Estimate and multiplier updates once the refreshed auxiliaries of the
    neighbors have arrived.

    Returns (sigma_new, lam_new); the multiplier update projects onto the
    nonnegative orthant last.
    """
    mix_psi = float(msgs2.weights @ (2.0 * (psi_new - msgs2.psi) - (local.psi - msgs1.psi)))
    sigma_new = local.sigma + local.rho * (
        local.kappa * (local.beta - local.sigma) - mix_psi
    )
    lam_mix = msgs1.weights @ (local.lam - msgs1.lam)
    z_mix = msgs2.weights @ (2.0 * (z_new - msgs2.z) - (local.z - msgs1.z))
    arg = local.lam - local.eta * (
        lam_mix + local.d_n + local.coupling_col * (local.beta - 2.0 * beta_new) + z_mix
    )
    return sigma_new, np.maximum(arg, 0.0)


def replay_agent_round(local: AgentLocal, msgs1: Phase1Messages, msgs2: Phase2Messages):
    """Recompute one agent's full round from its local view and pinned
    message payloads alone. Used by the locality harness.

    Returns (beta_new, psi_new, z_new, sigma_new, lam_new).
    """
    beta_new, psi_new, z_new = agent_phase1(local, msgs1)
    sigma_new, lam_new = agent_phase2(local, beta_new, psi_new, z_new, msgs1, msgs2)
    return beta_new, psi_new, z_new, sigma_new, lam_new


# ---------------------------------------------------------------------------
# initialization


def init(
    inst: MarketInstance,
    fs: FeasibleSet,
    graph: CommGraph,
    gains: GainSet,
    omega0=None,
    seed: int | None = None,
) -> SolverState:
    """Build a solver state.

    By default every variable starts at zero with the bids projected onto
    the box. With ``seed`` the free variables are drawn reproducibly at
    random (bids uniform in the box, multipliers nonnegative). An explicit
    ``omega0 = (beta, psi, sigma, z, lam)`` is honored verbatim after
    validation.

    Raises
    ------
    ValueError
        If an explicit start has bids outside the box or negative
        multipliers, or dimensions disagree.
    """
    n, m = fs.n_agents, fs.n_rows
    if inst.n_agents != n:
        raise ValueError("instance and feasible set disagree on the number of agents")
    if graph.n_nodes != n:
        raise ValueError("communication graph size does not match the instance")
    for name in ("tau", "upsilon", "rho", "delta", "eta"):
        if getattr(gains, name).shape != (n,):
            raise ValueError(f"gain vector {name} must have length {n}")

    if omega0 is not None:
        beta, psi, sigma, z, lam = (np.array(part, dtype=float) for part in omega0)
        if beta.shape != (n,) or psi.shape != (n,) or sigma.shape != (n,):
            raise ValueError("scalar state blocks must have one entry per agent")
        if z.shape != (n, m) or lam.shape != (n, m):
            raise ValueError(f"z and lam must have shape ({n}, {m})")
        if np.any(beta < fs.beta_min) or np.any(beta > fs.beta_max):
            raise ValueError("initial bids must lie inside the admissible box")
        if np.any(lam < 0):
            raise ValueError("initial multipliers must be nonnegative")
    elif seed is not None:
        rng = np.random.default_rng(seed)
        scale = max(1.0, abs(fs.beta_min), abs(fs.beta_max))
        beta = rng.uniform(fs.beta_min, fs.beta_max, n)
        psi = rng.uniform(-scale, scale, n)
        sigma = rng.uniform(fs.beta_min, fs.beta_max, n)
        z = rng.uniform(-scale, scale, (n, m))
        lam = rng.uniform(0.0, scale, (n, m))
    else:
        beta = np.clip(np.zeros(n), fs.beta_min, fs.beta_max)
        psi = np.zeros(n)
        sigma = np.zeros(n)
        z = np.zeros((n, m))
        lam = np.zeros((n, m))

    return SolverState(
        inst=inst, fs=fs, graph=graph, gains=gains,
        beta=beta, psi=psi, sigma=sigma, z=z, lam=lam, k=0,
    )


# ---------------------------------------------------------------------------
# one synchronous round (message-level path)


def _gather_phase1(state: SolverState):
    msgs = []
    for n in range(state.inst.n_agents):
        idx = state.graph.neighbors[n]
        msgs.append(
            Phase1Messages(
                senders=idx,
                weights=state.graph.weights[n],
                sigma=state.sigma[idx],
                psi=state.psi[idx],
                z=state.z[idx],
                lam=state.lam[idx],
            )
        )
    return msgs


def step(state: SolverState, return_messages: bool = False):
    """Advance the state by one synchronous round.

    With ``return_messages=True`` also returns the payloads that flowed on
    each directed edge in both exchanges.
    """
    n_agents = state.inst.n_agents
    locals_ = [state.agent(n) for n in range(n_agents)]
    msgs1 = _gather_phase1(state)

    beta_new = np.empty(n_agents)
    psi_new = np.empty(n_agents)
    z_new = np.empty_like(state.z)
    for n in range(n_agents):
        beta_new[n], psi_new[n], z_new[n] = agent_phase1(locals_[n], msgs1[n])

    msgs2 = []
    for n in range(n_agents):
        idx = state.graph.neighbors[n]
        msgs2.append(
            Phase2Messages(
                senders=idx,
                weights=state.graph.weights[n],
                psi=psi_new[idx],
                z=z_new[idx],
            )
        )

    sigma_new = np.empty(n_agents)
    lam_new = np.empty_like(state.lam)
    for n in range(n_agents):
        sigma_new[n], lam_new[n] = agent_phase2(
            locals_[n], float(beta_new[n]), float(psi_new[n]), z_new[n],
            msgs1[n], msgs2[n],
        )

    new_state = replace(
        state, beta=beta_new, psi=psi_new, sigma=sigma_new, z=z_new, lam=lam_new,
        k=state.k + 1,
    )
    if return_messages:
        return new_state, RoundMessages(phase1=tuple(msgs1), phase2=tuple(msgs2))
    return new_state


# ---------------------------------------------------------------------------
# engines over a packed workspace


class _Workspace:
    """Contiguous copies of the state and problem data for the engines."""

    def __init__(self, state: SolverState):
        fs, g, gains, inst = state.fs, state.graph, state.gains, state.inst
        self.n, self.m = fs.n_agents, fs.n_rows
        self.beta = np.ascontiguousarray(state.beta, dtype=float)
        self.psi = np.ascontiguousarray(state.psi, dtype=float)
        self.sigma = np.ascontiguousarray(state.sigma, dtype=float)
        self.z = np.ascontiguousarray(state.z, dtype=float)
        self.lam = np.ascontiguousarray(state.lam, dtype=float)
        self.beta_new = np.empty_like(self.beta)
        self.psi_new = np.empty_like(self.psi)
        self.sigma_new = np.empty_like(self.sigma)
        self.z_new = np.empty_like(self.z)
        self.lam_new = np.empty_like(self.lam)

        self.a = np.ascontiguousarray(inst.a_vec, dtype=float)
        self.b = np.ascontiguousarray(inst.b_vec, dtype=float)
        self.acol = np.ascontiguousarray(fs.A_tilde.T, dtype=float)
        self.dsplit = np.ascontiguousarray(fs.d_split, dtype=float)
        self.tau = np.ascontiguousarray(gains.tau, dtype=float)
        self.ups = np.ascontiguousarray(gains.upsilon, dtype=float)
        self.rho = np.ascontiguousarray(gains.rho, dtype=float)
        self.dlt = np.ascontiguousarray(gains.delta, dtype=float)
        self.eta = np.ascontiguousarray(gains.eta, dtype=float)
        self.kappa = float(gains.kappa)
        self.r = float(inst.r)
        self.alpha = float(inst.alpha)
        self.lo = float(inst.beta_min)
        self.hi = float(inst.beta_max)

        self.nbr_idx = g.neighbors
        self.nbr_w = g.weights
        degrees = np.array([idx.size for idx in g.neighbors], dtype=np.intc)
        self.indptr = np.zeros(self.n + 1, dtype=np.intc)
        np.cumsum(degrees, out=self.indptr[1:])
        self.csr_nbr = np.concatenate(g.neighbors).astype(np.intc)
        self.csr_w = np.ascontiguousarray(np.concatenate(g.weights), dtype=float)

    def state_arrays(self):
        return (
            self.beta.copy(), self.psi.copy(), self.sigma.copy(),
            self.z.copy(), self.lam.copy(),
        )


def _python_one_round(ws: _Workspace) -> float:
    n_agents, r, alpha = ws.n, ws.r, ws.alpha
    beta, psi, sigma, z, lam = ws.beta, ws.psi, ws.sigma, ws.z, ws.lam
    for n in range(n_agents):
        fh = _scalar_forward(ws.a[n], ws.b[n], n_agents, r, alpha, beta[n], sigma[n])
        atl = float(ws.acol[n] @ lam[n])
        ws.beta_new[n] = min(max(beta[n] - ws.tau[n] * (fh + atl), ws.lo), ws.hi)
        idx, w = ws.nbr_idx[n], ws.nbr_w[n]
        ws.psi_new[n] = psi[n] + ws.ups[n] * float(w @ (sigma[n] - sigma[idx]))
        ws.z_new[n] = z[n] + ws.dlt[n] * (w @ (lam[n] - lam[idx]))
    for n in range(n_agents):
        idx, w = ws.nbr_idx[n], ws.nbr_w[n]
        mix_psi = float(w @ (2.0 * (ws.psi_new[n] - ws.psi_new[idx]) - (psi[n] - psi[idx])))
        ws.sigma_new[n] = sigma[n] + ws.rho[n] * (
            ws.kappa * (beta[n] - sigma[n]) - mix_psi
        )
        lam_mix = w @ (lam[n] - lam[idx])
        z_mix = w @ (2.0 * (ws.z_new[n] - ws.z_new[idx]) - (z[n] - z[idx]))
        arg = lam[n] - ws.eta[n] * (
            lam_mix + ws.dsplit[n] + ws.acol[n] * (beta[n] - 2.0 * ws.beta_new[n]) + z_mix
        )
        np.maximum(arg, 0.0, out=ws.lam_new[n])

    res = max(
        float(np.abs(ws.beta_new - beta).max()),
        float(np.abs(ws.psi_new - psi).max()),
        float(np.abs(ws.sigma_new - sigma).max()),
        float(np.abs(ws.z_new - z).max()),
        float(np.abs(ws.lam_new - lam).max()),
    )
    ws.beta[:] = ws.beta_new
    ws.psi[:] = ws.psi_new
    ws.sigma[:] = ws.sigma_new
    ws.z[:] = ws.z_new
    ws.lam[:] = ws.lam_new
    return res


def _python_rounds(ws: _Workspace, max_rounds: int, tol: float):
    executed, res = 0, float("nan")
    for _ in range(max_rounds):
        res = _python_one_round(ws)
        executed += 1
        if tol > 0.0 and res <= tol:
            break
    return executed, res


def _compiled_rounds(ws: _Workspace, max_rounds: int, tol: float):
    return _fastround.run_rounds(
        ws.beta, ws.psi, ws.sigma, ws.z, ws.lam,
        ws.beta_new, ws.psi_new, ws.sigma_new, ws.z_new, ws.lam_new,
        ws.a, ws.b, ws.acol, ws.dsplit,
        ws.tau, ws.ups, ws.rho, ws.dlt, ws.eta,
        ws.indptr, ws.csr_nbr, ws.csr_w,
        ws.kappa, ws.r, ws.alpha, ws.lo, ws.hi,
        max_rounds, tol,
    )


# ---------------------------------------------------------------------------
# run loop with optional recording


@dataclass(frozen=True)
class StopReason:
    converged: bool
    reason: str
    iterations: int
    residual: float


@dataclass
class Trajectory:
    """Recorded iterates: one row per recorded round."""

    k: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray
    lam: np.ndarray
    residuals: dict
    omega: np.ndarray | None = None

    RESIDUAL_KEYS = (
        "fixed_point",
        "sigma_consensus",
        "lambda_consensus",
        "sigma_tracking",
        "constraint_violation",
        "kkt",
    )

    def to_csv(self, path, metadata: dict | None = None):
        """Write rows as CSV: k, bids, estimates, then residual columns.

        Metadata entries become leading ``# key=value`` comment lines, so
        rows for one configuration and seed are byte-reproducible.
        """
        n = self.beta.shape[1]
        cols = (
            ["k"]
            + [f"beta_{i + 1}" for i in range(n)]
            + [f"sigma_{i + 1}" for i in range(n)]
            + [f"res_{key}" for key in self.RESIDUAL_KEYS]
        )
        with open(path, "w") as fh:
            for key, value in (metadata or {}).items():
                fh.write(f"# {key}={value}\n")
            fh.write(",".join(cols) + "\n")
            for row in range(self.k.size):
                cells = [str(int(self.k[row]))]
                cells += [repr(float(v)) for v in self.beta[row]]
                cells += [repr(float(v)) for v in self.sigma[row]]
                cells += [repr(float(self.residuals[key][row])) for key in self.RESIDUAL_KEYS]
                fh.write(",".join(cells) + "\n")


@dataclass
class RunResult:
    state: SolverState
    trajectory: Trajectory | None
    stop: StopReason


def _state_from_workspace(state: SolverState, ws: _Workspace, k: int) -> SolverState:
    beta, psi, sigma, z, lam = ws.state_arrays()
    return replace(state, beta=beta, psi=psi, sigma=sigma, z=z, lam=lam, k=k)


def run(
    state: SolverState,
    tol: float = 1e-8,
    max_iter: int = 10**5,
    record_stride: int = 0,
    record_omega: bool = False,
    engine: str = "auto",
) -> RunResult:
    """Iterate rounds until the max-norm round-to-round change reaches tol.

    ``record_stride > 0`` records the iterate and its residual metrics every
    that many rounds (plus the initial and final ones); ``record_omega``
    additionally stores the stacked iterate per recorded row, which the
    monotonicity checks need. Hitting ``max_iter`` is reported through the
    stop reason, not an exception.
    """
    eng = _resolve_engine(engine)
    rounds_fn = _compiled_rounds if eng == "compiled" else _python_rounds
    ws = _Workspace(state)
    gm = GameModel(state.inst, state.fs)

    recording = record_stride > 0
    rows = [] if recording else None

    def snapshot(k, fixed_point):
        snap = _state_from_workspace(state, ws, k)
        metrics = _residual_metrics(snap, gm)
        metrics["fixed_point"] = fixed_point
        rows.append(
            (
                k,
                ws.beta.copy(),
                ws.sigma.copy(),
                ws.lam.copy(),
                metrics,
                snap.omega() if record_omega else None,
            )
        )

    if recording:
        snapshot(state.k, float("nan"))

    executed = 0
    last_res = float("nan")
    converged = False
    while executed < max_iter:
        chunk = min(record_stride if recording else 4096, max_iter - executed)
        done, res = rounds_fn(ws, chunk, tol)
        executed += done
        last_res = res
        if recording:
            snapshot(state.k + executed, res)
        if tol > 0.0 and res <= tol:
            converged = True
            break

    final = _state_from_workspace(state, ws, state.k + executed)
    stop = StopReason(
        converged=converged,
        reason="tolerance reached" if converged else "iteration cap reached",
        iterations=executed,
        residual=last_res,
    )

    trajectory = None
    if recording:
        ks = np.array([row[0] for row in rows])
        residuals = {
            key: np.array([row[4][key] for row in rows]) for key in Trajectory.RESIDUAL_KEYS
        }
        trajectory = Trajectory(
            k=ks,
            beta=np.vstack([row[1] for row in rows]),
            sigma=np.vstack([row[2] for row in rows]),
            lam=np.stack([row[3] for row in rows]),
            residuals=residuals,
            omega=np.vstack([row[5] for row in rows]) if record_omega else None,
        )
    return RunResult(state=final, trajectory=trajectory, stop=stop)


# ---------------------------------------------------------------------------
# diagnostics


def _residual_metrics(state: SolverState, gm: GameModel) -> dict:
    from .oracle import kkt_residual  # local import: oracle also serves the CLI

    lap = state.graph.laplacian
    mean_bid = state.beta.mean()
    lam_bar = np.maximum(state.lam.mean(axis=0), 0.0)
    return {
        "sigma_consensus": float(np.abs(lap @ state.sigma).max()),
        "lambda_consensus": float(np.abs(lap @ state.lam).max()),
        "sigma_tracking": float(np.abs(state.sigma - mean_bid).max()),
        "constraint_violation": float(
            np.maximum(state.fs.A_tilde @ state.beta - state.fs.d, 0.0).max()
        ),
        "kkt": kkt_residual(gm, state.beta, lam_bar),
    }


def residuals(state: SolverState) -> dict:
    """Steady-state diagnostics of the current iterate.

    fixed_point is the max-norm change of one more round; the consensus
    entries measure disagreement of estimates and multipliers across the
    graph; sigma_tracking compares each agent's estimate with the true bid
    average; constraint_violation is the worst coupling-row violation; kkt
    evaluates the equilibrium conditions at the bids with the agent-averaged
    multiplier.
    """
    gm = GameModel(state.inst, state.fs)
    nxt = step(state)
    fixed_point = max(
        float(np.abs(nxt.beta - state.beta).max()),
        float(np.abs(nxt.psi - state.psi).max()),
        float(np.abs(nxt.sigma - state.sigma).max()),
        float(np.abs(nxt.z - state.z).max()),
        float(np.abs(nxt.lam - state.lam).max()),
    )
    metrics = _residual_metrics(state, gm)
    metrics["fixed_point"] = fixed_point
    return metrics


def dense_round(state: SolverState) -> SolverState:
    """Reference one-round map evaluated with full stacked matrices.

    Verification-only: builds the Laplacian Kronecker extension and the
    block-diagonal coupling map explicitly and applies the global update
    formulas, with no per-agent message passing involved.
    """
    inst, fs, g, gains = state.inst, state.fs, state.graph, state.gains
    n, m = fs.n_agents, fs.n_rows
    lap = g.laplacian
    lap_wide = np.kron(lap, np.eye(m))
    abar = np.zeros((n * m, n))
    for i in range(n):
        abar[i * m : (i + 1) * m, i] = fs.A_tilde[:, i]
    dbar = fs.d_split.ravel()
    eta_wide = np.repeat(gains.eta, m)
    dlt_wide = np.repeat(gains.delta, m)

    gm = GameModel(inst, fs)
    beta, psi, sigma = state.beta, state.psi, state.sigma
    z, lam = state.z.ravel(), state.lam.ravel()

    fh = extended_pseudo_gradient(gm, beta, sigma)
    beta1 = np.clip(beta - gains.tau * (fh + abar.T @ lam), inst.beta_min, inst.beta_max)
    psi1 = psi + gains.upsilon * (lap @ sigma)
    sigma1 = sigma + gains.rho * (
        gains.kappa * (beta - sigma) - lap @ (2.0 * psi1 - psi)
    )
    z1 = z + dlt_wide * (lap_wide @ lam)
    lam1 = np.maximum(
        lam
        - eta_wide * (lap_wide @ lam + dbar - abar @ (2.0 * beta1 - beta) + lap_wide @ (2.0 * z1 - z)),
        0.0,
    )
    return replace(
        state,
        beta=beta1,
        psi=psi1,
        sigma=sigma1,
        z=z1.reshape(n, m),
        lam=lam1.reshape(n, m),
        k=state.k + 1,
    )
