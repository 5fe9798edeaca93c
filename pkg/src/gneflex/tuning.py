"""Step-size selection for the distributed solver.

The solver's forward map is cocoercive when its mixing parameter kappa sits
in an interval determined by the cost curvatures; the admissible step sizes
then follow from that cocoercivity constant, the graph spectrum, and the
norm of the coupling columns. This module computes the constants in closed
form, picks safe defaults, and assembles the preconditioner whose positive
definiteness certifies that the iteration is an averaged operator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TuningError
from .graphs import CommGraph
from .market import FeasibleSet, MarketInstance

_SINGULAR_RATIO = 1e-13


def agent_curvatures(inst: MarketInstance):
    """Per-agent own- and cross-sensitivity of the extended gradient.

    Returns (mu, ell): mu[n] is the derivative of agent n's extended
    gradient in its own bid, ell[n] the derivative in its aggregate
    estimate.
    """
    N = inst.n_agents
    alpha = inst.alpha
    mu = 2.0 * inst.a_vec * (N - 1) / N + 1.0 / (alpha * N)
    ell = -2.0 * inst.a_vec * (N - 1) / N + (N - 2) / (alpha * N)
    return mu, ell


def uniformity_gap(inst: MarketInstance):
    """Slack of the cost-uniformity requirement.

    Returns (gap, gamma) where the requirement is
    sqrt(max mu) - sqrt(min mu) <= 2 * gamma; nonnegative gap means it
    holds. Sufficiently uniform cost curvatures always satisfy it.
    """
    mu, _ = agent_curvatures(inst)
    gamma = np.sqrt((inst.n_agents - 1) / (inst.alpha * inst.n_agents))
    gap = 2.0 * gamma - (np.sqrt(mu.max()) - np.sqrt(mu.min()))
    return float(gap), float(gamma)


def kappa_interval(inst: MarketInstance):
    """Open interval of admissible mixing parameters, clipped to (0, inf).

    Raises
    ------
    TuningError
        If the cost-uniformity requirement fails or the interval is empty.
    """
    gap, gamma = uniformity_gap(inst)
    if gap < 0:
        raise TuningError(
            "cost curvatures are too spread out for a common mixing "
            f"parameter (uniformity gap {gap:.3e} < 0)"
        )
    mu, _ = agent_curvatures(inst)
    lo = max(float(np.sqrt(mu.max()) - gamma), 0.0)
    hi = float(np.sqrt(mu.min()) + gamma)
    if not lo < hi:
        raise TuningError(f"empty mixing-parameter interval ({lo:.6g}, {hi:.6g})")
    return lo, hi


@dataclass(frozen=True)
class CocoercivityReport:
    """Cocoercivity constants of the solver's forward map.

    eps_bar[n] and eps_under[n] are the per-agent smallest-symmetric-part
    and twice-largest-squared-gain eigenvalues of the 2x2 sensitivity
    blocks; eps_tilde = min(eps_bar) / max(eps_under) is the cocoercivity
    constant of the bid/estimate part, and eps additionally accounts for
    the multiplier mixing through the graph.
    """

    mu: np.ndarray
    ell: np.ndarray
    gamma: float
    kappa: float
    kappa_interval: tuple
    eps_bar: np.ndarray
    eps_under: np.ndarray
    eps_tilde: float
    eps: float
    uniformity_gap: float

    def sensitivity_block(self, n: int) -> np.ndarray:
        """2x2 map from (bid, estimate) differences to forward-map differences."""
        return np.array(
            [[self.mu[n], self.ell[n]], [-self.kappa, self.kappa]]
        )


def cocoercivity_constants(
    inst: MarketInstance, g: CommGraph, kappa: float | None = None
) -> CocoercivityReport:
    """Closed-form cocoercivity constants for a given mixing parameter.

    ``kappa=None`` picks the midpoint of the admissible interval, which
    maximizes the distance to both ends where positive definiteness of the
    symmetrized sensitivity blocks is lost.

    Raises
    ------
    TuningError
        If kappa lies outside the admissible interval (cocoercivity is not
        guaranteed there) or the uniformity requirement fails.
    """
    lo, hi = kappa_interval(inst)
    if kappa is None:
        kappa = 0.5 * (lo + hi)
    if not (lo < kappa < hi):
        raise TuningError(
            f"cocoercivity not guaranteed: kappa={kappa:.6g} outside ({lo:.6g}, {hi:.6g})"
        )
    mu, ell = agent_curvatures(inst)
    gap, gamma = uniformity_gap(inst)

    eps_bar = kappa + mu - np.sqrt((mu - kappa) ** 2 + (ell - kappa) ** 2)
    eps_under = (
        mu**2
        + ell**2
        + 2.0 * kappa**2
        + np.sqrt((mu + ell) ** 2 * (mu - ell) ** 2 + 4.0 * (kappa**2 - mu * ell) ** 2)
    )
    if np.any(eps_bar <= 0):
        raise TuningError(
            "cocoercivity not guaranteed: a symmetrized sensitivity block "
            f"is not positive definite at kappa={kappa:.6g}"
        )
    eps_tilde = float(eps_bar.min() / eps_under.max())
    eps = min(eps_tilde, 1.0 / g.lambda_max)
    return CocoercivityReport(
        mu=mu,
        ell=ell,
        gamma=gamma,
        kappa=float(kappa),
        kappa_interval=(lo, hi),
        eps_bar=eps_bar,
        eps_under=eps_under,
        eps_tilde=eps_tilde,
        eps=float(eps),
        uniformity_gap=gap,
    )


@dataclass(frozen=True)
class GainSet:
    """Mixing parameter and per-agent step sizes, plus averagedness data.

    xi is the cocoercivity constant of the preconditioned forward map and
    theta = 1 / (2 - 1/(2 xi)) the averagedness parameter of the full
    iteration; theta in (0, 1) is what guarantees convergence.
    """

    kappa: float
    tau: np.ndarray
    upsilon: np.ndarray
    rho: np.ndarray
    delta: np.ndarray
    eta: np.ndarray
    xi: float = float("nan")
    theta: float = float("nan")

    def __post_init__(self):
        for name in ("tau", "upsilon", "rho", "delta", "eta"):
            vec = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, vec)
            if np.any(vec <= 0):
                raise ValueError(f"step sizes must be positive, got {name}={vec}")

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "tau": self.tau.tolist(),
            "upsilon": self.upsilon.tolist(),
            "rho": self.rho.tolist(),
            "delta": self.delta.tolist(),
            "eta": self.eta.tolist(),
            "xi": self.xi,
            "theta": self.theta,
        }


@dataclass(frozen=True)
class PreconditionerView:
    """Assembled preconditioner and the extreme eigenvalue of its inverse."""

    phi: np.ndarray
    lambda_max_phi_inv: float

    @property
    def dim(self) -> int:
        return self.phi.shape[0]

    def norm(self, vector) -> float:
        """Norm induced by the preconditioner."""
        v = np.asarray(vector, dtype=float)
        return float(np.sqrt(v @ (self.phi @ v)))


def coupling_block_norm(fs: FeasibleSet) -> float:
    """Largest singular value of the block-diagonal coupling map.

    The blocks are the per-agent coupling columns, so the norm is the
    largest column Euclidean norm.
    """
    return float(np.sqrt(np.einsum("ij,ij->j", fs.A_tilde, fs.A_tilde).max()))


def averagedness(xi: float) -> float:
    """Averagedness parameter of the composed iteration for a given xi."""
    return 1.0 / (2.0 - 1.0 / (2.0 * xi))


def default_gains(
    rep: CocoercivityReport, fs: FeasibleSet, g: CommGraph, safety: float = 0.95
) -> GainSet:
    """Safe step sizes: a fixed fraction of each strict bound.

    tau, upsilon and delta take safety * 2 * eps; rho and eta take safety
    divided by the lower bounds on their inverses. The assembled
    preconditioner is verified to dominate I / (2 eps), which makes the
    iteration averaged with theta in (0, 1).
    """
    if not 0 < safety < 1:
        raise ValueError(f"safety factor must lie in (0, 1), got {safety}")
    n = fs.n_agents
    eps = rep.eps
    tau = ups = dlt = safety * 2.0 * eps

    margin = 1.0 / tau - 1.0 / (2.0 * eps)  # > 0 since safety < 1
    lam2 = g.lambda_max**2
    rho_inv_bound = lam2 / margin + 1.0 / (2.0 * eps)
    eta_inv_bound = coupling_block_norm(fs) ** 2 / margin + lam2 / margin + 1.0 / (2.0 * eps)

    gains = GainSet(
        kappa=rep.kappa,
        tau=np.full(n, tau),
        upsilon=np.full(n, ups),
        rho=np.full(n, safety / rho_inv_bound),
        delta=np.full(n, dlt),
        eta=np.full(n, safety / eta_inv_bound),
    )
    view = assemble_phi(gains, fs, g)
    lam_min = 1.0 / view.lambda_max_phi_inv
    if lam_min <= 1.0 / (2.0 * eps):
        raise TuningError(
            "derived step sizes do not certify an averaged iteration: "
            f"lambda_min(Phi)={lam_min:.6g} <= 1/(2 eps)={1.0 / (2.0 * eps):.6g}"
        )
    xi = eps * lam_min
    return GainSet(
        kappa=gains.kappa,
        tau=gains.tau,
        upsilon=gains.upsilon,
        rho=gains.rho,
        delta=gains.delta,
        eta=gains.eta,
        xi=xi,
        theta=averagedness(xi),
    )


def assemble_phi(gains: GainSet, fs: FeasibleSet, g: CommGraph) -> PreconditionerView:
    """Dense symmetric preconditioner over the stacked solver state.

    State order is (bids, psi, estimates, z, multipliers) with the last two
    stacked agent-major, giving dimension 3N + 2NM.

    Raises
    ------
    TuningError
        If the assembled matrix is singular.
    """
    n, m = fs.n_agents, fs.n_rows
    dim = 3 * n + 2 * n * m
    lap = g.laplacian
    lap_wide = np.kron(lap, np.eye(m))
    abar = np.zeros((n * m, n))
    for i in range(n):
        abar[i * m : (i + 1) * m, i] = fs.A_tilde[:, i]

    phi = np.zeros((dim, dim))
    sl_beta = slice(0, n)
    sl_psi = slice(n, 2 * n)
    sl_sig = slice(2 * n, 3 * n)
    sl_z = slice(3 * n, 3 * n + n * m)
    sl_lam = slice(3 * n + n * m, dim)

    phi[sl_beta, sl_beta] = np.diag(1.0 / gains.tau)
    phi[sl_psi, sl_psi] = np.diag(1.0 / gains.upsilon)
    phi[sl_sig, sl_sig] = np.diag(1.0 / gains.rho)
    phi[sl_z, sl_z] = np.diag(np.repeat(1.0 / gains.delta, m))
    phi[sl_lam, sl_lam] = np.diag(np.repeat(1.0 / gains.eta, m))
    phi[sl_psi, sl_sig] = lap
    phi[sl_sig, sl_psi] = lap
    phi[sl_z, sl_lam] = lap_wide
    phi[sl_lam, sl_z] = lap_wide
    phi[sl_beta, sl_lam] = -abar.T
    phi[sl_lam, sl_beta] = -abar

    eigvals = np.linalg.eigvalsh(phi)
    if np.abs(eigvals).min() <= _SINGULAR_RATIO * np.abs(eigvals).max():
        raise TuningError("assembled preconditioner is singular")
    lam_min = float(eigvals[0])
    if lam_min <= 0:
        # Indefinite matrices still get a view; callers decide whether
        # positive definiteness is required.
        inv_extreme = float(np.abs(1.0 / eigvals).max())
    else:
        inv_extreme = 1.0 / lam_min
    return PreconditionerView(phi=phi, lambda_max_phi_inv=inv_extreme)


def schur_margins(gains: GainSet, eps: float, fs: FeasibleSet, g: CommGraph):
    """Minimum eigenvalues of the three block conditions certifying that
    the preconditioner dominates I / (2 eps).

    Returns (diag_margin, estimate_margin, multiplier_margin); all three
    positive certifies positive definiteness of Phi - I/(2 eps).
    """
    n, m = fs.n_agents, fs.n_rows
    half = 1.0 / (2.0 * eps)
    lap = g.laplacian
    lap_wide = np.kron(lap, np.eye(m))
    abar = np.zeros((n * m, n))
    for i in range(n):
        abar[i * m : (i + 1) * m, i] = fs.A_tilde[:, i]

    diag_margin = min(
        (1.0 / gains.tau - half).min(),
        (1.0 / gains.upsilon - half).min(),
        (1.0 / gains.delta - half).min(),
    )

    ups_block = np.diag(1.0 / gains.upsilon) - half * np.eye(n)
    sig_block = (
        np.diag(1.0 / gains.rho)
        - half * np.eye(n)
        - lap @ np.linalg.solve(ups_block, lap)
    )
    estimate_margin = float(np.linalg.eigvalsh(sig_block).min())

    tau_block = np.diag(1.0 / gains.tau) - half * np.eye(n)
    dlt_block = np.diag(np.repeat(1.0 / gains.delta, m)) - half * np.eye(n * m)
    lam_block = (
        np.diag(np.repeat(1.0 / gains.eta, m))
        - half * np.eye(n * m)
        - abar @ np.linalg.solve(tau_block, abar.T)
        - lap_wide @ np.linalg.solve(dlt_block, lap_wide)
    )
    multiplier_margin = float(np.linalg.eigvalsh(lam_block).min())

    return float(diag_margin), estimate_margin, multiplier_margin
