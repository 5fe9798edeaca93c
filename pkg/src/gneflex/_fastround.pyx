# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled synchronous-round kernel.

Mirrors the pure-Python engine round for round: identical update order and
arithmetic, with the neighbor structure in CSR form so each agent reads only
its own row and its neighbors' rows.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def run_rounds(
    double[::1] beta, double[::1] psi, double[::1] sigma,
    double[:, ::1] z, double[:, ::1] lam,
    double[::1] beta_new, double[::1] psi_new, double[::1] sigma_new,
    double[:, ::1] z_new, double[:, ::1] lam_new,
    const double[::1] a, const double[::1] b,
    const double[:, ::1] acol, const double[:, ::1] dsplit,
    const double[::1] tau, const double[::1] ups, const double[::1] rho,
    const double[::1] dlt, const double[::1] eta,
    const int[::1] indptr, const int[::1] nbr, const double[::1] wgt,
    double kappa, double r, double alpha,
    double lo, double hi,
    long max_rounds, double tol,
):
    """Advance the packed state by up to ``max_rounds`` rounds in place.

    Stops early once the max-norm round-to-round change drops to ``tol``
    (``tol <= 0`` disables the check). Returns (rounds_done, last_residual).
    """
    cdef Py_ssize_t n_agents = beta.shape[0]
    cdef Py_ssize_t m_rows = dsplit.shape[1]
    cdef Py_ssize_t n, i, p, mth
    cdef long k, executed = 0
    cdef double nf = <double> n_agents
    cdef double frac = (nf - 1.0) / nf
    cdef double nm2 = nf - 2.0
    cdef double an2 = alpha * nf * nf
    cdef double x, marg, fh, atl, acc, arg, mix_psi, diff
    cdef double res = float("nan")

    with nogil:
        for k in range(max_rounds):
            # phase 1: bids and both auxiliaries from current neighbor data
            for n in range(n_agents):
                x = (r - nf * sigma[n]) / nf + beta[n]
                marg = 2.0 * a[n] * x + b[n]
                fh = frac * marg + ((nf * sigma[n] - r) * nm2 + nf * beta[n]) / an2
                atl = 0.0
                for i in range(m_rows):
                    atl += acol[n, i] * lam[n, i]
                arg = beta[n] - tau[n] * (fh + atl)
                if arg < lo:
                    arg = lo
                elif arg > hi:
                    arg = hi
                beta_new[n] = arg

                acc = 0.0
                for p in range(indptr[n], indptr[n + 1]):
                    acc += wgt[p] * (sigma[n] - sigma[nbr[p]])
                psi_new[n] = psi[n] + ups[n] * acc

                for i in range(m_rows):
                    z_new[n, i] = 0.0
                for p in range(indptr[n], indptr[n + 1]):
                    mth = nbr[p]
                    for i in range(m_rows):
                        z_new[n, i] += wgt[p] * (lam[n, i] - lam[mth, i])
                for i in range(m_rows):
                    z_new[n, i] = z[n, i] + dlt[n] * z_new[n, i]

            # phase 2: estimates and multipliers from refreshed auxiliaries
            for n in range(n_agents):
                mix_psi = 0.0
                for p in range(indptr[n], indptr[n + 1]):
                    mth = nbr[p]
                    mix_psi += wgt[p] * (
                        2.0 * (psi_new[n] - psi_new[mth]) - (psi[n] - psi[mth])
                    )
                sigma_new[n] = sigma[n] + rho[n] * (
                    kappa * (beta[n] - sigma[n]) - mix_psi
                )

                for i in range(m_rows):
                    lam_new[n, i] = 0.0
                for p in range(indptr[n], indptr[n + 1]):
                    mth = nbr[p]
                    for i in range(m_rows):
                        lam_new[n, i] += wgt[p] * (
                            (lam[n, i] - lam[mth, i])
                            + 2.0 * (z_new[n, i] - z_new[mth, i])
                            - (z[n, i] - z[mth, i])
                        )
                for i in range(m_rows):
                    arg = lam[n, i] - eta[n] * (
                        lam_new[n, i]
                        + dsplit[n, i]
                        + acol[n, i] * (beta[n] - 2.0 * beta_new[n])
                    )
                    lam_new[n, i] = arg if arg > 0.0 else 0.0

            # residual and copy-back
            res = 0.0
            for n in range(n_agents):
                diff = beta_new[n] - beta[n]
                if diff < 0.0:
                    diff = -diff
                if diff > res:
                    res = diff
                diff = psi_new[n] - psi[n]
                if diff < 0.0:
                    diff = -diff
                if diff > res:
                    res = diff
                diff = sigma_new[n] - sigma[n]
                if diff < 0.0:
                    diff = -diff
                if diff > res:
                    res = diff
                beta[n] = beta_new[n]
                psi[n] = psi_new[n]
                sigma[n] = sigma_new[n]
                for i in range(m_rows):
                    diff = z_new[n, i] - z[n, i]
                    if diff < 0.0:
                        diff = -diff
                    if diff > res:
                        res = diff
                    diff = lam_new[n, i] - lam[n, i]
                    if diff < 0.0:
                        diff = -diff
                    if diff > res:
                        res = diff
                    z[n, i] = z_new[n, i]
                    lam[n, i] = lam_new[n, i]

            executed += 1
            if tol > 0.0 and res <= tol:
                break

    return executed, res
