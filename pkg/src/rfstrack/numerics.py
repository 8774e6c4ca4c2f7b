"""Shared numerical kernels for the tracking filters.

Elementary symmetric functions, log-domain combinatorial coefficients,
Gaussian predict/update primitives (single and batched), Beta-density
moments, and an exact rectangular minimum-cost assignment solver.

All weights and likelihood ratios inside the filter recursions are
natural-log floats; ``LogWeight`` is an alias documenting that contract
(finite or ``-inf`` for an exact zero, never NaN).
"""

from dataclasses import dataclass
from math import lgamma, log
from typing import Sequence

import numpy as np

from ._accel import esf_kernel, esf_loo_kernel, lap_kernel

LogWeight = float

NEG_INF = float("-inf")


class NumericsError(Exception):
    """Numerical failure (e.g. non-positive-definite innovation covariance)."""


# ---------------------------------------------------------------------------
# Log-domain helpers
# ---------------------------------------------------------------------------

def logsumexp(values: np.ndarray) -> float:
    """Stable ln(sum(exp(values))); -inf for an empty or all -inf input."""
    vals = np.asarray(values, dtype=float)
    if vals.size == 0:
        return NEG_INF
    m = vals.max()
    if not np.isfinite(m):
        # all -inf (a +inf would be a caller bug worth surfacing)
        return float(m) if m < 0 else float(m)
    return float(m + np.log(np.sum(np.exp(vals - m))))


def logsumexp_axis(arr: np.ndarray, axis: int) -> np.ndarray:
    """logsumexp along one axis; rows that are all -inf stay -inf."""
    m = np.max(arr, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(invalid="ignore"):
        out = np.log(np.sum(np.exp(arr - safe), axis=axis)) + np.squeeze(safe, axis=axis)
    return np.where(np.isfinite(np.squeeze(m, axis=axis)), out, NEG_INF)


def log_factorial_table(n: int) -> np.ndarray:
    """ln k! for k = 0..n."""
    out = np.zeros(n + 1)
    if n >= 1:
        out[1:] = np.cumsum(np.log(np.arange(1, n + 1)))
    return out


def binomial_thinning(rho: np.ndarray, phi: float) -> np.ndarray:
    """Cardinality of a population thinned by survival probability phi.

    out[j] = sum_l C(l, j) rho[l] phi^j (1-phi)^(l-j); a proper
    distribution whenever rho is one.  Built in log domain so long
    supports (hundreds of clutter generators) do not overflow.
    """
    rho = np.asarray(rho, dtype=float)
    n = rho.size - 1
    if phi <= 0.0:
        out = np.zeros(n + 1)
        out[0] = rho.sum()
        return out
    if phi >= 1.0:
        return rho.copy()
    lf = log_factorial_table(n)
    l = np.arange(n + 1)[:, None]
    j = np.arange(n + 1)[None, :]
    valid = j <= l
    d = np.where(valid, l - j, 0)
    log_m = np.where(
        valid,
        lf[l] - lf[j] - lf[d] + j * log(phi) + d * np.log1p(-phi),
        NEG_INF,
    )
    return rho @ np.exp(log_m)


def truncated_convolve(a: np.ndarray, b: np.ndarray, n_max: int) -> tuple[np.ndarray, float]:
    """Convolution of two cardinality pmfs truncated to 0..n_max.

    Returns the renormalized truncation and the probability mass lost to
    the cut (0.0 when the support already fits).
    """
    full = np.convolve(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    if full.size <= n_max + 1:
        out = np.zeros(n_max + 1)
        out[: full.size] = full
        lost = 0.0
    else:
        out = full[: n_max + 1].copy()
        lost = float(full[n_max + 1 :].sum())
    total = out.sum()
    if total > 0:
        out /= total
    return out, lost


def log_binomial(l: int, j: int) -> LogWeight:
    """ln C(l, j); -inf when j > l (zero coefficient)."""
    if l < 0 or j < 0:
        raise ValueError(f"log_binomial needs nonnegative arguments, got ({l}, {j})")
    if j > l:
        return NEG_INF
    return lgamma(l + 1) - lgamma(j + 1) - lgamma(l - j + 1)


def log_permutation(n: int, j: int) -> LogWeight:
    """ln P(n, j) = ln(n! / (n-j)!); -inf when j > n."""
    if n < 0 or j < 0:
        raise ValueError(f"log_permutation needs nonnegative arguments, got ({n}, {j})")
    if j > n:
        return NEG_INF
    return lgamma(n + 1) - lgamma(n - j + 1)


# ---------------------------------------------------------------------------
# Elementary symmetric functions
# ---------------------------------------------------------------------------

def _check_esf_input(values) -> np.ndarray:
    vals = np.asarray(values, dtype=float).reshape(-1)
    if vals.size and (not np.all(np.isfinite(vals)) or np.any(vals < 0)):
        raise ValueError("esf requires finite nonnegative inputs")
    return vals


def esf(values: Sequence[float]) -> np.ndarray:
    """e_0..e_n of the input values (e_0 = 1).

    Vieta recurrence, O(n^2).  Inputs are pre-scaled by their maximum so
    the running polynomial coefficients stay in floating range even for
    hundreds of values; e_j(c*Z) = c^j e_j(Z) undoes the scaling.
    """
    vals = _check_esf_input(values)
    n = vals.size
    if n == 0:
        return np.ones(1)
    mx = float(vals.max())
    if mx == 0.0:
        out = np.zeros(n + 1)
        out[0] = 1.0
        return out
    coeffs = esf_kernel(vals / mx)
    return coeffs * mx ** np.arange(n + 1)


def log_esf(values: Sequence[float]) -> np.ndarray:
    """ln e_j for j = 0..n, -inf where e_j is exactly zero."""
    vals = _check_esf_input(values)
    n = vals.size
    out = np.full(n + 1, NEG_INF)
    out[0] = 0.0
    if n == 0:
        return out
    mx = float(vals.max())
    if mx == 0.0:
        return out
    coeffs = esf_kernel(vals / mx)
    pos = coeffs > 0
    with np.errstate(divide="ignore"):
        out[pos] = np.log(coeffs[pos]) + np.arange(n + 1)[pos] * log(mx)
    return out


def log_esf_with_loo(values: Sequence[float]):
    """ln e_j of the full set and of every leave-one-out subset.

    Returns ``(full, loo)`` where ``full[j] = ln e_j(Z)`` for j = 0..n and
    ``loo[i, j] = ln e_j(Z without element i)`` for j = 0..n-1.  Feeds the
    per-measurement cardinality-likelihood terms of the tracker update.
    """
    vals = _check_esf_input(values)
    n = vals.size
    full = np.full(n + 1, NEG_INF)
    full[0] = 0.0
    loo = np.full((n, max(n, 1)), NEG_INF)
    loo[:, 0] = 0.0
    if n == 0:
        return full, loo
    mx = float(vals.max())
    if mx == 0.0:
        return full, loo
    scaled = vals / mx
    coeffs = esf_kernel(scaled)
    table = esf_loo_kernel(scaled)
    js = np.arange(n + 1)
    pos = coeffs > 0
    with np.errstate(divide="ignore"):
        full[pos] = np.log(coeffs[pos]) + js[pos] * log(mx)
        tpos = table > 0
        logt = np.where(tpos, np.log(np.where(tpos, table, 1.0)), NEG_INF)
    loo = logt + js[:n] * log(mx)
    loo[~tpos] = NEG_INF
    return full, loo


# ---------------------------------------------------------------------------
# Assignment
# ---------------------------------------------------------------------------

def assign_min_cost(cost) -> tuple[list[tuple[int, int]], float]:
    """Minimum-cost assignment of every row to a distinct column.

    Accepts any m x n matrix (transposed internally when m > n) with
    finite entries.  Returns the selected (row, col) pairs sorted by row
    and the exact total cost.  Empty matrices give an empty assignment.
    """
    mat = np.asarray(cost, dtype=float)
    if mat.size == 0:
        return [], 0.0
    if mat.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.all(np.isfinite(mat)):
        raise ValueError("cost matrix must be finite")
    transposed = mat.shape[0] > mat.shape[1]
    work = np.ascontiguousarray(mat.T if transposed else mat)
    col4row = lap_kernel(work)
    if transposed:
        pairs = sorted((int(c), int(r)) for r, c in enumerate(col4row))
    else:
        pairs = [(int(r), int(c)) for r, c in enumerate(col4row)]
    total = float(sum(mat[r, c] for r, c in pairs))
    return pairs, total


# ---------------------------------------------------------------------------
# Gaussian primitives
# ---------------------------------------------------------------------------

@dataclass
class GaussianDensity:
    """A Gaussian over the kinematic state: mean vector and covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
        self.cov = np.asarray(self.cov, dtype=float)
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ValueError(
                f"covariance shape {self.cov.shape} does not match state dim {self.mean.size}"
            )

    @property
    def dim(self) -> int:
        return self.mean.size

    def check(self, rel_tol: float = 1e-9) -> list[str]:
        """Invariant report: symmetry within rel_tol, strictly positive spectrum."""
        problems = []
        scale = max(np.abs(self.cov).max(), 1.0)
        if np.abs(self.cov - self.cov.T).max() > rel_tol * scale:
            problems.append("covariance not symmetric")
        eig = np.linalg.eigvalsh(0.5 * (self.cov + self.cov.T))
        if eig.min() <= 0:
            problems.append(f"covariance not positive definite (min eig {eig.min():.3e})")
        return problems


def symmetrize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + np.swapaxes(mat, -1, -2))


def gaussian_predict(g: GaussianDensity, F: np.ndarray, Q: np.ndarray) -> GaussianDensity:
    """Linear-Gaussian transition: mean F m, covariance F P F' + Q (re-symmetrized)."""
    F = np.asarray(F, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if F.shape != (g.dim, g.dim) or Q.shape != (g.dim, g.dim):
        raise ValueError("F/Q dimensions do not match the state")
    return GaussianDensity(F @ g.mean, symmetrize(F @ g.cov @ F.T + Q))


def batch_gaussian_predict(means, covs, F, Q):
    """Vectorized gaussian_predict over stacked (J, d) means and (J, d, d) covs."""
    new_means = means @ F.T
    new_covs = symmetrize(np.einsum("ij,njk,lk->nil", F, covs, F) + Q)
    return new_means, new_covs


def batch_gaussian_update(means, covs, H, R, Z):
    """Kalman update of J Gaussians against m measurements, vectorized.

    Returns ``(loglik, post_means, post_covs)`` with shapes (J, m),
    (J, m, d) and (J, d, d): the posterior covariance (Joseph form, then
    re-symmetrized) does not depend on the measurement value, so one per
    component suffices.  ``loglik[i, z] = ln N(z; H m_i, S_i)``.
    """
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    Z = np.asarray(Z, dtype=float)
    J, d = means.shape
    m, dz = Z.shape
    S = symmetrize(np.einsum("ij,njk,lk->nil", H, covs, H) + R)  # (J, dz, dz)
    try:
        chol = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NumericsError(
            f"innovation covariance not positive definite: {exc}"
        ) from exc
    S_inv = np.linalg.inv(S)
    K = np.einsum("nij,kj,nkl->nil", covs, H, S_inv)  # (J, d, dz)
    innov = Z[None, :, :] - (means @ H.T)[:, None, :]  # (J, m, dz)
    # quadratic form through the inverse; S is small (dz = 2) and well scaled
    quad = np.einsum("nmi,nij,nmj->nm", innov, S_inv, innov)
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
    loglik = -0.5 * (quad + logdet[:, None] + dz * log(2.0 * np.pi))
    post_means = means[:, None, :] + np.einsum("nij,nmj->nmi", K, innov)
    I = np.eye(d)
    A = I[None] - np.einsum("nij,jk->nik", K, H)  # I - K H
    post_covs = symmetrize(
        np.einsum("nij,njk,nlk->nil", A, covs, A)
        + np.einsum("nij,jk,nlk->nil", K, R, K)
    )
    return loglik, post_means, post_covs


def gaussian_update(g: GaussianDensity, z, H, R) -> tuple[GaussianDensity, LogWeight]:
    """Kalman update; returns the posterior and the predictive log-likelihood.

    Delegates to the batched kernel so the single- and multi-component
    paths share one implementation (Joseph-form covariance update).
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    H = np.asarray(H, dtype=float)
    R = np.asarray(R, dtype=float)
    if H.shape[1] != g.dim or z.size != H.shape[0]:
        raise ValueError("measurement model dimensions do not match the state")
    loglik, post_means, post_covs = batch_gaussian_update(
        g.mean[None, :], g.cov[None, :, :], H, R, z[None, :]
    )
    posterior = GaussianDensity(post_means[0, 0], post_covs[0])
    return posterior, float(loglik[0, 0])


# ---------------------------------------------------------------------------
# Beta primitives
# ---------------------------------------------------------------------------

BETA_PARAM_FLOOR = 0.1


@dataclass
class BetaDensity:
    """Beta(s, t) over a detection probability in (0, 1)."""

    s: float
    t: float

    def __post_init__(self):
        if not (self.s > 0 and self.t > 0):
            raise ValueError(f"Beta parameters must be positive, got ({self.s}, {self.t})")

    def mean(self) -> float:
        return self.s / (self.s + self.t)

    def variance(self) -> float:
        n = self.s + self.t
        return self.s * self.t / (n * n * (n + 1.0))


def beta_mean(b: BetaDensity) -> float:
    return b.mean()


def beta_from_moments(mean: float, var: float, floor: float = BETA_PARAM_FLOOR) -> BetaDensity:
    """Beta(s, t) with the given mean and variance, parameters clamped >= floor.

    When the requested variance is infeasible for a Beta with that mean,
    the concentration collapses toward the floor (broadest admissible).
    """
    mean = min(max(mean, 1e-12), 1.0 - 1e-12)
    cap = mean * (1.0 - mean)
    if var >= cap or var <= 0.0:
        conc = 2.0 * floor
    else:
        conc = cap / var - 1.0
    s = max(mean * conc, floor)
    t = max((1.0 - mean) * conc, floor)
    return BetaDensity(s, t)
