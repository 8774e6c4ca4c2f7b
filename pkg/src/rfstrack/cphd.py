"""Gaussian-mixture multiple-model CPHD filter.

Jointly propagates a per-model Gaussian-mixture intensity and a discrete
cardinality distribution.  Components carry track tags: survivors keep
their tag through prediction, detection branches inherit the parent tag,
and merged components take the tag of the heavier partner.

All cardinality-likelihood sums run in log domain; the factorial and
permutation factors overflow doubles once measurement sets pass ~170
elements otherwise.
"""

import logging
from dataclasses import dataclass, field
from math import log
from typing import Sequence

import numpy as np

from .errors import FilterError
from .models import ModelBundle
from .numerics import (
    NEG_INF,
    GaussianDensity,
    batch_gaussian_predict,
    batch_gaussian_update,
    binomial_thinning,
    log_esf_with_loo,
    log_factorial_table,
    logsumexp,
    logsumexp_axis,
    truncated_convolve,
)

logger = logging.getLogger("rfstrack.cphd")

STATE_DIM = 4


@dataclass
class CphdParams:
    """Tracker knobs: cardinality support and mixture-reduction thresholds."""

    n_max: int = 40
    prune_threshold: float = 1e-5
    merge_threshold: float = 4.0  # squared Mahalanobis distance
    max_components: int = 100  # per motion model


@dataclass
class GaussianComponent:
    """One weighted term of the per-model intensity mixture."""

    w: float
    density: GaussianDensity
    r: int
    tag: int


@dataclass
class TrackPoint:
    """One extracted target: identity tag, kinematic state, motion model."""

    tag: int
    state: np.ndarray
    model: int


@dataclass
class CphdState:
    """Intensity mixture (stacked arrays) plus cardinality distribution.

    ``weights[i]`` goes with ``means[i]``, ``covs[i]``, ``model_idx[i]``
    (1-based motion-model index) and ``tags[i]``.  ``next_tag`` is the
    counter newborn components draw fresh identities from.
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    model_idx: np.ndarray
    tags: np.ndarray
    cardinality: np.ndarray
    frame: int = 0
    next_tag: int = 1

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def components(self) -> list[GaussianComponent]:
        return [
            GaussianComponent(
                float(self.weights[i]),
                GaussianDensity(self.means[i], self.covs[i]),
                int(self.model_idx[i]),
                int(self.tags[i]),
            )
            for i in range(self.n_components)
        ]

    def cardinality_mean(self) -> float:
        return float(np.arange(self.cardinality.size) @ self.cardinality)


def empty_state(n_max: int = 40) -> CphdState:
    """Initial state: no components, all cardinality mass at zero."""
    card = np.zeros(n_max + 1)
    card[0] = 1.0
    return CphdState(
        weights=np.zeros(0),
        means=np.zeros((0, STATE_DIM)),
        covs=np.zeros((0, STATE_DIM, STATE_DIM)),
        model_idx=np.zeros(0, dtype=np.int64),
        tags=np.zeros(0, dtype=np.int64),
        cardinality=card,
    )


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def predict(state: CphdState, bundle: ModelBundle, params: CphdParams) -> CphdState:
    """Survival thinning + birth convolution on the cardinality; per-model
    spawning and Kalman prediction on the mixture; births appended with
    fresh tags."""
    ms = bundle.model_set
    R = ms.n_models
    p_s = bundle.survival_detection.p_S
    birth = bundle.birth

    thinned = binomial_thinning(state.cardinality, p_s)
    card, lost = truncated_convolve(birth.cardinality, thinned, params.n_max)
    if lost > 1e-12:
        logger.warning(
            "frame %d: predicted cardinality truncated at N_max=%d (lost mass %.3e)",
            state.frame + 1, params.n_max, lost,
        )

    J = state.n_components
    n_birth_comps = birth.weights.size * R
    total = J * R + n_birth_comps
    weights = np.empty(total)
    means = np.empty((total, STATE_DIM))
    covs = np.empty((total, STATE_DIM, STATE_DIM))
    model_idx = np.empty(total, dtype=np.int64)
    tags = np.empty(total, dtype=np.int64)

    at = 0
    for r in range(R):
        mm = ms.models[r]
        if J:
            tau_col = ms.tau[state.model_idx - 1, r]
            weights[at:at + J] = state.weights * p_s * tau_col
            means[at:at + J], covs[at:at + J] = batch_gaussian_predict(
                state.means, state.covs, mm.F, mm.Q
            )
            model_idx[at:at + J] = r + 1
            tags[at:at + J] = state.tags
            at += J

    next_tag = state.next_tag
    if n_birth_comps:
        fresh = np.arange(next_tag, next_tag + birth.weights.size)
        next_tag += birth.weights.size
        for r in range(R):
            nb = birth.weights.size
            weights[at:at + nb] = birth.weights * ms.pi[r]
            means[at:at + nb] = birth.means
            covs[at:at + nb] = birth.covs
            model_idx[at:at + nb] = r + 1
            # one fresh identity per birth location, shared across models
            tags[at:at + nb] = fresh
            at += nb

    return CphdState(
        weights=weights[:at],
        means=means[:at],
        covs=covs[:at],
        model_idx=model_idx[:at],
        tags=tags[:at],
        cardinality=card,
        frame=state.frame + 1,
        next_tag=next_tag,
    )


# ---------------------------------------------------------------------------
# Update
# ---------------------------------------------------------------------------

def _poisson_clutter_logterms(m: int, lam: float) -> np.ndarray:
    """c[j] = ln[(m-j)! * Pois(m-j; lam)] = -lam + (m-j) ln(lam) for j = 0..m."""
    j = np.arange(m + 1)
    if lam > 0.0:
        return -lam + (m - j) * log(lam)
    out = np.full(m + 1, NEG_INF)
    out[m] = 0.0  # only the all-detections term survives at lam = 0
    return out


def _upsilon_term_matrix(
    m: int, u: int, lam: float, log_qv: float, log_sv: float, n_max: int
) -> np.ndarray:
    """A[n, j] = ln of the Upsilon^u summand without its e_j factor.

    A[n, j] = ln[(m-j)! rho_K(m-j)] + ln P(n, j+u)
              + (n-j-u) ln<1-p_D, v> - n ln<1, v>
    with -inf wherever P(n, j+u) = 0 or a zero base has positive exponent.
    A zero-exponent power contributes 1 even when its base is zero.
    """
    lf = log_factorial_table(max(n_max, m) + 1)
    c1 = _poisson_clutter_logterms(m, lam)
    n = np.arange(n_max + 1)[:, None]
    j = np.arange(m + 1)[None, :]
    valid = j + u <= n
    log_perm = np.where(valid, lf[n] - lf[np.where(valid, n - j - u, 0)], NEG_INF)
    expo = n - j - u
    if log_qv == NEG_INF:
        q_term = np.where(expo == 0, 0.0, NEG_INF)
    else:
        q_term = expo * log_qv
    s_term = 0.0 if log_sv == NEG_INF else n * log_sv
    return c1[None, :] + log_perm + np.where(valid, q_term, NEG_INF) - s_term


def update(
    state: CphdState,
    Z: np.ndarray,
    lam: float,
    p_d: float,
    bundle: ModelBundle,
    params: CphdParams,
) -> CphdState:
    """Measurement update of intensity and cardinality.

    ``Z`` is an (m, 2) array of position measurements; ``lam`` the Poisson
    clutter mean and ``p_d`` the detection probability for this frame.
    Raises FilterError if the posterior cardinality underflows to zero.
    """
    Z = np.asarray(Z, dtype=float).reshape(-1, 2)
    if lam < 0 or not 0.0 <= p_d <= 1.0:
        raise FilterError(f"invalid rates lam={lam}, p_d={p_d}", state.frame)
    m = Z.shape[0]
    J = state.n_components
    n_max = params.n_max
    meas = bundle.measurement
    V = bundle.clutter.volume

    s_v = state.total_weight
    q_v = (1.0 - p_d) * s_v
    log_sv = log(s_v) if s_v > 0 else NEG_INF
    log_qv = log(q_v) if q_v > 0 else NEG_INF

    if m and J:
        loglik, post_means, post_covs = batch_gaussian_update(
            state.means, state.covs, meas.H, meas.R, Z
        )
        # Xi_z = <v, psi_z> with psi_z = V p_D g(z|.)
        with np.errstate(divide="ignore"):
            log_w = np.where(state.weights > 0, np.log(state.weights), NEG_INF)
        xi = V * p_d * np.exp(logsumexp_axis(log_w[:, None] + loglik, axis=0))
    else:
        loglik = np.zeros((J, 0))
        post_means = np.zeros((J, 0, STATE_DIM))
        post_covs = state.covs
        xi = np.zeros(m)

    log_e_full, log_e_loo = log_esf_with_loo(xi)

    log_rho_pred = np.where(state.cardinality > 0, np.log(np.where(state.cardinality > 0, state.cardinality, 1.0)), NEG_INF)

    a0 = _upsilon_term_matrix(m, 0, lam, log_qv, log_sv, n_max)
    log_ups0 = logsumexp_axis(a0 + log_e_full[None, :], axis=1)
    ip0 = logsumexp(log_ups0 + log_rho_pred)
    if ip0 == NEG_INF:
        raise FilterError(
            "posterior cardinality underflowed to zero (all-zero <Upsilon^0, rho>)",
            state.frame,
        )

    a1 = _upsilon_term_matrix(m, 1, lam, log_qv, log_sv, n_max)
    ip1 = logsumexp(logsumexp_axis(a1 + log_e_full[None, :], axis=1) + log_rho_pred)

    # posterior cardinality
    log_rho = log_ups0 + log_rho_pred - ip0
    card = np.exp(log_rho)
    card[~np.isfinite(log_rho)] = 0.0
    card /= card.sum()

    # missed-detection components
    r1 = np.exp(ip1 - ip0) if ip1 > NEG_INF else 0.0
    w_miss = state.weights * (1.0 - p_d) * r1

    if m and J and p_d > 0.0:
        # per-measurement ratio <Upsilon^1[Z\z], rho> / <Upsilon^0[Z], rho>,
        # collapsing the n axis first so the z loop is a single matrix op
        a1_loo = _upsilon_term_matrix(m - 1, 1, lam, log_qv, log_sv, n_max)
        collapsed = logsumexp_axis(a1_loo + log_rho_pred[:, None], axis=0)  # over n, per j
        log_inner = logsumexp_axis(log_e_loo + collapsed[None, :], axis=1)  # per z
        log_det_coeff = log(V * p_d) + log_inner - ip0  # per z
        log_w_det = log_w[:, None] + loglik + log_det_coeff[None, :]
        w_det = np.exp(log_w_det)
    else:
        w_det = np.zeros((J, 0))

    n_det = w_det.size
    weights = np.concatenate([w_miss, w_det.T.reshape(-1)])
    means = np.concatenate([state.means, post_means.transpose(1, 0, 2).reshape(-1, STATE_DIM)])
    covs = np.concatenate([state.covs, np.tile(post_covs, (w_det.shape[1], 1, 1))])
    model_idx = np.concatenate([state.model_idx, np.tile(state.model_idx, w_det.shape[1])])
    tags = np.concatenate([state.tags, np.tile(state.tags, w_det.shape[1])])

    new_state = CphdState(
        weights=weights,
        means=means,
        covs=covs,
        model_idx=model_idx,
        tags=tags,
        cardinality=card,
        frame=state.frame,
        next_tag=state.next_tag,
    )
    _weight_cardinality_diagnostic(new_state)
    return new_state


def _weight_cardinality_diagnostic(state: CphdState):
    """Sum of weights should track the cardinality mean within ~25%."""
    mean_n = state.cardinality_mean()
    total = state.total_weight
    if mean_n > 1.0 and abs(total - mean_n) > 0.25 * mean_n:
        logger.debug(
            "frame %d: intensity mass %.2f vs cardinality mean %.2f",
            state.frame, total, mean_n,
        )


# ---------------------------------------------------------------------------
# Mixture reduction
# ---------------------------------------------------------------------------

def reduce(state: CphdState, params: CphdParams) -> CphdState:
    """Prune, merge (same-model, Mahalanobis-gated), cap, and rescale.

    The surviving mixture is rescaled so its total weight matches the
    pre-reduction total; the merged component takes the heavier tag.
    """
    J = state.n_components
    if J == 0:
        return state
    total_before = state.total_weight

    keep = state.weights >= params.prune_threshold
    w = state.weights[keep]
    mu = state.means[keep]
    P = state.covs[keep]
    ridx = state.model_idx[keep]
    tg = state.tags[keep]

    out_w, out_mu, out_P, out_r, out_t = [], [], [], [], []
    for r in np.unique(ridx):
        sel = np.where(ridx == r)[0]
        ww = w[sel].copy()
        mm = mu[sel]
        PP = P[sel]
        tt = tg[sel]
        inv = np.linalg.inv(PP)
        alive = np.ones(sel.size, dtype=bool)
        merged = []
        while alive.any():
            live = np.where(alive)[0]
            i = live[np.argmax(ww[live])]
            diff = mm[live] - mm[i]
            d2 = np.einsum("ki,kij,kj->k", diff, inv[live], diff)
            group = live[d2 <= params.merge_threshold]
            gw = ww[group]
            wsum = gw.sum()
            gmu = (gw[:, None] * mm[group]).sum(0) / wsum
            spread = mm[group] - gmu
            gP = (
                gw[:, None, None]
                * (PP[group] + np.einsum("ki,kj->kij", spread, spread))
            ).sum(0) / wsum
            merged.append((wsum, gmu, 0.5 * (gP + gP.T), int(r), int(tt[i])))
            alive[group] = False
        merged.sort(key=lambda t: -t[0])
        for wsum, gmu, gP, rr, tag in merged[: params.max_components]:
            out_w.append(wsum)
            out_mu.append(gmu)
            out_P.append(gP)
            out_r.append(rr)
            out_t.append(tag)

    if not out_w:
        return CphdState(
            weights=np.zeros(0),
            means=np.zeros((0, STATE_DIM)),
            covs=np.zeros((0, STATE_DIM, STATE_DIM)),
            model_idx=np.zeros(0, dtype=np.int64),
            tags=np.zeros(0, dtype=np.int64),
            cardinality=state.cardinality.copy(),
            frame=state.frame,
            next_tag=state.next_tag,
        )

    new_w = np.asarray(out_w)
    scale = total_before / new_w.sum() if new_w.sum() > 0 else 1.0
    return CphdState(
        weights=new_w * scale,
        means=np.asarray(out_mu),
        covs=np.asarray(out_P),
        model_idx=np.asarray(out_r, dtype=np.int64),
        tags=np.asarray(out_t, dtype=np.int64),
        cardinality=state.cardinality.copy(),
        frame=state.frame,
        next_tag=state.next_tag,
    )


# ---------------------------------------------------------------------------
# State extraction
# ---------------------------------------------------------------------------

def extract(state: CphdState) -> list[TrackPoint]:
    """Posterior-mode target count, then the that-many heaviest components.

    Ties in the cardinality argmax resolve to the smaller count.  If two
    extracted components share a tag (detection branches of one parent),
    later ones are relabeled with synthetic identities so tags stay
    unique within the frame.
    """
    n_k = int(np.argmax(state.cardinality))
    if n_k == 0:
        return []
    if n_k > state.n_components:
        logger.warning(
            "frame %d: cardinality mode %d exceeds %d components; returning all",
            state.frame, n_k, state.n_components,
        )
        n_k = state.n_components
    order = np.argsort(-state.weights, kind="stable")[:n_k]
    tracks = []
    used: dict[int, int] = {}
    for i in order:
        tag = int(state.tags[i])
        dup = used.get(tag, 0)
        used[tag] = dup + 1
        if dup:
            tag = -(tag * 100000 + dup)
        tracks.append(TrackPoint(tag, state.means[i].copy(), int(state.model_idx[i])))
    return tracks
