"""Beta-Gaussian multiple-model CPHD filter over the hybrid state space.

Targets and clutter generators live in a disjoint union: each target
component carries a Beta factor over its unknown detection probability
next to its Gaussian kinematic part; each clutter-generator component is
a weighted Beta alone (generators are identical and motionless, so no
spatial factor survives).  The filter emits per-frame estimates of the
clutter rate and the detection probability for the tracker to consume.
"""

import logging
from dataclasses import dataclass
from math import log

import numpy as np

from .errors import FilterError
from .models import ModelBundle, poisson_pmf
from .numerics import (
    NEG_INF,
    BetaDensity,
    batch_gaussian_predict,
    batch_gaussian_update,
    beta_from_moments,
    binomial_thinning,
    log_factorial_table,
    logsumexp,
    truncated_convolve,
)

logger = logging.getLogger("rfstrack.estimator")

STATE_DIM = 4
RATE_EPS = 1e-9
BETA_FLOOR = 0.1


@dataclass
class EstimatorParams:
    """Hybrid-filter knobs: clutter-generator model, Beta priors, reduction."""

    n_max: int = 400
    prune_threshold: float = 1e-5
    merge_threshold: float = 4.0
    max_components: int = 100  # target components per motion model
    clutter_birth_rate: float = 10.0
    clutter_birth_components: int = 5
    clutter_survival: float = 0.9
    clutter_merge_distance: float = 0.05  # |Beta mean difference| gate
    max_clutter_components: int = 40
    k_beta: float = 1.05  # per-frame detection-probability variance inflation
    target_birth_beta: tuple[float, float] = (9.0, 1.0)
    clutter_birth_beta: tuple[float, float] = (1.0, 1.0)


@dataclass
class BetaGaussianComponent:
    """Weighted Beta x Gaussian term of the target intensity."""

    w: float
    beta: BetaDensity
    mean: np.ndarray
    cov: np.ndarray
    r: int
    tag: int


@dataclass
class ClutterComponent:
    """Weighted Beta term of the clutter-generator intensity."""

    w: float
    beta: BetaDensity


@dataclass
class HybridState:
    """Target mixture, clutter mixture and joint cardinality over both."""

    t_weights: np.ndarray
    t_s: np.ndarray
    t_t: np.ndarray
    t_means: np.ndarray
    t_covs: np.ndarray
    t_model_idx: np.ndarray
    t_tags: np.ndarray
    c_weights: np.ndarray
    c_s: np.ndarray
    c_t: np.ndarray
    cardinality: np.ndarray
    frame: int = 0
    next_tag: int = 1

    @property
    def target_weight(self) -> float:
        return float(self.t_weights.sum())

    @property
    def clutter_weight(self) -> float:
        return float(self.c_weights.sum())

    def target_components(self) -> list[BetaGaussianComponent]:
        return [
            BetaGaussianComponent(
                float(self.t_weights[i]),
                BetaDensity(float(self.t_s[i]), float(self.t_t[i])),
                self.t_means[i].copy(),
                self.t_covs[i].copy(),
                int(self.t_model_idx[i]),
                int(self.t_tags[i]),
            )
            for i in range(self.t_weights.size)
        ]

    def clutter_components(self) -> list[ClutterComponent]:
        return [
            ClutterComponent(float(self.c_weights[i]), BetaDensity(float(self.c_s[i]), float(self.c_t[i])))
            for i in range(self.c_weights.size)
        ]


def empty_hybrid_state(n_max: int = 400) -> HybridState:
    card = np.zeros(n_max + 1)
    card[0] = 1.0
    return HybridState(
        t_weights=np.zeros(0),
        t_s=np.zeros(0),
        t_t=np.zeros(0),
        t_means=np.zeros((0, STATE_DIM)),
        t_covs=np.zeros((0, STATE_DIM, STATE_DIM)),
        t_model_idx=np.zeros(0, dtype=np.int64),
        t_tags=np.zeros(0, dtype=np.int64),
        c_weights=np.zeros(0),
        c_s=np.zeros(0),
        c_t=np.zeros(0),
        cardinality=card,
    )


# ---------------------------------------------------------------------------
# Beta transition
# ---------------------------------------------------------------------------

def beta_dilate(beta: BetaDensity, k_beta: float) -> BetaDensity:
    """Mean-preserving variance inflation of a Beta density.

    Scales (s, t) by a common factor chosen so the variance grows by
    k_beta exactly: with concentration nu = s + t, the new concentration
    is (nu + 1)/k_beta - 1.  Parameters are clamped at 0.1 from below,
    which caps how diffuse the density can get.
    """
    if k_beta < 1.0:
        raise ValueError(f"k_beta must be >= 1, got {k_beta}")
    if k_beta == 1.0:
        return BetaDensity(beta.s, beta.t)
    nu = beta.s + beta.t
    nu_new = (nu + 1.0) / k_beta - 1.0
    if nu_new <= 0.0:
        ratio = 0.0
    else:
        ratio = nu_new / nu
    return BetaDensity(max(beta.s * ratio, BETA_FLOOR), max(beta.t * ratio, BETA_FLOOR))


def _dilate_arrays(s: np.ndarray, t: np.ndarray, k_beta: float):
    if k_beta == 1.0:
        return s.copy(), t.copy()
    nu = s + t
    nu_new = (nu + 1.0) / k_beta - 1.0
    ratio = np.where(nu_new > 0.0, nu_new / nu, 0.0)
    return np.maximum(s * ratio, BETA_FLOOR), np.maximum(t * ratio, BETA_FLOOR)


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def predict_hybrid(state: HybridState, bundle: ModelBundle, params: EstimatorParams) -> HybridState:
    """Joint survival thinning + hybrid birth on the cardinality; per-model
    spawn with Beta dilation on targets; decayed-plus-reborn clutter."""
    ms = bundle.model_set
    R = ms.n_models
    p_s1 = bundle.survival_detection.p_S
    p_s0 = params.clutter_survival

    w1 = state.target_weight
    w0 = state.clutter_weight
    tot = w1 + w0
    phi = (p_s1 * w1 + p_s0 * w0) / tot if tot > 0 else 0.0

    birth_card = truncated_convolve(
        bundle.birth.cardinality,
        poisson_pmf(params.clutter_birth_rate, params.n_max),
        params.n_max,
    )[0]
    thinned = binomial_thinning(state.cardinality, phi)
    card, lost = truncated_convolve(birth_card, thinned, params.n_max)
    if lost > 1e-9:
        logger.warning(
            "frame %d: hybrid cardinality truncated at N_max=%d (lost mass %.3e)",
            state.frame + 1, params.n_max, lost,
        )

    # targets: R-way spawn with Markov switching, Gaussian predict, Beta dilation
    J = state.t_weights.size
    birth = bundle.birth
    nb = birth.weights.size
    total = J * R + nb * R
    tw = np.empty(total)
    ts = np.empty(total)
    tt = np.empty(total)
    tmeans = np.empty((total, STATE_DIM))
    tcovs = np.empty((total, STATE_DIM, STATE_DIM))
    tmodel = np.empty(total, dtype=np.int64)
    ttags = np.empty(total, dtype=np.int64)

    s_dil, t_dil = _dilate_arrays(state.t_s, state.t_t, params.k_beta) if J else (state.t_s, state.t_t)
    at = 0
    for r in range(R):
        mm = ms.models[r]
        if J:
            tau_col = ms.tau[state.t_model_idx - 1, r]
            tw[at:at + J] = state.t_weights * p_s1 * tau_col
            tmeans[at:at + J], tcovs[at:at + J] = batch_gaussian_predict(
                state.t_means, state.t_covs, mm.F, mm.Q
            )
            ts[at:at + J] = s_dil
            tt[at:at + J] = t_dil
            tmodel[at:at + J] = r + 1
            ttags[at:at + J] = state.t_tags
            at += J

    next_tag = state.next_tag
    if nb:
        fresh = np.arange(next_tag, next_tag + nb)
        next_tag += nb
        sb, tb = params.target_birth_beta
        for r in range(R):
            tw[at:at + nb] = birth.weights * ms.pi[r]
            tmeans[at:at + nb] = birth.means
            tcovs[at:at + nb] = birth.covs
            ts[at:at + nb] = sb
            tt[at:at + nb] = tb
            tmodel[at:at + nb] = r + 1
            ttags[at:at + nb] = fresh
            at += nb

    # clutter: v0_pred(b) = gamma0(b) + p_S0 * v0(b)
    ncb = params.clutter_birth_components
    sb0, tb0 = params.clutter_birth_beta
    cw = np.concatenate([np.full(ncb, params.clutter_birth_rate / ncb), state.c_weights * p_s0])
    cs = np.concatenate([np.full(ncb, sb0), state.c_s])
    ct = np.concatenate([np.full(ncb, tb0), state.c_t])

    return HybridState(
        t_weights=tw[:at],
        t_s=ts[:at],
        t_t=tt[:at],
        t_means=tmeans[:at],
        t_covs=tcovs[:at],
        t_model_idx=tmodel[:at],
        t_tags=ttags[:at],
        c_weights=cw,
        c_s=cs,
        c_t=ct,
        cardinality=card,
        frame=state.frame + 1,
        next_tag=next_tag,
    )


# ---------------------------------------------------------------------------
# Update
# ---------------------------------------------------------------------------

def _log_upsilon_hybrid(m: int, u: int, log_phi: float, n_max: int) -> np.ndarray:
    """ln[P(n, m+u) Phi^(n-m-u)] for n = 0..n_max, -inf below n = m+u."""
    lf = log_factorial_table(n_max + 1)
    n = np.arange(n_max + 1)
    out = np.full(n_max + 1, NEG_INF)
    lo = m + u
    if lo > n_max:
        return out
    valid = n >= lo
    expo = n[valid] - lo
    if log_phi == NEG_INF:
        tail = np.where(expo == 0, 0.0, NEG_INF)
    else:
        tail = expo * log_phi
    out[valid] = lf[n[valid]] - lf[expo] + tail
    return out


def update_hybrid(state: HybridState, Z, bundle: ModelBundle, params: EstimatorParams) -> HybridState:
    """Measurement update of both intensities and the hybrid cardinality.

    Beta factors update in closed form: a missed detection multiplies by
    (1-a), i.e. t <- t+1; a detection multiplies by a, i.e. s <- s+1.
    Clutter detection terms share one Beta per parent across all
    measurements (K(z) is constant inside the region), so they collapse
    to a single component with the measurement sum folded into its weight.
    """
    Z = np.asarray(Z, dtype=float).reshape(-1, 2)
    m = Z.shape[0]
    n_max = params.n_max
    meas = bundle.measurement
    K = 1.0 / bundle.clutter.volume

    w1 = state.target_weight
    w0 = state.clutter_weight
    tot = w1 + w0
    t_mean = state.t_s / (state.t_s + state.t_t) if state.t_s.size else np.zeros(0)
    c_mean = state.c_s / (state.c_s + state.c_t) if state.c_s.size else np.zeros(0)
    d1 = float((state.t_weights * t_mean).sum())
    d0 = float((state.c_weights * c_mean).sum())
    phi = 1.0 - (d1 + d0) / tot if tot > 0 else 1.0
    phi = min(max(phi, 0.0), 1.0)
    log_phi = log(phi) if phi > 0 else NEG_INF

    if m > n_max:
        raise FilterError(
            f"|Z| = {m} exceeds the hybrid cardinality support N_max = {n_max}",
            state.frame,
        )

    with np.errstate(divide="ignore"):
        log_rho_pred = np.where(
            state.cardinality > 0,
            np.log(np.where(state.cardinality > 0, state.cardinality, 1.0)),
            NEG_INF,
        )
    log_ups0 = _log_upsilon_hybrid(m, 0, log_phi, n_max)
    log_ups1 = _log_upsilon_hybrid(m, 1, log_phi, n_max)
    ip0 = logsumexp(log_ups0 + log_rho_pred)
    if ip0 == NEG_INF:
        raise FilterError("hybrid posterior cardinality underflowed to zero", state.frame)
    ip1 = logsumexp(log_ups1 + log_rho_pred)

    log_rho = log_ups0 + log_rho_pred - ip0
    card = np.exp(log_rho)
    card[np.arange(n_max + 1) < m] = 0.0  # exactly zero mass below |Z|
    card /= card.sum()

    ratio = np.exp(ip1 - ip0) if ip1 > NEG_INF else 0.0
    c_miss = ratio / tot if tot > 0 else 0.0

    J = state.t_weights.size
    if m and J:
        loglik, post_means, post_covs = batch_gaussian_update(
            state.t_means, state.t_covs, meas.H, meas.R, Z
        )
        lik = np.exp(loglik)  # (J, m)
        target_term = (state.t_weights * t_mean) @ lik  # per z
    else:
        lik = np.zeros((J, m))
        post_means = np.zeros((J, 0, STATE_DIM))
        post_covs = state.t_covs
        target_term = np.zeros(m)

    denom = K * d0 + target_term  # per z
    if m and np.any(denom <= 0.0):
        raise FilterError("measurement likelihood denominator underflowed", state.frame)

    # targets: missed branch keeps the Gaussian, detection branches are
    # Kalman-updated; both inherit the parent tag
    miss_w = state.t_weights * (state.t_t / (state.t_s + state.t_t)) * c_miss
    if m and J:
        det_w = (state.t_weights * t_mean)[:, None] * lik / denom[None, :]  # (J, m)
    else:
        det_w = np.zeros((J, 0))

    n_z = det_w.shape[1]
    tw = np.concatenate([miss_w, det_w.T.reshape(-1)])
    ts = np.concatenate([state.t_s, np.tile(state.t_s + 1.0, n_z)])
    tt = np.concatenate([state.t_t + 1.0, np.tile(state.t_t, n_z)])
    tmeans = np.concatenate([state.t_means, post_means.transpose(1, 0, 2).reshape(-1, STATE_DIM)])
    tcovs = np.concatenate([state.t_covs, np.tile(post_covs, (n_z, 1, 1))])
    tmodel = np.concatenate([state.t_model_idx, np.tile(state.t_model_idx, n_z)])
    ttags = np.concatenate([state.t_tags, np.tile(state.t_tags, n_z)])

    # clutter: one missed and one detected branch per parent
    c_miss_w = state.c_weights * (state.c_t / (state.c_s + state.c_t)) * c_miss
    if m:
        det_sum = K * float(np.sum(1.0 / denom))
        c_det_w = state.c_weights * c_mean * det_sum
        cw = np.concatenate([c_miss_w, c_det_w])
        cs = np.concatenate([state.c_s, state.c_s + 1.0])
        ct = np.concatenate([state.c_t + 1.0, state.c_t])
    else:
        cw = c_miss_w
        cs = state.c_s.copy()
        ct = state.c_t + 1.0

    return HybridState(
        t_weights=tw,
        t_s=ts,
        t_t=tt,
        t_means=tmeans,
        t_covs=tcovs,
        t_model_idx=tmodel,
        t_tags=ttags,
        c_weights=cw,
        c_s=cs,
        c_t=ct,
        cardinality=card,
        frame=state.frame,
        next_tag=state.next_tag,
    )


# ---------------------------------------------------------------------------
# Rate extraction
# ---------------------------------------------------------------------------

def estimate_rates(state: HybridState) -> tuple[float, float]:
    """(lambda_hat, p_D_hat) from the posterior intensities.

    lambda_hat = <v0, b> is the expected number of detected clutter
    generators.  The detection probability is normalized by the target
    mass <1, v1> so it is a probability rather than an expected count.
    """
    lam_hat = float((state.c_weights * (state.c_s / (state.c_s + state.c_t))).sum()) if state.c_weights.size else 0.0
    w1 = state.target_weight
    if state.t_weights.size:
        num = float((state.t_weights * (state.t_s / (state.t_s + state.t_t))).sum())
    else:
        num = 0.0
    p_d_hat = num / max(w1, RATE_EPS)
    return max(lam_hat, 0.0), min(max(p_d_hat, 0.0), 1.0)


def estimate_target_count(state: HybridState) -> float:
    """Posterior-mean target count <1, v1>."""
    return state.target_weight


def extract_targets(state: HybridState) -> list[tuple[int, np.ndarray, int]]:
    """Round the posterior-mean count, return that many heaviest components.

    Used only when this filter runs standalone as a tracker; the
    bootstrap consumes just the rate estimates.
    """
    n = int(round(estimate_target_count(state)))
    n = min(n, state.t_weights.size)
    if n <= 0:
        return []
    order = np.argsort(-state.t_weights, kind="stable")[:n]
    out = []
    used: dict[int, int] = {}
    for i in order:
        tag = int(state.t_tags[i])
        dup = used.get(tag, 0)
        used[tag] = dup + 1
        if dup:
            tag = -(tag * 100000 + dup)
        out.append((tag, state.t_means[i].copy(), int(state.t_model_idx[i])))
    return out


# ---------------------------------------------------------------------------
# Reduction
# ---------------------------------------------------------------------------

def _merge_beta_group(w, s, t):
    """Moment-matched Beta for a weighted group of Beta components."""
    wsum = w.sum()
    mu = s / (s + t)
    second = (s * (s + 1.0)) / ((s + t) * (s + t + 1.0))
    mean = float((w * mu).sum() / wsum)
    m2 = float((w * second).sum() / wsum)
    merged = beta_from_moments(mean, m2 - mean * mean)
    return wsum, merged.s, merged.t


def reduce_hybrid(state: HybridState, params: EstimatorParams) -> HybridState:
    """Prune/merge/cap both mixtures, rescaling each to its prior total.

    Target components merge on the Gaussian Mahalanobis gate (same
    model); their Beta factors are moment-matched.  Clutter components
    merge when their Beta means are close, which caps the two-branch
    per-frame growth while preserving <v0, b> through moment matching.
    """
    # targets
    total_t = state.target_weight
    keep = state.t_weights >= params.prune_threshold
    w = state.t_weights[keep]
    s = state.t_s[keep]
    t = state.t_t[keep]
    mu = state.t_means[keep]
    P = state.t_covs[keep]
    ridx = state.t_model_idx[keep]
    tg = state.t_tags[keep]

    o_w, o_s, o_t, o_mu, o_P, o_r, o_tag = [], [], [], [], [], [], []
    for r in np.unique(ridx):
        sel = np.where(ridx == r)[0]
        ww = w[sel]
        inv = np.linalg.inv(P[sel])
        alive = np.ones(sel.size, dtype=bool)
        merged = []
        while alive.any():
            live = np.where(alive)[0]
            i = live[np.argmax(ww[live])]
            diff = mu[sel][live] - mu[sel][i]
            d2 = np.einsum("ki,kij,kj->k", diff, inv[live], diff)
            group = live[d2 <= params.merge_threshold]
            gw = ww[group]
            wsum = gw.sum()
            gmu = (gw[:, None] * mu[sel][group]).sum(0) / wsum
            spread = mu[sel][group] - gmu
            gP = (
                gw[:, None, None]
                * (P[sel][group] + np.einsum("ki,kj->kij", spread, spread))
            ).sum(0) / wsum
            _, ms_, mt_ = _merge_beta_group(gw, s[sel][group], t[sel][group])
            merged.append((wsum, ms_, mt_, gmu, 0.5 * (gP + gP.T), int(r), int(tg[sel][i])))
            alive[group] = False
        merged.sort(key=lambda item: -item[0])
        for wsum, ms_, mt_, gmu, gP, rr, tag in merged[: params.max_components]:
            o_w.append(wsum)
            o_s.append(ms_)
            o_t.append(mt_)
            o_mu.append(gmu)
            o_P.append(gP)
            o_r.append(rr)
            o_tag.append(tag)

    if o_w:
        tw = np.asarray(o_w)
        tw *= total_t / tw.sum() if tw.sum() > 0 else 1.0
        t_arrays = (
            tw,
            np.asarray(o_s),
            np.asarray(o_t),
            np.asarray(o_mu),
            np.asarray(o_P),
            np.asarray(o_r, dtype=np.int64),
            np.asarray(o_tag, dtype=np.int64),
        )
    else:
        t_arrays = (
            np.zeros(0), np.zeros(0), np.zeros(0),
            np.zeros((0, STATE_DIM)), np.zeros((0, STATE_DIM, STATE_DIM)),
            np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
        )

    # clutter
    total_c = state.clutter_weight
    keep = state.c_weights >= params.prune_threshold
    cw = state.c_weights[keep]
    cs = state.c_s[keep]
    ct = state.c_t[keep]
    c_out = []
    if cw.size:
        means = cs / (cs + ct)
        alive = np.ones(cw.size, dtype=bool)
        while alive.any():
            live = np.where(alive)[0]
            i = live[np.argmax(cw[live])]
            group = live[np.abs(means[live] - means[i]) <= params.clutter_merge_distance]
            c_out.append(_merge_beta_group(cw[group], cs[group], ct[group]))
            alive[group] = False
        c_out.sort(key=lambda item: -item[0])
        c_out = c_out[: params.max_clutter_components]
    if c_out:
        ncw = np.asarray([x[0] for x in c_out])
        ncw *= total_c / ncw.sum() if ncw.sum() > 0 else 1.0
        c_arrays = (ncw, np.asarray([x[1] for x in c_out]), np.asarray([x[2] for x in c_out]))
    else:
        c_arrays = (np.zeros(0), np.zeros(0), np.zeros(0))

    return HybridState(
        t_weights=t_arrays[0],
        t_s=t_arrays[1],
        t_t=t_arrays[2],
        t_means=t_arrays[3],
        t_covs=t_arrays[4],
        t_model_idx=t_arrays[5],
        t_tags=t_arrays[6],
        c_weights=c_arrays[0],
        c_s=c_arrays[1],
        c_t=c_arrays[2],
        cardinality=state.cardinality.copy(),
        frame=state.frame,
        next_tag=state.next_tag,
    )
