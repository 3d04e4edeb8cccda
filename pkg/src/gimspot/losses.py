"""Training objectives and their gradients with respect to model outputs.

Every ``loss_*`` returns ``(value, grad)``. Pseudo-labels and sample sets
are constants: nothing here differentiates through them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .gim import PseudoLabelStore
from .model import ScoreTracks

EPS = 1e-7
NORM_EPS = 1e-12


@dataclass
class LossWeights:
    lambda_smooth: float = 0.1
    lambda_norm: float = 0.3
    lambda_iac: float = 2.0e-5
    tau: float = 0.1
    alpha: float = 0.75
    gamma: float = 2.0
    symmetric_focal: bool = False
    # "sum" is ||a||_1; "mean" divides by T
    norm_reduction: str = "mean"
    # False gives the plain supervised-contrastive loss (all weights 1)
    intensity_aware: bool = True

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if min(self.lambda_smooth, self.lambda_norm, self.lambda_iac) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.norm_reduction not in ("sum", "mean"):
            raise ValueError("norm_reduction must be 'sum' or 'mean'")


@dataclass
class ApexSampleSets:
    positives: list[np.ndarray] = field(default_factory=list)
    negatives: list[np.ndarray] = field(default_factory=list)


def loss_gim(a: np.ndarray, store: PseudoLabelStore) -> tuple[float, np.ndarray]:
    """Mean squared error over pseudo-labeled frames (neutral target 0).

    A frame labeled by two classes contributes the mean of its two errors.
    """
    n = store.n_exp + store.n_neut
    if n == 0:
        raise ValueError("loss_gim needs at least one pseudo-labeled frame")
    labeled = store.labeled
    counts = labeled.sum(axis=0)
    diff = np.where(labeled, a[None, :] - store.soft_label, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_frame = np.where(counts > 0, (diff**2).sum(axis=0) / counts, 0.0)
        grad = np.where(counts > 0, 2.0 * diff.sum(axis=0) / counts, 0.0)
    neut = store.neutral_flag
    per_frame = per_frame + np.where(neut, a**2, 0.0)
    grad = grad + np.where(neut, 2.0 * a, 0.0)
    return float(per_frame.sum() / n), grad / n


def loss_norm(a: np.ndarray, reduction: str = "sum") -> tuple[float, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    value, grad = float(np.abs(a).sum()), np.sign(a)
    if reduction == "mean" and a.size:
        return value / a.size, grad / a.size
    return value, grad


def loss_reward(a: np.ndarray, store: PseudoLabelStore) -> tuple[float, np.ndarray]:
    reliable = store.max_label() > 0.5
    grad = np.zeros_like(a, dtype=np.float64)
    n = int(reliable.sum())
    if n == 0:
        return 0.0, grad
    grad[reliable] = -np.sign(a[reliable]) / n
    return float(-np.abs(a[reliable]).sum() / n), grad


def loss_smooth(a: np.ndarray) -> tuple[float, np.ndarray]:
    T = len(a)
    grad = np.zeros(T)
    if T < 2:
        return 0.0, grad
    d = np.diff(a)
    sgn = np.sign(d) / (T - 1)
    grad[1:] += sgn
    grad[:-1] -= sgn
    return float(np.abs(d).sum() / (T - 1)), grad


def reliable_set(store: PseudoLabelStore) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Frames, pseudo-classes and pseudo-intensities used by the contrastive loss.

    Expression frames need a label above 0.5; every pseudo-neutral frame is
    included with class ``C`` and intensity 0.
    """
    best = store.max_label()
    cls = store.pseudo_class()
    mask = (store.expression_mask & (best > 0.5)) | store.neutral_flag
    idx = np.flatnonzero(mask)
    return idx, cls[idx], np.where(store.neutral_flag[idx], 0.0, best[idx])


def iac_weights(ahat: np.ndarray, ycls: np.ndarray, intensity_aware: bool = True) -> np.ndarray:
    same = ycls[:, None] == ycls[None, :]
    if not intensity_aware:
        return np.ones(same.shape)
    gap = np.abs(ahat[:, None] - ahat[None, :])
    return np.where(same, 1.0 - gap, gap)


def iac_from_embeddings(f, ycls, ahat, tau, intensity_aware=True) -> tuple[float, np.ndarray]:
    """Contrastive loss on an explicit sample list; gradient w.r.t. raw ``f``."""
    f = np.asarray(f, dtype=np.float64)
    n = f.shape[0]
    grad = np.zeros_like(f)
    if n < 2:
        return 0.0, grad
    norms = np.linalg.norm(f, axis=1)
    safe = np.maximum(norms, NORM_EPS)
    z = f / safe[:, None]
    logits = z @ z.T / tau
    w = iac_weights(np.asarray(ahat, float), np.asarray(ycls), intensity_aware)
    others = ~np.eye(n, dtype=bool)
    same = (np.asarray(ycls)[:, None] == np.asarray(ycls)[None, :]) & others
    q_count = same.sum(axis=1)
    active = q_count > 0
    if not active.any():
        return 0.0, grad

    # log sum_e w_ie exp(l_ie), stabilised per row
    wm = np.where(others, w, 0.0)
    row_max = np.where(others, logits, -np.inf).max(axis=1, keepdims=True)
    ex = wm * np.exp(logits - row_max)
    denom = ex.sum(axis=1)
    log_denom = np.log(denom) + row_max[:, 0]
    with np.errstate(divide="ignore"):
        log_w = np.log(np.where(same, w, 1.0))
    per_pair = np.where(same, log_w + logits - log_denom[:, None], 0.0)
    loss_i = -per_pair.sum(axis=1) / np.maximum(q_count, 1)
    value = float(loss_i[active].sum())

    # d loss_i / d logit_ie = p_ie - [e in Q(i)] / |Q(i)|
    prob = ex / denom[:, None]
    G = np.where(active[:, None], prob - same / np.maximum(q_count, 1)[:, None], 0.0)
    gz = (G @ z + G.T @ z) / tau
    radial = np.sum(gz * z, axis=1, keepdims=True)
    big = norms > NORM_EPS
    grad = np.where(big[:, None], (gz - radial * z) / safe[:, None], gz / NORM_EPS)
    return value, grad


def loss_iac(f: np.ndarray, store: PseudoLabelStore, tau: float = 0.1, intensity_aware: bool = True):
    idx, ycls, ahat = reliable_set(store)
    grad = np.zeros_like(f, dtype=np.float64)
    if len(idx) < 2:
        return 0.0, grad
    value, g = iac_from_embeddings(f[idx], ycls, ahat, tau, intensity_aware)
    grad[idx] = g
    return value, grad


def _dilate(mask: np.ndarray, m: int) -> np.ndarray:
    if m <= 0 or not mask.any():
        return mask.copy()
    T = len(mask)
    out = mask.copy()
    for k in range(1, m + 1):
        out[k:] |= mask[: T - k]
        out[: T - k] |= mask[k:]
    return out


def mine_apex_samples(store: PseudoLabelStore, m_c: Sequence[int], m_neut: int) -> ApexSampleSets:
    """Positives: class apex frames +/- m_c. Negatives: neutral and reliable
    expression frames +/- m_neut, minus that class's positives."""
    seeds = store.neutral_flag | (store.expression_mask & (store.max_label() > 0.5))
    neg_base = _dilate(seeds, m_neut)
    sets = ApexSampleSets()
    for c in range(store.C):
        pos = _dilate(store.apex_flag[c], int(m_c[c]))
        sets.positives.append(np.flatnonzero(pos))
        sets.negatives.append(np.flatnonzero(neg_base & ~pos))
    return sets


def loss_apex_focal(S, sets: ApexSampleSets, alpha=0.75, gamma=2.0, symmetric=False):
    """Class-wise focal loss on apex scores, each class normalized by its own set sizes.

    The negative term is ``-(1 - alpha) * s * log(1 - s)``; ``symmetric``
    switches it to ``-(1 - alpha) * s**gamma * log(1 - s)``.
    """
    S = np.asarray(S, dtype=np.float64)
    grad = np.zeros_like(S)
    value = 0.0
    for c in range(S.shape[1]):
        pos, neg = sets.positives[c], sets.negatives[c]
        if len(pos):
            raw = S[pos, c]
            s = np.clip(raw, EPS, 1 - EPS)
            inside = (raw >= EPS) & (raw <= 1 - EPS)
            mod = (1 - s) ** gamma
            value += float(-(alpha * mod * np.log(s)).sum() / len(pos))
            dmod = gamma * (1 - s) ** (gamma - 1) if gamma > 0 else np.zeros_like(s)
            d = -alpha * (-dmod * np.log(s) + mod / s)
            grad[pos, c] += np.where(inside, d, 0.0) / len(pos)
        if len(neg):
            raw = S[neg, c]
            s = np.clip(raw, EPS, 1 - EPS)
            inside = (raw >= EPS) & (raw <= 1 - EPS)
            if symmetric:
                mod = s**gamma
                dmod = gamma * s ** (gamma - 1) if gamma > 0 else np.zeros_like(s)
            else:
                mod, dmod = s, np.ones_like(s)
            log1m = np.log1p(-s)
            value += float(-((1 - alpha) * mod * log1m).sum() / len(neg))
            d = -(1 - alpha) * (dmod * log1m - mod / (1 - s))
            grad[neg, c] += np.where(inside, d, 0.0) / len(neg)
    return value, grad


TERMS = ("gim", "apex", "reward", "smooth", "norm", "iac")


def total_loss(tracks: ScoreTracks, store: PseudoLabelStore, sets: ApexSampleSets, weights: LossWeights):
    """Weighted objective.

    Returns ``(value, terms, grads)`` with ``grads`` holding upstream
    gradients for ``a``, ``S`` and ``f``.
    """
    a, S, f = tracks.a, tracks.S, tracks.f
    terms, ga = {}, np.zeros_like(a)
    if store.n_exp + store.n_neut > 0:
        terms["gim"], g = loss_gim(a, store)
        ga += g
    else:
        terms["gim"] = 0.0
    terms["apex"], gS = loss_apex_focal(S, sets, weights.alpha, weights.gamma, weights.symmetric_focal)
    terms["reward"], g = loss_reward(a, store)
    ga += g
    terms["smooth"], g = loss_smooth(a)
    ga += weights.lambda_smooth * g
    terms["norm"], g = loss_norm(a, weights.norm_reduction)
    ga += weights.lambda_norm * g
    if weights.lambda_iac > 0:
        terms["iac"], gf = loss_iac(f, store, weights.tau, weights.intensity_aware)
        gf = weights.lambda_iac * gf
    else:
        terms["iac"], gf = 0.0, np.zeros_like(f)
    value = (
        terms["gim"]
        + terms["apex"]
        + terms["reward"]
        + weights.lambda_smooth * terms["smooth"]
        + weights.lambda_norm * terms["norm"]
        + weights.lambda_iac * terms["iac"]
    )
    return value, terms, {"a": ga, "S": gS, "f": gf}
