"""Central finite-difference oracle for the hand-written gradients.

Pseudo-labels and apex sample sets are built once and held fixed, so the
objective is a plain function of the parameters. Coordinates whose +/-h
probes flip a ReLU, a |.| sign or a clip boundary sit on a kink and are
skipped; callers assert that this stays rare.
"""

import numpy as np

from gimspot.core import PointLabel, VideoSample
from gimspot.gim import GimConfig, build_epoch_labels
from gimspot.losses import (
    EPS,
    LossWeights,
    loss_apex_focal,
    loss_gim,
    loss_iac,
    loss_norm,
    loss_reward,
    loss_smooth,
    mine_apex_samples,
    total_loss,
)
from gimspot.model import PARAM_NAMES, backward, forward, init_params

H = 1e-5
REL_TOL = 1e-4
ABS_FLOOR = 1e-7


def make_instance(seed, T=32, D=8, C=2, De=32, Dp=16):
    rng = np.random.default_rng(seed)
    params = init_params(D, De, Dp, C, seed)
    for name in ("b0", "b1", "b3", "b4", "b2"):
        params.tensors[name] += rng.normal(0, 0.1, params.tensors[name].shape)
    feats = rng.normal(size=(T, D))
    n = int(rng.integers(1, 4))
    points = [PointLabel(int(rng.integers(0, T)), int(rng.integers(0, C))) for _ in range(n)]
    video = VideoSample(f"g{seed}", feats, points)
    tracks = forward(params, feats)
    stage = int(rng.integers(1, 4))
    store = build_epoch_labels(video, tracks.X, tracks.a, stage, GimConfig(), rng=rng, theta=0.5)
    sets = mine_apex_samples(store, (2, 1), 6)
    return params, video, store, sets


TERMS = ("gim", "norm", "reward", "smooth", "iac", "apex")


def term_gradients(tr, store, sets, weights):
    """Upstream gradients of every single term and of the weighted total."""
    T = tr.a.shape[0]
    out = {}
    for term in TERMS:
        up = {"a": np.zeros(T), "S": np.zeros_like(tr.S), "f": np.zeros_like(tr.f)}
        if term == "gim":
            up["a"] = loss_gim(tr.a, store)[1]
        elif term == "norm":
            up["a"] = loss_norm(tr.a, weights.norm_reduction)[1]
        elif term == "reward":
            up["a"] = loss_reward(tr.a, store)[1]
        elif term == "smooth":
            up["a"] = loss_smooth(tr.a)[1]
        elif term == "iac":
            up["f"] = loss_iac(tr.f, store, weights.tau, weights.intensity_aware)[1]
        else:
            up["S"] = loss_apex_focal(tr.S, sets, weights.alpha, weights.gamma, weights.symmetric_focal)[1]
        out[term] = up
    out["total"] = total_loss(tr, store, sets, weights)[2]
    return out


def term_values(tr, store, sets, weights):
    value, terms, _ = total_loss(tr, store, sets, weights)
    return {**terms, "total": value}


def _kink_signature(tr):
    c = tr.cache
    diff = np.diff(tr.a)
    clip = (tr.S < EPS) | (tr.S > 1 - EPS)
    return np.concatenate(
        [(c["Z0"] > 0).ravel(), (c["Z1"] > 0).ravel(), (c["Z3"] > 0).ravel(), (diff > 0).ravel(), clip.ravel()]
    )


def check_gradients(params, feats, store, sets, weights, h=H, rel_tol=REL_TOL, abs_floor=ABS_FLOOR):
    """Compare analytic and central-difference gradients for every term.

    Returns ``{term: (n_checked, n_skipped, failures)}`` over every
    parameter coordinate.
    """
    tracks = forward(params, feats)
    grads = {}
    for term, up in term_gradients(tracks, store, sets, weights).items():
        grads[term] = backward(params, feats, tracks, ga=up["a"], gS=up["S"], gf=up["f"])
    base_sig = _kink_signature(tracks)
    report = {term: [0, 0, []] for term in grads}
    for name in PARAM_NAMES:
        flat = params.tensors[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            tp = forward(params, feats)
            vp = term_values(tp, store, sets, weights)
            flat[i] = old - h
            tm = forward(params, feats)
            vm = term_values(tm, store, sets, weights)
            flat[i] = old
            smooth = np.array_equal(_kink_signature(tp), base_sig) and np.array_equal(_kink_signature(tm), base_sig)
            for term, rec in report.items():
                if not smooth:
                    rec[1] += 1
                    continue
                num = (vp[term] - vm[term]) / (2 * h)
                ana = grads[term][name].reshape(-1)[i]
                err = abs(num - ana)
                rec[0] += 1
                if err > abs_floor and err > rel_tol * max(abs(num), abs(ana)):
                    rec[2].append((name, i, ana, num))
    return {k: tuple(v) for k, v in report.items()}
