"""Two-branch per-frame head with hand-written gradients.

    f = relu(F W0 + b0)                      trunk embeddings   (T, De)
    X = relu(f W1 + b1);  a = sigmoid(X w2 + b2)   intensity    (T, Dp), (T,)
    H = relu(f W3 + b3);  S = sigmoid(H W4 + b4)   apex scores  (T, Dp), (T, C)

The intensity and apex branches share only the trunk.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CKPT_MAGIC = b"GIMC"
CKPT_VERSION = 1

PARAM_NAMES = ("W0", "b0", "W1", "b1", "w2", "b2", "W3", "b3", "W4", "b4")
INTENSITY_PARAMS = ("W1", "b1", "w2", "b2")
APEX_PARAMS = ("W3", "b3", "W4", "b4")
TRUNK_PARAMS = ("W0", "b0")


class CheckpointError(ValueError):
    pass


def param_shapes(D: int, De: int, Dp: int, C: int) -> dict[str, tuple[int, ...]]:
    return {
        "W0": (D, De),
        "b0": (De,),
        "W1": (De, Dp),
        "b1": (Dp,),
        "w2": (Dp,),
        "b2": (1,),
        "W3": (De, Dp),
        "b3": (Dp,),
        "W4": (Dp, C),
        "b4": (C,),
    }


def param_count(D: int, De: int, Dp: int, C: int) -> int:
    return D * De + De + De * Dp + Dp + Dp + 1 + De * Dp + Dp + Dp * C + C


@dataclass
class ModelParams:
    D: int
    De: int
    Dp: int
    C: int
    tensors: dict[str, np.ndarray]
    seed: int = 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "ModelParams":
        return ModelParams(self.D, self.De, self.Dp, self.C, {k: v.copy() for k, v in self.tensors.items()}, self.seed)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.tensors[k].ravel() for k in PARAM_NAMES])

    def n_params(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())


def init_params(D: int, De: int = 32, Dp: int = 16, C: int = 2, seed: int = 0) -> ModelParams:
    if min(D, De, Dp, C) <= 0:
        raise ValueError("all dimensions must be positive")
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(D, De, Dp, C).items():
        if name.startswith(("W", "w")):
            bound = 1.0 / np.sqrt(shape[0])
            tensors[name] = rng.uniform(-bound, bound, size=shape)
        else:
            tensors[name] = np.zeros(shape)
    return ModelParams(D, De, Dp, C, tensors, seed)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class ScoreTracks:
    a: np.ndarray
    S: np.ndarray
    X: np.ndarray
    f: np.ndarray
    # pre-activations kept for backward
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def T(self) -> int:
        return self.a.shape[0]


def forward(params: ModelParams, features: np.ndarray) -> ScoreTracks:
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 2 or (F.shape[0] and F.shape[1] != params.D):
        raise ValueError(f"expected features of width {params.D}, got shape {F.shape}")
    F = F.reshape(-1, params.D)
    p = params.tensors
    Z0 = F @ p["W0"] + p["b0"]
    f = np.maximum(Z0, 0.0)
    Z1 = f @ p["W1"] + p["b1"]
    X = np.maximum(Z1, 0.0)
    a = sigmoid(X @ p["w2"] + p["b2"][0])
    Z3 = f @ p["W3"] + p["b3"]
    H = np.maximum(Z3, 0.0)
    S = sigmoid(H @ p["W4"] + p["b4"])
    return ScoreTracks(a, S, X, f, {"F": F, "Z0": Z0, "Z1": Z1, "Z3": Z3, "H": H})


def backward(params: ModelParams, features, tracks: ScoreTracks, ga=None, gS=None, gX=None, gf=None):
    """Parameter gradients given upstream gradients on ``a``, ``S``, ``X``, ``f``.

    ``tracks`` must come from ``forward(params, features)``; missing upstream
    gradients count as zero.
    """
    T = tracks.T
    p = params.tensors
    cache = tracks.cache if tracks.cache else forward(params, features).cache
    F, Z0, Z1, Z3, H = cache["F"], cache["Z0"], cache["Z1"], cache["Z3"], cache["H"]
    ga = np.zeros(T) if ga is None else np.asarray(ga, dtype=np.float64)
    gS = np.zeros((T, params.C)) if gS is None else np.asarray(gS, dtype=np.float64)
    gX = np.zeros((T, params.Dp)) if gX is None else np.asarray(gX, dtype=np.float64)
    gf = np.zeros((T, params.De)) if gf is None else np.asarray(gf, dtype=np.float64)
    if ga.shape != (T,) or gS.shape != (T, params.C) or gX.shape != (T, params.Dp) or gf.shape != (T, params.De):
        raise ValueError("upstream gradient shapes do not match the score tracks")

    a, S, X, f = tracks.a, tracks.S, tracks.X, tracks.f
    g = {}
    gz2 = ga * a * (1.0 - a)
    g["w2"] = X.T @ gz2
    g["b2"] = np.array([gz2.sum()])
    gZ1 = (gX + np.outer(gz2, p["w2"])) * (Z1 > 0)
    g["W1"] = f.T @ gZ1
    g["b1"] = gZ1.sum(axis=0)

    gZ4 = gS * S * (1.0 - S)
    g["W4"] = H.T @ gZ4
    g["b4"] = gZ4.sum(axis=0)
    gZ3 = (gZ4 @ p["W4"].T) * (Z3 > 0)
    g["W3"] = f.T @ gZ3
    g["b3"] = gZ3.sum(axis=0)

    gZ0 = (gf + gZ1 @ p["W1"].T + gZ3 @ p["W3"].T) * (Z0 > 0)
    g["W0"] = F.T @ gZ0
    g["b0"] = gZ0.sum(axis=0)
    return g


def save_checkpoint(path, params: ModelParams, epoch: int | str = "final", extra: dict | None = None) -> None:
    """Write ``GIMC`` magic, a length-prefixed JSON header and a float32 LE blob."""
    header = {
        "version": CKPT_VERSION,
        "dims": {"D": params.D, "De": params.De, "Dp": params.Dp, "C": params.C},
        "seed": params.seed,
        "epoch": epoch,
        "params": [[name, list(params[name].shape)] for name in PARAM_NAMES],
    }
    if extra:
        header["extra"] = extra
    hbytes = json.dumps(header, sort_keys=True).encode()
    blob = np.concatenate([params[name].ravel() for name in PARAM_NAMES]).astype("<f4").tobytes()
    Path(path).write_bytes(CKPT_MAGIC + struct.pack("<I", len(hbytes)) + hbytes + blob)


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", raw[4:8])
    try:
        header = json.loads(raw[8 : 8 + hlen])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    if header.get("version") != CKPT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {header.get('version')} != {CKPT_VERSION}")
    dims = header["dims"]
    shapes = param_shapes(dims["D"], dims["De"], dims["Dp"], dims["C"])
    values = np.frombuffer(raw[8 + hlen :], dtype="<f4").astype(np.float64)
    if values.size != sum(int(np.prod(s)) for s in shapes.values()):
        raise CheckpointError(f"{path}: parameter blob has wrong size")
    tensors, off = {}, 0
    for name in PARAM_NAMES:
        n = int(np.prod(shapes[name]))
        tensors[name] = values[off : off + n].reshape(shapes[name]).copy()
        off += n
    params = ModelParams(dims["D"], dims["De"], dims["Dp"], dims["C"], tensors, header.get("seed", 0))
    return params, header
