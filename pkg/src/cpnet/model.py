"""Compositional prototype head.

Component prototypes ``R`` (one row per attribute) are L2-normalized and
mixed by a class's attribute scores into a compositional prototype. Episode
classification fuses it with the support-mean visual prototype through a
sigmoid-gated convex combination and scores queries with scaled cosine
similarity.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from . import gradcore as gc
from .checkpoint import read_checkpoint, write_checkpoint
from .errors import DataError, DimMismatch, EmptySupport, NegativeScore, ZeroAttributeVector
from .rng import RngStream

GEN_MODES = ("comp", "vis", "concat")
RICP_SEED = 0x5EED_41C9
INIT_TEMPERATURE = 10.0


class Variant(str, Enum):
    RICP = "RICP"
    VP = "VP"
    LCP = "LCP"
    RICP_VP = "RICP+VP"
    LCP_VP = "LCP+VP"
    CONCAT = "CONCAT"
    ADAPTIVE = "ADAPTIVE"

    def __str__(self):
        return self.value

    @property
    def uses_random_components(self) -> bool:
        return self in (Variant.RICP, Variant.RICP_VP)

    @property
    def gated(self) -> bool:
        return self in (Variant.RICP_VP, Variant.LCP_VP, Variant.ADAPTIVE)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class CpnParams:
    R: np.ndarray  # (M, d) component prototypes
    w: np.ndarray  # weight generator, length d or 2d
    b: float
    tau1: float
    tau2: float
    mode: str = "comp"
    concat_W: np.ndarray | None = None  # (d, 2d)
    concat_b: np.ndarray | None = None  # (d,)

    def __post_init__(self):
        R = gc.as_mat(self.R, "R")
        w = gc.as_vec(self.w, "w")
        if self.mode not in GEN_MODES:
            raise DataError(f"unknown generator input mode {self.mode!r}")
        d = R.shape[1]
        if w.size != generator_width(self.mode, d):
            raise DimMismatch(f"generator length {w.size} does not fit mode {self.mode!r} with d={d}")
        for name in ("b", "tau1", "tau2"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise DataError(f"{name} is not finite")
            object.__setattr__(self, name, v)
        if (self.concat_W is None) != (self.concat_b is None):
            raise DataError("concat head needs both W and b")
        if self.concat_W is not None:
            W = gc.as_mat(self.concat_W, "concat_W")
            cb = gc.as_vec(self.concat_b, "concat_b")
            if W.shape != (d, 2 * d) or cb.shape != (d,):
                raise DimMismatch(f"concat head shapes {W.shape}, {cb.shape} for d={d}")
            object.__setattr__(self, "concat_W", _frozen(W))
            object.__setattr__(self, "concat_b", _frozen(cb))
        object.__setattr__(self, "R", _frozen(R))
        object.__setattr__(self, "w", _frozen(w))

    @property
    def n_attributes(self) -> int:
        return self.R.shape[0]

    @property
    def dim(self) -> int:
        return self.R.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        """Trainable tensors by name (scalars as 0-d arrays)."""
        out = {
            "R": self.R,
            "w": self.w,
            "b": np.asarray(self.b),
            "tau1": np.asarray(self.tau1),
            "tau2": np.asarray(self.tau2),
        }
        if self.concat_W is not None:
            out["concat_W"] = self.concat_W
            out["concat_b"] = self.concat_b
        return out

    def replace(self, **changes) -> "CpnParams":
        for k in ("b", "tau1", "tau2"):
            if k in changes:
                changes[k] = float(changes[k])
        return dataclasses.replace(self, **changes)

    def copy(self) -> "CpnParams":
        return self.replace(**{k: np.array(v) for k, v in self.arrays().items()})

    def same_as(self, other: "CpnParams") -> bool:
        a, b = self.arrays(), other.arrays()
        return self.mode == other.mode and a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def generator_width(mode: str, d: int) -> int:
    return 2 * d if mode == "concat" else d


def init_params(M: int, d: int, mode: str = "comp", rng: RngStream | None = None, concat_head: bool = False) -> CpnParams:
    """Fresh parameters: Gaussian R with std 1/sqrt(d), zero generator, temperatures at 10."""
    if M < 1 or d < 1:
        raise DataError("M and d must be positive")
    rng = rng if rng is not None else RngStream(0)
    R = rng.normals((M, d)) / np.sqrt(d)
    W = cb = None
    if concat_head:
        W = rng.normals((d, 2 * d)) / np.sqrt(2 * d)
        cb = np.zeros(d)
    return CpnParams(
        R=R, w=np.zeros(generator_width(mode, d)), b=0.0,
        tau1=INIT_TEMPERATURE, tau2=INIT_TEMPERATURE, mode=mode, concat_W=W, concat_b=cb,
    )


def with_concat_head(params: CpnParams, rng: RngStream) -> CpnParams:
    d = params.dim
    return params.replace(concat_W=rng.normals((d, 2 * d)) / np.sqrt(2 * d), concat_b=np.zeros(d))


@lru_cache(maxsize=16)
def _random_components(M: int, d: int, seed: int) -> np.ndarray:
    R = RngStream(seed).normals((M, d)) / np.sqrt(d)
    R.setflags(write=False)
    return R


def random_components(M: int, d: int, seed: int = RICP_SEED) -> np.ndarray:
    """Randomly initialized component prototypes used by the RICP controls."""
    return _random_components(M, d, seed)


# --- forward primitives -----------------------------------------------------

def _check_scores(z: np.ndarray):
    if np.any(z < 0):
        raise NegativeScore("attribute scores must be non-negative")
    if np.any(~np.any(z > 0, axis=-1)):
        raise ZeroAttributeVector("attribute vector is all zeros")


def class_prototype(R, z) -> np.ndarray:
    """Attribute-weighted sum of the L2-normalized rows of ``R``.

    ``z`` may hold one attribute vector or a matrix of them (one per class).
    """
    z = np.asarray(z, dtype=np.float64)
    _check_scores(z)
    return gc.weighted_sum(z, gc.l2_normalize(gc.as_mat(R, "R")))


def base_class_probs(features, prototypes, tau1: float) -> np.ndarray:
    """Softmax over tau1-scaled cosine similarity to each class prototype."""
    probs = gc.softmax(tau1 * gc.cosine_matrix(features, prototypes))
    return probs[0] if np.ndim(features) == 1 else probs


def visual_prototype(features) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise EmptySupport("visual prototype needs at least one support feature")
    return features.mean(axis=0)


def generator_input(mode: str, p_comp_hat, p_vis_hat) -> np.ndarray:
    if mode == "comp":
        return np.asarray(p_comp_hat)
    if mode == "vis":
        return np.asarray(p_vis_hat)
    if mode == "concat":
        return np.concatenate([p_vis_hat, p_comp_hat], axis=-1)
    raise DataError(f"unknown generator input mode {mode!r}")


def fusion_weight(w, b: float, mode: str, p_comp_hat, p_vis_hat):
    """lambda = sigmoid(w . x + b), x chosen by ``mode``; row-wise for matrices."""
    x = generator_input(mode, p_comp_hat, p_vis_hat)
    w = np.asarray(w, dtype=np.float64)
    if x.shape[-1] != w.size:
        raise DimMismatch(f"generator length {w.size} vs input length {x.shape[-1]} (mode {mode!r})")
    return gc.sigmoid(x @ w + b)


def fuse(lam, p_comp_hat, p_vis_hat) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim == 1:
        lam = lam[:, None]
    return lam * np.asarray(p_comp_hat) + (1.0 - lam) * np.asarray(p_vis_hat)


def query_probs(query_features, fused, tau2: float) -> np.ndarray:
    return base_class_probs(query_features, fused, tau2)


def _class_means(features: np.ndarray, positions: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((n_classes, features.shape[1]))
    for i in range(n_classes):
        sel = features[positions == i]
        if sel.shape[0] == 0:
            raise EmptySupport(f"no support features for class position {i}")
        out[i] = visual_prototype(sel)
    return out


def _components(params: CpnParams, variant: Variant) -> np.ndarray:
    if variant.uses_random_components:
        return random_components(params.n_attributes, params.dim)
    return params.R


def _forward(params: CpnParams, variant: Variant, support, support_pos, Z):
    """Episode prototypes plus everything the backward pass needs."""
    variant = Variant(variant)
    n = Z.shape[0]
    cache = {"variant": variant}
    if variant is not Variant.VP:
        _check_scores(Z)
        R = _components(params, variant)
        Rn = gc.l2_normalize(R)
        Pc = Z @ Rn
        cache.update(R=R, Pc=Pc, Pch=gc.l2_normalize(Pc))
    if variant not in (Variant.LCP, Variant.RICP):
        Pv = _class_means(support, support_pos, n)
        cache["Pvh"] = gc.l2_normalize(Pv)

    if variant is Variant.VP:
        P = cache["Pvh"]
    elif variant in (Variant.LCP, Variant.RICP):
        P = cache["Pch"]
    elif variant is Variant.CONCAT:
        if params.concat_W is None:
            raise DataError("CONCAT variant requires a concat fusion head")
        x = np.concatenate([cache["Pvh"], cache["Pch"]], axis=1)
        H = x @ params.concat_W.T + params.concat_b
        cache.update(x=x, H=H)
        P = gc.l2_normalize(H)
    else:
        x = generator_input(params.mode, cache["Pch"], cache["Pvh"])
        if x.shape[1] != params.w.size:
            raise DimMismatch(f"generator length {params.w.size} vs input length {x.shape[1]}")
        lam = gc.sigmoid(x @ params.w + params.b)
        cache.update(x=x, lam=lam)
        P = fuse(lam, cache["Pch"], cache["Pvh"])
    cache["P"] = P
    return P, cache


def episode_prototypes(params: CpnParams, variant, support_features, support_labels, classes, class_attributes) -> np.ndarray:
    """Per-class prototypes (rows in ``classes`` order) for one episode.

    ``class_attributes`` is an (N, M) matrix aligned with ``classes``.
    """
    support = np.asarray(support_features, dtype=np.float64)
    pos = {c: i for i, c in enumerate(classes)}
    support_pos = np.array([pos[int(c)] for c in np.asarray(support_labels).tolist()])
    Z = np.asarray(class_attributes, dtype=np.float64).reshape(len(classes), -1)
    return _forward(params, variant, support, support_pos, Z)[0]


def predict(episode, bundle, params: CpnParams, variant) -> tuple[np.ndarray, np.ndarray]:
    """Predicted class ids and probability rows for every query of ``episode``.

    Only query features are read; query attribute vectors never enter.
    """
    feats = bundle.embeddings.features
    Z = bundle.attributes.matrix(episode.classes)
    P = episode_prototypes(params, variant, feats[episode.support_idx], episode.support_y, episode.classes, Z)
    probs = query_probs(feats[episode.query_idx], P, params.tau2)
    # np.argmax keeps the first maximum: ties go to the lowest class position
    pred = np.asarray(episode.classes)[np.argmax(probs, axis=1)]
    return pred, probs


# --- losses and gradients ---------------------------------------------------

def pretrain_loss_grad(R, tau1: float, features, targets, Z) -> tuple[float, np.ndarray, float]:
    """Mean cross-entropy of cosine-softmax classification over all classes in ``Z``.

    Returns (loss, dL/dR, dL/dtau1).
    """
    Rn = gc.l2_normalize(R)
    P = Z @ Rn
    Pn = gc.l2_normalize(P)
    Qn = gc.l2_normalize(features)
    S = Qn @ Pn.T
    loss, (G,) = gc.softmax_xent_batch(tau1 * S, targets)
    dtau = float(np.sum(G * S))
    dPn = tau1 * (G.T @ Qn)
    dRn = Z.T @ gc.l2_normalize_vjp(P, dPn)
    return loss, gc.l2_normalize_vjp(R, dRn), dtau


def episode_loss_grad(params: CpnParams, variant, support, support_pos, Z, queries, query_pos):
    """Mean query cross-entropy of one episode and its gradients.

    Gradients are returned for R, w, b, tau2 and the concat head where they
    exist in the computation; untouched parameters are absent from the dict.
    """
    variant = Variant(variant)
    P, c = _forward(params, variant, support, support_pos, Z)
    Qn = gc.l2_normalize(queries)
    Pn = gc.l2_normalize(P)
    S = Qn @ Pn.T
    loss, (G,) = gc.softmax_xent_batch(params.tau2 * S, query_pos)
    grads = {"tau2": np.asarray(float(np.sum(G * S)))}
    dP = gc.l2_normalize_vjp(P, params.tau2 * (G.T @ Qn))

    if variant is Variant.VP:
        return loss, grads
    d = params.dim
    if variant in (Variant.LCP, Variant.RICP):
        dPch = dP
    elif variant is Variant.CONCAT:
        dH = gc.l2_normalize_vjp(c["H"], dP)
        grads["concat_W"] = dH.T @ c["x"]
        grads["concat_b"] = dH.sum(axis=0)
        dPch = (dH @ params.concat_W)[:, d:]
    else:
        lam = c["lam"]
        dlam = np.sum(dP * (c["Pch"] - c["Pvh"]), axis=1)
        da = dlam * lam * (1.0 - lam)
        grads["w"] = c["x"].T @ da
        grads["b"] = np.asarray(float(np.sum(da)))
        dPch = lam[:, None] * dP
        if params.mode == "comp":
            dPch = dPch + np.outer(da, params.w)
        elif params.mode == "concat":
            dPch = dPch + np.outer(da, params.w[d:])

    if not variant.uses_random_components:
        dRn = Z.T @ gc.l2_normalize_vjp(c["Pc"], dPch)
        grads["R"] = gc.l2_normalize_vjp(c["R"], dRn)
    return loss, grads


def episode_arrays(episode, bundle):
    """(support, support_pos, Z, queries, query_pos) for an episode."""
    feats = bundle.embeddings.features
    pos = {c: i for i, c in enumerate(episode.classes)}
    support_pos = np.array([pos[c] for c in episode.support_y.tolist()])
    return (
        feats[episode.support_idx],
        support_pos,
        bundle.attributes.matrix(episode.classes),
        feats[episode.query_idx],
        episode.query_targets,
    )


# --- checkpoint -------------------------------------------------------------

def save_params(path, params: CpnParams, extra: dict | None = None) -> None:
    meta = {
        "kind": "cpn-params",
        "M": params.n_attributes,
        "d": params.dim,
        "mode": params.mode,
        "tau1": params.tau1,
        "tau2": params.tau2,
    }
    if extra:
        meta["extra"] = extra
    sections = {"R": params.R, "w": params.w, "b": np.array([params.b])}
    if params.concat_W is not None:
        sections["concat_W"] = params.concat_W
        sections["concat_b"] = params.concat_b
    write_checkpoint(path, meta, sections)


def load_params(path) -> CpnParams:
    meta, sec = read_checkpoint(path)
    if meta.get("kind") != "cpn-params":
        raise DataError(f"{path}: not a parameter checkpoint")
    params = CpnParams(
        R=sec["R"], w=sec["w"], b=float(sec["b"][0]), tau1=meta["tau1"], tau2=meta["tau2"],
        mode=meta["mode"], concat_W=sec.get("concat_W"), concat_b=sec.get("concat_b"),
    )
    if params.R.shape != (meta["M"], meta["d"]):
        raise DataError(f"{path}: R shape {params.R.shape} disagrees with header")
    return params
