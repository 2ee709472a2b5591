"""Anchor points for the latent configuration.

Pipeline: pick a random subset of observations, embed it with locally
linear embedding, fit an unconstrained decoder from the embedding back to
the observations, then stretch each embedding coordinate by the length of
the matching first-layer weight column. The stretched coordinates become
fixed latent values, consistent with a decoder whose first-layer columns
have unit length.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidCount, NonFiniteLoss, NotPositiveDefinite, TooFewPoints
from .linalg import cholesky_solve, sym_eig
from .model import DecoderParams, ModelSpec, sse_and_grad_numpy
from .utils import derive_seed


@dataclass
class LLEConfig:
    n_neighbors: int = 5
    ridge: float = 1e-3
    target_dim: int = 2

    def __post_init__(self):
        if self.n_neighbors < 1:
            raise ValueError("n_neighbors must be >= 1")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")


@dataclass
class AdamConfig:
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 2000


@dataclass
class PretrainResult:
    params: DecoderParams
    final_loss: float
    initial_loss: float
    column_norms: np.ndarray
    loss_history: np.ndarray = field(repr=False)


@dataclass
class AnchorSet:
    indices: np.ndarray
    values: np.ndarray
    source_embedding: np.ndarray
    column_norms: np.ndarray
    seed: int = 0
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=int)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        self.source_embedding = np.atleast_2d(np.asarray(self.source_embedding, dtype=float))
        self.column_norms = np.asarray(self.column_norms, dtype=float)

    @property
    def n_ref(self) -> int:
        return len(self.indices)

    def to_dict(self) -> dict:
        return {
            "indices": self.indices.tolist(),
            "values": self.values.tolist(),
            "source_embedding": self.source_embedding.tolist(),
            "column_norms": self.column_norms.tolist(),
            "seed": int(self.seed),
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnchorSet":
        return cls(
            indices=d["indices"],
            values=d["values"],
            source_embedding=d.get("source_embedding", d["values"]),
            column_norms=d["column_norms"],
            seed=d.get("seed", 0),
            config=d.get("config", {}),
        )

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def from_json(cls, path) -> "AnchorSet":
        return cls.from_dict(json.loads(Path(path).read_text()))


def select_anchors(N: int, N_ref: int, seed: int) -> np.ndarray:
    """``N_ref`` distinct indices drawn uniformly without replacement, sorted."""
    if not 0 < N_ref < N:
        raise InvalidCount(f"need 0 < N_ref < N, got N_ref={N_ref}, N={N}")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(N, size=N_ref, replace=False))


def nearest_neighbors(Y: np.ndarray, k: int) -> np.ndarray:
    """Brute-force k nearest neighbours (excluding self), ties by index."""
    sq = np.sum(Y * Y, axis=1)
    d = np.maximum(sq[:, None] - 2.0 * Y @ Y.T + sq[None, :], 0.0)
    np.fill_diagonal(d, np.inf)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def _local_weights(G: np.ndarray, ridge: float) -> np.ndarray:
    k = G.shape[0]
    tr = np.trace(G)
    reg = ridge * tr / k if tr > 0 else ridge
    ones = np.ones(k)
    try:
        w = cholesky_solve(G + reg * np.eye(k), ones)
    except NotPositiveDefinite:
        w = cholesky_solve(G + 10.0 * max(reg, ridge, 1e-12) * np.eye(k), ones)
    return w / w.sum()


def lle_weights(Y: np.ndarray, n_neighbors: int, ridge: float):
    """Reconstruction weights as a dense (M, M) matrix whose rows sum to 1."""
    Y = np.asarray(Y, dtype=float)
    M = Y.shape[0]
    nbrs = nearest_neighbors(Y, n_neighbors)
    W = np.zeros((M, M))
    for i in range(M):
        Z = Y[nbrs[i]] - Y[i]
        W[i, nbrs[i]] = _local_weights(Z @ Z.T, ridge)
    return W


def _fix_signs(V: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def lle_embed(Ysub: np.ndarray, cfg: LLEConfig) -> np.ndarray:
    """Locally linear embedding of ``Ysub`` into ``cfg.target_dim`` dimensions.

    The constant bottom eigenvector of ``(I - W)^T (I - W)`` is skipped;
    the next ``target_dim`` eigenvectors are scaled by ``sqrt(M)`` and
    signed so that each column's largest-magnitude entry is positive.
    """
    Ysub = np.asarray(Ysub, dtype=float)
    M = Ysub.shape[0]
    q = cfg.target_dim
    if M <= cfg.n_neighbors or M <= q:
        raise TooFewPoints(f"{M} points is too few for {cfg.n_neighbors} neighbours and {q} dims")
    W = lle_weights(Ysub, cfg.n_neighbors, cfg.ridge)
    IW = np.eye(M) - W
    vals, vecs = sym_eig(IW.T @ IW)
    return _fix_signs(vecs[:, 1:q + 1]) * np.sqrt(M)


def _mse_and_grad(params: DecoderParams, X, Y):
    M = X.shape[0]
    ss, gW1, gb1, gW2, gb2, _ = sse_and_grad_numpy(X, params.W1_raw, params.b1, params.W2, params.b2, Y)
    # the kernel returns d(-ss/2); rescale to d(ss/M)
    c = -2.0 / M
    return ss / M, DecoderParams(c * gW1, c * gb1, c * gW2, c * gb2)


def _adam(params: DecoderParams, X, Y, opt: AdamConfig, lr: float):
    cur = params.copy()
    fields = ("W1_raw", "b1", "W2", "b2")
    m = {f: np.zeros_like(getattr(cur, f)) for f in fields}
    v = {f: np.zeros_like(getattr(cur, f)) for f in fields}
    loss, g = _mse_and_grad(cur, X, Y)
    history = [loss]
    best, best_loss = cur.copy(), loss
    for t in range(1, opt.epochs + 1):
        for f in fields:
            gf = getattr(g, f)
            m[f] = opt.beta1 * m[f] + (1 - opt.beta1) * gf
            v[f] = opt.beta2 * v[f] + (1 - opt.beta2) * gf * gf
            mhat = m[f] / (1 - opt.beta1**t)
            vhat = v[f] / (1 - opt.beta2**t)
            setattr(cur, f, getattr(cur, f) - lr * mhat / (np.sqrt(vhat) + opt.eps))
        loss, g = _mse_and_grad(cur, X, Y)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"loss became {loss} at epoch {t}")
        history.append(loss)
        if loss < best_loss:
            best, best_loss = cur.copy(), loss
    return best, np.asarray(history)


def pretrain_decoder(
    X_lle: np.ndarray,
    Ysub: np.ndarray,
    spec: ModelSpec,
    opt: Optional[AdamConfig] = None,
    seed: int = 0,
) -> PretrainResult:
    """Full-batch Adam fit of an unconstrained decoder, embedding -> observations.

    Minimises the mean over points of the squared residual norm, with no
    penalty term. Returns the best iterate seen, so the final loss never
    exceeds the initial one. A non-finite loss triggers one retry at a
    tenth of the learning rate.
    """
    opt = opt or AdamConfig()
    X_lle = np.atleast_2d(np.asarray(X_lle, dtype=float))
    Ysub = np.atleast_2d(np.asarray(Ysub, dtype=float))
    if X_lle.shape != (Ysub.shape[0], spec.q) or Ysub.shape[1] != spec.p:
        raise ValueError(f"shape mismatch: X {X_lle.shape}, Y {Ysub.shape}, spec q={spec.q}, p={spec.p}")
    init = DecoderParams.init_random(spec, np.random.default_rng(seed))
    initial_loss = _mse_and_grad(init, X_lle, Ysub)[0]
    try:
        params, history = _adam(init, X_lle, Ysub, opt, opt.learning_rate)
    except NonFiniteLoss:
        params, history = _adam(init, X_lle, Ysub, opt, opt.learning_rate / 10.0)
    final = float(np.min(history))
    return PretrainResult(params, final, float(initial_loss), params.column_norms(), history)


def build_anchor_set(
    Y: np.ndarray,
    N_ref: int,
    cfg: LLEConfig,
    spec: ModelSpec,
    seed: int = 0,
    lle_scope: str = "anchors",
    rescale: bool = True,
    opt: Optional[AdamConfig] = None,
) -> AnchorSet:
    """Select anchors, embed them, and rescale by pretrained column norms.

    ``lle_scope="full"`` embeds all observations and keeps the anchor rows.
    ``rescale=False`` skips pretraining and returns the raw embedding
    (anchors for a decoder without the column-norm constraint).
    """
    Y = np.asarray(Y, dtype=float)
    if cfg.target_dim != spec.q:
        raise ValueError(f"LLE target_dim {cfg.target_dim} != latent dim {spec.q}")
    idx = select_anchors(Y.shape[0], N_ref, derive_seed(seed, "anchors", "select"))
    if lle_scope == "anchors":
        emb = lle_embed(Y[idx], cfg)
    elif lle_scope == "full":
        emb = lle_embed(Y, cfg)[idx]
    else:
        raise ValueError(f"lle_scope must be 'anchors' or 'full', got {lle_scope!r}")
    opt = opt or AdamConfig()
    if rescale:
        fit = pretrain_decoder(emb, Y[idx], spec, opt, derive_seed(seed, "anchors", "pretrain"))
        norms = fit.column_norms
        extra = {"pretrain_initial_loss": fit.initial_loss, "pretrain_final_loss": fit.final_loss}
    else:
        norms = np.ones(spec.q)
        extra = {}
    config = {
        "n_neighbors": cfg.n_neighbors,
        "ridge": cfg.ridge,
        "target_dim": cfg.target_dim,
        "lle_scope": lle_scope,
        "rescale": rescale,
        "adam": asdict(opt),
        "p": spec.p,
        "q": spec.q,
        "h": spec.h,
        **extra,
    }
    return AnchorSet(idx, emb * norms, emb, norms, seed, config)
