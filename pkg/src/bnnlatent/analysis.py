"""Posterior summaries.

Latent configurations are only identified up to rotation and reflection,
so everything here works with pairwise distances: trace series for a few
pairs, the distance error against a known truth, split-R-hat and ESS
diagnostics, per-draw spectral clustering, co-clustering probabilities
and the least-squares (Dahl) representative partition.
"""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import IndexOutOfRange, SizeMismatch, TooFewDraws
from .linalg import kmeans, sym_eig


def pairwise_distances(X: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix of the rows of ``X``; exactly symmetric."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    diff = X[:, None, :] - X[None, :, :]
    D = np.sqrt(np.sum(diff * diff, axis=2))
    # x_i - x_j and x_j - x_i square identically, so D is symmetric already
    np.fill_diagonal(D, 0.0)
    return D


def distance_error(Dk: np.ndarray, D: np.ndarray) -> float:
    """``(1/N) * ||Dk - D||_F`` over all N^2 entries."""
    Dk = np.asarray(Dk, dtype=float)
    D = np.asarray(D, dtype=float)
    if Dk.shape != D.shape or Dk.ndim != 2 or Dk.shape[0] != Dk.shape[1]:
        raise SizeMismatch(f"distance matrices differ: {Dk.shape} vs {D.shape}")
    E = Dk - D
    return float(np.sqrt(np.sum(E * E)) / D.shape[0])


def distance_error_series(latents: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Distance error of every draw in a (K, N, q) latent stack."""
    return np.array([distance_error(pairwise_distances(X), D) for X in latents])


def random_pairs(N: int, n_pairs: int = 6, seed: int = 0, candidates: Optional[Sequence[int]] = None) -> np.ndarray:
    """``n_pairs`` distinct unordered index pairs (i < j) drawn from ``candidates``."""
    pool = np.arange(N) if candidates is None else np.asarray(candidates, dtype=int)
    if len(pool) < 2:
        raise ValueError("need at least two candidate indices")
    rng = np.random.default_rng(seed)
    n_possible = len(pool) * (len(pool) - 1) // 2
    n_pairs = min(n_pairs, n_possible)
    seen, out = set(), []
    while len(out) < n_pairs:
        a, b = rng.choice(len(pool), size=2, replace=False)
        i, j = sorted((int(pool[a]), int(pool[b])))
        if (i, j) not in seen:
            seen.add((i, j))
            out.append((i, j))
    return np.array(out, dtype=int)


def distance_trace(latents_per_chain: Iterable[np.ndarray], pairs) -> np.ndarray:
    """Distance series for each chain, draw and pair.

    ``latents_per_chain`` holds one (K, N, q) array per chain with anchored
    rows already filled in (see ``AnchoredPosterior.latent_draws``).
    Returns an array of shape (chains, K, n_pairs).
    """
    pairs = np.atleast_2d(np.asarray(pairs, dtype=int))
    out = []
    for L in latents_per_chain:
        L = np.asarray(L, dtype=float)
        N = L.shape[1]
        if pairs.size and (pairs.min() < 0 or pairs.max() >= N):
            raise IndexOutOfRange(f"pair indices must lie in [0, {N})")
        diff = L[:, pairs[:, 0], :] - L[:, pairs[:, 1], :]
        out.append(np.sqrt(np.sum(diff * diff, axis=2)))
    return np.stack(out)


def _as_chains(series) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"expected (chains, draws), got shape {x.shape}")
    if x.shape[0] < 2 or x.shape[1] < 4:
        raise TooFewDraws(f"need >= 2 chains with >= 4 draws, got {x.shape}")
    return x


def split_chains(x: np.ndarray) -> np.ndarray:
    """Halve each chain (dropping the middle draw of odd lengths)."""
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)


def split_rhat(series) -> float:
    """Split-chain potential scale reduction for one scalar quantity.

    ``series`` is (chains, draws). Zero within-chain variance gives 1.0
    when the chains also agree, and inf otherwise.
    """
    x = split_chains(_as_chains(series))
    n = x.shape[1]
    means = x.mean(axis=1)
    W = float(np.mean(x.var(axis=1, ddof=1)))
    B = n * float(np.var(means, ddof=1))
    if W <= 0.0:
        return 1.0 if B <= 0.0 else float("inf")
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row via FFT."""
    n = x.shape[-1]
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    xc = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(xc, n=size)
    return np.fft.irfft(f * np.conjugate(f), n=size)[..., :n] / n


def ess(series) -> float:
    """Multi-chain effective sample size on split chains.

    Autocorrelations are combined across chains and truncated with
    Geyer's initial monotone positive-pair sequence.
    """
    x = split_chains(_as_chains(series))
    m, n = x.shape
    acov = _autocov(x)
    W = float(np.mean(acov[:, 0]) * n / (n - 1))
    if W <= 0.0:
        return float(m * n)
    var_plus = W * (n - 1) / n
    if m > 1:
        var_plus += float(np.var(x.mean(axis=1), ddof=1))
    rho = 1.0 - (W - np.mean(acov, axis=0)) / var_plus
    rho[0] = 1.0
    # sum rho over consecutive (even, odd) pairs while the pair sum stays positive
    tau = -1.0
    prev = np.inf
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0.0:
            break
        pair = min(pair, prev)
        prev = pair
        tau += 2.0 * pair
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def mcse_mean(series) -> float:
    """Monte Carlo standard error of the posterior mean."""
    x = np.asarray(series, dtype=float)
    return float(np.std(x, ddof=1) / np.sqrt(ess(x)))


def affinity(D: np.ndarray) -> np.ndarray:
    """Gaussian affinity with bandwidth equal to the median off-diagonal distance."""
    D = np.asarray(D, dtype=float)
    N = D.shape[0]
    off = D[~np.eye(N, dtype=bool)]
    ell = float(np.median(off)) if off.size else 1.0
    if not ell > 0.0:
        ell = 1.0
    return np.exp(-(D * D) / (2.0 * ell * ell))


def spectral_cluster(D: np.ndarray, k: int, seed: int = 0, n_init: int = 10) -> np.ndarray:
    """Normalised spectral clustering of a distance matrix into ``k`` groups.

    Bottom ``k`` eigenvectors of ``I - S^-1/2 A S^-1/2`` (S the degree
    matrix), rows scaled to unit length, then k-means.
    """
    D = np.asarray(D, dtype=float)
    N = D.shape[0]
    if k < 2:
        raise ValueError("spectral clustering needs k >= 2")
    if k > N:
        raise ValueError(f"k={k} exceeds the number of points {N}")
    A = affinity(D)
    s = 1.0 / np.sqrt(A.sum(axis=1))
    L = np.eye(N) - s[:, None] * A * s[None, :]
    L = 0.5 * (L + L.T)
    V = sym_eig(L, n_lowest=k).eigenvectors[:, :k]
    norms = np.linalg.norm(V, axis=1, keepdims=True)
    V = V / np.where(norms > 0, norms, 1.0)
    return kmeans(V, k, seed=seed, n_init=n_init)


def clustering_matrix(labels) -> np.ndarray:
    """Binary same-cluster indicator of a label vector (int8)."""
    labels = np.asarray(labels)
    return (labels[:, None] == labels[None, :]).astype(np.int8)


def coclustering(partitions: Sequence) -> tuple:
    """Posterior co-clustering probability and the per-draw indicator matrices.

    Returns ``(P, Cs)`` with ``P`` the mean of the K matrices in ``Cs``
    (shape (K, N, N)). For large N and K prefer ``coclustering_mean`` and
    ``dahl_from_labels``, which never hold every matrix at once.
    """
    partitions = [np.asarray(p) for p in partitions]
    if not partitions:
        raise ValueError("need at least one partition")
    Cs = np.stack([clustering_matrix(p) for p in partitions])
    return coclustering_mean(partitions), Cs


def coclustering_mean(partitions: Iterable) -> np.ndarray:
    """Streaming mean of clustering matrices, folded in draw order."""
    total, K = None, 0
    for p in partitions:
        C = clustering_matrix(p)
        if total is None:
            total = np.zeros(C.shape, dtype=np.int64)
        elif C.shape != total.shape:
            raise SizeMismatch("partitions have different lengths")
        total += C
        K += 1
    if K == 0:
        raise ValueError("need at least one partition")
    return total / K


def dahl_objective(C: np.ndarray, P: np.ndarray) -> float:
    E = C - P
    return float(np.sum(E * E))


def _as_counts(P: np.ndarray, K: int):
    """``K * P`` as integers when ``P`` is a mean of K binary matrices, else None."""
    KP = P * K
    counts = np.rint(KP)
    if np.max(np.abs(KP - counts), initial=0.0) <= 1e-9:
        return counts.astype(np.int64)
    return None


def _dahl(matrices, P: np.ndarray, K: int) -> tuple:
    P = np.asarray(P, dtype=float)
    if K == 0:
        raise ValueError("need at least one clustering matrix")
    counts = _as_counts(P, K)
    if counts is None:
        obj = np.array([dahl_objective(np.asarray(C, dtype=float), P) for C in matrices])
        return int(np.argmin(obj)), obj
    # integer squared errors make mathematically tied draws compare equal
    exact = np.array([int(np.sum((K * np.asarray(C, dtype=np.int64) - counts) ** 2)) for C in matrices])
    return int(np.argmin(exact)), exact / float(K * K)


def dahl_least_squares(Cs, P: np.ndarray) -> tuple:
    """Draw whose clustering matrix is closest to ``P`` in squared error.

    Returns ``(index, objectives)``; ties go to the smallest index. When
    ``P`` is the mean of ``Cs`` the comparison is done in integers, so
    exact ties are detected as ties.
    """
    Cs = list(Cs)
    return _dahl(Cs, P, len(Cs))


def dahl_from_labels(partitions: Sequence, P: np.ndarray) -> tuple:
    """``dahl_least_squares`` computed from label vectors one draw at a time."""
    partitions = list(partitions)
    return _dahl((clustering_matrix(p) for p in partitions), P, len(partitions))


def class_order(labels) -> np.ndarray:
    """Row order that groups observations by class, stable within a class."""
    return np.argsort(np.asarray(labels), kind="stable")
