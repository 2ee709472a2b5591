"""Latent-variable MLP decoder and its anchored log-posterior.

The decoder maps a latent point ``x`` in R^q to

    W2 @ tanh(W1n @ x + b1) + b2

where ``W1n`` holds the raw first-layer columns rescaled to unit length.
Observations are ``Y[i] ~ N(decoder(X[i]), tau_sq * I_p)``. Anchored
latent rows are fixed constants and never appear in the sampling
coordinates.

Sampling coordinates are one flat vector laid out as

    W1_raw, b1, W2, b2, free rows of X, log(tau_sq), log(sigma_sq)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateColumn, DimensionMismatch, NonPositiveVariance

EPS_NORM = 1e-8
HALF_CAUCHY_SCALE = 5.0
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ModelSpec:
    p: int
    q: int
    h: int
    n: int
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation != "tanh":
            raise ValueError("only the tanh activation is supported")
        if not 1 <= self.q < self.p:
            raise ValueError(f"need 1 <= q < p, got q={self.q}, p={self.p}")
        if self.h < 1:
            raise ValueError("hidden width h must be >= 1")
        if self.n < 1:
            raise ValueError("need at least one observation")

    @property
    def n_theta(self) -> int:
        return self.h * self.q + self.h + self.p * self.h + self.p


@dataclass
class DecoderParams:
    W1_raw: np.ndarray  # (h, q)
    b1: np.ndarray  # (h,)
    W2: np.ndarray  # (p, h)
    b2: np.ndarray  # (p,)

    @classmethod
    def init_random(cls, spec: ModelSpec, rng: np.random.Generator) -> "DecoderParams":
        """Weights ~ N(0, 1/fan_in), biases zero."""
        return cls(
            W1_raw=rng.normal(0.0, 1.0 / np.sqrt(spec.q), size=(spec.h, spec.q)),
            b1=np.zeros(spec.h),
            W2=rng.normal(0.0, 1.0 / np.sqrt(spec.h), size=(spec.p, spec.h)),
            b2=np.zeros(spec.p),
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W1_raw.ravel(), self.b1, self.W2.ravel(), self.b2])

    def copy(self) -> "DecoderParams":
        return DecoderParams(self.W1_raw.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())

    def column_norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.W1_raw**2, axis=0))


@dataclass
class LatentConfiguration:
    """Full N x q latent matrix plus which rows are pinned anchors."""

    X: np.ndarray
    anchored: np.ndarray = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if self.anchored is None:
            self.anchored = np.zeros(self.X.shape[0], dtype=bool)
        self.anchored = np.asarray(self.anchored, dtype=bool)
        if self.anchored.shape != (self.X.shape[0],):
            raise DimensionMismatch("anchored mask length must equal number of latent rows")

    @property
    def free(self) -> np.ndarray:
        return ~self.anchored

    @property
    def n_anchored(self) -> int:
        return int(self.anchored.sum())


def normalized_columns(W1_raw: np.ndarray, eps: float = EPS_NORM):
    """Return ``(W1 / column_norms, column_norms)``."""
    norms = np.sqrt(np.sum(W1_raw * W1_raw, axis=0))
    if np.any(norms < eps):
        raise DegenerateColumn(f"first-layer column norm below {eps:g}: {norms.min():.3e}")
    return W1_raw / norms, norms


def _latent_projection(X: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``X @ W.T`` computed so that permuting latent dims leaves it bit-identical.

    For q <= 2 elementwise products added in any order round identically;
    for larger q the per-entry terms are sorted before summation.
    """
    q = X.shape[1]
    if q == 1:
        return X[:, :1] * W[:, 0]
    if q == 2:
        return X[:, :1] * W[:, 0] + X[:, 1:2] * W[:, 1]
    terms = np.sort(X[:, None, :] * W[None, :, :], axis=2)
    out = terms[:, :, 0].copy()
    for j in range(1, q):
        out += terms[:, :, j]
    return out


def _row_sumsq(M: np.ndarray) -> np.ndarray:
    """Per-row sums of squares, symmetric in the column order."""
    S = M * M
    q = S.shape[1]
    if q == 1:
        return S[:, 0]
    if q == 2:
        return S[:, 0] + S[:, 1]
    S = np.sort(S, axis=1)
    out = S[:, 0].copy()
    for j in range(1, q):
        out += S[:, j]
    return out


def _theta_sumsq(W1_raw, b1, W2, b2) -> float:
    return float(np.sum(np.concatenate([_row_sumsq(W1_raw), b1 * b1, (W2 * W2).ravel(), b2 * b2])))


def sse_numpy(X, W1, b1, W2, b2, Y) -> float:
    R = np.tanh(_latent_projection(X, W1) + b1) @ W2.T + b2 - Y
    return float(np.sum(R * R))


def sse_and_grad_numpy(X, W1, b1, W2, b2, Y):
    """Sum of squared residuals and the gradients of ``-ss/2`` w.r.t. every input."""
    H = np.tanh(_latent_projection(X, W1) + b1)
    R = Y - (H @ W2.T + b2)
    dA = (R @ W2) * (1.0 - H * H)
    return float(np.sum(R * R)), dA.T @ X, dA.sum(axis=0), R.T @ H, R.sum(axis=0), dA @ W1


def effective_W1(params: DecoderParams, constrain: bool = True, eps: float = EPS_NORM) -> np.ndarray:
    if constrain:
        return normalized_columns(params.W1_raw, eps)[0]
    return params.W1_raw


def decode(params: DecoderParams, x: np.ndarray, constrain: bool = True, eps: float = EPS_NORM) -> np.ndarray:
    """Decoder output for one latent vector (q,) or a batch (N, q)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    W1 = effective_W1(params, constrain, eps)
    if X.shape[1] != W1.shape[1]:
        raise DimensionMismatch(f"latent dim {X.shape[1]} != decoder input dim {W1.shape[1]}")
    out = np.tanh(_latent_projection(X, W1) + params.b1) @ params.W2.T + params.b2
    return out[0] if single else out


def log_likelihood(
    params: DecoderParams,
    latents,
    tau_sq: float,
    Y: np.ndarray,
    constrain: bool = True,
    eps: float = EPS_NORM,
) -> float:
    """Isotropic Gaussian log-density of ``Y`` given latents, with normaliser."""
    X = latents.X if isinstance(latents, LatentConfiguration) else np.atleast_2d(latents)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[0] != Y.shape[0] or Y.shape[1] != params.W2.shape[0]:
        raise DimensionMismatch(f"X {X.shape}, Y {Y.shape}, decoder output {params.W2.shape[0]}")
    if not tau_sq > 0:
        raise NonPositiveVariance(f"tau_sq must be positive, got {tau_sq}")
    R = decode(params, X, constrain, eps) - Y
    n, p = Y.shape
    return -0.5 * float(np.sum(R * R)) / tau_sq - 0.5 * n * p * (LOG_2PI + np.log(tau_sq))


def half_cauchy_logpdf(x, scale: float = HALF_CAUCHY_SCALE):
    """log of 2 / (pi * scale * (1 + (x/scale)^2)) on x > 0."""
    x = np.asarray(x, dtype=float)
    out = np.log(2.0 / (np.pi * scale)) - np.log1p((x / scale) ** 2)
    return np.where(x > 0, out, -np.inf) if out.ndim else (float(out) if x > 0 else -np.inf)


def half_cauchy_cdf(x, scale: float = HALF_CAUCHY_SCALE):
    return 2.0 / np.pi * np.arctan(np.asarray(x, dtype=float) / scale)


def half_cauchy_ppf(prob, scale: float = HALF_CAUCHY_SCALE):
    return scale * np.tan(0.5 * np.pi * np.asarray(prob, dtype=float))


def log_prior(
    params: DecoderParams,
    latents: LatentConfiguration,
    tau_sq: float,
    sigma_sq: float,
    latent_prior: str = "normal",
    scale: float = HALF_CAUCHY_SCALE,
) -> float:
    """Prior log-density on the natural (variance) scale.

    Gaussian N(0, sigma_sq) on every decoder weight and bias, N(0, I_q) on
    free latent rows (anchored rows carry a point mass and contribute
    nothing), and half-Cauchy(scale) on both variances.
    """
    if not (tau_sq > 0 and sigma_sq > 0):
        raise NonPositiveVariance(f"variances must be positive: tau_sq={tau_sq}, sigma_sq={sigma_sq}")
    th_ss = _theta_sumsq(params.W1_raw, params.b1, params.W2, params.b2)
    n_theta = params.flat().size
    lp = -0.5 * th_ss / sigma_sq - 0.5 * n_theta * (LOG_2PI + np.log(sigma_sq))
    if latent_prior == "normal":
        Xf = latents.X[latents.free]
        lp += -0.5 * float(np.sum(_row_sumsq(Xf))) - 0.5 * Xf.size * LOG_2PI
    elif latent_prior != "flat":
        raise ValueError(f"unknown latent prior {latent_prior!r}")
    return float(lp + half_cauchy_logpdf(tau_sq, scale) + half_cauchy_logpdf(sigma_sq, scale))


@dataclass
class ModelState:
    params: DecoderParams
    X: np.ndarray  # full (N, q) including anchored rows
    log_tau_sq: float
    log_sigma_sq: float

    @property
    def tau_sq(self) -> float:
        return float(np.exp(self.log_tau_sq))

    @property
    def sigma_sq(self) -> float:
        return float(np.exp(self.log_sigma_sq))


@dataclass
class Layout:
    """Maps named blocks of the flat sampling vector to index ranges."""

    spec: ModelSpec
    free_index: np.ndarray
    blocks: dict = field(init=False)

    def __post_init__(self):
        s = self.spec
        sizes = [
            ("W1_raw", (s.h, s.q)),
            ("b1", (s.h,)),
            ("W2", (s.p, s.h)),
            ("b2", (s.p,)),
            ("X", (len(self.free_index), s.q)),
            ("log_tau_sq", ()),
            ("log_sigma_sq", ()),
        ]
        self.blocks = {}
        start = 0
        for name, shape in sizes:
            size = int(np.prod(shape)) if shape else 1
            self.blocks[name] = (slice(start, start + size), shape)
            start += size
        self.size = start

    def __len__(self):
        return self.size

    def names(self) -> list:
        """One comma-free label per coordinate, e.g. ``W1_raw.3.0`` or ``X.17.1``."""
        out = []
        for name, (_, shape) in self.blocks.items():
            if name == "X":
                out += [f"X.{i}.{j}" for i in self.free_index for j in range(self.spec.q)]
            elif not shape:
                out.append(name)
            else:
                out += [".".join([name, *map(str, idx)]) for idx in np.ndindex(*shape)]
        return out

    def block(self, z: np.ndarray, name: str) -> np.ndarray:
        sl, shape = self.blocks[name]
        return z[..., sl].reshape(z.shape[:-1] + shape) if shape else z[..., sl.start]


class AnchoredPosterior:
    """Log-posterior of the latent decoder model on unconstrained coordinates.

    Parameters
    ----------
    Y : (N, p) array
        Observations.
    spec : ModelSpec
    anchor_indices, anchor_values : optional
        Rows of the latent matrix held fixed, and their values (N_ref, q).
    constrain : bool
        Normalise first-layer columns inside the decoder. ``False`` gives
        the unconstrained ablation.
    latent_prior : {"normal", "flat"}
        Prior on free latent rows.
    include_likelihood, include_variance_prior : bool
        Switches for prior-only runs and stationarity checks.
    backend : {"numba", "numpy"}
        Likelihood kernel. Both give the same values to rounding.
    """

    def __init__(
        self,
        Y,
        spec: ModelSpec,
        anchor_indices=None,
        anchor_values=None,
        constrain: bool = True,
        latent_prior: str = "normal",
        include_likelihood: bool = True,
        include_variance_prior: bool = True,
        prior_scale: float = HALF_CAUCHY_SCALE,
        eps_norm: float = EPS_NORM,
        backend: str = "numba",
    ):
        self.Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if self.Y.shape != (spec.n, spec.p):
            raise DimensionMismatch(f"Y has shape {self.Y.shape}, spec expects {(spec.n, spec.p)}")
        if latent_prior not in ("normal", "flat"):
            raise ValueError(f"unknown latent prior {latent_prior!r}")
        self.spec = spec
        self.constrain = constrain
        self.latent_prior = latent_prior
        self.include_likelihood = include_likelihood
        self.include_variance_prior = include_variance_prior
        self.prior_scale = prior_scale
        self.eps_norm = eps_norm
        if backend not in ("numba", "numpy"):
            raise ValueError(f"unknown backend {backend!r}")
        self.backend = backend

        self.anchored = np.zeros(spec.n, dtype=bool)
        self.X_fixed = np.zeros((spec.n, spec.q))
        if anchor_indices is not None and len(anchor_indices):
            idx = np.asarray(anchor_indices, dtype=int)
            vals = np.asarray(anchor_values, dtype=float).reshape(len(idx), spec.q)
            if len(np.unique(idx)) != len(idx) or idx.min() < 0 or idx.max() >= spec.n:
                raise ValueError("anchor indices must be distinct and within [0, N)")
            self.anchored[idx] = True
            self.X_fixed[idx] = vals
        self.free_index = np.flatnonzero(~self.anchored)
        self.layout = Layout(spec, self.free_index)

    @property
    def dim(self) -> int:
        return self.layout.size

    # -- packing -----------------------------------------------------------
    def unpack(self, z: np.ndarray) -> ModelState:
        L = self.layout
        z = np.asarray(z, dtype=float)
        if z.shape != (L.size,):
            raise DimensionMismatch(f"expected vector of length {L.size}, got {z.shape}")
        params = DecoderParams(
            L.block(z, "W1_raw").copy(), L.block(z, "b1").copy(), L.block(z, "W2").copy(), L.block(z, "b2").copy()
        )
        X = self.X_fixed.copy()
        X[self.free_index] = L.block(z, "X")
        return ModelState(params, X, float(L.block(z, "log_tau_sq")), float(L.block(z, "log_sigma_sq")))

    def pack(self, state: ModelState) -> np.ndarray:
        p = state.params
        return np.concatenate(
            [
                p.W1_raw.ravel(),
                p.b1,
                p.W2.ravel(),
                p.b2,
                np.asarray(state.X)[self.free_index].ravel(),
                [state.log_tau_sq, state.log_sigma_sq],
            ]
        )

    def latents(self, state: ModelState) -> LatentConfiguration:
        return LatentConfiguration(state.X, self.anchored)

    def latent_draws(self, draws: np.ndarray) -> np.ndarray:
        """Full (K, N, q) latent matrices from a (K, dim) array of draws."""
        draws = np.atleast_2d(draws)
        out = np.broadcast_to(self.X_fixed, (draws.shape[0],) + self.X_fixed.shape).copy()
        out[:, self.free_index] = self.layout.block(draws, "X")
        return out

    # -- densities -----------------------------------------------------------
    def components(self, z: np.ndarray) -> dict:
        """Log-likelihood, log-prior and log-Jacobian terms at ``z``."""
        s = self.unpack(z)
        tau_sq, sigma_sq = s.tau_sq, s.sigma_sq
        ll = 0.0
        if self.include_likelihood:
            ll = log_likelihood(s.params, s.X, tau_sq, self.Y, self.constrain, self.eps_norm)
        lp = log_prior(s.params, self.latents(s), tau_sq, sigma_sq, self.latent_prior, self.prior_scale)
        if not self.include_variance_prior:
            lp -= half_cauchy_logpdf(tau_sq, self.prior_scale) + half_cauchy_logpdf(sigma_sq, self.prior_scale)
        return {"log_likelihood": ll, "log_prior": lp, "log_jacobian": s.log_tau_sq + s.log_sigma_sq}

    def log_prob(self, z: np.ndarray) -> float:
        return self.log_prob_and_grad(z, need_grad=False)[0]

    def grad(self, z: np.ndarray) -> np.ndarray:
        return self.log_prob_and_grad(z)[1]

    def __call__(self, z):
        return self.log_prob_and_grad(z)

    def log_prob_and_grad(self, z: np.ndarray, need_grad: bool = True):
        """Value and gradient in one pass; ``(-inf, zeros)`` where undefined."""
        z = np.asarray(z, dtype=float)
        if z.shape != (self.layout.size,):
            raise DimensionMismatch(f"expected vector of length {self.layout.size}, got {z.shape}")
        if self.backend == "numba":
            return self._log_prob_and_grad_compiled(z, need_grad)
        return self._log_prob_and_grad_numpy(z, need_grad)

    def _fail(self, need_grad):
        return -np.inf, (np.zeros(self.layout.size) if need_grad else None)

    def _log_prob_and_grad_compiled(self, z, need_grad):
        from . import _kernels as K

        s = self.spec
        L = self.layout
        u_tau = z[L.size - 2]
        u_sig = z[L.size - 1]
        if not np.all(np.isfinite(z)) or max(abs(u_tau), abs(u_sig)) > 700.0:
            return self._fail(need_grad)
        ok, W1, norms, X, A = K.forward(z, self.X_fixed, self.free_index, s.h, s.q, s.p, self.constrain, self.eps_norm)
        if not ok:
            return self._fail(need_grad)
        lp, grad = K.backward(
            z, X, np.tanh(A), W1, norms, self.Y, self.free_index, s.h, s.q, s.p,
            self.constrain, self.include_likelihood, self.latent_prior == "normal",
            self.include_variance_prior, self.prior_scale, need_grad,
        )
        if not np.isfinite(lp) or (need_grad and not np.all(np.isfinite(grad))):
            return self._fail(need_grad)
        return float(lp), (grad if need_grad else None)

    def _log_prob_and_grad_numpy(self, z, need_grad):
        L = self.layout
        spec = self.spec
        z = np.asarray(z, dtype=float)
        W1_raw = L.block(z, "W1_raw")
        b1 = L.block(z, "b1")
        W2 = L.block(z, "W2")
        b2 = L.block(z, "b2")
        Xf = L.block(z, "X")
        u_tau = float(z[L.blocks["log_tau_sq"][0].start])
        u_sig = float(z[L.blocks["log_sigma_sq"][0].start])
        grad = np.zeros(L.size) if need_grad else None
        fail = (-np.inf, np.zeros(L.size) if need_grad else None)

        if not np.all(np.isfinite(z)) or max(abs(u_tau), abs(u_sig)) > 700.0:
            return fail
        tau_sq = np.exp(u_tau)
        sigma_sq = np.exp(u_sig)

        if self.constrain:
            norms = np.sqrt(np.sum(W1_raw * W1_raw, axis=0))
            if np.any(norms < self.eps_norm):
                return fail
            W1 = W1_raw / norms
        else:
            W1 = W1_raw

        lp = 0.0
        if self.include_likelihood:
            X = self.X_fixed.copy()
            X[self.free_index] = Xf
            if need_grad:
                ss, dW1, db1, dW2, db2, dX = sse_and_grad_numpy(X, W1, b1, W2, b2, self.Y)
            else:
                ss = sse_numpy(X, W1, b1, W2, b2, self.Y)
            npn = spec.n * spec.p
            lp += -0.5 * ss / tau_sq - 0.5 * npn * (LOG_2PI + u_tau)
            if need_grad:
                if self.constrain:
                    dW1 = (dW1 - W1 * np.sum(W1 * dW1, axis=0)) / norms
                grad[L.blocks["W1_raw"][0]] = dW1.ravel() / tau_sq
                grad[L.blocks["b1"][0]] = db1 / tau_sq
                grad[L.blocks["W2"][0]] = dW2.ravel() / tau_sq
                grad[L.blocks["b2"][0]] = db2 / tau_sq
                grad[L.blocks["X"][0]] = dX[self.free_index].ravel() / tau_sq
                grad[L.blocks["log_tau_sq"][0]] = 0.5 * ss / tau_sq - 0.5 * npn

        # N(0, sigma_sq) on decoder weights and biases
        th_end = L.blocks["b2"][0].stop
        theta = z[:th_end]
        th_ss = _theta_sumsq(W1_raw, b1, W2, b2)
        lp += -0.5 * th_ss / sigma_sq - 0.5 * th_end * (LOG_2PI + u_sig)
        if need_grad:
            grad[:th_end] -= theta / sigma_sq
            grad[L.blocks["log_sigma_sq"][0]] += 0.5 * th_ss / sigma_sq - 0.5 * th_end

        if self.latent_prior == "normal" and Xf.size:
            lp += -0.5 * float(np.sum(_row_sumsq(Xf))) - 0.5 * Xf.size * LOG_2PI
            if need_grad:
                grad[L.blocks["X"][0]] -= Xf.ravel()

        if self.include_variance_prior:
            c = self.prior_scale
            lp += 2.0 * np.log(2.0 / (np.pi * c)) - np.log1p((tau_sq / c) ** 2) - np.log1p((sigma_sq / c) ** 2)
            if need_grad:
                rt, rs = (tau_sq / c) ** 2, (sigma_sq / c) ** 2
                grad[L.blocks["log_tau_sq"][0]] -= 2.0 * rt / (1.0 + rt)
                grad[L.blocks["log_sigma_sq"][0]] -= 2.0 * rs / (1.0 + rs)

        # change of variables x = exp(u)
        lp += u_tau + u_sig
        if need_grad:
            grad[L.blocks["log_tau_sq"][0]] += 1.0
            grad[L.blocks["log_sigma_sq"][0]] += 1.0

        if not np.isfinite(lp) or (need_grad and not np.all(np.isfinite(grad))):
            return fail
        return float(lp), grad
