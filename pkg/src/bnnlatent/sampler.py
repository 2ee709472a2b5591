"""No-U-Turn Hamiltonian Monte Carlo with Stan-style warmup.

Targets are callables ``z -> (log_density, gradient)`` on R^d. The kernel
is the multinomial variant: each transition builds a trajectory by
repeated doubling, draws the next state from it with probability
proportional to ``exp(-H)``, and stops when the trajectory starts to turn
back on itself or reaches the maximum depth.

Warmup adapts the step size by dual averaging and a diagonal metric from
windowed draw variances (75-draw initial buffer, doubling windows from 25,
50-draw terminal buffer). By default one dual-averaging sequence spans the
whole warmup; restarting it after each metric update (as Stan does) leaves
only the 50-draw terminal buffer to settle the step size, and the averaged
step then lands well short of the target, pushing realised acceptance up.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import AdaptationFailed, InitializationFailed
from .utils import derive_seed

log = logging.getLogger(__name__)

MIN_WARMUP = 150
MIN_STEP = 1e-10


@dataclass
class NutsConfig:
    target_accept: float = 0.8
    max_tree_depth: int = 10
    warmup_iters: int = 1000
    sample_iters: int = 1000
    chains: int = 4
    init_scale: float = 2.0
    seed: int = 0
    max_energy_error: float = 1000.0
    n_jobs: int = 1
    # Stan restarts dual averaging after every metric update; the default
    # runs one averaging sequence over the whole warmup instead
    restart_on_metric_update: bool = False

    def __post_init__(self):
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if not 1 <= self.max_tree_depth <= 14:
            raise ValueError("max_tree_depth must lie in [1, 14]")
        if self.sample_iters < 1 or self.chains < 1:
            raise ValueError("need at least one chain and one draw")


@dataclass
class MassMatrix:
    """Diagonal mass matrix; kinetic energy is ``0.5 * sum(r**2 / diagonal)``."""

    diagonal: np.ndarray

    def __post_init__(self):
        self.diagonal = np.asarray(self.diagonal, dtype=float)
        if np.any(~(self.diagonal > 0)):
            raise ValueError("mass matrix entries must be strictly positive")
        self.inverse = 1.0 / self.diagonal
        self.sqrt = np.sqrt(self.diagonal)

    @classmethod
    def identity(cls, dim: int) -> "MassMatrix":
        return cls(np.ones(dim))

    @classmethod
    def from_variances(cls, var: np.ndarray) -> "MassMatrix":
        return cls(1.0 / np.asarray(var, dtype=float))

    def kinetic(self, r: np.ndarray) -> float:
        # a blown-up trajectory gives inf here, which the caller treats as divergent
        with np.errstate(over="ignore", invalid="ignore"):
            return 0.5 * float(np.dot(r * r, self.inverse))

    def velocity(self, r: np.ndarray) -> np.ndarray:
        return r * self.inverse

    def draw_momentum(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.diagonal.size) * self.sqrt


def leapfrog(z, r, step, mass: MassMatrix, gradfn, grad=None):
    """One kick-drift-kick step.

    ``gradfn(z)`` returns ``(log_density, gradient)``. Returns
    ``(z_new, r_new, log_density_new, grad_new)``; pass ``grad`` to reuse
    the gradient at ``z``.
    """
    if grad is None:
        grad = gradfn(z)[1]
    r_half = r + (0.5 * step) * grad
    z_new = z + step * (r_half * mass.inverse)
    logp_new, grad_new = gradfn(z_new)
    r_new = r_half + (0.5 * step) * grad_new
    return z_new, r_new, logp_new, grad_new


class _Point:
    __slots__ = ("z", "r", "logp", "grad")

    def __init__(self, z, r, logp, grad):
        self.z, self.r, self.logp, self.grad = z, r, logp, grad


class _Tree:
    __slots__ = ("minus", "plus", "sample", "log_w", "valid", "accept_sum", "n_leapfrog", "divergent")


@dataclass
class TransitionStats:
    log_density: float
    tree_depth: int
    n_leapfrog: int
    step_size: float
    divergent: bool
    accept_stat: float
    energy: float


class _TreeBuilder:
    def __init__(self, gradfn, mass, step, H0, max_energy_error, rng):
        self.gradfn = gradfn
        self.mass = mass
        self.step = step
        self.H0 = H0
        self.max_energy_error = max_energy_error
        self.rng = rng

    def uturn(self, minus: _Point, plus: _Point) -> bool:
        dz = plus.z - minus.z
        m = self.mass
        return np.dot(dz, m.velocity(minus.r)) <= 0.0 or np.dot(dz, m.velocity(plus.r)) <= 0.0

    def build(self, start: _Point, direction: int, depth: int) -> _Tree:
        if depth == 0:
            z, r, logp, grad = leapfrog(start.z, start.r, direction * self.step, self.mass, self.gradfn, start.grad)
            pt = _Point(z, r, logp, grad)
            H = -logp + self.mass.kinetic(r)
            if not np.isfinite(H):
                H = np.inf
            t = _Tree()
            t.minus = t.plus = t.sample = pt
            t.log_w = self.H0 - H
            t.divergent = (H - self.H0) > self.max_energy_error
            t.valid = not t.divergent
            t.accept_sum = min(1.0, float(np.exp(min(0.0, self.H0 - H))))
            t.n_leapfrog = 1
            return t

        inner = self.build(start, direction, depth - 1)
        if not inner.valid:
            return inner
        edge = inner.plus if direction > 0 else inner.minus
        outer = self.build(edge, direction, depth - 1)
        t = _Tree()
        t.accept_sum = inner.accept_sum + outer.accept_sum
        t.n_leapfrog = inner.n_leapfrog + outer.n_leapfrog
        t.divergent = outer.divergent
        if direction > 0:
            t.minus, t.plus = inner.minus, outer.plus
        else:
            t.minus, t.plus = outer.minus, inner.plus
        if not outer.valid:
            t.valid = False
            t.sample, t.log_w = inner.sample, inner.log_w
            return t
        t.log_w = np.logaddexp(inner.log_w, outer.log_w)
        if self.rng.uniform() < np.exp(outer.log_w - t.log_w):
            t.sample = outer.sample
        else:
            t.sample = inner.sample
        t.valid = not self.uturn(t.minus, t.plus)
        return t


def nuts_step(
    z,
    step: float,
    mass: MassMatrix,
    gradfn,
    rng: np.random.Generator,
    max_tree_depth: int = 10,
    max_energy_error: float = 1000.0,
    logp=None,
    grad=None,
):
    """One NUTS transition from ``z``.

    Returns ``(z_next, logp_next, grad_next, TransitionStats)``.
    """
    if logp is None or grad is None:
        logp, grad = gradfn(z)
    r0 = mass.draw_momentum(rng)
    H0 = -logp + mass.kinetic(r0)
    start = _Point(z, r0, logp, grad)
    builder = _TreeBuilder(gradfn, mass, step, H0, max_energy_error, rng)

    minus = plus = sample = start
    log_w = 0.0
    accept_sum = 0.0
    n_leapfrog = 0
    divergent = False
    depth = 0
    while depth < max_tree_depth:
        direction = 1 if rng.uniform() < 0.5 else -1
        edge = plus if direction > 0 else minus
        sub = builder.build(edge, direction, depth)
        depth += 1
        accept_sum += sub.accept_sum
        n_leapfrog += sub.n_leapfrog
        if not sub.valid:
            divergent = sub.divergent
            break
        if direction > 0:
            plus = sub.plus
        else:
            minus = sub.minus
        # biased progressive sampling favours the newer subtree
        if rng.uniform() < np.exp(min(0.0, sub.log_w - log_w)):
            sample = sub.sample
        log_w = np.logaddexp(log_w, sub.log_w)
        if builder.uturn(minus, plus):
            break

    stats = TransitionStats(
        log_density=float(sample.logp),
        tree_depth=depth,
        n_leapfrog=n_leapfrog,
        step_size=float(step),
        divergent=bool(divergent),
        accept_stat=accept_sum / max(n_leapfrog, 1),
        energy=float(-sample.logp + mass.kinetic(sample.r)),
    )
    return sample.z, sample.logp, sample.grad, stats


def find_reasonable_step(z, logp, grad, mass: MassMatrix, gradfn, rng, step: float = 1.0) -> float:
    """Double or halve the step until one leapfrog's acceptance crosses 0.8."""
    r = mass.draw_momentum(rng)
    H0 = -logp + mass.kinetic(r)

    def log_accept(eps):
        _, r1, lp1, _ = leapfrog(z, r, eps, mass, gradfn, grad)
        H1 = -lp1 + mass.kinetic(r1)
        return H0 - H1 if np.isfinite(H1) else -np.inf

    delta = log_accept(step)
    direction = 1 if delta > np.log(0.8) else -1
    for _ in range(100):
        if direction == 1 and not delta > np.log(0.8):
            break
        if direction == -1 and not delta < np.log(0.8):
            break
        step = step * 2.0 if direction == 1 else step * 0.5
        if step < MIN_STEP or step > 1e7:
            break
        delta = log_accept(step)
    return step


class DualAveraging:
    """Nesterov dual averaging of log step size."""

    def __init__(self, step: float, target: float, gamma=0.05, t0=10.0, kappa=0.75):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(step)

    def restart(self, step: float):
        self.mu = np.log(10.0 * step)
        self.counter = 0
        self.h_bar = 0.0
        self.log_step = np.log(step)
        self.log_step_bar = 0.0

    def update(self, accept_stat: float) -> float:
        self.counter += 1
        m = self.counter
        eta = 1.0 / (m + self.t0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat)
        self.log_step = self.mu - np.sqrt(m) / self.gamma * self.h_bar
        x = m ** (-self.kappa)
        self.log_step_bar = x * self.log_step + (1.0 - x) * self.log_step_bar
        return float(np.exp(self.log_step))

    @property
    def final_step(self) -> float:
        return float(np.exp(self.log_step_bar))


def warmup_windows(n_warmup: int, init_buffer=75, term_buffer=50, base_window=25) -> list:
    """End indices (exclusive) of the metric adaptation windows."""
    if n_warmup < MIN_WARMUP:
        raise ValueError(f"warmup needs at least {MIN_WARMUP} iterations, got {n_warmup}")
    last = n_warmup - term_buffer
    ends = []
    start, size = init_buffer, base_window
    while True:
        end = start + size
        if end + 2 * size > last:
            end = last
        ends.append(end)
        if end >= last:
            return ends
        start, size = end, size * 2


class WindowedAdaptation:
    """Step size and diagonal metric adaptation over a warmup run."""

    def __init__(self, dim, n_warmup, step, target_accept, regularization=5.0):
        self.ends = warmup_windows(n_warmup)
        self.window_start = 75
        self.dual = DualAveraging(step, target_accept)
        self.mass = MassMatrix.identity(dim)
        self.regularization = regularization
        self.iteration = 0
        self._reset_moments(dim)

    def _reset_moments(self, dim):
        self._n = 0
        self._mean = np.zeros(dim)
        self._m2 = np.zeros(dim)

    def update(self, z, accept_stat):
        """Record one warmup iteration; returns ``(step, metric_changed)``."""
        step = self.dual.update(accept_stat)
        i = self.iteration
        self.iteration += 1
        changed = False
        if self.window_start <= i < self.ends[-1]:
            self._n += 1
            d = z - self._mean
            self._mean += d / self._n
            self._m2 += d * (z - self._mean)
            if i + 1 in self.ends:
                n = self._n
                var = self._m2 / max(n - 1, 1)
                w = self.regularization / (n + self.regularization)
                self.mass = MassMatrix.from_variances((1.0 - w) * var + w * 1.0)
                self._reset_moments(z.size)
                changed = True
        if step < MIN_STEP:
            raise AdaptationFailed(f"step size collapsed to {step:.3e}")
        return step, changed


def adapt(gradfn, z0, cfg: NutsConfig, rng: np.random.Generator, step: Optional[float] = None):
    """Run the warmup phase.

    Returns ``(z, step_size, MassMatrix, stats)`` where ``stats`` lists the
    per-iteration :class:`TransitionStats` of the warmup draws.
    """
    z = np.asarray(z0, dtype=float)
    logp, grad = gradfn(z)
    mass = MassMatrix.identity(z.size)
    if step is None:
        step = find_reasonable_step(z, logp, grad, mass, gradfn, rng)
    adapter = WindowedAdaptation(z.size, cfg.warmup_iters, step, cfg.target_accept)
    stats = []
    for _ in range(cfg.warmup_iters):
        z, logp, grad, st = nuts_step(z, step, mass, gradfn, rng, cfg.max_tree_depth, cfg.max_energy_error, logp, grad)
        stats.append(st)
        step, changed = adapter.update(z, st.accept_stat)
        if changed:
            mass = adapter.mass
            if cfg.restart_on_metric_update:
                step = find_reasonable_step(z, logp, grad, mass, gradfn, rng, step)
                adapter.dual.restart(step)
    step = adapter.dual.final_step
    if step < MIN_STEP:
        raise AdaptationFailed(f"final step size {step:.3e} below {MIN_STEP:g}")
    return z, step, mass, stats


@dataclass
class ChainTrace:
    draws: np.ndarray
    log_density: np.ndarray
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    step_size: np.ndarray
    divergent: np.ndarray
    accept_stat: np.ndarray
    energy: np.ndarray
    chain: int = 0
    seed: int = 0
    mass_diagonal: np.ndarray = None
    warmup_divergences: int = 0
    names: list = field(default_factory=list)

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def summary(self) -> dict:
        return {
            "chain": self.chain,
            "seed": int(self.seed),
            "n_draws": self.n_draws,
            "mean_accept_stat": float(np.mean(self.accept_stat)),
            "divergences": int(np.sum(self.divergent)),
            "warmup_divergences": int(self.warmup_divergences),
            "mean_tree_depth": float(np.mean(self.tree_depth)),
            "max_tree_depth": int(np.max(self.tree_depth)),
            "mean_n_leapfrog": float(np.mean(self.n_leapfrog)),
            "step_size": float(self.step_size[0]),
            "mass_diagonal": [float(v) for v in self.mass_diagonal],
        }

    def to_csv(self, path) -> None:
        """Write draws, one column per coordinate, named from the layout."""
        names = self.names or [f"z[{i}]" for i in range(self.draws.shape[1])]
        header = ",".join(names)
        np.savetxt(path, self.draws, delimiter=",", header=header, comments="", fmt="%.17g")

    def write(self, out_dir, extra: Optional[dict] = None) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        self.to_csv(out_dir / f"chain{self.chain}.csv")
        stats = self.summary()
        stats["per_draw"] = {
            "log_density": self.log_density.tolist(),
            "tree_depth": self.tree_depth.tolist(),
            "n_leapfrog": self.n_leapfrog.tolist(),
            "divergent": self.divergent.astype(int).tolist(),
            "accept_stat": self.accept_stat.tolist(),
        }
        if extra:
            stats.update(extra)
        (out_dir / f"chain{self.chain}_stats.json").write_text(json.dumps(stats, indent=1, sort_keys=True))

    @classmethod
    def read(cls, out_dir, chain: int) -> "ChainTrace":
        out_dir = Path(out_dir)
        path = out_dir / f"chain{chain}.csv"
        with open(path) as fh:
            names = fh.readline().strip().split(",")
        draws = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
        st = json.loads((out_dir / f"chain{chain}_stats.json").read_text())
        pd = st["per_draw"]
        k = draws.shape[0]
        return cls(
            draws=draws,
            log_density=np.asarray(pd["log_density"]),
            tree_depth=np.asarray(pd["tree_depth"]),
            n_leapfrog=np.asarray(pd["n_leapfrog"]),
            step_size=np.full(k, st["step_size"]),
            divergent=np.asarray(pd["divergent"], dtype=bool),
            accept_stat=np.asarray(pd["accept_stat"]),
            energy=np.full(k, np.nan),
            chain=st["chain"],
            seed=st["seed"],
            mass_diagonal=np.asarray(st["mass_diagonal"]),
            warmup_divergences=st.get("warmup_divergences", 0),
            names=names,
        )


def random_init(gradfn, dim: int, init_scale: float, rng: np.random.Generator, max_attempts: int = 100):
    """Uniform(-init_scale, init_scale) start with a finite density and gradient."""
    for _ in range(max_attempts):
        z = rng.uniform(-init_scale, init_scale, size=dim)
        logp, grad = gradfn(z)
        if np.isfinite(logp) and np.all(np.isfinite(grad)):
            return z
    raise InitializationFailed(f"no finite starting point in {max_attempts} attempts")


def run_chain(gradfn, dim: int, cfg: NutsConfig, chain: int = 0, init=None, names=None) -> ChainTrace:
    seed = derive_seed(cfg.seed, "chain", chain)
    rng = np.random.default_rng(seed)
    if init is None:
        z = random_init(gradfn, dim, cfg.init_scale, rng)
    else:
        z = np.array(init, dtype=float)
        if z.shape != (dim,):
            raise ValueError(f"init has shape {z.shape}, expected ({dim},)")
    z, step, mass, warm = adapt(gradfn, z, cfg, rng)
    logp, grad = gradfn(z)
    draws = np.empty((cfg.sample_iters, dim))
    rows = []
    for k in range(cfg.sample_iters):
        z, logp, grad, st = nuts_step(z, step, mass, gradfn, rng, cfg.max_tree_depth, cfg.max_energy_error, logp, grad)
        draws[k] = z
        rows.append(st)
    col = lambda a, dt=float: np.array([getattr(s, a) for s in rows], dtype=dt)  # noqa: E731
    trace = ChainTrace(
        draws=draws,
        log_density=col("log_density"),
        tree_depth=col("tree_depth", int),
        n_leapfrog=col("n_leapfrog", int),
        step_size=col("step_size"),
        divergent=col("divergent", bool),
        accept_stat=col("accept_stat"),
        energy=col("energy"),
        chain=chain,
        seed=seed,
        mass_diagonal=mass.diagonal.copy(),
        warmup_divergences=sum(s.divergent for s in warm),
        names=list(names) if names is not None else [],
    )
    log.info("chain %d done: %s", chain, {k: v for k, v in trace.summary().items() if k != "mass_diagonal"})
    return trace


def _run_chain_job(args):
    return run_chain(*args)


def run_chains(
    gradfn: Callable,
    dim: int,
    cfg: NutsConfig,
    init=None,
    names=None,
) -> list:
    """Run ``cfg.chains`` independent chains.

    ``init`` may be a single vector (used by every chain) or one per chain;
    by default each chain draws its own uniform random start. With
    ``cfg.n_jobs > 1`` chains run in worker processes, which requires a
    picklable ``gradfn``.
    """
    inits = [None] * cfg.chains
    if init is not None:
        init = np.asarray(init, dtype=float)
        inits = list(init) if init.ndim == 2 else [init] * cfg.chains
    jobs = [(gradfn, dim, cfg, c, inits[c], names) for c in range(cfg.chains)]
    if cfg.n_jobs > 1 and cfg.chains > 1:
        with ProcessPoolExecutor(max_workers=cfg.n_jobs) as pool:
            return list(pool.map(_run_chain_job, jobs))
    return [_run_chain_job(j) for j in jobs]


def config_dict(cfg: NutsConfig) -> dict:
    return asdict(cfg)
