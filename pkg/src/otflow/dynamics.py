"""Coupled particle dynamics for the relaxed transport problem.

Each of N particles carries a pair (X_i, Y_i).  Per iteration the
particles are shuffled into batches; within a batch every pair moves one
forward-Euler step along

    dX_i = -grad_x c(X_i, Y_i) + L * (grad log rho1(X_i) - kde_score(X_i))
    dY_i = -grad_y c(X_i, Y_i) + L * (grad log rho2(Y_i) - kde_score(Y_i))

where the KDE score is estimated from the batch members only.  All drifts
in a batch are evaluated at batch-entry positions, so a single batch
reproduces the full deterministic scheme exactly.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np

from .kde import RbfKernel, grad_log_kde, silverman_bandwidth
from .marginals import Marginal

if TYPE_CHECKING:
    from .diagnostics import Coupling

__all__ = [
    "CostFunction",
    "ParticleSystem",
    "SolverConfig",
    "TransportResult",
    "BlowUpError",
    "cost_eval",
    "cost_grad",
    "rbm_partition",
    "batch_drift",
    "step",
    "run_transport",
]

logger = logging.getLogger(__name__)

_zero_gap_warned = False


class BlowUpError(RuntimeError):
    """The Euler update produced non-finite positions.

    Carries the step size, relaxation strength and bandwidths so the
    failing configuration can be diagnosed from the message alone.
    """

    def __init__(self, dt, relaxation, taus, iteration=None, max_displacement=None):
        self.dt = dt
        self.relaxation = relaxation
        self.taus = tuple(taus)
        self.iteration = iteration
        self.max_displacement = max_displacement
        where = f" at iteration {iteration}" if iteration is not None else ""
        disp = (
            f"; largest finite per-step displacement so far {max_displacement:.3g}"
            if max_displacement is not None
            else ""
        )
        tau_str = ", ".join(f"{t:g}" for t in self.taus)
        super().__init__(
            f"particle positions became non-finite{where} "
            f"(dt={dt!r}, lambda={relaxation!r}, tau=({tau_str})){disp}; "
            "reduce dt or lambda, or increase tau"
        )


@dataclass(frozen=True)
class CostFunction:
    """Transport cost |x - y|^2 (quadratic) or |x - y|^p (power, p > 1)."""

    kind: str = "quadratic"
    exponent: float = 2.0

    def __post_init__(self):
        if self.kind not in ("quadratic", "power"):
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if self.kind == "power" and not self.exponent > 1:
            raise ValueError("power cost needs exponent > 1")


def _pair_arrays(x, y) -> tuple[np.ndarray, np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    if x.shape != y.shape:
        raise ValueError(f"x and y shapes differ: {x.shape} vs {y.shape}")
    return x, y, single


def cost_eval(cost: CostFunction, x, y):
    """Cost of each pair; scalar for single vectors, ``(n,)`` for batches."""
    x, y, single = _pair_arrays(x, y)
    sq = np.sum((x - y) ** 2, axis=-1)
    if cost.kind == "quadratic":
        out = sq
    else:
        out = sq ** (cost.exponent / 2.0)
    return float(out[0]) if single else out


def cost_grad(cost: CostFunction, x, y):
    """Gradients of the cost in x and in y; gy is always -gx.

    For the power cost with p < 2 a coincident pair has no gradient; the
    zero subgradient is used and the event is flagged in the run log.
    """
    global _zero_gap_warned
    x, y, single = _pair_arrays(x, y)
    diff = x - y
    if cost.kind == "quadratic":
        gx = 2.0 * diff
    else:
        p = cost.exponent
        r = np.sqrt(np.sum(diff * diff, axis=-1))
        zero = r == 0.0
        if np.any(zero) and p < 2:
            level = logging.DEBUG if _zero_gap_warned else logging.WARNING
            logger.log(
                level,
                "coincident pair under power cost p=%g: using zero subgradient",
                p,
            )
            _zero_gap_warned = True
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.where(zero, 0.0, p * r ** (p - 2.0))
        gx = factor[:, None] * diff
    gy = -gx
    if single:
        return gx[0], gy[0]
    return gx, gy


@dataclass(frozen=True, eq=False)
class ParticleSystem:
    """Paired particle positions X, Y, each of shape (N, d), all finite."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim == 1:
            y = y[:, None]
        if x.shape != y.shape or x.ndim != 2:
            raise ValueError(f"X and Y must share an (N, d) shape, got {x.shape} and {y.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("particle positions must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class SolverConfig:
    """Run parameters for the paired-particle solver.

    Attributes:
        relaxation: Marginal-penalty strength (the experiments' lambda).
        dt: Euler step size.  No adaptive control is applied: too large a
            dt * relaxation for the chosen bandwidth blows the run up, and
            the runner aborts with a diagnosis instead of recovering.
        iters: Number of iterations T (0 leaves the particles untouched).
        n_particles: Particle count when initial positions are sampled;
            ignored if explicit arrays are supplied.
        batches: Number of random batches m per iteration.
        tau: Kernel bandwidth; a float, a pair (tau_x, tau_y), or "auto"
            for the rule-of-thumb value frozen from the initial positions.
        seed: Master seed controlling sampling and shuffling.
        snapshot_every: Snapshot period; None resolves to max(1, T // 20).
        cost: Transport cost function.
        threads: Worker threads for per-batch drift evaluation.
    """

    relaxation: float
    dt: float
    iters: int
    n_particles: int | None = None
    batches: int = 1
    tau: float | tuple[float, float] | str = "auto"
    seed: int = 0
    snapshot_every: int | None = None
    cost: CostFunction = field(default_factory=CostFunction)
    threads: int = 1

    def __post_init__(self):
        if self.relaxation < 0:
            raise ValueError("relaxation must be non-negative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.iters < 0:
            raise ValueError("iters must be non-negative")
        if self.batches < 1:
            raise ValueError("batches must be at least 1")
        if self.n_particles is not None and self.n_particles < 1:
            raise ValueError("n_particles must be at least 1")
        if self.snapshot_every is not None and self.snapshot_every < 1:
            raise ValueError("snapshot_every must be at least 1")
        if isinstance(self.tau, str) and self.tau != "auto":
            raise ValueError(f'tau must be positive, a pair, or "auto"; got {self.tau!r}')
        if self.threads < 1:
            raise ValueError("threads must be at least 1")

    def resolved_snapshot_every(self) -> int:
        if self.snapshot_every is not None:
            return self.snapshot_every
        return max(1, self.iters // 20)


def rbm_partition(n: int, m: int, rng) -> list[np.ndarray]:
    """Shuffle 0..n-1 into m disjoint batches with sizes differing by <= 1.

    Batch membership is uniformly random; indices inside each batch are
    returned sorted so interaction sums accumulate in a fixed order
    (making the single-batch case independent of the shuffle stream).

    Args:
        n: Number of particles.
        m: Number of batches, 1 <= m <= n.
        rng: ``numpy.random.Generator`` (or seed) driving the shuffle.
    """
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= batches <= particles, got m={m}, n={n}")
    rng = np.random.default_rng(rng)
    perm = rng.permutation(n)
    return [np.sort(chunk) for chunk in np.array_split(perm, m)]


def batch_drift(
    system: ParticleSystem,
    batch: np.ndarray,
    mu: Marginal,
    nu: Marginal,
    cfg: SolverConfig,
    kernel_x: RbfKernel,
    kernel_y: RbfKernel,
) -> tuple[np.ndarray, np.ndarray]:
    """Drift of every pair in the batch, from batch-entry positions.

    KDE scores are estimated over the batch members only (self-term
    included); the marginal and cost terms are per-particle.

    Returns:
        Arrays ``(len(batch), d)`` of X- and Y-velocities.
    """
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    xb = system.x[batch]
    yb = system.y[batch]
    gx, gy = cost_grad(cfg.cost, xb, yb)
    lam = cfg.relaxation
    dx = -gx
    dy = -gy
    if lam != 0.0:
        dx = dx + lam * (mu.grad_log_density(xb) - grad_log_kde(kernel_x, xb, xb))
        dy = dy + lam * (nu.grad_log_density(yb) - grad_log_kde(kernel_y, yb, yb))
    return dx, dy


def step(
    system: ParticleSystem,
    mu: Marginal,
    nu: Marginal,
    cfg: SolverConfig,
    kernel_x: RbfKernel,
    kernel_y: RbfKernel,
    rng=None,
    pool: ThreadPoolExecutor | None = None,
) -> ParticleSystem:
    """One full iteration: shuffle into batches, drift, Euler update.

    Batches are mutually independent: a particle's update reads only
    batch-entry positions of its own batch, so parallel and sequential
    batch processing agree.

    Args:
        rng: Shuffle stream; defaults to a generator seeded by cfg.seed
            (a run loop should pass its own persistent stream).
        pool: Optional executor for parallel per-batch evaluation.

    Raises:
        BlowUpError: If the update produces NaN or infinity.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    batches = rbm_partition(system.n, cfg.batches, rng)

    dx = np.empty_like(system.x)
    dy = np.empty_like(system.y)

    def one(batch):
        return batch_drift(system, batch, mu, nu, cfg, kernel_x, kernel_y)

    # Overflow on the way to a blow-up is expected; it is caught below.
    with np.errstate(over="ignore", invalid="ignore"):
        if pool is not None and len(batches) > 1:
            results = list(pool.map(one, batches))
        else:
            results = [one(b) for b in batches]
        for batch, (bx, by) in zip(batches, results):
            dx[batch] = bx
            dy[batch] = by
        new_x = system.x + cfg.dt * dx
        new_y = system.y + cfg.dt * dy
    if not (np.all(np.isfinite(new_x)) and np.all(np.isfinite(new_y))):
        raise BlowUpError(cfg.dt, cfg.relaxation, (kernel_x.tau, kernel_y.tau))
    return ParticleSystem(new_x, new_y)


@dataclass(frozen=True, eq=False)
class TransportResult:
    """Outcome of a transport run.

    Attributes:
        system: Final particle positions.
        coupling: Final pairs as a sample of the approximate optimal plan.
        snapshots: List of (iteration, X copy, Y copy), always containing
            the initial and final states.
        kernel_x / kernel_y: Kernels actually used (frozen bandwidths).
        config: The solver configuration, with tau resolved.
        elapsed_seconds: Total wall-clock time of the iteration loop.
        max_step_displacement: Largest coordinate move in any single step.
    """

    system: ParticleSystem
    coupling: "Coupling"
    snapshots: list
    kernel_x: RbfKernel
    kernel_y: RbfKernel
    config: SolverConfig
    elapsed_seconds: float
    max_step_displacement: float

    @property
    def seconds_per_iteration(self) -> float:
        return self.elapsed_seconds / max(1, self.config.iters)


def _resolve_initial(init, marginal: Marginal, n: int | None, rng) -> np.ndarray:
    if init is None:
        init = marginal
    if isinstance(init, Marginal):
        if n is None:
            raise ValueError("n_particles is required when initial positions are sampled")
        return init.sample(n, rng)
    arr = np.asarray(init, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def resolve_kernels(cfg: SolverConfig, x0: np.ndarray, y0: np.ndarray) -> tuple[RbfKernel, RbfKernel]:
    """Fix the X- and Y-side kernels from config or from initial positions."""
    tau = cfg.tau
    if isinstance(tau, str):  # "auto"
        return RbfKernel(silverman_bandwidth(x0)), RbfKernel(silverman_bandwidth(y0))
    if isinstance(tau, (tuple, list)):
        tx, ty = tau
        return RbfKernel(float(tx)), RbfKernel(float(ty))
    return RbfKernel(float(tau)), RbfKernel(float(tau))


def run_transport(
    mu: Marginal,
    nu: Marginal,
    cfg: SolverConfig,
    init_x=None,
    init_y=None,
) -> TransportResult:
    """Evolve the paired-particle system and return the final coupling.

    Initial positions are sampled from ``init_x`` / ``init_y`` (Marginals,
    defaulting to the targets themselves) or taken verbatim from explicit
    (N, d) arrays.  Fully deterministic given the config seed.

    Raises:
        BlowUpError: On numerical blow-up, with dt, lambda and tau named.
        ValueError: On inconsistent shapes or invalid configuration.
    """
    seq = np.random.SeedSequence(cfg.seed)
    seed_x, seed_y, seed_shuffle = seq.spawn(3)
    x0 = _resolve_initial(init_x, mu, cfg.n_particles, np.random.default_rng(seed_x))
    y0 = _resolve_initial(init_y, nu, cfg.n_particles, np.random.default_rng(seed_y))
    if x0.shape != y0.shape:
        raise ValueError(f"initial X and Y shapes differ: {x0.shape} vs {y0.shape}")
    n = x0.shape[0]
    if cfg.n_particles is not None and cfg.n_particles != n:
        raise ValueError(
            f"explicit initial arrays have {n} particles but n_particles={cfg.n_particles}"
        )
    if cfg.batches > n:
        raise ValueError(f"batches={cfg.batches} exceeds particle count {n}")
    if x0.shape[1] != mu.dim or y0.shape[1] != nu.dim:
        raise ValueError("initial positions do not match the marginal dimension")

    kernel_x, kernel_y = resolve_kernels(cfg, x0, y0)
    cfg = replace(cfg, tau=(kernel_x.tau, kernel_y.tau), n_particles=n)
    shuffle_rng = np.random.default_rng(seed_shuffle)
    every = cfg.resolved_snapshot_every()

    system = ParticleSystem(x0, y0)
    snapshots = [(0, system.x.copy(), system.y.copy())]
    pool = (
        ThreadPoolExecutor(max_workers=cfg.threads)
        if cfg.threads > 1 and cfg.batches > 1
        else None
    )
    max_disp = 0.0
    start = time.perf_counter()
    try:
        for it in range(1, cfg.iters + 1):
            try:
                new = step(system, mu, nu, cfg, kernel_x, kernel_y, shuffle_rng, pool)
            except BlowUpError as err:
                raise BlowUpError(
                    cfg.dt, cfg.relaxation, (kernel_x.tau, kernel_y.tau),
                    iteration=it, max_displacement=max_disp,
                ) from err
            disp = max(
                np.abs(new.x - system.x).max(initial=0.0),
                np.abs(new.y - system.y).max(initial=0.0),
            )
            max_disp = max(max_disp, float(disp))
            system = new
            if it % every == 0 or it == cfg.iters:
                snapshots.append((it, system.x.copy(), system.y.copy()))
    finally:
        if pool is not None:
            pool.shutdown()
    elapsed = time.perf_counter() - start

    from .diagnostics import Coupling

    return TransportResult(
        system=system,
        coupling=Coupling(system.x, system.y),
        snapshots=snapshots,
        kernel_x=kernel_x,
        kernel_y=kernel_y,
        config=cfg,
        elapsed_seconds=elapsed,
        max_step_displacement=max_disp,
    )
