"""Multi-marginal particle system for Wasserstein barycenters.

N particles each carry an (m+1)-tuple of positions: block 0 is the free
barycenter component, blocks 1..m are softly pinned to the given
marginals.  Block 0 feels only the weighted quadratic pull towards the
other blocks; block j additionally feels its marginal score and the
batch KDE score, exactly as one side of the paired transport system.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import BlowUpError, rbm_partition
from .kde import RbfKernel, grad_log_kde, silverman_bandwidth
from .marginals import Marginal

__all__ = [
    "BarycenterConfig",
    "BarycenterSystem",
    "BarycenterResult",
    "bary_drift",
    "run_barycenter",
]


@dataclass(frozen=True, eq=False)
class BarycenterConfig:
    """Parameters of a barycenter run.

    Attributes:
        marginals: The m >= 2 target marginals, all of the same dimension.
        weights: Barycentric weights lambda_j; normalised on input.
        relaxations: Marginal-penalty strength(s); a scalar is shared by
            all marginals.
        dt: Euler step size.
        iters: Number of iterations.
        n_particles: Tuples evolved (ignored for explicit initial blocks).
        batches: Random batches per iteration.
        tau: "auto" (per-block rule-of-thumb from initial positions), a
            scalar, or one value per marginal block.
        seed: Master seed.
        snapshot_every: Snapshot period; None means max(1, iters // 20).
        threads: Worker threads for per-batch drift evaluation.
    """

    marginals: tuple[Marginal, ...]
    weights: np.ndarray
    relaxations: float | tuple[float, ...] = 100.0
    dt: float = 0.001
    iters: int = 2000
    n_particles: int | None = 800
    batches: int = 1
    tau: float | tuple | str = "auto"
    seed: int = 0
    snapshot_every: int | None = None
    threads: int = 1

    def __post_init__(self):
        marginals = tuple(self.marginals)
        if len(marginals) < 2:
            raise ValueError("barycenter needs at least two marginals")
        dims = {m.dim for m in marginals}
        if len(dims) != 1:
            raise ValueError(f"marginals must share one dimension, got {sorted(dims)}")
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if len(w) != len(marginals):
            raise ValueError("need one weight per marginal")
        if np.any(w <= 0):
            raise ValueError("barycentric weights must be strictly positive")
        w = w / w.sum()
        lam = self.relaxations
        if np.isscalar(lam):
            lam = (float(lam),) * len(marginals)
        else:
            lam = tuple(float(v) for v in lam)
            if len(lam) != len(marginals):
                raise ValueError("need one relaxation per marginal (or a scalar)")
        if any(v < 0 for v in lam):
            raise ValueError("relaxations must be non-negative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.iters < 0:
            raise ValueError("iters must be non-negative")
        if self.batches < 1:
            raise ValueError("batches must be at least 1")
        object.__setattr__(self, "marginals", marginals)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "relaxations", lam)

    @property
    def n_marginals(self) -> int:
        return len(self.marginals)

    @property
    def dim(self) -> int:
        return self.marginals[0].dim

    def resolved_snapshot_every(self) -> int:
        if self.snapshot_every is not None:
            return self.snapshot_every
        return max(1, self.iters // 20)


@dataclass(frozen=True, eq=False)
class BarycenterSystem:
    """Block positions, shape (m+1, N, d); block 0 is the barycenter."""

    blocks: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.blocks, dtype=np.float64)
        if b.ndim != 3 or b.shape[0] < 3:
            raise ValueError("blocks must be an (m+1, N, d) array with m >= 2")
        if not np.all(np.isfinite(b)):
            raise ValueError("particle positions must be finite")
        object.__setattr__(self, "blocks", b)

    @property
    def n(self) -> int:
        return self.blocks.shape[1]

    @property
    def dim(self) -> int:
        return self.blocks.shape[2]


def bary_drift(
    system: BarycenterSystem,
    batch: np.ndarray,
    cfg: BarycenterConfig,
    kernels: tuple[RbfKernel, ...],
) -> np.ndarray:
    """Per-block drift of the batch members, from batch-entry positions.

    Block 0 has no marginal or KDE term; block j >= 1 combines the pull
    towards block 0 with the marginal score and the batch KDE score.

    Args:
        kernels: One kernel per marginal block (blocks 1..m).

    Returns:
        Velocities, shape (m+1, len(batch), d).
    """
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    b = system.blocks[:, batch, :]  # (m+1, |batch|, d)
    out = np.empty_like(b)
    w = cfg.weights
    gaps = b[1:] - b[0][None, :, :]  # (m, |batch|, d)
    out[0] = 2.0 * np.einsum("j,jnd->nd", w, gaps)
    for j, (marginal, lam, kernel) in enumerate(
        zip(cfg.marginals, cfg.relaxations, kernels), start=1
    ):
        xj = b[j]
        drift = -2.0 * w[j - 1] * (xj - b[0])
        if lam != 0.0:
            drift = drift + lam * (
                marginal.grad_log_density(xj) - grad_log_kde(kernel, xj, xj)
            )
        out[j] = drift
    return out


def _bary_step(
    system: BarycenterSystem,
    cfg: BarycenterConfig,
    kernels: tuple[RbfKernel, ...],
    rng,
    pool: ThreadPoolExecutor | None,
) -> BarycenterSystem:
    batches = rbm_partition(system.n, cfg.batches, rng)
    drift = np.empty_like(system.blocks)

    def one(batch):
        return bary_drift(system, batch, cfg, kernels)

    if pool is not None and len(batches) > 1:
        results = list(pool.map(one, batches))
    else:
        results = [one(b) for b in batches]
    for batch, d in zip(batches, results):
        drift[:, batch, :] = d

    new = system.blocks + cfg.dt * drift
    if not np.all(np.isfinite(new)):
        raise BlowUpError(cfg.dt, max(cfg.relaxations), tuple(k.tau for k in kernels))
    return BarycenterSystem(new)


@dataclass(frozen=True, eq=False)
class BarycenterResult:
    """Outcome of a barycenter run.

    Attributes:
        sample: Final block-0 positions, the barycenter sample, (N, d).
        system: Full final block state.
        snapshots: List of (iteration, blocks copy).
        kernels: Kernels used for blocks 1..m (frozen bandwidths).
        config: Configuration with weights normalised.
        elapsed_seconds: Wall-clock time of the iteration loop.
        max_step_displacement: Largest coordinate move in any single step.
    """

    sample: np.ndarray
    system: BarycenterSystem
    snapshots: list
    kernels: tuple[RbfKernel, ...]
    config: BarycenterConfig
    elapsed_seconds: float
    max_step_displacement: float


def _initial_blocks(cfg: BarycenterConfig, init, seq) -> np.ndarray:
    if init is not None and not isinstance(init, (list, tuple)):
        blocks = np.asarray(init, dtype=np.float64)
        if blocks.ndim != 3 or blocks.shape[0] != cfg.n_marginals + 1:
            raise ValueError(
                f"explicit init must have shape (m+1, N, d) with m={cfg.n_marginals}"
            )
        return blocks.copy()

    samplers = tuple(init) if init is not None else cfg.marginals
    if len(samplers) != cfg.n_marginals:
        raise ValueError("need one init sampler per marginal")
    n = cfg.n_particles
    if n is None:
        raise ValueError("n_particles is required when initial blocks are sampled")
    seed_blocks, seed_zero = seq.spawn(2)
    block_seeds = seed_blocks.spawn(cfg.n_marginals)
    blocks = np.empty((cfg.n_marginals + 1, n, cfg.dim))
    for j, (sampler, s) in enumerate(zip(samplers, block_seeds), start=1):
        blocks[j] = sampler.sample(n, np.random.default_rng(s))
    # Block 0 starts in the convex hull of the data: draw each particle
    # from the weight-mixture of the block samplers.
    rng0 = np.random.default_rng(seed_zero)
    choice = rng0.choice(cfg.n_marginals, size=n, p=cfg.weights)
    blocks[0] = np.zeros((n, cfg.dim))
    for j, sampler in enumerate(samplers):
        mask = choice == j
        if np.any(mask):
            blocks[0][mask] = sampler.sample(int(mask.sum()), rng0)
    return blocks


def run_barycenter(cfg: BarycenterConfig, init=None) -> BarycenterResult:
    """Evolve the multi-marginal system; block 0 samples the barycenter.

    Args:
        cfg: Run parameters.
        init: Optional initial state: an explicit (m+1, N, d) array, or a
            list of m Marginals to sample blocks 1..m from (block 0 then
            draws from their weight-mixture).  Default samples from the
            target marginals themselves.

    Raises:
        BlowUpError: On numerical blow-up.
    """
    seq = np.random.SeedSequence(cfg.seed)
    seed_init, seed_shuffle = seq.spawn(2)
    blocks = _initial_blocks(cfg, init, seed_init)
    n = blocks.shape[1]
    if cfg.batches > n:
        raise ValueError(f"batches={cfg.batches} exceeds particle count {n}")

    tau = cfg.tau
    if isinstance(tau, str):  # "auto", per block
        kernels = tuple(RbfKernel(silverman_bandwidth(blocks[j])) for j in range(1, cfg.n_marginals + 1))
    elif np.isscalar(tau):
        kernels = (RbfKernel(float(tau)),) * cfg.n_marginals
    else:
        if len(tau) != cfg.n_marginals:
            raise ValueError("need one tau per marginal (or a scalar)")
        kernels = tuple(RbfKernel(float(t)) for t in tau)

    shuffle_rng = np.random.default_rng(seed_shuffle)
    every = cfg.resolved_snapshot_every()
    system = BarycenterSystem(blocks)
    snapshots = [(0, system.blocks.copy())]
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
                new = _bary_step(system, cfg, kernels, shuffle_rng, pool)
            except BlowUpError as err:
                raise BlowUpError(
                    cfg.dt, max(cfg.relaxations), tuple(k.tau for k in kernels),
                    iteration=it, max_displacement=max_disp,
                ) from err
            max_disp = max(max_disp, float(np.abs(new.blocks - system.blocks).max(initial=0.0)))
            system = new
            if it % every == 0 or it == cfg.iters:
                snapshots.append((it, system.blocks.copy()))
    finally:
        if pool is not None:
            pool.shutdown()
    elapsed = time.perf_counter() - start

    return BarycenterResult(
        sample=system.blocks[0].copy(),
        system=system,
        snapshots=snapshots,
        kernels=kernels,
        config=cfg,
        elapsed_seconds=elapsed,
        max_step_displacement=max_disp,
    )
