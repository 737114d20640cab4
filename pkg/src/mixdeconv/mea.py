"""Multiple-population evolutionary algorithm over encoded unknown profiles.

One outer iteration = ring migration followed by ``inner_iterations`` sweeps of
the per-sub-population EA. A sweep visits every individual in turn:
hill-climb it, pick a partner from its ring neighbourhood, build one child by
crossover, mutate the child, and keep the child only if it is strictly fitter.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .estimation import FitnessContext, FitnessValue
from .genotypes import canonical

GUIDED = "guided"
RANDOM = "random"


@dataclass
class MEAConfig:
    n_subpops: int = 16
    n_individuals: int = 125
    neighbourhood: int = 5
    crossover_prob: float | None = None  # None -> 1 / (2 U M)
    mutation_lb: float = 0.05
    mutation_ub: float = 0.95
    decay: float = 1.0
    mutation_mode: str = GUIDED
    random_rate: float | None = None  # None -> budget-matched rate, see flat_rate
    hill_climb: int = 0
    inner_iterations: int = 10
    max_outer: int = 250
    epsilon: float = 1e-6
    patience: int = 5
    seed: int = 0
    top_n: int = 10
    threads: int = 1

    def __post_init__(self):
        if self.n_subpops < 1:
            raise ValueError("n_subpops must be >= 1")
        if self.n_individuals < 2:
            raise ValueError("n_individuals must be >= 2")
        if self.neighbourhood < 1 or 2 * self.neighbourhood >= self.n_individuals:
            raise ValueError("need 1 <= neighbourhood and 2 * neighbourhood < n_individuals")
        if not 0.0 < self.mutation_lb <= self.mutation_ub <= 1.0:
            raise ValueError("need 0 < mutation_lb <= mutation_ub <= 1")
        if self.decay <= 0:
            raise ValueError("decay must be > 0")
        if self.mutation_mode not in (GUIDED, RANDOM):
            raise ValueError(f"mutation_mode must be {GUIDED!r} or {RANDOM!r}")
        if self.random_rate is not None and not 0.0 <= self.random_rate <= 1.0:
            raise ValueError("random_rate must lie in [0, 1]")
        if self.crossover_prob is not None and not 0.0 <= self.crossover_prob <= 1.0:
            raise ValueError("crossover_prob must lie in [0, 1]")
        if self.hill_climb < 0 or self.inner_iterations < 1 or self.max_outer < 1:
            raise ValueError("hill_climb >= 0, inner_iterations >= 1 and max_outer >= 1 required")
        if self.epsilon <= 0 or self.patience < 0:
            raise ValueError("epsilon must be > 0 and patience >= 0")

    @property
    def flat_rate(self) -> float:
        """Random-mode mutation rate.

        Defaults to the guided rate averaged over standard normal residuals,
        E[ub - (ub - lb) exp(-r^2 / 2)] = ub - (ub - lb) / sqrt(2), so both
        modes spend the same expected number of mutations per child.
        """
        if self.random_rate is not None:
            return self.random_rate
        return self.mutation_ub - (self.mutation_ub - self.mutation_lb) / np.sqrt(2.0)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SubPopulation:
    individuals: np.ndarray  # (N_I, 2UM)
    fitness: np.ndarray  # (N_I,)
    values: list[FitnessValue | None]
    rng: np.random.Generator | None = None
    index: int = 0

    @property
    def best_index(self) -> int:
        return int(np.argmax(self.fitness))

    @property
    def worst_index(self) -> int:
        return int(np.argmin(self.fitness))

    @property
    def best_fitness(self) -> float:
        return float(self.fitness.max())

    def copy(self) -> "SubPopulation":
        return SubPopulation(self.individuals.copy(), self.fitness.copy(), list(self.values), self.rng, self.index)


@dataclass
class RunResult:
    best: np.ndarray
    best_genotypes: list[np.ndarray]
    best_value: FitnessValue
    trace: np.ndarray  # (outer iterations, N_P) best fitness per sub-population
    best_trace: np.ndarray  # global best after each outer iteration
    converged: bool
    n_outer: int
    top: list[tuple[np.ndarray, FitnessValue]] = field(default_factory=list)
    wall_time: float = 0.0
    n_fits: int = 0  # distinct profiles evaluated during the run

    @property
    def best_fitness(self) -> float:
        return self.best_value.fitness


# --- operators -------------------------------------------------------------


def initialize(slot_sizes, config: MEAConfig, rngs) -> list[np.ndarray]:
    """Uniform random slot values, one generator per sub-population."""
    slot_sizes = np.asarray(slot_sizes)
    return [rng.integers(0, slot_sizes, size=(config.n_individuals, len(slot_sizes))) for rng in rngs]


def migration_targets(n: int, n_subpops: int) -> list[int]:
    """Ring neighbours receiving sub-population n's best: one step forward, two back."""
    targets = []
    for t in ((n + 1) % n_subpops, (n - 2) % n_subpops):
        if t != n and t not in targets:
            targets.append(t)
    return targets


def migrate(pops: list[SubPopulation]) -> list[SubPopulation]:
    """Copy each sub-population's best into its ring neighbours, replacing their worst.

    Migrants are taken from the pre-migration snapshot; populations are modified
    in place and returned.
    """
    n_p = len(pops)
    if n_p == 1:
        return pops
    migrants = [
        (pops[n].individuals[pops[n].best_index].copy(), pops[n].fitness[pops[n].best_index],
         pops[n].values[pops[n].best_index])
        for n in range(n_p)
    ]
    for n in range(n_p):
        ind, fit, val = migrants[n]
        for t in migration_targets(n, n_p):
            pop = pops[t]
            w = pop.worst_index
            if np.array_equal(canonical(pop.individuals[w]), canonical(ind)):
                continue
            pop.individuals[w] = ind
            pop.fitness[w] = fit
            pop.values[w] = val
    return pops


def spread_time(n_subpops: int, max_rounds: int = 1000) -> int:
    """Rounds of migration (evolution disabled) until a uniquely best individual
    planted in sub-population 0 is present in every sub-population."""
    pops = []
    for n in range(n_subpops):
        ind = np.full((3, 2), n + 1)
        fit = np.array([0.0, -1.0, -2.0]) - n
        pops.append(SubPopulation(ind, fit, [None] * 3, index=n))
    pops[0].individuals[0] = 0
    pops[0].fitness[0] = 10.0
    for r in range(max_rounds + 1):
        if all(np.any(p.individuals[:, 0] == 0) for p in pops):
            return r
        migrate(pops)
    raise RuntimeError("planted individual did not spread")


def select_partner(i: int, fitness: np.ndarray, neighbourhood: int, rng: np.random.Generator) -> int:
    """Index of a partner for individual i, drawn from its ring window with
    probability proportional to shifted fitness."""
    n = len(fitness)
    idx = [(i + l) % n for l in range(-neighbourhood, neighbourhood + 1) if l != 0]
    f = [float(fitness[j]) for j in idx]
    finite = [v for v in f if v > -np.inf]
    if not finite:
        return idx[int(rng.integers(len(idx)))]
    lo, hi = min(finite), max(finite)
    delta = 1e-6 * (hi - lo + 1.0)
    cum = np.cumsum([v - lo + delta if v > -np.inf else 0.0 for v in f])
    k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return idx[min(k, len(idx) - 1)]


def crossover(p: np.ndarray, q: np.ndarray, prob: float, rng: np.random.Generator,
              return_toggles: bool = False):
    """Single child: copy slot by slot starting from ``p``; before each slot the
    source switches with probability ``prob``."""
    if p.shape != q.shape:
        raise ValueError("parents must have equal length")
    toggles = rng.random(len(p)) < prob
    from_q = (np.cumsum(toggles) % 2).astype(bool)
    child = np.where(from_q, q, p)
    if return_toggles:
        return child, int(toggles.sum())
    return child


def mutation_probability(r, lb: float, ub: float):
    """ub - (ub - lb) f(r)/f(0) with f the standard normal density."""
    r = np.asarray(r, dtype=float)
    # lb + (ub - lb)(1 - f(r)/f(0)), written so r = 0 gives lb exactly
    out = np.clip(lb - (ub - lb) * np.expm1(-0.5 * r * r), lb, ub)
    return out[()] if out.ndim == 0 else out


def upper_bound_schedule(t: int, config: MEAConfig) -> float:
    """Linear decay of the mutation upper bound, reaching the lower bound at
    t = max_outer / decay."""
    lb, ub0 = config.mutation_lb, config.mutation_ub
    frac = config.decay * t / config.max_outer
    if frac >= 1.0:
        return lb
    return max(lb, ub0 - (ub0 - lb) * frac)


def mutate(c: np.ndarray, slot_sizes: np.ndarray, probs, rng: np.random.Generator) -> np.ndarray:
    """Shift each selected slot by a uniform draw from {1, ..., A_m - 1} (mod A_m),
    so a mutated slot always changes. Slots of single-sequence markers never mutate."""
    hit = (rng.random(len(c)) < probs) & (slot_sizes > 1)
    out = c.copy()
    if hit.any():
        sizes = slot_sizes[hit]
        out[hit] = (out[hit] + rng.integers(1, sizes)) % sizes
    return out


def guided_probabilities(residuals, t: int, config: MEAConfig):
    return mutation_probability(residuals, config.mutation_lb, upper_bound_schedule(t, config))


def hill_climb(p: np.ndarray, value: FitnessValue, n_steps: int, ctx: FitnessContext,
               rng: np.random.Generator) -> tuple[np.ndarray, FitnessValue]:
    """Residual-matched hill-climbing.

    Each step picks a random slot, considers every alternative value, and keeps
    the one whose observation residual best cancels the current slot's residual
    (argmin |r_i + r_alt|, residuals at the parent's parameters). Only that
    candidate is re-estimated; it replaces ``p`` on strict improvement.
    """
    sizes = ctx.slot_sizes
    for _ in range(n_steps):
        i = int(rng.integers(len(p)))
        a_m = int(sizes[i])
        if a_m < 2:
            continue
        off = int(ctx.slot_offsets[i])
        r = ctx.residuals(p, value.theta)
        alts = (p[i] + np.arange(1, a_m)) % a_m
        k = int(alts[np.argmin(np.abs(r[off + p[i]] + r[off + alts]))])
        cand = p.copy()
        cand[i] = k
        cv = ctx.fitness(cand)
        if value.fitness < cv.fitness:
            p, value = cand, cv
    return p, value


# --- driver ----------------------------------------------------------------


class MEA:
    """Runs the algorithm for one fitness context."""

    def __init__(self, ctx: FitnessContext, config: MEAConfig):
        self.ctx = ctx
        self.config = config
        self.crossover_prob = (
            config.crossover_prob if config.crossover_prob is not None else 1.0 / ctx.length
        )

    def _evaluate(self, inds: np.ndarray) -> SubPopulation:
        values = [self.ctx.fitness(p) for p in inds]
        return SubPopulation(inds, np.array([v.fitness for v in values]), values)

    def _generation(self, pop: SubPopulation, t: int) -> None:
        cfg = self.config
        ctx = self.ctx
        rng = pop.rng
        old_fit = pop.fitness.copy()
        old_inds = pop.individuals.copy()
        new_inds = np.empty_like(old_inds)
        new_fit = np.empty_like(old_fit)
        new_vals = list(pop.values)
        ub = upper_bound_schedule(t, cfg)
        for i in range(len(old_inds)):
            p, val = old_inds[i], pop.values[i]
            if cfg.hill_climb:
                p, val = hill_climb(p.copy(), val, cfg.hill_climb, ctx, rng)
            j = select_partner(i, old_fit, cfg.neighbourhood, rng)
            c = crossover(p, old_inds[j], self.crossover_prob, rng)
            if cfg.mutation_mode == GUIDED:
                r = ctx.slot_residuals(c, val.theta)
                probs = mutation_probability(r, cfg.mutation_lb, ub)
            else:
                probs = cfg.flat_rate
            c = mutate(c, ctx.slot_sizes, probs, rng)
            cv = ctx.fitness(c)
            if val.fitness < cv.fitness:
                p, val = c, cv
            new_inds[i] = p
            new_fit[i] = val.fitness
            new_vals[i] = val
        pop.individuals = new_inds
        pop.fitness = new_fit
        pop.values = new_vals

    def _evolve(self, pop: SubPopulation, t: int) -> SubPopulation:
        for _ in range(self.config.inner_iterations):
            self._generation(pop, t)
        return pop

    def run(self, initial: list[np.ndarray] | None = None, evolve: bool = True) -> RunResult:
        cfg = self.config
        ctx = self.ctx
        start = time.perf_counter()
        fits_before = ctx.cache_size
        seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_subpops)
        rngs = [np.random.default_rng(s) for s in seeds]
        inds = initialize(ctx.slot_sizes, cfg, rngs)
        if initial is not None:
            if len(initial) != cfg.n_subpops:
                raise ValueError("initial populations must match n_subpops")
            inds = [np.asarray(x, dtype=np.int64).copy() for x in initial]
        pops = []
        for n, x in enumerate(inds):
            pop = self._evaluate(x)
            pop.rng = rngs[n]
            pop.index = n
            pops.append(pop)

        best_val = max((v for pop in pops for v in pop.values), key=lambda v: v.fitness)
        best = self._best_individual(pops)
        trace, best_trace = [], []
        quiet = 0
        converged = False
        pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 and cfg.n_subpops > 1 else None
        try:
            t = 0
            for t in range(cfg.max_outer):
                migrate(pops)
                if evolve:
                    if pool is not None:
                        pops = list(pool.map(lambda pop: self._evolve(pop, t), pops))
                    else:
                        pops = [self._evolve(pop, t) for pop in pops]
                bests = np.array([pop.best_fitness for pop in pops])
                trace.append(bests)
                prev = best_val.fitness
                cand = self._best_individual(pops)
                cand_val = ctx.fitness(cand)
                if cand_val.fitness > best_val.fitness:
                    best, best_val = cand, cand_val
                best_trace.append(best_val.fitness)
                if cfg.n_subpops > 1:
                    still = bests.max() - bests.min() < cfg.epsilon
                else:
                    still = best_val.fitness - prev < cfg.epsilon
                quiet = quiet + 1 if still else 0
                if quiet > cfg.patience:
                    converged = True
                    break
        finally:
            if pool is not None:
                pool.shutdown()

        return RunResult(
            best=canonical(best),
            best_genotypes=ctx.decode(canonical(best)),
            best_value=best_val,
            trace=np.array(trace),
            best_trace=np.array(best_trace),
            converged=converged,
            n_outer=len(trace),
            top=self._top(cfg.top_n),
            wall_time=time.perf_counter() - start,
            n_fits=ctx.cache_size - fits_before,
        )

    @staticmethod
    def _best_individual(pops) -> np.ndarray:
        # ties resolved by sub-population order, then position
        n = max(range(len(pops)), key=lambda k: (pops[k].best_fitness, -k))
        return pops[n].individuals[pops[n].best_index].copy()

    def _top(self, k: int):
        items = list(self.ctx._cache.items())
        items.sort(key=lambda kv: (-kv[1].fitness, kv[0]))
        return [(np.frombuffer(key, dtype=np.int64).copy(), v) for key, v in items[:k]]


def run(ctx: FitnessContext, config: MEAConfig, initial=None) -> RunResult:
    return MEA(ctx, config).run(initial)
