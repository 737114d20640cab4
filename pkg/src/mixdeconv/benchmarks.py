"""Desk-scale analogs of the published experiments.

Each driver simulates two-person mixtures, deconvolves them under a stated
hypothesis and returns per-replicate records. The acceptance suite and the
scripts in ``scripts/`` share these drivers so that both report the same
numbers for the same seeds.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .coverage import Marker, MixtureSample, StutterGraph, beta_mom
from .estimation import EstimationConfig, FitnessContext
from .experiments import run_simulated_case
from .genotypes import AlleleFrequencies, canonical, enumerate_individuals
from .mea import MEAConfig
from .pg import sample_pg1
from .simulator import SimulationSpec

# 8 x 25 = 200 individuals, the published total population size
DESK_MEA = dict(n_subpops=8, n_individuals=25, neighbourhood=3, inner_iterations=5, max_outer=60, patience=10)


def desk_config(**overrides) -> MEAConfig:
    return MEAConfig(**{**DESK_MEA, **overrides})


@dataclass
class Record:
    label: str
    replicate: int
    seed: int
    identical_alleles: float
    identical_markers: float
    iterations: int
    converged: bool
    f_opt_ge_f_true: bool | None
    wall_time: float


def mean_ci(values, level: float = 0.95) -> tuple[float, float, float]:
    """Sample mean with a Student-t confidence interval."""
    x = np.asarray(values, dtype=float)
    m = float(x.mean())
    if len(x) < 2 or np.all(x == x[0]):
        return m, m, m
    half = float(stats.t.ppf(0.5 + level / 2, len(x) - 1) * x.std(ddof=1) / np.sqrt(len(x)))
    return m, m - half, m + half


def run_case(label, spec: SimulationSpec, known, config: MEAConfig, replicate: int,
             estimation: EstimationConfig | None = None) -> Record:
    res = run_simulated_case(spec, known, config, estimation)
    return Record(label, replicate, spec.seed, res.identical_alleles, res.identical_markers, res.run.n_outer,
                  res.run.converged, res.f_opt_ge_f_true, res.wall_time)


# --- oracle instances ------------------------------------------------------


def oracle_instance(seed: int, nu: float = 400.0, gamma: float = 2.0) -> FitnessContext:
    """Three markers with three sequences each and one unknown contributor.

    The contributor's genotype is drawn from random frequencies; its alleles get
    PG1 coverage and the remaining sequences get small noise counts, so every
    marker lists exactly three sequences and the space has 6^3 = 216 profiles.
    """
    rng = np.random.default_rng(seed)
    markers, freqs = [], []
    for m in range(3):
        q = rng.dirichlet(np.full(3, 2.0))
        g = np.bincount(rng.choice(3, size=2, p=q), minlength=3)
        beta = float(np.exp(rng.normal(0.0, 0.15)))
        y = np.array([sample_pg1(rng, nu * beta * d, gamma) if d else 1 + rng.poisson(3.0) for d in g])
        markers.append(Marker(f"M{m}", [f"M{m}[{i}]" for i in range(3)], y))
        freqs.append(q)
    sample = MixtureSample(markers)
    return FitnessContext(sample, StutterGraph({}, 0), beta_mom(sample), 1,
                          freqs=AlleleFrequencies(freqs, theta=0.01))


def exhaustive_best(ctx: FitnessContext) -> tuple[np.ndarray, float]:
    best_p, best_f = None, -np.inf
    for p in enumerate_individuals(ctx.marker_sizes, ctx.n_unknown):
        f = ctx.fitness(p).fitness
        if f > best_f:
            best_p, best_f = canonical(p), f
    return best_p, best_f


# --- table analogs ---------------------------------------------------------

TABLE1_CELLS = {
    "GM, N_H=0": dict(mutation_mode="guided", decay=1.0, hill_climb=0),
    "RM, N_H=0": dict(mutation_mode="random", hill_climb=0),
    "RM, N_H=2": dict(mutation_mode="random", hill_climb=2),
    "GM, N_H=2": dict(mutation_mode="guided", decay=1.0, hill_climb=2),
}


def table1(cells=("GM, N_H=0", "RM, N_H=0", "RM, N_H=2"), n_samples: int = 10, ratio=(10.0, 1.0),
           nu: float = 1500.0, seed: int = 0, threads: int = 1, log=None) -> list[Record]:
    """Mutation mode and hill-climbing on 10:1 mixtures with the minor profile known."""
    out = []
    for label in cells:
        for r in range(n_samples):
            spec = SimulationSpec(ratio=ratio, nu=nu, seed=seed + r)
            cfg = desk_config(**TABLE1_CELLS[label], seed=seed + r, threads=threads)
            out.append(run_case(label, spec, [1], cfg, r))
            if log:
                log(out[-1])
    return out


def table2(n_subpops=(1, 2, 4, 8), total: int = 200, replicates: int = 5, ratio=(10.0, 1.0), nu: float = 1500.0,
           seed: int = 0, threads: int = 2, log=None) -> list[Record]:
    """Number of sub-populations at a fixed total population size."""
    out = []
    for n_p in n_subpops:
        for r in range(replicates):
            spec = SimulationSpec(ratio=ratio, nu=nu, seed=seed + r)
            cfg = desk_config(n_subpops=n_p, n_individuals=total // n_p, seed=seed + r, threads=threads)
            out.append(run_case(f"N_P={n_p}", spec, [1], cfg, r))
            if log:
                log(out[-1])
    return out


def fig3(major_ratios=((1.0, 1.0), (3.0, 1.0), (10.0, 1.0)), minor_ratios=((1.0, 1.0), (10.0, 1.0), (100.0, 1.0)),
         replicates: int = 10, nu: float = 1500.0, seed: int = 0, threads: int = 1, log=None) -> list[Record]:
    """Accuracy of the major profile (minor known) and the minor profile (major known).

    Contributor 0 is the major one.
    """
    out = []
    jobs = [("major", ratio, [1]) for ratio in major_ratios] + [("minor", ratio, [0]) for ratio in minor_ratios]
    for target, ratio, known in jobs:
        label = f"{target} {':'.join(f'{x:g}' for x in ratio)}"
        for r in range(replicates):
            spec = SimulationSpec(ratio=ratio, nu=nu, seed=seed + r)
            out.append(run_case(label, spec, known, desk_config(seed=seed + r, threads=threads), r))
            if log:
                log(out[-1])
    return out


def summarise(records: list[Record]) -> list[dict]:
    """One row per label, in first-seen order."""
    labels = list(dict.fromkeys(r.label for r in records))
    rows = []
    for label in labels:
        rs = [r for r in records if r.label == label]
        m, lo, hi = mean_ci([r.identical_alleles for r in rs])
        rows.append({
            "label": label, "replicates": len(rs),
            "identical_alleles": m, "ci_low": lo, "ci_high": hi,
            "identical_markers": float(np.mean([r.identical_markers for r in rs])),
            "iterations": float(np.mean([r.iterations for r in rs])),
            "f_opt_ge_f_true": int(sum(bool(r.f_opt_ge_f_true) for r in rs)),
            "wall_time_s": float(np.mean([r.wall_time for r in rs])),
        })
    return rows


def record_fields() -> list[str]:
    return [f.name for f in dataclasses.fields(Record)]
