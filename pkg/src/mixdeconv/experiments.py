"""Simulate-then-deconvolve cases shared by the CLI, the scripts and the tests."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .coverage import MixtureSample, StutterGraph, beta_blend, beta_mom
from .estimation import EstimationConfig, FitnessContext
from .genotypes import AlleleFrequencies, encode
from .mea import MEAConfig, RunResult, run
from .metrics import profile_agreement
from .simulator import SimulationSpec, frequencies_for, simulate

F_TRUE_TOLERANCE = 1e-6


@dataclass
class CaseResult:
    run: RunResult
    context: FitnessContext
    estimated: list[list[tuple[str, str]]]  # unknown contributor -> marker -> allele pair
    identical_alleles: float | None = None
    identical_markers: float | None = None
    f_true: float | None = None
    wall_time: float = 0.0

    @property
    def f_opt_ge_f_true(self) -> bool | None:
        if self.f_true is None:
            return None
        return self.run.best_fitness >= self.f_true - F_TRUE_TOLERANCE * max(1.0, abs(self.f_true))


def build_context(
    sample: MixtureSample,
    graph: StutterGraph,
    n_unknown: int,
    known: list[np.ndarray] | None = None,
    freqs: AlleleFrequencies | None = None,
    beta=None,
    beta_lambda: float = 0.0,
    estimation: EstimationConfig | None = None,
) -> FitnessContext:
    """Fitness context with moment-based marker imbalance unless ``beta`` is given."""
    mom = beta_mom(sample)
    b = beta_blend(mom, beta, beta_lambda) if beta is not None else mom
    return FitnessContext(sample, graph, b, n_unknown, known=known, freqs=freqs, config=estimation)


def estimated_profiles(ctx: FitnessContext, p) -> list[list[tuple[str, str]]]:
    """Decode an individual into sequence-id pairs, contributor-major."""
    p = np.asarray(p)
    out = []
    for u in range(ctx.n_unknown):
        rows = []
        for m, mk in enumerate(ctx.sample.markers):
            j = 2 * (u * ctx.n_markers + m)
            a, b = sorted((int(p[j]), int(p[j + 1])))
            rows.append((mk.sequence_ids[a], mk.sequence_ids[b]))
        out.append(rows)
    return out


def score(ctx: FitnessContext, result: RunResult, truth_profiles, truth_genotypes=None):
    """(identical alleles, identical markers, F_true) against the true unknown profiles."""
    est = estimated_profiles(ctx, result.best)
    alleles, markers = profile_agreement(est, truth_profiles)
    f_true = None
    if truth_genotypes is not None:
        f_true = ctx.fitness(encode(truth_genotypes)).fitness
    return est, alleles, markers, f_true


def run_simulated_case(
    spec: SimulationSpec,
    known: list[int],
    config: MEAConfig,
    estimation: EstimationConfig | None = None,
    theta_fst: float = 0.01,
) -> CaseResult:
    """Simulate ``spec``, treat contributors ``known`` as known and deconvolve the rest."""
    sample, graph, truth, table = simulate(spec)
    unknown = [c for c in range(spec.n_contributors) if c not in known]
    if not unknown:
        raise ValueError("at least one contributor must be unknown")
    freqs = frequencies_for(sample, table, theta=theta_fst)
    known_g = truth.genotype_matrices(sample, known) if known else None
    ctx = build_context(sample, graph, len(unknown), known=known_g, freqs=freqs, estimation=estimation)
    t0 = time.perf_counter()
    res = run(ctx, config)
    wall = time.perf_counter() - t0
    est, alleles, markers, f_true = score(
        ctx, res, [truth.profiles[c] for c in unknown], truth.genotype_matrices(sample, unknown)
    )
    return CaseResult(res, ctx, est, alleles, markers, f_true, wall)

