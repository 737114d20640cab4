"""Two-component coverage model for STR mixture samples.

Allele component: each sequence that some contributor carries, or that is
reachable from a carried allele through the stutter graph, has coverage
PG1(mu_ma, gamma) with

    mu_ma = nu * beta_m * sum_c (g_mac + s_mac) * phi_c

where s is the recursive stutter dose. Every other observed sequence is
noise, modelled as a one-inflated, zero-truncated PG1(noise_mu, noise_rho).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import log1p, logsumexp

from .pg import pg1_log_pmf


class DegenerateInputError(ValueError):
    pass


class StutterGraphError(ValueError):
    pass


@dataclass
class Marker:
    name: str
    sequence_ids: list[str]
    coverage: np.ndarray
    sequences: list[str] | None = None
    repeat_counts: list[float | None] | None = None

    def __post_init__(self):
        self.coverage = np.asarray(self.coverage, dtype=np.int64)
        if self.coverage.ndim != 1 or len(self.coverage) != len(self.sequence_ids):
            raise ValueError(f"marker {self.name}: coverage/sequence_ids length mismatch")
        if len(self.sequence_ids) < 1:
            raise ValueError(f"marker {self.name}: no sequences")
        if len(set(self.sequence_ids)) != len(self.sequence_ids):
            raise ValueError(f"marker {self.name}: duplicate sequence ids")
        if np.any(self.coverage < 0):
            raise ValueError(f"marker {self.name}: negative coverage")

    @property
    def n_sequences(self) -> int:
        return len(self.sequence_ids)

    def index(self, sequence_id: str) -> int:
        return self.sequence_ids.index(sequence_id)


@dataclass
class MixtureSample:
    markers: list[Marker]

    @property
    def n_markers(self) -> int:
        return len(self.markers)

    @property
    def marker_names(self) -> list[str]:
        return [m.name for m in self.markers]

    @property
    def marker_sizes(self) -> np.ndarray:
        return np.array([m.n_sequences for m in self.markers], dtype=np.int64)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.marker_sizes)]).astype(np.int64)

    @property
    def flat_coverage(self) -> np.ndarray:
        return np.concatenate([m.coverage for m in self.markers])

    def marker(self, name: str) -> Marker:
        for m in self.markers:
            if m.name == name:
                return m
        raise KeyError(name)


@dataclass
class StutterGraph:
    """Parent edges per marker: ``edges[marker] = [(child, parent, xi), ...]``.

    Indices refer to positions in the marker's sequence list.
    """

    edges: dict[str, list[tuple[int, int, float]]] = field(default_factory=dict)
    depth: int = 2

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("stutter depth must be >= 0")
        for name, es in self.edges.items():
            for child, parent, xi in es:
                if not 0.0 <= xi < 1.0:
                    raise StutterGraphError(f"marker {name}: stutter ratio {xi} outside [0, 1)")
                if child == parent:
                    raise StutterGraphError(f"marker {name}: self-loop at {child}")
            _check_acyclic(name, es)

    def marker_edges(self, name: str) -> list[tuple[int, int, float]]:
        return self.edges.get(name, [])

    def parents(self, name: str, child: int) -> list[tuple[int, float]]:
        return [(p, xi) for c, p, xi in self.marker_edges(name) if c == child]

    @classmethod
    def from_repeat_counts(cls, sample: MixtureSample, xi: float = 0.05, depth: int = 2) -> "StutterGraph":
        """Default n-1 rule: every sequence with repeat count r + 1 is a parent of
        every sequence with repeat count r. Sequences without a repeat annotation
        take no part in the graph."""
        edges = {}
        for m in sample.markers:
            es = []
            rc = m.repeat_counts or [None] * m.n_sequences
            for a, ra in enumerate(rc):
                if ra is None:
                    continue
                for b, rb in enumerate(rc):
                    if rb is not None and abs(rb - (ra + 1)) < 1e-9:
                        es.append((a, b, xi))
            if es:
                edges[m.name] = es
        return cls(edges, depth)


def _check_acyclic(name, edges):
    adj: dict[int, list[int]] = {}
    for child, parent, _ in edges:
        adj.setdefault(child, []).append(parent)
    state: dict[int, int] = {}

    def visit(v):
        state[v] = 1
        for w in adj.get(v, ()):
            s = state.get(w, 0)
            if s == 1:
                raise StutterGraphError(f"marker {name}: stutter graph has a cycle through {w}")
            if s == 0:
                visit(w)
        state[v] = 2

    for v in list(adj):
        if state.get(v, 0) == 0:
            visit(v)


@dataclass
class ModelParams:
    nu: float
    gamma: float
    phi: np.ndarray
    noise_mu: float = 1.0
    noise_rho: float = 1.0
    noise_omega: float = 0.0

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        if self.nu <= 0 or self.gamma <= 0 or self.noise_mu <= 0 or self.noise_rho <= 0:
            raise ValueError("nu, gamma, noise_mu and noise_rho must be > 0")
        if not 0.0 <= self.noise_omega < 1.0:
            raise ValueError("noise_omega must lie in [0, 1)")
        if np.any(self.phi <= 0) or abs(self.phi.sum() - 1.0) > 1e-9:
            raise ValueError("phi must be a strictly positive simplex vector")

    @property
    def n_contributors(self) -> int:
        return len(self.phi)

    def to_dict(self) -> dict:
        return {
            "nu": float(self.nu),
            "gamma": float(self.gamma),
            "phi": [float(x) for x in self.phi],
            "noise_mu": float(self.noise_mu),
            "noise_rho": float(self.noise_rho),
            "noise_omega": float(self.noise_omega),
        }


@dataclass
class MarkerImbalance:
    beta: np.ndarray
    lam: float = 0.0
    beta_database: np.ndarray | None = None

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        if np.any(self.beta <= 0):
            raise ValueError("beta must be > 0")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.beta_database is None and self.lam != 0.0:
            raise ValueError("lambda > 0 requires database beta")

    @classmethod
    def from_sample(cls, sample: MixtureSample, beta_database=None, lam: float = 0.0):
        mom = beta_mom(sample)
        return cls(beta_blend(mom, beta_database, lam), lam, beta_database)


@dataclass
class ClassifiedObservations:
    """Boolean allele-set masks per marker; the noise set is the complement."""

    allele: list[np.ndarray]

    def noise(self, m: int) -> np.ndarray:
        return ~self.allele[m]


def stutter_contribution(genotype: np.ndarray, edges: Sequence[tuple[int, int, float]], depth: int) -> np.ndarray:
    """Stutter dose s^(k) for one marker.

    ``genotype`` is the A x C count matrix; the recursion starts from s^(0) = 0
    and applies s_a <- sum over parents A of xi_A (g_A + s_A) ``depth`` times.
    """
    g = np.asarray(genotype, dtype=float)
    s = np.zeros_like(g)
    if depth < 0:
        raise ValueError("depth must be >= 0")
    for _ in range(depth):
        nxt = np.zeros_like(g)
        for child, parent, xi in edges:
            nxt[child] += xi * (g[parent] + s[parent])
        s = nxt
    return s


def expected_coverage(genotype: np.ndarray, edges, params: ModelParams, beta_m: float, depth: int) -> np.ndarray:
    g = np.asarray(genotype, dtype=float)
    if g.ndim != 2 or g.shape[1] != params.n_contributors:
        raise ValueError(f"genotype shape {g.shape} does not match {params.n_contributors} contributors")
    dose = g + stutter_contribution(g, edges, depth)
    return params.nu * beta_m * dose @ params.phi


def beta_mom(sample: MixtureSample) -> np.ndarray:
    totals = np.array([m.coverage.sum() for m in sample.markers], dtype=float)
    if totals.sum() <= 0:
        raise DegenerateInputError("sample has zero total coverage")
    return totals / totals.mean()


def beta_blend(mom, database=None, lam: float = 0.0) -> np.ndarray:
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    mom = np.asarray(mom, dtype=float)
    if lam == 0.0:
        return mom.copy()
    if database is None:
        raise ValueError("lambda > 0 requires database beta")
    database = np.asarray(database, dtype=float)
    if database.shape != mom.shape:
        raise ValueError("database beta has the wrong length")
    return lam * database + (1.0 - lam) * mom


def noise_log_pmf(y, noise_mu: float, noise_rho: float, noise_omega: float):
    """Log-pmf of the one-inflated, zero-truncated PG1 noise model (y >= 1)."""
    y = np.asarray(y)
    if np.any(y < 1):
        raise ValueError("noise coverage must be >= 1")
    if not 0.0 <= noise_omega <= 1.0:
        raise ValueError("noise_omega must lie in [0, 1]")
    # log P(Y = 0) for PG1 is -(mu/rho) log(1 + rho)
    log_p0 = -(noise_mu / noise_rho) * log1p(noise_rho)
    log_trunc = pg1_log_pmf(y, noise_mu, noise_rho) - np.log(-np.expm1(log_p0))
    with np.errstate(divide="ignore"):
        parts = np.stack(np.broadcast_arrays(
            np.where(y == 1, np.log(noise_omega), -np.inf),
            np.log1p(-noise_omega) + log_trunc,
        ))
    out = logsumexp(parts, axis=0)
    return out[()] if np.ndim(out) == 0 else out


def classify(sample: MixtureSample, genotypes: list[np.ndarray], graph: StutterGraph) -> ClassifiedObservations:
    """Allele set = sequences with positive dose (own or stutter) from any contributor."""
    masks = []
    for m, g in zip(sample.markers, genotypes):
        g = np.asarray(g, dtype=float)
        dose = g + stutter_contribution(g, graph.marker_edges(m.name), graph.depth)
        masks.append(dose.sum(axis=1) > 0)
    return ClassifiedObservations(masks)


def allele_log_likelihood(sample, genotypes, graph, beta, params, classified=None) -> float:
    classified = classified or classify(sample, genotypes, graph)
    total = 0.0
    for mi, (m, g) in enumerate(zip(sample.markers, genotypes)):
        mask = classified.allele[mi]
        if not mask.any():
            continue
        mu = expected_coverage(g, graph.marker_edges(m.name), params, beta[mi], graph.depth)[mask]
        if np.any(mu <= 0):
            raise ValueError(f"marker {m.name}: allele-set observation with zero expectation")
        total += float(np.sum(pg1_log_pmf(m.coverage[mask], mu, params.gamma)))
    return total


def noise_log_likelihood(sample, classified, params) -> float:
    """Zero-coverage sequences outside the allele set are unobserved and skipped."""
    ys = [m.coverage[classified.noise(i)] for i, m in enumerate(sample.markers)]
    y = np.concatenate(ys) if ys else np.zeros(0, dtype=np.int64)
    y = y[y > 0]
    if len(y) == 0:
        return 0.0
    return float(np.sum(noise_log_pmf(y, params.noise_mu, params.noise_rho, params.noise_omega)))


def joint_log_likelihood(sample, genotypes, graph, beta, params, classified=None) -> float:
    classified = classified or classify(sample, genotypes, graph)
    return allele_log_likelihood(sample, genotypes, graph, beta, params, classified) + noise_log_likelihood(
        sample, classified, params
    )
