"""Fitness of encoded individuals: maximise the joint log-likelihood over the
continuous parameters for a fixed genotype combination, then add the log prior.

The allele and noise components share no parameters, so they are maximised
separately; the noise one-inflation weight is profiled out in closed form.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .coverage import MixtureSample, ModelParams, StutterGraph, stutter_contribution
from .genotypes import AlleleFrequencies, canonical, decode, prior_log_prob_encoded, slot_markers


class EstimationError(ValueError):
    pass


@dataclass
class EstimationConfig:
    max_evaluations: int = 2000
    relative_tolerance: float = 1e-6
    n_starts: int = 3
    nu_bounds: tuple[float, float] = (1e-3, 1e8)
    gamma_bounds: tuple[float, float] = (1e-6, 1e4)
    noise_mu_bounds: tuple[float, float] = (1e-3, 1e6)
    noise_rho_bounds: tuple[float, float] = (1e-6, 1e4)
    omega_max: float = 1.0 - 1e-9

    def __post_init__(self):
        if self.relative_tolerance <= 0:
            raise ValueError("relative_tolerance must be > 0")
        if self.max_evaluations < 10 or self.n_starts < 1:
            raise ValueError("need max_evaluations >= 10 and n_starts >= 1")
        for name in ("nu_bounds", "gamma_bounds", "noise_mu_bounds", "noise_rho_bounds"):
            lo, hi = getattr(self, name)
            if not 0 < lo < hi < np.inf:
                raise ValueError(f"{name} must satisfy 0 < lo < hi < inf")
        if not 0.0 < self.omega_max < 1.0:
            raise ValueError("omega_max must lie in (0, 1)")


@dataclass
class FitnessValue:
    log_likelihood: float
    log_prior: float
    fitness: float
    theta: ModelParams
    converged: bool = True
    n_evaluations: int = 0


def theta_to_params(theta: np.ndarray, n_contributors: int) -> ModelParams:
    c = n_contributors
    phi = np.asarray(theta[2:2 + c], dtype=float)
    return ModelParams(
        nu=float(theta[0]), gamma=float(theta[1]), phi=phi / phi.sum(),
        noise_mu=float(theta[2 + c]), noise_rho=float(theta[3 + c]), noise_omega=float(theta[4 + c]),
    )


def params_to_theta(params: ModelParams) -> np.ndarray:
    return np.concatenate([[params.nu, params.gamma], params.phi,
                           [params.noise_mu, params.noise_rho, params.noise_omega]]).astype(float)


class FitnessContext:
    """Everything needed to score encoded individuals for one sample and hypothesis.

    Fitness values are memoised on the canonical (pair-sorted) byte form of the
    individual. Every evaluation is a cold start from moment heuristics, so
    F(p) is a pure function of the genotype and the cache content never
    depends on evaluation order or threading.
    """

    def __init__(
        self,
        sample: MixtureSample,
        graph: StutterGraph,
        beta,
        n_unknown: int,
        known: list[np.ndarray] | None = None,
        freqs: AlleleFrequencies | None = None,
        config: EstimationConfig | None = None,
        use_prior: bool = True,
    ):
        if n_unknown < 1:
            raise ValueError("need at least one unknown contributor")
        self.sample = sample
        self.graph = graph
        self.config = config or EstimationConfig()
        self.n_unknown = n_unknown
        self.n_markers = sample.n_markers
        self.marker_sizes = sample.marker_sizes
        self.offsets = sample.offsets
        self.y = sample.flat_coverage.astype(float)
        self.beta = np.asarray(beta, dtype=float)
        if self.beta.shape != (self.n_markers,):
            raise ValueError("beta must have one entry per marker")
        self.beta_flat = np.repeat(self.beta, self.marker_sizes)
        n = int(self.offsets[-1])

        if known is None:
            known = [np.zeros((a, 0), dtype=np.int64) for a in self.marker_sizes]
        self.known = [np.asarray(g, dtype=np.int64) for g in known]
        self.n_known = self.known[0].shape[1] if self.known else 0
        for m, g in enumerate(self.known):
            if g.shape != (self.marker_sizes[m], self.n_known):
                raise ValueError(f"known genotype for marker {m} has shape {g.shape}")
            if np.any(g.sum(axis=0) != 2):
                raise ValueError(f"known genotype for marker {m}: every column must sum to 2")
        self.n_contributors = self.n_known + n_unknown

        # known dose is genotype-independent: g_k plus its stutter chain
        kd = np.zeros((n, self.n_known))
        for m, mk in enumerate(sample.markers):
            lo, hi = self.offsets[m], self.offsets[m + 1]
            g = self.known[m].astype(float)
            kd[lo:hi] = g + stutter_contribution(g, graph.marker_edges(mk.name), graph.depth)
        self.known_dose = kd
        self.known_counts = np.concatenate([g.sum(axis=1) for g in self.known]).astype(np.int64)

        children = [[] for _ in range(n)]
        for m, mk in enumerate(sample.markers):
            lo = self.offsets[m]
            for child, parent, xi in graph.marker_edges(mk.name):
                if not (0 <= child < mk.n_sequences and 0 <= parent < mk.n_sequences):
                    raise ValueError(f"marker {mk.name}: stutter edge ({child}, {parent}) out of range")
                children[lo + child].append((lo + parent, xi))
        self.edge_ptr = np.concatenate([[0], np.cumsum([len(c) for c in children])]).astype(np.int64)
        self.edge_parent = np.array([p for c in children for p, _ in c], dtype=np.int64)
        self.edge_xi = np.array([x for c in children for _, x in c], dtype=float)

        self.freqs = freqs
        self.use_prior = use_prior and freqs is not None
        if self.use_prior:
            self.freq_flat, _ = freqs.packed()
            if len(self.freq_flat) != n:
                raise ValueError("allele frequencies do not match the sample's sequences")

        cfg = self.config
        self._a_lo = np.log([cfg.nu_bounds[0], cfg.gamma_bounds[0]])
        self._a_hi = np.log([cfg.nu_bounds[1], cfg.gamma_bounds[1]])
        self._n_lo = np.log([cfg.noise_mu_bounds[0], cfg.noise_rho_bounds[0]])
        self._n_hi = np.log([cfg.noise_mu_bounds[1], cfg.noise_rho_bounds[1]])
        self.slot_marker = slot_markers(self.n_markers, n_unknown)
        self.slot_sizes = self.marker_sizes[self.slot_marker]
        self.slot_offsets = self.offsets[self.slot_marker]

        self._cache: dict[bytes, FitnessValue] = {}
        self._lock = threading.Lock()
        self.n_optimizer_evaluations = 0
        self.n_fits = 0

    @property
    def length(self) -> int:
        return 2 * self.n_unknown * self.n_markers

    def _check(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.int64)
        if p.shape != (self.length,):
            raise ValueError(f"individual must have length {self.length}")
        if np.any(p < 0) or np.any(p >= self.slot_sizes):
            raise ValueError("individual has an out-of-range allele index")
        return p

    def log_prior(self, p) -> float:
        if not self.use_prior:
            return 0.0
        return float(prior_log_prob_encoded(p, self.n_markers, self.known_counts, self.freq_flat,
                                            self.offsets, self.freqs.theta))

    def estimate(self, p, init: ModelParams | None = None):
        """Maximise the joint log-likelihood for individual ``p``.

        Returns (log_likelihood, ModelParams, converged, n_evaluations).
        """
        p = self._check(p)
        cfg = self.config
        init_vec = np.zeros(0) if init is None else params_to_theta(init)
        all_, noise_ll, theta, evals, conv, na = K.evaluate(
            p, self.y, self.n_markers, self.offsets, self.known_dose, self.edge_ptr, self.edge_parent,
            self.edge_xi, self.graph.depth, self.beta_flat, self._a_lo, self._a_hi, self._n_lo, self._n_hi,
            cfg.omega_max, cfg.relative_tolerance, cfg.max_evaluations, cfg.n_starts, init_vec,
        )
        if na == 0:
            raise EstimationError("empty allele set")
        with self._lock:
            self.n_optimizer_evaluations += int(evals)
            self.n_fits += 1
        return float(all_ + noise_ll), theta_to_params(theta, self.n_contributors), bool(conv), int(evals)

    def fitness(self, p) -> FitnessValue:
        key = canonical(self._check(p)).tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        ll, params, conv, evals = self.estimate(np.frombuffer(key, dtype=np.int64))
        lp = self.log_prior(np.frombuffer(key, dtype=np.int64))
        value = FitnessValue(ll, lp, ll + lp, params, conv, evals)
        # setdefault keeps the first insert if two threads raced on the same key
        return self._cache.setdefault(key, value)

    def cached(self, p) -> FitnessValue | None:
        return self._cache.get(canonical(p).tobytes())

    @property
    def cache_size(self) -> int:
        return len(self._cache)

    def residuals(self, p, params: ModelParams) -> np.ndarray:
        """Deviance residual of every sequence (flat axis) under ``p`` and ``params``."""
        return K.position_residuals(
            np.asarray(p, dtype=np.int64), params_to_theta(params), self.y, self.n_markers, self.offsets,
            self.known_dose, self.edge_ptr, self.edge_parent, self.edge_xi, self.graph.depth, self.beta_flat,
        )

    def slot_residuals(self, p, params: ModelParams) -> np.ndarray:
        p = np.asarray(p, dtype=np.int64)
        return self.residuals(p, params)[self.slot_offsets + p]

    def decode(self, p) -> list[np.ndarray]:
        return decode(p, self.marker_sizes, self.n_unknown)

    def full_genotypes(self, p) -> list[np.ndarray]:
        """Known columns followed by the decoded unknown columns, per marker."""
        unk = self.decode(p)
        return [np.hstack([k, u]) for k, u in zip(self.known, unk)]


def estimate_theta(sample, known, unknown_p, graph, beta, config=None, init=None, n_unknown=None):
    """One-shot estimation for an encoded unknown profile; see FitnessContext.estimate."""
    n_unknown = n_unknown or len(unknown_p) // (2 * sample.n_markers)
    ctx = FitnessContext(sample, graph, beta, n_unknown, known=known, config=config)
    ll, params, conv, _ = ctx.estimate(unknown_p, init=init)
    return params


def fitness(p, context: FitnessContext) -> FitnessValue:
    return context.fitness(p)
