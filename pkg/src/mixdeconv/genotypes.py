"""Genotype matrices, the compact slot encoding of unknown contributors, and the
genotype prior.

An encoded individual stores two allele indices per (contributor, marker),
contributor-major::

    [u0 m0 a, u0 m0 b, u0 m1 a, u0 m1 b, ..., u1 m0 a, ...]

Indices are 0-based positions in each marker's observed-sequence list.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from numba import njit


class GenotypeError(ValueError):
    pass


def slot_markers(n_markers: int, n_unknown: int) -> np.ndarray:
    """Marker index of every slot of an encoded individual."""
    return np.tile(np.repeat(np.arange(n_markers), 2), n_unknown)


def encode(genotypes: list[np.ndarray]) -> np.ndarray:
    """Encode per-marker ``A_m x U`` count matrices as a slot array."""
    if not genotypes:
        return np.zeros(0, dtype=np.int64)
    n_unknown = np.asarray(genotypes[0]).shape[1]
    p = np.empty(2 * n_unknown * len(genotypes), dtype=np.int64)
    j = 0
    for u in range(n_unknown):
        for m, g in enumerate(genotypes):
            col = np.asarray(g)[:, u]
            if col.sum() != 2 or np.any(col < 0) or np.any(col > 2):
                raise GenotypeError(f"marker {m}, contributor {u}: column must hold two allele copies")
            idx = np.repeat(np.arange(len(col)), col)
            p[j], p[j + 1] = idx[0], idx[1]
            j += 2
    return p


def decode(p, marker_sizes, n_unknown: int | None = None) -> list[np.ndarray]:
    p = np.asarray(p, dtype=np.int64)
    sizes = np.asarray(marker_sizes, dtype=np.int64)
    n_markers = len(sizes)
    if n_unknown is None:
        n_unknown = len(p) // (2 * n_markers) if n_markers else 0
    if len(p) != 2 * n_unknown * n_markers:
        raise GenotypeError(f"encoded individual has length {len(p)}, expected {2 * n_unknown * n_markers}")
    out = [np.zeros((a, n_unknown), dtype=np.int64) for a in sizes]
    for j, a in enumerate(p):
        u, m = divmod(j // 2, n_markers)
        if not 0 <= a < sizes[m]:
            raise GenotypeError(f"slot {j}: index {a} out of range for marker {m} with {sizes[m]} sequences")
        out[m][a, u] += 1
    return out


def canonical(p) -> np.ndarray:
    """Sort the two slots of every (contributor, marker) pair."""
    q = np.asarray(p, dtype=np.int64).reshape(-1, 2)
    return np.sort(q, axis=1).reshape(-1)


def genotype_count_single_marker(n_alleles: int) -> int:
    if n_alleles < 1:
        raise ValueError("a marker needs at least one sequence")
    return n_alleles * (n_alleles + 1) // 2


def space_size(marker_sizes, n_unknown: int) -> int:
    """Number of unordered combinations of ``n_unknown`` genotype profiles."""
    if n_unknown < 1:
        raise ValueError("n_unknown must be >= 1")
    single = math.prod(genotype_count_single_marker(int(a)) for a in marker_sizes)
    return math.comb(single + n_unknown - 1, n_unknown)


def marker_genotypes(n_alleles: int) -> list[tuple[int, int]]:
    return list(itertools.combinations_with_replacement(range(n_alleles), 2))


def enumerate_individuals(marker_sizes, n_unknown: int = 1):
    """Yield every encoded individual (one per unordered profile combination)."""
    per_marker = [marker_genotypes(int(a)) for a in marker_sizes]
    profiles = list(itertools.product(*per_marker))
    for combo in itertools.combinations_with_replacement(range(len(profiles)), n_unknown):
        yield np.array([a for c in combo for pair in profiles[c] for a in pair], dtype=np.int64)


@dataclass
class AlleleFrequencies:
    """Population frequencies aligned with each marker's observed sequences."""

    freqs: list[np.ndarray]
    theta: float = 0.01

    def __post_init__(self):
        self.freqs = [np.asarray(f, dtype=float) for f in self.freqs]
        if not 0.0 <= self.theta < 1.0:
            raise ValueError("theta must lie in [0, 1)")
        for i, f in enumerate(self.freqs):
            if np.any(f < 0) or f.sum() > 1.0 + 1e-9:
                raise ValueError(f"marker {i}: frequencies must be >= 0 and sum to <= 1")

    @classmethod
    def from_table(cls, sample, table: dict[tuple[str, str], float], theta=0.01, n_reference=1000,
                   floor: float | None = None):
        """Look up ``table[(marker, sequence_id)]``; absent sequences get ``floor``
        (default 5 / (2 n_reference)). Markers whose total exceeds one after
        flooring are rescaled to sum to one."""
        floor = 5.0 / (2.0 * n_reference) if floor is None else floor
        freqs = []
        for m in sample.markers:
            f = np.array([table.get((m.name, s), floor) for s in m.sequence_ids], dtype=float)
            if f.sum() > 1.0:
                f /= f.sum()
            freqs.append(f)
        return cls(freqs, theta)

    @classmethod
    def uniform(cls, marker_sizes, theta=0.0):
        return cls([np.full(int(a), 1.0 / a) for a in marker_sizes], theta)

    def packed(self):
        offsets = np.concatenate([[0], np.cumsum([len(f) for f in self.freqs])]).astype(np.int64)
        return np.concatenate(self.freqs), offsets


def _draw_log_prob(a, counts, n, q, theta):
    num = counts.get(a, 0) * theta + (1.0 - theta) * q[a]
    if num <= 0:
        return -math.inf
    return math.log(num) - math.log1p((n - 1) * theta)


def prior_log_prob(unknown: list[np.ndarray], known: list[np.ndarray] | None, freqs: AlleleFrequencies) -> float:
    """log P(g | g_k) under sequential Balding-Nichols sampling.

    Alleles of the known contributors are conditioned on; each unknown allele is
    drawn with probability (m_a theta + (1 - theta) q_a) / (1 + (n - 1) theta),
    where m_a counts earlier draws of a and n counts all earlier draws.
    Heterozygotes get a factor 2.
    """
    theta = freqs.theta
    total = 0.0
    for m, g in enumerate(unknown):
        q = freqs.freqs[m]
        counts: dict[int, int] = {}
        n = 0
        if known is not None and known[m].shape[1] > 0:
            for a, c in enumerate(known[m].sum(axis=1)):
                if c:
                    counts[a] = int(c)
                    n += int(c)
        g = np.asarray(g)
        for u in range(g.shape[1]):
            alleles = np.repeat(np.arange(g.shape[0]), g[:, u])
            if len(alleles) != 2:
                raise GenotypeError(f"marker {m}, contributor {u}: column must hold two allele copies")
            for a in alleles:
                total += _draw_log_prob(int(a), counts, n, q, theta)
                counts[int(a)] = counts.get(int(a), 0) + 1
                n += 1
            if alleles[0] != alleles[1]:
                total += math.log(2.0)
    return total


@njit(cache=True, nogil=True)
def prior_log_prob_encoded(p, n_markers, known_counts, freq_flat, offsets, theta):
    """Compiled prior for an encoded individual.

    ``known_counts`` holds the summed allele counts of all known contributors on
    the flat sequence axis.
    """
    n_unknown = len(p) // (2 * n_markers)
    total = 0.0
    for m in range(n_markers):
        lo = offsets[m]
        hi = offsets[m + 1]
        n = 0
        for i in range(lo, hi):
            n += known_counts[i]
        # earlier unknown draws on this marker, at most 2U of them
        drawn = np.empty(2 * n_unknown, dtype=np.int64)
        nd = 0
        for u in range(n_unknown):
            j = 2 * (u * n_markers + m)
            for s in range(2):
                a = p[j + s]
                ma = known_counts[lo + a]
                for t in range(nd):
                    if drawn[t] == a:
                        ma += 1
                num = ma * theta + (1.0 - theta) * freq_flat[lo + a]
                if num <= 0.0:
                    return -np.inf
                total += np.log(num) - np.log1p((n - 1) * theta)
                drawn[nd] = a
                nd += 1
                n += 1
            if p[j] != p[j + 1]:
                total += np.log(2.0)
    return total
