"""Quality-based reduction of base-calling-error strings.

Unique strings observed at one marker with one length are compared against a
set of trusted strings using Phred-derived, neighbourhood-smoothed miscall
probabilities. A string whose most probable origin is another string is removed
and its coverage is added to that origin.

Notes
-----
The absorption pass is repeated until no string moves. A single pass can leave
a survivor that a second pass would absorb, because coverage weights change
once strings are merged; iterating makes the result a fixed point, so reducing
an already reduced table changes nothing.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

DEFAULT_HALF_WIDTH = 4
MAX_PHRED = 60
VALID_BASES = frozenset("ACGTN")

TRUSTED = "trusted"
TRUSTED_VARIANTS = "trusted+variants"
PAIRWISE = "pairwise"


class ReductionError(ValueError):
    pass


@dataclass
class QualityRead:
    """A unique string with its per-base Phred scores and coverage."""

    bases: str
    qualities: np.ndarray
    marker: str = ""
    coverage: int = 1
    sequence_id: str | None = None

    def __post_init__(self):
        self.bases = self.bases.upper()
        self.qualities = np.asarray(self.qualities, dtype=np.int64)
        if self.qualities.shape != (len(self.bases),):
            raise ReductionError(f"{self.label}: {len(self.bases)} bases but {self.qualities.size} qualities")
        if not set(self.bases) <= VALID_BASES:
            raise ReductionError(f"{self.label}: bases must be drawn from ACGTN")
        if np.any(self.qualities < 0) or np.any(self.qualities > MAX_PHRED):
            raise ReductionError(f"{self.label}: Phred scores must lie in [0, {MAX_PHRED}]")
        if self.coverage < 0:
            raise ReductionError(f"{self.label}: coverage must be >= 0")

    @property
    def label(self) -> str:
        return self.sequence_id or self.bases

    @property
    def length(self) -> int:
        return len(self.bases)

    @classmethod
    def from_phred_string(cls, bases: str, quality: str, offset: int = 33, **kw) -> "QualityRead":
        return cls(bases, np.frombuffer(quality.encode("ascii"), dtype=np.uint8).astype(np.int64) - offset, **kw)


@dataclass
class TrustedSet:
    """Trusted strings per marker; lookups are by (marker, length)."""

    strings: dict[str, set[str]] = field(default_factory=dict)

    def __post_init__(self):
        self.strings = {m: {s.upper() for s in v} for m, v in self.strings.items()}

    def bucket(self, marker: str, length: int) -> set[str]:
        return {s for s in self.strings.get(marker, ()) if len(s) == length}

    def __contains__(self, item) -> bool:
        marker, s = item
        return s in self.strings.get(marker, ())


@dataclass
class ReductionResult:
    reads: list[QualityRead]  # survivors, with reassigned coverage
    mapping: dict[tuple[str, str], str]  # (marker, removed bases) -> absorbing bases
    modes: dict[tuple[str, int], str]  # (marker, length) -> TRUSTED | TRUSTED_VARIANTS | PAIRWISE
    matrices: dict[tuple[str, int], np.ndarray]  # first-pass V per bucket
    total_before: int = 0
    total_after: int = 0

    @property
    def conserved(self) -> bool:
        return self.total_before == self.total_after


def phred_to_prob(q):
    """Miscall probability 10^(-q/10)."""
    q = np.asarray(q, dtype=float)
    if np.any(q < 0):
        raise ReductionError("Phred scores must be >= 0")
    out = np.power(10.0, -q / 10.0)
    return out[()] if out.ndim == 0 else out


def windowed_error_prob(probs, n: int, l: int = DEFAULT_HALF_WIDTH) -> float:
    """max over j in [n-l, n+l] (clipped) of p_j / (|j - n| + 1)."""
    p = np.asarray(probs, dtype=float)
    if not 0 <= n < len(p) or l < 0:
        raise ReductionError("need 0 <= n < len(probs) and l >= 0")
    lo, hi = max(0, n - l), min(len(p), n + l + 1)
    j = np.arange(lo, hi)
    return float(np.max(p[lo:hi] / (np.abs(j - n) + 1)))


def smoothed_probs(read: QualityRead, l: int = DEFAULT_HALF_WIDTH) -> np.ndarray:
    """pi_n for every base; ambiguous 'N' calls are certain errors."""
    p = phred_to_prob(read.qualities)
    pi = np.array([windowed_error_prob(p, n, l) for n in range(read.length)]) if read.length else p
    pi[np.frombuffer(read.bases.encode(), dtype=np.uint8) == ord("N")] = 1.0
    return pi


def prob_string_error_free(read: QualityRead, l: int = DEFAULT_HALF_WIDTH) -> float:
    return float(np.prod(1.0 - smoothed_probs(read, l)))


def _mismatch(a: str, b: str) -> np.ndarray:
    x = np.frombuffer(a.encode(), dtype=np.uint8)
    y = np.frombuffer(b.encode(), dtype=np.uint8)
    return (x != y) | (x == ord("N")) | (y == ord("N"))


def prob_variant_given_truth(read: QualityRead, truth: str, l: int = DEFAULT_HALF_WIDTH, pi=None) -> float:
    """Probability that ``read`` is ``truth`` with its differing bases miscalled."""
    if len(truth) != read.length:
        raise ReductionError(f"length mismatch: {read.length} vs {len(truth)}")
    pi = smoothed_probs(read, l) if pi is None else pi
    miss = _mismatch(read.bases, truth.upper())
    return float(np.prod(np.where(miss, pi, 1.0 - pi)))


def string_weight(coverages, j: int) -> float:
    y = np.asarray(coverages, dtype=float)
    total = y.sum()
    if total <= 0:
        raise ReductionError("string weights need a positive total coverage")
    return float(y[j] / total)


def merge_duplicates(reads: list[QualityRead]) -> list[QualityRead]:
    """Collapse identical (marker, bases) entries: coverages add, qualities take the
    position-wise median Phred (rounded half up). First-seen order is kept."""
    groups: dict[tuple[str, str], list[QualityRead]] = {}
    for r in reads:
        groups.setdefault((r.marker, r.bases), []).append(r)
    out = []
    for (marker, bases), rs in groups.items():
        if len(rs) == 1:
            out.append(rs[0])
            continue
        q = np.floor(np.median(np.stack([r.qualities for r in rs]), axis=0) + 0.5).astype(np.int64)
        sid = next((r.sequence_id for r in rs if r.sequence_id), None)
        out.append(QualityRead(bases, q, marker, sum(r.coverage for r in rs), sid))
    return out


def _build_matrix(reads, trusted_mask, allow_variants, l):
    """Rows are candidate origins, columns are strings; returns (V, mode)."""
    k = len(reads)
    pis = [smoothed_probs(r, l) for r in reads]
    cov = np.array([r.coverage for r in reads], dtype=float)
    w = cov / cov.sum() if cov.sum() > 0 else np.full(k, 1.0 / k)
    free = np.array([np.prod(1.0 - pi) for pi in pis])
    V = np.zeros((k, k))
    if trusted_mask.any():
        mode = TRUSTED_VARIANTS if allow_variants else TRUSTED
        for j in np.flatnonzero(trusted_mask):
            for i in range(k):
                if i == j:
                    V[j, i] = 1.0
                elif not trusted_mask[i]:
                    V[j, i] = prob_variant_given_truth(reads[i], reads[j].bases, pi=pis[i])
        if allow_variants:
            for j in np.flatnonzero(~trusted_mask):
                V[j, j] = w[j] * free[j]
    elif allow_variants:
        mode = TRUSTED_VARIANTS
        for j in range(k):
            V[j, j] = w[j] * free[j]
    else:
        mode = PAIRWISE
        for j in range(k):
            correct = w[j] * free[j]
            for i in range(k):
                V[j, i] = prob_variant_given_truth(reads[i], reads[j].bases, pi=pis[i]) * correct
    return V, mode


def _assign(V, reads, trusted_mask):
    """Column-wise argmax with ties toward trusted, then higher coverage, then lower index.
    A column with no positive entry keeps its string."""
    k = V.shape[0]
    cov = np.array([r.coverage for r in reads])
    target = np.arange(k)
    for i in range(k):
        col = V[:, i]
        top = col.max()
        if top <= 0:
            continue
        tied = np.flatnonzero(col == top)
        target[i] = min(tied, key=lambda j: (not trusted_mask[j], -cov[j], j))
    # resolve chains (pairwise mode) to a string that keeps itself
    for i in range(k):
        seen = [i]
        j = target[i]
        while target[j] != j and j not in seen:
            seen.append(j)
            j = target[j]
        if target[j] != j:  # a cycle: its best member survives
            cyc = seen[seen.index(j):]
            j = min(cyc, key=lambda c: (not trusted_mask[c], -cov[c], c))
            target[j] = j
        target[i] = j
    return target


def reduce_bucket(reads: list[QualityRead], trusted: set[str], allow_variants: bool = False,
                  l: int = DEFAULT_HALF_WIDTH):
    """Reduce strings of one marker and one length.

    Returns (survivors, mapping removed bases -> absorbing bases, mode, first-pass V).
    """
    if len({r.length for r in reads}) > 1:
        raise ReductionError("a bucket must hold strings of equal length")
    reads = [QualityRead(r.bases, r.qualities.copy(), r.marker, r.coverage, r.sequence_id) for r in reads]
    mapping: dict[str, str] = {}
    first = None
    mode = None
    while reads:
        mask = np.array([r.bases in trusted for r in reads])
        V, m = _build_matrix(reads, mask, allow_variants, l)
        if first is None:
            first, mode = V, m
        target = _assign(V, reads, mask)
        if np.all(target == np.arange(len(reads))):
            break
        for i, j in enumerate(target):
            if i != j:
                reads[j].coverage += reads[i].coverage
                mapping[reads[i].bases] = reads[j].bases
        reads = [r for i, r in enumerate(reads) if target[i] == i]
    # flatten chains created across passes
    for s in list(mapping):
        t = mapping[s]
        while t in mapping:
            t = mapping[t]
        mapping[s] = t
    return reads, mapping, mode, first if first is not None else np.zeros((0, 0))


def reduce(reads: list[QualityRead], trusted: TrustedSet | None = None, allow_variants: bool = False,
           l: int = DEFAULT_HALF_WIDTH) -> ReductionResult:
    """Reduce every (marker, length) bucket independently.

    Survivors keep their input order; coverage is conserved exactly.
    """
    if l < 0:
        raise ReductionError("half-width l must be >= 0")
    trusted = trusted or TrustedSet()
    reads = merge_duplicates(reads)
    buckets: dict[tuple[str, int], list[int]] = defaultdict(list)
    for i, r in enumerate(reads):
        buckets[(r.marker, r.length)].append(i)
    survivors: dict[int, QualityRead] = {}
    mapping, modes, matrices = {}, {}, {}
    for key, idx in buckets.items():
        marker, length = key
        kept, bmap, mode, V = reduce_bucket([reads[i] for i in idx], trusted.bucket(marker, length),
                                            allow_variants, l)
        modes[key], matrices[key] = mode, V
        kept_by_bases = {r.bases: r for r in kept}
        for i in idx:
            if reads[i].bases in kept_by_bases:
                survivors[i] = kept_by_bases[reads[i].bases]
        mapping.update({(marker, s): t for s, t in bmap.items()})
    out = [survivors[i] for i in sorted(survivors)]
    return ReductionResult(
        reads=out, mapping=mapping, modes=modes, matrices=matrices,
        total_before=int(sum(r.coverage for r in reads)), total_after=int(sum(r.coverage for r in out)),
    )
