"""Generative counterpart of the coverage model.

Draws contributor profiles from allele frequencies and synthesises a coverage
table with stutter chains, marker imbalance and base-call noise strings.
Ground truth is kept alongside the sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coverage import Marker, MixtureSample, StutterGraph
from .genotypes import AlleleFrequencies
from .pg import sample_pg1

BASES = "ACGT"
DNA_TO_NU = 6.0  # nu per picogram of input DNA: 500 pg -> 3000


@dataclass
class PanelMarker:
    name: str
    motif: str
    flank5: str
    flank3: str
    repeats: list[int]
    frequencies: np.ndarray

    def sequence(self, repeats: int) -> str:
        return self.flank5 + self.motif * repeats + self.flank3

    def allele_id(self, repeats: int) -> str:
        return f"{self.name}[{repeats}]"


def default_panel(n_markers: int = 10, n_alleles: int = 8, seed: int = 20190101) -> list[PanelMarker]:
    """A fixed synthetic STR panel; tetranucleotide motifs with consecutive repeat counts."""
    rng = np.random.default_rng(seed)
    panel = []
    for m in range(n_markers):
        motif = "".join(rng.choice(list(BASES), 4))
        while len(set(motif)) < 2:
            motif = "".join(rng.choice(list(BASES), 4))
        start = int(rng.integers(6, 12))
        freqs = rng.dirichlet(np.full(n_alleles, 2.0))
        panel.append(PanelMarker(
            name=f"STR{m + 1:02d}",
            motif=motif,
            flank5="".join(rng.choice(list(BASES), 6)),
            flank3="".join(rng.choice(list(BASES), 6)),
            repeats=list(range(start, start + n_alleles)),
            frequencies=freqs,
        ))
    return panel


@dataclass
class SimulationSpec:
    panel: list[PanelMarker] = field(default_factory=default_panel)
    ratio: tuple[float, ...] = (10.0, 1.0)
    nu: float = 1500.0
    gamma: float = 2.0
    xi: float = 0.05
    stutter_depth: int = 2
    beta_spread: float = 0.15
    noise_mu: float = 4.0
    noise_rho: float = 2.0
    noise_omega: float = 0.4
    noise_strings: float = 10.0
    theta_fst: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.ratio = tuple(float(r) for r in self.ratio)
        if not self.ratio or any(r <= 0 for r in self.ratio):
            raise ValueError("ratio entries must be > 0")
        if self.nu <= 0 or self.gamma <= 0:
            raise ValueError("nu and gamma must be > 0")
        if not 0 <= self.xi < 1:
            raise ValueError("xi must lie in [0, 1)")
        if not 0 <= self.noise_omega < 1:
            raise ValueError("noise_omega must lie in [0, 1)")

    @property
    def n_contributors(self) -> int:
        return len(self.ratio)

    @property
    def phi(self) -> np.ndarray:
        r = np.array(self.ratio)
        return r / r.sum()

    @staticmethod
    def nu_for_dna(picograms: float) -> float:
        return DNA_TO_NU * picograms


@dataclass
class Truth:
    profiles: list[list[tuple[str, str]]]  # contributor -> marker -> (allele id, allele id)
    phi: np.ndarray
    nu: float
    gamma: float
    beta: np.ndarray
    labels: dict[tuple[str, str], str]  # (marker, sequence id) -> allele | stutter | noise

    def genotype_matrices(self, sample: MixtureSample, contributors) -> list[np.ndarray]:
        """Count matrices (A_m x len(contributors)) in the sample's sequence order."""
        out = []
        for m, mk in enumerate(sample.markers):
            g = np.zeros((mk.n_sequences, len(contributors)), dtype=np.int64)
            for j, c in enumerate(contributors):
                for sid in self.profiles[c][m]:
                    g[mk.index(sid), j] += 1
            out.append(g)
        return out


def simulate_profiles(spec: SimulationSpec, rng: np.random.Generator) -> list[list[tuple[int, int]]]:
    """Panel-index genotypes per contributor and marker, drawn sequentially
    across contributors with the Balding-Nichols sampling formula."""
    theta = spec.theta_fst
    profiles = [[None] * len(spec.panel) for _ in range(spec.n_contributors)]
    for m, pm in enumerate(spec.panel):
        q = np.asarray(pm.frequencies, dtype=float)
        q = q / q.sum()
        counts = np.zeros(len(q))
        n = 0
        for c in range(spec.n_contributors):
            pair = []
            for _ in range(2):
                w = counts * theta + (1 - theta) * q
                a = int(rng.choice(len(q), p=w / w.sum()))
                counts[a] += 1
                n += 1
                pair.append(a)
            profiles[c][m] = tuple(sorted(pair))
    return profiles


def _one_inflated_noise(rng, mu, rho, omega, size):
    out = np.empty(size, dtype=np.int64)
    for i in range(size):
        if rng.random() < omega:
            out[i] = 1
            continue
        y = 0
        while y == 0:
            y = int(sample_pg1(rng, mu, rho))
        out[i] = y
    return out


def _substitute(rng, seq: str, n_changes: int) -> str:
    s = list(seq)
    for pos in rng.choice(len(s), size=n_changes, replace=False):
        s[pos] = rng.choice([b for b in BASES if b != s[pos]])
    return "".join(s)


def simulate_coverage(spec: SimulationSpec, profiles, rng: np.random.Generator):
    """Build the coverage table for given panel-index profiles.

    Returns (sample, graph, truth). True alleles are always listed (possibly at
    zero coverage); stutter-only and noise sequences appear only if observed.
    """
    phi = spec.phi
    beta = np.exp(rng.normal(0.0, spec.beta_spread, size=len(spec.panel)))
    markers, edges, labels = [], {}, {}
    truth_profiles = [[None] * len(spec.panel) for _ in range(spec.n_contributors)]
    for m, pm in enumerate(spec.panel):
        # expected dose per repeat count, per contributor
        dose: dict[int, np.ndarray] = {}
        carried = set()
        for c in range(spec.n_contributors):
            for a in profiles[c][m]:
                r = pm.repeats[a]
                carried.add(r)
                dose.setdefault(r, np.zeros(spec.n_contributors))[c] += 1
        own = {r: v.copy() for r, v in dose.items()}
        stutter = {}
        s_prev: dict[int, np.ndarray] = {}
        for _ in range(spec.stutter_depth):
            s_next: dict[int, np.ndarray] = {}
            for r in set(own) | set(s_prev):
                parent_total = own.get(r, 0) + s_prev.get(r, 0)
                s_next[r - 1] = s_next.get(r - 1, 0) + spec.xi * parent_total
            s_prev = s_next
        stutter = s_prev
        reps = sorted(set(own) | set(stutter))
        rows = []
        for r in reps:
            d = own.get(r, np.zeros(spec.n_contributors)) + stutter.get(r, np.zeros(spec.n_contributors))
            mu = spec.nu * beta[m] * float(d @ phi)
            y = int(sample_pg1(rng, mu, spec.gamma)) if mu > 0 else 0
            if y == 0 and r not in carried:
                continue
            rows.append((pm.allele_id(r), pm.sequence(r), float(r), y, "allele" if r in carried else "stutter"))
        existing = {seq for _, seq, _, _, _ in rows}
        n_noise = int(rng.poisson(spec.noise_strings))
        noise_y = _one_inflated_noise(rng, spec.noise_mu, spec.noise_rho, spec.noise_omega, n_noise)
        sources = [seq for _, seq, _, _, lab in rows if lab == "allele"]
        k = 0
        for y in noise_y:
            for _ in range(100):
                seq = _substitute(rng, sources[int(rng.integers(len(sources)))], int(rng.integers(1, 3)))
                if seq not in existing:
                    break
            else:
                continue
            existing.add(seq)
            rows.append((f"{pm.name}[n{k}]", seq, None, int(y), "noise"))
            k += 1
        rows.sort(key=lambda row: (row[2] is None, row[2] if row[2] is not None else 0, row[1]))
        marker = Marker(
            name=pm.name,
            sequence_ids=[r[0] for r in rows],
            coverage=np.array([r[3] for r in rows], dtype=np.int64),
            sequences=[r[1] for r in rows],
            repeat_counts=[r[2] for r in rows],
        )
        markers.append(marker)
        for sid, _, _, _, lab in rows:
            labels[(pm.name, sid)] = lab
        # parent edges: sequence with r + 1 repeats stutters onto r repeats
        index_by_rep = {r[2]: i for i, r in enumerate(rows) if r[2] is not None}
        es = [(index_by_rep[r], index_by_rep[r + 1], spec.xi) for r in index_by_rep if r + 1 in index_by_rep]
        if es:
            edges[pm.name] = sorted(es)
        for c in range(spec.n_contributors):
            a, b = profiles[c][m]
            truth_profiles[c][m] = (pm.allele_id(pm.repeats[a]), pm.allele_id(pm.repeats[b]))

    sample = MixtureSample(markers)
    graph = StutterGraph(edges, spec.stutter_depth)
    truth = Truth(truth_profiles, phi, spec.nu, spec.gamma, beta, labels)
    return sample, graph, truth


def panel_frequency_table(panel: list[PanelMarker]) -> dict[tuple[str, str], float]:
    return {
        (pm.name, pm.allele_id(r)): float(f / np.sum(pm.frequencies))
        for pm in panel for r, f in zip(pm.repeats, pm.frequencies)
    }


def simulate(spec: SimulationSpec):
    """Profiles and coverage from ``spec.seed``; returns (sample, graph, truth, freq_table)."""
    rng = np.random.default_rng(spec.seed)
    profiles = simulate_profiles(spec, rng)
    sample, graph, truth = simulate_coverage(spec, profiles, rng)
    return sample, graph, truth, panel_frequency_table(spec.panel)


def frequencies_for(sample: MixtureSample, table, theta=0.01, n_reference=1000) -> AlleleFrequencies:
    return AlleleFrequencies.from_table(sample, table, theta=theta, n_reference=n_reference)
