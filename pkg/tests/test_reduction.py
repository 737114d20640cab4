"""Quality-based reduction of base-calling-error strings."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixdeconv.reduction import (
    PAIRWISE,
    TRUSTED,
    TRUSTED_VARIANTS,
    QualityRead,
    ReductionError,
    TrustedSet,
    _build_matrix,
    merge_duplicates,
    phred_to_prob,
    prob_string_error_free,
    prob_variant_given_truth,
    reduce,
    smoothed_probs,
    string_weight,
    windowed_error_prob,
)


def read(bases, q, cov=1, marker="M"):
    q = [q] * len(bases) if np.isscalar(q) else q
    return QualityRead(bases, np.array(q), marker, cov)


def oracle_pi(q, l):
    """Smoothed miscall probabilities written out base by base."""
    p = [10 ** (-x / 10) for x in q]
    out = []
    for n in range(len(p)):
        best = 0.0
        for j in range(len(p)):
            if abs(j - n) <= l:
                best = max(best, p[j] / (abs(j - n) + 1))
        out.append(best)
    return out


def oracle_pairwise(strings, quals, covs, l):
    """V[j][i] = P(s_i | s_j) * w_j * P(s_j correct), every string a candidate."""
    total = sum(covs)
    pis = [oracle_pi(q, l) for q in quals]
    k = len(strings)
    V = [[0.0] * k for _ in range(k)]
    for j in range(k):
        correct = math.prod(1 - x for x in pis[j]) * covs[j] / total
        for i in range(k):
            v = 1.0
            for a, b, x in zip(strings[i], strings[j], pis[i]):
                v *= x if a != b else 1 - x
            V[j][i] = v * correct
    return np.array(V)


class TestProbabilities:
    @pytest.mark.parametrize("q,p", [(10, 0.1), (30, 0.001), (0, 1.0)])
    def test_phred(self, q, p):
        assert phred_to_prob(q) == pytest.approx(p, rel=1e-15)

    def test_window(self):
        p = [0.5, 0.001, 0.001]
        assert windowed_error_prob(p, 2, 0) == 0.001
        assert windowed_error_prob(p, 2, 2) == pytest.approx(0.5 / 3)
        assert windowed_error_prob(p, 2, 2) == pytest.approx(0.1667, abs=1e-4)
        assert all(windowed_error_prob([0.02] * 7, n, 3) == 0.02 for n in range(7))

    def test_window_clipped(self):
        assert windowed_error_prob([0.2, 0.01], 0, 10) == 0.2
        with pytest.raises(ReductionError):
            windowed_error_prob([0.1], 1, 0)

    def test_error_free(self):
        assert prob_string_error_free(read("ACGTACGTAC", 60)) == pytest.approx(1 - 10 * 1e-6, abs=1e-10)
        assert prob_string_error_free(read("ACG", [10, 20, 20]), l=0) == pytest.approx(0.9 * 0.99 * 0.99)
        assert prob_string_error_free(read("ACG", [10, 20, 20]), l=0) == pytest.approx(0.882, abs=1e-3)
        assert prob_string_error_free(read("ACG", [0, 40, 40])) == 0.0

    def test_n_is_certain_error(self):
        pi = smoothed_probs(read("ANGT", 40))
        assert pi[1] == 1.0
        assert prob_string_error_free(read("ANGT", 40)) == 0.0
        # the N position is a certain miscall, contributing pi = 1 against any truth
        rest = np.prod(1 - pi[[0, 2, 3]])
        assert prob_variant_given_truth(read("ANGT", 40), "ANGT") == pytest.approx(rest)
        assert prob_variant_given_truth(read("ANGT", 40), "ACGT") == pytest.approx(rest)

    def test_variant_given_truth(self):
        r = read("ACGTACGT", [60, 60, 60, 10, 60, 60, 60, 60])
        assert prob_variant_given_truth(r, "ACGTACGT", l=0) == pytest.approx(prob_string_error_free(r, l=0))
        v = prob_variant_given_truth(r, "ACGAACGT", l=0)
        assert v == pytest.approx(0.1 * (1 - 1e-6) ** 7, rel=1e-12)
        assert prob_variant_given_truth(read("AC", 60), "AG", l=0) == pytest.approx(1e-6 * (1 - 1e-6))
        with pytest.raises(ReductionError):
            prob_variant_given_truth(r, "ACG")

    def test_impossible_miscall(self):
        # pi = 0 cannot be reached by Phred scores; pass it directly
        r = read("AC", 60)
        assert prob_variant_given_truth(r, "AG", pi=np.array([0.0, 0.0])) == 0.0

    def test_matches_oracle(self):
        q = [30, 12, 38, 40, 7, 33, 25]
        assert np.allclose(smoothed_probs(read("ACGTACG", q), 2), oracle_pi(q, 2), rtol=1e-14)

    def test_weights(self):
        assert string_weight([10, 30], 1) == 0.75
        assert string_weight([7], 0) == 1.0
        assert all(string_weight([4] * 5, j) == 0.2 for j in range(5))
        with pytest.raises(ReductionError):
            string_weight([0, 0], 0)

    @settings(max_examples=100, deadline=None)
    @given(q=st.lists(st.integers(0, 59), min_size=1, max_size=30), data=st.data())
    def test_quality_monotone(self, q, data):
        bump = data.draw(st.lists(st.integers(0, 1), min_size=len(q), max_size=len(q)))
        up = [a + b for a, b in zip(q, bump)]
        bases = "A" * len(q)
        assert prob_string_error_free(read(bases, up)) >= prob_string_error_free(read(bases, q))


class TestQualityRead:
    def test_phred_string(self):
        r = QualityRead.from_phred_string("ACGT", "I5+!")
        assert list(r.qualities) == [40, 20, 10, 0]

    @pytest.mark.parametrize("bases,q", [("ACGX", [30] * 4), ("ACG", [30] * 4), ("ACG", [30, 61, 30]),
                                         ("ACG", [30, -1, 30])])
    def test_validation(self, bases, q):
        with pytest.raises(ReductionError):
            QualityRead(bases, np.array(q))

    def test_median_merge(self):
        rs = [read("ACGT", [10, 20, 30, 40], 2), read("ACGT", [20, 20, 31, 40], 3), read("ACGA", 30, 1)]
        merged = merge_duplicates(rs)
        assert len(merged) == 2
        assert merged[0].coverage == 5
        # median of two values, rounded half up
        assert list(merged[0].qualities) == [15, 20, 31, 40]


class TestReduce:
    def test_all_trusted_is_identity(self):
        rs = [read("ACGTAC", 30, 10), read("ACGTAA", 30, 4), read("TCGTAC", 30, 2)]
        res = reduce(rs, TrustedSet({"M": {r.bases for r in rs}}))
        assert [(r.bases, r.coverage) for r in res.reads] == [(r.bases, r.coverage) for r in rs]
        assert res.mapping == {}
        assert res.modes[("M", 6)] == TRUSTED

    def test_satellites_absorbed(self):
        truth = "ACGTACGTAC"
        rs = [read(truth, 38, 200),
              read("ACGTTCGTAC", [38, 38, 38, 38, 9, 38, 38, 38, 38, 38], 4),
              read("ACGTACGTAG", [38] * 9 + [11], 3)]
        res = reduce(rs, TrustedSet({"M": {truth}}))
        assert len(res.reads) == 1
        assert res.reads[0].bases == truth and res.reads[0].coverage == 207
        assert res.mapping == {("M", "ACGTTCGTAC"): truth, ("M", "ACGTACGTAG"): truth}
        assert res.conserved

    def test_pristine_variant_survives(self):
        truth = "ACGTACGTAC"
        novel = "ACGTTCGTAC"
        rs = [read(truth, 38, 200), read(novel, 60, 150), read("ACGTACGTAG", [38] * 9 + [8], 2)]
        res = reduce(rs, TrustedSet({"M": {truth}}), allow_variants=True)
        assert {r.bases for r in res.reads} == {truth, novel}
        assert res.modes[("M", 10)] == TRUSTED_VARIANTS
        # without variants the novel string is pulled onto the trusted one
        res2 = reduce(rs, TrustedSet({"M": {truth}}))
        assert [r.bases for r in res2.reads] == [truth]

    def test_variant_block_diagonal(self):
        rs = [read("AAAA", 40, 30), read("AAAT", 40, 10)]
        V, mode = _build_matrix(rs, np.array([True, False]), True, 4)
        assert V[1, 1] == pytest.approx(0.25 * prob_string_error_free(rs[1]))
        assert V[1, 0] == 0.0 and V[0, 0] == 1.0
        assert mode == TRUSTED_VARIANTS

    def test_pairwise_hand_fixture(self):
        # five strings, no trusted set: the full pairwise matrix decides
        strings = ["ACGTAC", "ACGTAT", "ACCTAC", "TCGTAC", "GGGTAC"]
        quals = [[35, 36, 37, 38, 36, 35], [35, 35, 35, 35, 30, 6], [30, 30, 8, 30, 30, 30],
                 [12, 30, 30, 30, 30, 30], [30, 30, 30, 35, 35, 35]]
        covs = [120, 5, 4, 3, 40]
        rs = [QualityRead(s, np.array(q), "M", c) for s, q, c in zip(strings, quals, covs)]
        V, mode = _build_matrix(rs, np.zeros(5, dtype=bool), False, 2)
        assert mode == PAIRWISE
        oracle = oracle_pairwise(strings, quals, covs, 2)
        assert np.allclose(V, oracle, rtol=1e-12, atol=0)
        assert np.all((V >= 0) & (V <= 1))
        res = reduce(rs, None, l=2)
        expected_target = oracle.argmax(axis=0)
        assert list(expected_target) == [0, 0, 0, 0, 4]
        assert [(r.bases, r.coverage) for r in res.reads] == [("ACGTAC", 132), ("GGGTAC", 40)]
        assert res.modes[("M", 6)] == PAIRWISE

    def test_buckets_are_independent(self):
        rs = [read("ACGT", 30, 10, "A"), read("ACGA", [30, 30, 30, 5], 1, "A"),
              read("ACGA", 30, 10, "B"), read("ACGTT", 30, 2, "A")]
        res = reduce(rs, TrustedSet({"A": {"ACGT"}, "B": {"ACGA"}}))
        got = {(r.marker, r.bases): r.coverage for r in res.reads}
        assert got == {("A", "ACGT"): 11, ("B", "ACGA"): 10, ("A", "ACGTT"): 2}
        assert set(res.modes) == {("A", 4), ("B", 4), ("A", 5)}

    def test_tie_prefers_higher_coverage(self):
        # identical qualities; the unknown string is equidistant from both trusted strings
        rs = [read("AAAA", 20, 5), read("CAAA", 20, 9), read("ACAA", 20, 1)]
        res = reduce(rs, TrustedSet({"M": {"AAAA", "CAAA"}}), l=0)
        # "ACAA" differs from AAAA at one base and from CAAA at two, so AAAA wins despite coverage
        assert res.mapping[("M", "ACAA")] == "AAAA"
        rs = [read("AAAA", 20, 5), read("AATA", 20, 9), read("AAGA", 20, 1)]
        res = reduce(rs, TrustedSet({"M": {"AAAA", "AATA"}}), l=0)
        assert res.mapping[("M", "AAGA")] == "AATA"

    def test_negative_half_width(self):
        with pytest.raises(ReductionError):
            reduce([read("AC", 30)], l=-1)


bucket_strategy = st.lists(
    st.tuples(st.text("ACGT", min_size=6, max_size=6), st.lists(st.integers(2, 40), min_size=6, max_size=6),
              st.integers(0, 50)),
    min_size=1, max_size=8,
)


class TestReduceProperties:
    @settings(max_examples=150, deadline=None)
    @given(items=bucket_strategy, n_trusted=st.integers(0, 3), variants=st.booleans(), l=st.integers(0, 4))
    def test_conservation_and_idempotence(self, items, n_trusted, variants, l):
        rs = [QualityRead(b, np.array(q), "M", c) for b, q, c in items]
        if sum(c for _, _, c in items) == 0:
            rs[0].coverage = 1
        trusted = TrustedSet({"M": {b for b, _, _ in items[:n_trusted]}})
        res = reduce(rs, trusted, variants, l)
        assert res.total_before == sum(r.coverage for r in rs)
        assert res.conserved
        again = reduce(res.reads, trusted, variants, l)
        assert [(r.bases, r.coverage) for r in again.reads] == [(r.bases, r.coverage) for r in res.reads]
        assert again.mapping == {}
        for V in res.matrices.values():
            assert np.all((V >= 0) & (V <= 1))
        # every removed string points at a survivor
        kept = {r.bases for r in res.reads}
        assert all(t in kept for t in res.mapping.values())
