"""Agreement between an estimated and a true set of unknown profiles."""

from __future__ import annotations

import itertools
from collections import Counter


def _shared(a, b) -> int:
    return sum((Counter(a) & Counter(b)).values())


def profile_agreement(estimated, truth) -> tuple[float, float]:
    """(identical-allele fraction, identical-marker fraction).

    ``estimated`` and ``truth`` are indexed [contributor][marker] -> allele pair.
    Contributors are re-paired independently on every marker to maximise shared
    alleles, since markers are modelled independently and labels can swap.
    """
    n_u = len(truth)
    if len(estimated) != n_u:
        raise ValueError("estimated and true profiles need the same number of contributors")
    n_m = len(truth[0]) if n_u else 0
    alleles = markers = 0
    for m in range(n_m):
        best = (-1, -1)
        for perm in itertools.permutations(range(n_u)):
            shared = [_shared(estimated[perm[u]][m], truth[u][m]) for u in range(n_u)]
            best = max(best, (sum(shared), sum(s == 2 for s in shared)))
        alleles += best[0]
        markers += best[1]
    return alleles / (2 * n_u * n_m), markers / (n_u * n_m)
