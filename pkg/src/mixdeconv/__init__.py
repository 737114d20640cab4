"""Deconvolution of two-person STR DNA mixtures from MPS coverage data.

Unknown contributor profiles are searched with a multiple-population
evolutionary algorithm (:mod:`mixdeconv.mea`) whose fitness is the maximised
coverage log-likelihood plus the genotype log-prior
(:mod:`mixdeconv.estimation`).
"""

__version__ = "0.1.0"
