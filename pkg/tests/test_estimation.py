"""Continuous-parameter estimation and the memoised fitness."""

import threading

import numpy as np
import pytest

from mixdeconv.coverage import Marker, MixtureSample, ModelParams, beta_mom, joint_log_likelihood
from mixdeconv.estimation import EstimationConfig, FitnessContext, estimate_theta, params_to_theta, theta_to_params
from mixdeconv.genotypes import encode
from mixdeconv.simulator import SimulationSpec, frequencies_for, simulate


@pytest.fixture(scope="module")
def single():
    spec = SimulationSpec(ratio=(1.0,), nu=1000.0, gamma=2.0, seed=3)
    sample, graph, truth, table = simulate(spec)
    return sample, graph, truth, table


@pytest.fixture(scope="module")
def two():
    spec = SimulationSpec(ratio=(9.0, 1.0), nu=3000.0, gamma=2.0, seed=8)
    return simulate(spec)


def context(sim, n_unknown, known_idx=(), prior=True, config=None):
    sample, graph, truth, table = sim
    known = truth.genotype_matrices(sample, list(known_idx)) if known_idx else None
    freqs = frequencies_for(sample, table) if prior else None
    return FitnessContext(sample, graph, beta_mom(sample), n_unknown, known=known, freqs=freqs, config=config)


def true_p(sim, contributors):
    sample, _, truth, _ = sim
    return encode(truth.genotype_matrices(sample, contributors))


class TestThetaVector:
    def test_round_trip(self):
        p = ModelParams(nu=100.0, gamma=2.0, phi=np.array([0.7, 0.3]), noise_mu=3.0, noise_rho=1.5,
                        noise_omega=0.2)
        q = theta_to_params(params_to_theta(p), 2)
        assert q.nu == p.nu and q.noise_omega == p.noise_omega
        assert np.allclose(q.phi, p.phi)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EstimationConfig(relative_tolerance=0.0)
        with pytest.raises(ValueError):
            EstimationConfig(nu_bounds=(10.0, 1.0))
        with pytest.raises(ValueError):
            EstimationConfig(omega_max=1.0)


class TestEstimateTheta:
    def test_nu_recovered_single_contributor(self, single):
        sample, graph, _, _ = single
        params = estimate_theta(sample, None, true_p(single, [0]), graph, beta_mom(sample))
        assert sample.n_markers == 10
        assert abs(params.nu - 1000.0) / 1000.0 < 0.10

    def test_mixture_proportion_recovered(self, two):
        ctx = context(two, 2, prior=False)
        _, params, _, _ = ctx.estimate(true_p(two, [0, 1]))
        # either column order may carry the major share
        assert abs(params.phi.max() - 0.9) < 0.05

    def test_simplex_exact(self, two):
        ctx = context(two, 1, known_idx=(0,))
        _, params, _, _ = ctx.estimate(true_p(two, [1]))
        assert abs(params.phi.sum() - 1.0) < 1e-12

    def test_likelihood_matches_reference(self, two):
        sample, graph, truth, _ = two
        ctx = context(two, 1, known_idx=(0,))
        p = true_p(two, [1])
        ll, params, _, _ = ctx.estimate(p)
        ref = joint_log_likelihood(sample, ctx.full_genotypes(p), graph, ctx.beta, params)
        assert ll == pytest.approx(ref, rel=1e-10)

    def test_maximiser_dominates_random_draws(self, two):
        sample, graph, truth, _ = two
        ctx = context(two, 1, known_idx=(0,))
        p = true_p(two, [1])
        ll, params, _, _ = ctx.estimate(p)
        g = ctx.full_genotypes(p)
        rng = np.random.default_rng(1)
        for _ in range(100):
            draw = ModelParams(
                nu=float(np.exp(rng.uniform(np.log(50), np.log(2e4)))),
                gamma=float(np.exp(rng.uniform(np.log(0.05), np.log(50)))),
                phi=rng.dirichlet([1.0, 1.0]),
                noise_mu=float(rng.uniform(0.1, 50)),
                noise_rho=float(np.exp(rng.uniform(np.log(0.05), np.log(20)))),
                noise_omega=float(rng.uniform(0, 0.99)),
            )
            assert joint_log_likelihood(sample, g, graph, ctx.beta, draw) <= ll + 1e-9

    def test_deterministic(self, two):
        a = context(two, 1, known_idx=(0,)).estimate(true_p(two, [1]))
        b = context(two, 1, known_idx=(0,)).estimate(true_p(two, [1]))
        assert a[0] == b[0]
        assert np.array_equal(params_to_theta(a[1]), params_to_theta(b[1]))

    def test_warm_start_never_worse(self, two):
        sample, graph, _, _ = two
        ctx = context(two, 1, known_idx=(0,))
        p = true_p(two, [1])
        rng = np.random.default_rng(5)
        for _ in range(10):
            init = ModelParams(nu=float(rng.uniform(500, 8000)), gamma=float(rng.uniform(0.5, 5)),
                               phi=rng.dirichlet([1.0, 1.0]), noise_mu=float(rng.uniform(1, 10)),
                               noise_rho=float(rng.uniform(0.5, 4)), noise_omega=float(rng.uniform(0, 0.8)))
            start = joint_log_likelihood(sample, ctx.full_genotypes(p), graph, ctx.beta, init)
            ll, _, _, _ = ctx.estimate(p, init=init)
            assert ll >= start - 1e-9


class TestFitness:
    def test_is_likelihood_plus_prior(self, two):
        ctx = context(two, 1, known_idx=(0,))
        f = ctx.fitness(true_p(two, [1]))
        assert f.fitness == f.log_likelihood + f.log_prior
        assert f.log_prior < 0

    def test_swapped_slots(self, two):
        ctx = context(two, 1, known_idx=(0,))
        p = true_p(two, [1])
        q = p.reshape(-1, 2)[:, ::-1].reshape(-1).copy()
        assert ctx.fitness(p).fitness == ctx.fitness(q).fitness
        assert ctx.cache_size == 1

    def test_cache_hit_costs_nothing(self, two):
        ctx = context(two, 1, known_idx=(0,))
        p = true_p(two, [1])
        first = ctx.fitness(p)
        evals = ctx.n_optimizer_evaluations
        second = ctx.fitness(p.copy())
        assert ctx.n_optimizer_evaluations == evals
        assert second is first

    def test_order_independent(self, two):
        rng = np.random.default_rng(2)
        a, b = context(two, 1, known_idx=(0,)), context(two, 1, known_idx=(0,))
        inds = [rng.integers(0, a.slot_sizes) for _ in range(8)]
        fa = [a.fitness(p).fitness for p in inds]
        fb = [b.fitness(p).fitness for p in reversed(inds)][::-1]
        assert fa == fb

    def test_concurrent_inserts_agree(self, two):
        ctx = context(two, 1, known_idx=(0,))
        p = true_p(two, [1])
        out = []
        threads = [threading.Thread(target=lambda: out.append(ctx.fitness(p))) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len({v.fitness for v in out}) == 1
        assert ctx.cache_size == 1

    def test_true_beats_zero_coverage_substitute(self, single):
        sample, graph, truth, table = single
        # append a zero-coverage sequence to the first marker
        m0 = sample.markers[0]
        extra = Marker(m0.name, m0.sequence_ids + ["ghost"], np.append(m0.coverage, 0),
                       sequences=list(m0.sequences) + ["ACGTACGTACGT"],
                       repeat_counts=list(m0.repeat_counts) + [None])
        augmented = MixtureSample([extra] + sample.markers[1:])
        sim = (augmented, graph, truth, table)
        ctx = context(sim, 1)
        p = true_p(sim, [0])
        q = p.copy()
        q[0] = extra.n_sequences - 1
        assert ctx.fitness(p).fitness > ctx.fitness(q).fitness

    def test_rejects_bad_individual(self, two):
        ctx = context(two, 1, known_idx=(0,))
        with pytest.raises(ValueError):
            ctx.fitness(np.zeros(3, dtype=np.int64))
        bad = true_p(two, [1])
        bad[0] = 999
        with pytest.raises(ValueError):
            ctx.fitness(bad)
