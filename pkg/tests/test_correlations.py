import math

import numpy as np
import pytest

from mfchaos import correlations as ca
from mfchaos.errors import IndexRange, MemoryCap

from helpers import random_weight, random_symmetric


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


class TestMarginals:
    def test_constant_observable(self, rng):
        w = random_weight(3, rng)
        phi = ca.NTensor(space=w.space, values=np.ones((3, 3, 3)), symmetric=True)
        for n in range(4):
            m = ca.weighted_marginal(phi, w, n)
            assert np.abs(m.values - 1.0).max() <= 1e-14

    def test_product_observable_tensorizes(self, rng):
        M, N = 4, 3
        w = random_weight(M, rng)
        phi1 = rng.uniform(-1, 1, M)
        vals = phi1[:, None, None] * phi1[None, :, None] * phi1[None, None, :]
        phi = ca.NTensor(space=w.space, values=vals, symmetric=True)
        mean = float(np.sum(phi1 * w.cell))
        m1 = ca.weighted_marginal(phi, w, 1)
        assert np.abs(m1.values - mean**2 * phi1).max() <= 1e-14

    def test_weighted_marginal_matches_triple_sum(self, rng):
        M, N = 2, 3
        w = random_weight(M, rng)
        phi = random_symmetric(w.space, N, rng)
        got = ca.weighted_marginal(phi, w, 1).values
        want = np.zeros(M)
        for z1 in range(M):
            acc = 0.0
            for z2 in range(M):
                for z3 in range(M):
                    acc += phi.values[z1, z2, z3] * w.cell[z2] * w.cell[z3]
            want[z1] = acc
        assert np.abs(got - want).max() <= 1e-14

    def test_plain_marginal_of_product(self, rng):
        M, N = 3, 4
        space = ca.SiteSpace(M=M, dz=1.0 / M)
        f0 = rng.uniform(0.5, 1.5, M)
        f0 /= f0.sum() * space.dz
        vals = np.ones((M,) * N)
        for s in range(N):
            vals = vals * f0.reshape([M if a == s else 1 for a in range(N)])
        F = ca.NTensor(space=space, values=vals, symmetric=True)
        F2 = ca.plain_marginal(F, 2)
        want = f0[:, None] * f0[None, :]
        assert np.abs(F2.values - want).max() <= 1e-12

    def test_plain_marginal_preserves_total_mass(self, rng):
        M, N = 3, 3
        space = ca.SiteSpace(M=M, dz=0.31)
        F = random_symmetric(space, N, rng)
        total_N = float(F.values.sum() * space.dz**N)
        F1 = ca.plain_marginal(F, 1)
        total_1 = float(F1.values.sum() * space.dz)
        assert abs(total_N - total_1) <= 1e-13 * max(1.0, abs(total_N))


class TestProjectors:
    def test_fixed_point_when_slot_free(self, rng):
        M = 4
        w = random_weight(M, rng)
        g1 = rng.standard_normal(M)
        vals = np.broadcast_to(g1[:, None], (M, M)).copy()  # independent of slot 2
        g = ca.NTensor(space=w.space, values=vals)
        out = ca.project_slot(g, 2, w)
        assert np.abs(out.values - vals).max() <= 1e-15

    def test_idempotent(self, rng):
        w = random_weight(3, rng)
        g = random_symmetric(w.space, 3, rng)
        once = ca.project_slot(g, 2, w)
        twice = ca.project_slot(once, 2, w)
        assert np.abs(once.values - twice.values).max() <= 1e-14

    def test_commuting_slots(self, rng):
        w = random_weight(3, rng)
        g = ca.NTensor(space=w.space, values=rng.standard_normal((3, 3, 3)))
        ab = ca.project_slot(ca.project_slot(g, 1, w), 3, w)
        ba = ca.project_slot(ca.project_slot(g, 3, w), 1, w)
        assert np.abs(ab.values - ba.values).max() <= 1e-14

    def test_slot_out_of_range(self, rng):
        w = random_weight(3, rng)
        g = random_symmetric(w.space, 2, rng)
        with pytest.raises(IndexRange):
            ca.project_slot(g, 3, w)


class TestLadders:
    def test_constant_observable_has_trivial_ladder(self, rng):
        w = random_weight(3, rng)
        phi = ca.NTensor(space=w.space, values=np.ones((3, 3, 3)), symmetric=True)
        ladder = ca.correlations_by_projection(phi, w, 3)
        assert abs(float(ladder.tensors[0].values) - 1.0) <= 1e-14
        for c in ladder.tensors[1:]:
            assert np.abs(c.values).max() <= 1e-14

    def test_projection_equals_inclusion_exclusion(self, rng):
        for M, N in [(2, 3), (3, 4), (4, 3)]:
            w = random_weight(M, rng)
            phi = random_symmetric(w.space, N, rng)
            lad_a = ca.correlations_by_projection(phi, w, N)
            marginals = [ca.weighted_marginal(phi, w, n) for n in range(N + 1)]
            lad_b = ca.correlations_by_inclusion_exclusion(marginals, w, N)
            for ca_, cb in zip(lad_a.tensors, lad_b.tensors):
                assert np.abs(ca_.values - cb.values).max() <= 1e-13

    def test_order_zero_and_one_specializations(self, rng):
        M, N = 3, 3
        w = random_weight(M, rng)
        phi = random_symmetric(w.space, N, rng)
        m0 = ca.weighted_marginal(phi, w, 0)
        m1 = ca.weighted_marginal(phi, w, 1)
        lad = ca.correlations_by_projection(phi, w, 1)
        assert abs(float(lad.tensors[0].values) - float(m0.values)) <= 1e-15
        assert np.abs(lad.tensors[1].values - (m1.values - float(m0.values))).max() <= 1e-14

    def test_alternating_binomial_identity(self):
        for p in range(13):
            s = sum((-1) ** (p - k) * math.comb(p, k) for k in range(p + 1))
            assert s == (1 if p == 0 else 0)

    def test_cluster_reconstruction_roundtrip(self, rng):
        for M, N in [(2, 3), (2, 6), (3, 5), (4, 4)]:
            w = random_weight(M, rng)
            phi = random_symmetric(w.space, N, rng)
            ladder = ca.correlations_by_projection(phi, w, N)
            for n in range(N + 1):
                m_direct = ca.weighted_marginal(phi, w, n)
                m_cluster = ca.marginals_from_correlations(ladder, n)
                assert np.abs(m_direct.values - m_cluster.values).max() <= 1e-13

    def test_cluster_reconstruction_of_trivial_ladder(self, rng):
        M = 3
        w = random_weight(M, rng)
        tensors = [ca.NTensor(space=w.space, values=np.ones(()))]
        for n in range(1, 4):
            tensors.append(ca.NTensor(space=w.space, values=np.zeros((M,) * n)))
        ladder = ca.CorrelationLadder(weight=w, N=4, tensors=tensors)
        m3 = ca.marginals_from_correlations(ladder, 3)
        assert np.abs(m3.values - 1.0).max() == 0.0

    def test_single_first_order_correlation(self, rng):
        M = 4
        w = random_weight(M, rng)
        c0 = ca.NTensor(space=w.space, values=np.asarray(0.7))
        c1 = ca.NTensor(space=w.space, values=rng.standard_normal(M))
        c2 = ca.NTensor(space=w.space, values=np.zeros((M, M)))
        ladder = ca.CorrelationLadder(weight=w, N=3, tensors=[c0, c1, c2])
        m2 = ca.marginals_from_correlations(ladder, 2)
        want = 0.7 + c1.values[:, None] + c1.values[None, :]
        assert np.abs(m2.values - want).max() <= 1e-15

    def test_orthogonality_of_ladder(self, rng):
        M, N = 3, 4
        w = random_weight(M, rng)
        phi = random_symmetric(w.space, N, rng)
        ladder = ca.correlations_by_projection(phi, w, N)
        assert ladder.orthogonality_residual() <= 1e-12

    def test_parseval_identity(self, rng):
        for M, N in [(2, 4), (3, 4), (4, 3)]:
            w = random_weight(M, rng)
            phi = random_symmetric(w.space, N, rng)
            ladder = ca.correlations_by_projection(phi, w, N)
            assert ca.parseval_residual(phi, ladder) <= 1e-12

    def test_apriori_bound_random_observables(self, rng):
        M, N = 3, 5
        w = random_weight(M, rng)
        for _ in range(10):
            phi = random_symmetric(w.space, N, rng)
            ladder = ca.correlations_by_projection(phi, w, N)
            sup = phi.sup_norm()
            for n, nrm in enumerate(ladder.norms()):
                assert nrm <= sup / math.sqrt(math.comb(N, n)) * (1 + 1e-12)

    def test_mixed_norm_bound_random_observables(self, rng):
        M, N = 3, 4
        w = random_weight(M, rng)
        for _ in range(5):
            phi = random_symmetric(w.space, N, rng)
            ladder = ca.correlations_by_projection(phi, w, N)
            sup = phi.sup_norm()
            for n in range(1, N + 1):
                for k in (1, 2):
                    if k > n:
                        continue
                    mixed = ca.mixed_sup_l2_norm(ladder.tensors[n], w, k)
                    bound = 2.0**k * sup / math.sqrt(math.comb(N - k, n - k))
                    assert mixed <= bound * (1 + 1e-12)


class TestNorms:
    def test_constant_norms(self, rng):
        w = random_weight(4, rng)
        g = ca.NTensor(space=w.space, values=np.full((4, 4), -2.5))
        assert abs(ca.weighted_l2_norm(g, w) - 2.5) <= 1e-13
        assert abs(ca.mixed_sup_l2_norm(g, w, 1) - 2.5) <= 1e-13

    def test_full_sup_slots_is_max(self, rng):
        w = random_weight(3, rng)
        g = ca.NTensor(space=w.space, values=rng.standard_normal((3, 3)))
        assert abs(ca.mixed_sup_l2_norm(g, w, 2) - np.abs(g.values).max()) <= 1e-14

    def test_norm_matches_brute_force(self, rng):
        M = 3
        w = random_weight(M, rng)
        g = ca.NTensor(space=w.space, values=rng.standard_normal((M, M)))
        acc = 0.0
        for i in range(M):
            for j in range(M):
                acc += g.values[i, j] ** 2 * w.cell[i] * w.cell[j]
        assert abs(ca.weighted_l2_norm(g, w) - math.sqrt(acc)) <= 1e-13


class TestProductObservables:
    def test_full_order_is_pure_product(self, rng):
        M, N = 2, 3
        space = ca.SiteSpace(M=M, dz=1.0 / M)
        psi = rng.uniform(-1, 1, M)
        T = ca.symmetrized_product_observable(psi, space, N, N)
        want = psi[:, None, None] * psi[None, :, None] * psi[None, None, :]
        assert np.abs(T.values - want).max() <= 1e-15

    def test_constant_function_gives_ones(self):
        space = ca.SiteSpace(M=3, dz=1.0 / 3)
        T = ca.symmetrized_product_observable(np.ones(3), space, 4, 2)
        assert np.abs(T.values - 1.0).max() <= 1e-14

    def test_hand_expansion_n3_k2(self, rng):
        M = 2
        space = ca.SiteSpace(M=M, dz=1.0 / M)
        psi = rng.uniform(-1, 1, M)
        T = ca.symmetrized_product_observable(psi, space, 3, 2)
        want = np.zeros((M, M, M))
        for i in range(M):
            for j in range(M):
                for k in range(M):
                    want[i, j, k] = (
                        psi[i] * psi[j] + psi[i] * psi[k] + psi[j] * psi[k]
                    ) / 3.0
        assert np.abs(T.values - want).max() <= 1e-15

    def test_sup_norm_bound(self, rng):
        space = ca.SiteSpace(M=3, dz=1.0 / 3)
        psi = rng.uniform(-1, 1, 3)
        T = ca.symmetrized_product_observable(psi, space, 4, 2)
        assert T.sup_norm() <= np.abs(psi).max() ** 2 + 1e-15


class TestClosedFormFinalCorrelations:
    def test_vanishes_above_product_order(self, rng):
        w = random_weight(3, rng)
        psi = rng.uniform(-1, 1, 3)
        c = ca.closed_form_final_correlations(psi, w, N=4, k=1, n=2)
        assert np.abs(c.values).max() == 0.0

    def test_order_zero_is_mean_power(self, rng):
        w = random_weight(3, rng)
        psi = rng.uniform(-1, 1, 3)
        mean = float(np.sum(psi * w.cell))
        c = ca.closed_form_final_correlations(psi, w, N=5, k=3, n=0)
        assert abs(float(c.values) - mean**3) <= 1e-14

    def test_two_slot_single_product(self, rng):
        w = random_weight(4, rng)
        psi = rng.uniform(-1, 1, 4)
        mean = float(np.sum(psi * w.cell))
        c = ca.closed_form_final_correlations(psi, w, N=2, k=1, n=1)
        assert np.abs(c.values - 0.5 * (psi - mean)).max() <= 1e-14

    def test_matches_projector_route(self, rng):
        for N, k in [(3, 1), (4, 2), (5, 2)]:
            M = 3
            w = random_weight(M, rng)
            psi = rng.uniform(-1, 1, M)
            phi = ca.symmetrized_product_observable(psi, w.space, N, k)
            ladder = ca.correlations_by_projection(phi, w, N)
            for n in range(N + 1):
                closed = ca.closed_form_final_correlations(psi, w, N, k, n)
                assert np.abs(ladder.tensors[n].values - closed.values).max() <= 1e-12


class TestRescaling:
    def test_rescale_factors(self, rng):
        M, N = 3, 5
        w = random_weight(M, rng)
        phi = random_symmetric(w.space, N, rng)
        ladder = ca.correlations_by_projection(phi, w, N)
        scaled = ladder.rescaled()
        assert np.abs(scaled.tensors[0].values - ladder.tensors[0].values).max() == 0.0
        assert np.allclose(
            scaled.tensors[2].values, math.sqrt(10.0) * ladder.tensors[2].values
        )

    def test_rescaled_norms_bounded_by_sup(self, rng):
        M, N, k = 3, 5, 2
        w = random_weight(M, rng)
        psi = rng.uniform(-1, 1, M)
        phi = ca.symmetrized_product_observable(psi, w.space, N, k)
        ladder = ca.correlations_by_projection(phi, w, N)
        bound = np.abs(psi).max() ** k
        assert np.all(ladder.rescaled_norms() <= bound * (1 + 1e-12))


class TestGuards:
    def test_memory_cap(self):
        space = ca.SiteSpace(M=64, dz=1.0 / 64)
        with pytest.raises(MemoryCap):
            ca.NTensor(space=space, values=np.zeros((64,) * 5))

    def test_symmetry_spot_check(self, rng):
        w = random_weight(3, rng)
        sym = random_symmetric(w.space, 3, rng)
        assert sym.check_symmetric(rng) <= 1e-15
        asym = ca.NTensor(space=w.space, values=rng.standard_normal((3, 3, 3)))
        assert asym.check_symmetric(rng) > 1e-3
