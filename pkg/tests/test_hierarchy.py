import math

import numpy as np

from mfchaos import hierarchy as hr
from mfchaos import kernels as kn
from mfchaos import oracle as orc

from test_oracle import first_order_grid, smooth_f0, smooth_psi, small_run


def make_ops(M=8, N=4, kernel=None, alpha=0.1):
    grid = first_order_grid(M)
    kernel = kernel or kn.fourier_kernel([0.9, -0.3])
    return hr.ladder_operators(grid, kernel, alpha, N, smooth_f0(grid))


class TestLadderOperators:
    def test_zero_kernel_maps_vanish(self):
        ops = make_ops(kernel=kn.zero_kernel(1), alpha=0.0)
        rng = np.random.default_rng(0)
        n = 2
        vals = {m: rng.standard_normal((8,) * m) for m in range(n + 3)}
        assert np.abs(ops.rhs(vals, n)).max() == 0.0
        assert np.abs(ops.weak_form_combination(vals, n)).max() == 0.0

    def test_linearity(self):
        ops = make_ops()
        rng = np.random.default_rng(1)
        n = 2
        for name in ("raising", "diagonal", "lowering", "double_lowering"):
            fn = getattr(ops, name)
            order = {"raising": n - 1, "diagonal": n, "lowering": n + 1, "double_lowering": n + 2}[name]
            A = rng.standard_normal((8,) * order)
            B = rng.standard_normal((8,) * order)
            lhs = fn(1.3 * A - 0.7 * B, n)
            rhs = 1.3 * fn(A, n) - 0.7 * fn(B, n)
            assert np.abs(lhs - rhs).max() <= 1e-12 * max(1.0, np.abs(lhs).max())

    def test_double_lowering_symmetric_output(self):
        ops = make_ops()
        rng = np.random.default_rng(2)
        base = rng.standard_normal((8,) * 4)
        idx = np.indices((8,) * 4)
        C = base[tuple(np.sort(idx, axis=0))]
        out = ops.double_lowering(C, 2)
        assert np.abs(out - out.T).max() <= 1e-13

    def test_double_lowering_prefactor_limit(self):
        # N (N-n)(N-n-1)/(N(N-1)) * binom(N,n)^(1/2) binom(N,n+2)^(-1/2)
        # tends to sqrt((n+1)(n+2)) as N grows
        for n in (0, 1, 2, 3):
            N = 10**6
            val = (
                N
                * ((N - n) * (N - n - 1.0) / (N * (N - 1.0)))
                * math.sqrt(math.comb(N, n) / math.comb(N, n + 2))
            )
            assert abs(val - math.sqrt((n + 1) * (n + 2))) <= 1e-4

    def test_lowering_kills_constant_in_last_slot(self):
        # the coupling contraction of a tensor constant in its integrated slot
        # hits the zero-mean identity of V exactly
        ops = make_ops()
        rng = np.random.default_rng(3)
        n = 2
        core = rng.standard_normal((8,) * n)
        C = np.repeat(core[..., None], 8, axis=-1)  # constant in the last slot
        out = np.zeros((8,) * n)
        for j in range(n):
            out += ops._couple_slot(C, j)
        assert np.abs(out).max() <= 1e-13


class TestResiduals:
    def test_interaction_free_residual_is_time_differencing_only(self):
        # all coupling maps vanish, so the residual is purely the centered
        # time-differencing error of the ladder snapshots, of order dt_snap^2
        grid = first_order_grid(8)
        maxima = []
        for stride in (4, 2, 1):
            cfg = orc.OracleConfig(
                grid=grid, kernel=kn.zero_kernel(1), alpha=0.1, N=3, T=0.2,
                dt=0.01, snap_stride=stride, stepping="matrix_exponential", k=1,
            )
            run = orc.run_oracle(cfg, smooth_f0(grid), smooth_psi(grid))
            rep = hr.hierarchy_residuals(run, nmax=3)
            maxima.append(rep.residual[1:-1].max())
        assert maxima[2] <= maxima[1] / 3.0 <= maxima[0] / 9.0
        # orders above the product order carry no signal at all
        assert rep.residual[1:-1, 2:].max() <= 1e-12

    def test_residuals_shrink_under_refinement(self):
        maxima = []
        for M, dt, snap in ((8, 0.005, 4), (16, 0.0025, 4)):
            run = small_run(
                stepping="rk4", N=3, M=M, T=0.16, dt=dt, snap=snap,
                alpha=0.1, k=2, amp=0.8,
            )
            rep = hr.hierarchy_residuals(run, nmax=3)
            maxima.append(max(rep.interior_max(n) for n in range(4)))
        assert maxima[1] <= maxima[0] / 1.5

    def test_projected_residual_is_subordinate_and_refines(self):
        ratios, projs = [], []
        for M, dt, snap in ((8, 0.005, 4), (16, 0.0025, 4)):
            run = small_run(
                stepping="rk4", N=3, M=M, T=0.16, dt=dt, snap=snap,
                alpha=0.1, k=2, amp=0.8,
            )
            rep = hr.hierarchy_residuals(run, nmax=3)
            for n in range(1, 4):
                assert rep.interior_projected_max(n) <= rep.interior_weak_form_max(n)
            projs.append(max(rep.interior_projected_max(n) for n in range(1, 4)))
            ratios.append(
                max(
                    rep.interior_projected_max(n)
                    / max(rep.interior_weak_form_max(n), 1e-300)
                    for n in range(1, 4)
                )
            )
        assert projs[1] <= projs[0] / 1.4
        assert ratios[1] <= 0.2

    def test_trivial_constant_ladder_solves_limit_hierarchy(self):
        grid = first_order_grid(10)
        res = hr.trivial_limit_solution_residual(
            grid, kn.fourier_kernel([1.0, -0.4]), 0.1, 5, smooth_f0(grid), value=0.37
        )
        assert res == 0.0

    def test_limit_residual_decreases_in_N(self):
        vals = []
        for N in (3, 4, 5):
            run = small_run(
                stepping="rk4", N=N, M=8, T=0.16, dt=0.004, snap=8, alpha=0.1, k=1,
            )
            res = hr.limit_hierarchy_residuals(run, nmax=2)
            vals.append(res[1:-1, :].max())
        assert vals[2] < vals[1] < vals[0]


class TestGeneratingFunction:
    def test_zero_ladder(self):
        gf = hr.generating_function([0.0, 1.0], np.zeros((2, 4)))
        assert np.all(gf.values == 0.0)

    def test_single_order_monomial(self):
        norms = np.zeros((1, 4))
        norms[0, 2] = 1.7
        gf = hr.generating_function([0.0], norms, r_grid=(0.5,))
        assert abs(gf.values[0, 0] - 1.7 * 0.25) <= 1e-15

    def test_cauchy_schwarz_interpolation(self):
        rng = np.random.default_rng(5)
        norms = rng.uniform(0.0, 1.0, size=(7, 5))
        gf = hr.generating_function(np.arange(7.0), norms)
        assert hr.cauchy_schwarz_gap(gf) >= -1e-14

    def test_tail_bound(self):
        norms = np.ones((1, 3))
        gf = hr.generating_function([0.0], norms, r_grid=(0.5,), sup_bound=1.0)
        assert abs(gf.tail_bound[0] - 0.5**3 / 0.5) <= 1e-15


class TestWindows:
    def test_zero_coupling_single_window(self):
        t = np.linspace(0.0, 1.0, 11)
        rep = hr.contraction_windows(t, np.zeros(11))
        assert rep.covers and len(rep.windows) == 1
        assert rep.windows[0][0] == 0.0 and rep.windows[0][1] == 1.0

    def test_constant_coupling_window_length(self):
        c, T = 2.0, 1.0
        t = np.linspace(0.0, T, 2001)
        rep = hr.contraction_windows(t, np.full(t.size, c))
        length = rep.windows[0][1] - rep.windows[0][0]
        assert rep.covers
        assert abs(length - min(T, 0.125 / c)) <= 2 * (t[1] - t[0])

    def test_impossible_step_reported(self):
        t = np.array([0.0, 0.5, 1.0])
        rep = hr.contraction_windows(t, np.array([0.0, 10.0, 10.0]))
        assert not rep.covers
        assert rep.empty_at == 1.0


class TestRateFits:
    def test_exact_power_law(self):
        N = np.array([8, 16, 32, 64, 128])
        e = N ** -1.3
        slopes, _ = hr.fit_rate_profile(N, e[None, :])
        assert abs(slopes[0] + 1.3) <= 1e-10

    def test_decaying_exponent_profile(self):
        N = np.array([8, 16, 32, 64, 128], dtype=float)
        a, c = 1.2, 0.8
        t = np.linspace(0.0, 2.0, 9)
        errors = np.stack([N ** (-a * math.exp(-c * tt)) for tt in t])
        slopes, _ = hr.fit_rate_profile(N, errors)
        assert np.abs(slopes + a * np.exp(-c * t)).max() <= 1e-8
        # exponent magnitude is non-increasing in t
        assert np.all(np.diff(-slopes) <= 1e-12)

    def test_weighted_fit_downweights_noisy_points(self):
        N = np.array([8, 16, 32, 64], dtype=float)
        e = N ** -1.0
        e_noisy = e.copy()
        e_noisy[-1] *= 3.0  # an outlier with a huge declared stderr
        se = np.array([1e-6, 1e-6, 1e-6, 10.0]) * e
        slopes, _ = hr.fit_rate_profile(N, e_noisy[None, :], stderrs=se[None, :])
        assert abs(slopes[0] + 1.0) <= 1e-3
