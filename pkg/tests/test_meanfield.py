import numpy as np
import pytest

from mfchaos import kernels as kn
from mfchaos import meanfield as mf
from mfchaos.errors import CFLViolation, DegenerateDensity


def gaussian_phase_field(Mx=32, Mv=64, Lv=3.0, sigma=0.5, xmod=0.0):
    grid = mf.PhaseGrid(cells_x=Mx, cells_v=Mv, v_halfwidth=Lv)
    v = grid.v_coords()
    x = grid.x_coords()
    fx = 1.0 + xmod * np.cos(2 * np.pi * x)
    fv = np.exp(-(v**2) / (2 * sigma**2))
    vals = fx[:, None] * fv[None, :]
    vals /= np.sum(vals) * grid.dz
    return mf.DensityField(grid, vals)


def smooth_random_phase_field(rng, Mx=8, Mv=8, Lv=2.5):
    grid = mf.PhaseGrid(cells_x=Mx, cells_v=Mv, v_halfwidth=Lv)
    x = grid.x_coords()
    v = grid.v_coords()
    vals = np.ones(grid.shape)
    for _ in range(3):
        ax, bx = rng.uniform(-0.3, 0.3, 2)
        cv = rng.uniform(0.5, 1.2)
        vals += (
            (ax * np.cos(2 * np.pi * x) + bx * np.sin(2 * np.pi * x))[:, None]
            * np.exp(-(v[None, :] ** 2) / (2 * cv**2))
        )
    vals = np.clip(vals, 0.05, None)
    vals /= np.sum(vals) * grid.dz
    return mf.DensityField(grid, vals)


class TestVlasovStep:
    def test_free_transport_returns_exactly_after_transit(self):
        Mx, Mv, Lv = 32, 8, 2.0
        grid = mf.PhaseGrid(cells_x=Mx, cells_v=Mv, v_halfwidth=Lv)
        vals = np.zeros(grid.shape)
        vals[5, 0] = 1.0  # the v = -Lv cell, the fastest one on the grid
        vals /= np.sum(vals) * grid.dz
        f = mf.DensityField(grid, vals)
        dt = grid.dx / Lv  # integer CFL = 1 for the populated cell
        steps = round(1.0 / (Lv * dt))
        g = f
        for _ in range(steps):
            g = mf.vlasov_step(g, kn.zero_kernel(1), alpha=0.0, dt=dt)
        assert np.array_equal(g.values, f.values)

    def test_velocity_variance_grows_linearly(self):
        alpha, T = 0.05, 1.0
        f = gaussian_phase_field(Mx=16, Mv=64, Lv=4.0, sigma=0.5)
        grid = f.grid
        v = grid.v_coords()

        def variance(field):
            fv = np.sum(field.values, axis=0) * grid.dx
            m = np.sum(v * fv) * grid.dv
            return np.sum((v - m) ** 2 * fv) * grid.dv

        v0 = variance(f)
        dt = 0.01
        g = f
        for _ in range(round(T / dt)):
            g = mf.vlasov_step(g, kn.zero_kernel(1), alpha=alpha, dt=dt)
        growth = variance(g) - v0
        assert abs(growth - 2 * alpha * T) <= 0.01 * 2 * alpha * T

    def test_mass_conserved_per_step(self):
        f = gaussian_phase_field(Mx=16, Mv=32, Lv=3.0, sigma=0.6, xmod=0.4)
        g = mf.vlasov_step(f, kn.fourier_kernel([0.5]), alpha=0.1, dt=0.002)
        assert abs(g.mass() - 1.0) <= 1e-12

    def test_cfl_violation_raises(self):
        f = gaussian_phase_field(Mx=16, Mv=16, Lv=4.0)
        with pytest.raises(CFLViolation):
            mf.vlasov_step(f, kn.zero_kernel(1), alpha=0.0, dt=1.0)

    def test_self_convergence_is_first_order(self):
        f = gaussian_phase_field(Mx=32, Mv=32, Lv=3.0, sigma=0.7, xmod=0.3)
        kernel = kn.fourier_kernel([0.8])
        alpha, T = 0.02, 0.128
        sols = []
        for dt in (4e-3, 2e-3, 1e-3):
            g = f
            for _ in range(round(T / dt)):
                g = mf.vlasov_step(g, kernel, alpha=alpha, dt=dt)
            sols.append(g.values)
        e1 = np.abs(sols[0] - sols[1]).sum() * f.grid.dz
        e2 = np.abs(sols[1] - sols[2]).sum() * f.grid.dz
        assert 1.8 <= e1 / e2 <= 2.2


class TestMckeanStep:
    def test_pure_heat_mode_decay(self):
        M = 64
        grid = mf.SpatialGrid(dim=1, cells=M)
        x = grid.axis_coords()
        vals = 1.0 + 0.5 * np.cos(2 * np.pi * 3 * x)
        rho = mf.DensityField(grid, vals / (np.sum(vals) * grid.dz))
        alpha, dt = 0.3, 0.01
        out = mf.mckean_step(rho, kn.zero_kernel(1), alpha=alpha, dt=dt)
        before = np.fft.rfft(rho.values)[3]
        after = np.fft.rfft(out.values)[3]
        assert abs(after / before - np.exp(-alpha * (2 * np.pi * 3) ** 2 * dt)) <= 1e-12

    def test_uniform_density_stationary(self):
        M = 32
        rho = mf.uniform_density(mf.SpatialGrid(dim=2, cells=M))
        out = mf.mckean_step(rho, kn.biot_savart_kernel("torus"), alpha=0.1, dt=0.01)
        assert np.abs(out.values - rho.values).max() <= 1e-13

    def test_mass_conserved(self):
        M = 32
        grid = mf.SpatialGrid(dim=1, cells=M)
        x = grid.axis_coords()
        vals = 1.0 + 0.7 * np.sin(2 * np.pi * x)
        rho = mf.DensityField(grid, vals / (np.sum(vals) * grid.dz))
        out = mf.mckean_step(rho, kn.fourier_kernel([1.0]), alpha=0.05, dt=0.005)
        assert abs(out.mass() - 1.0) <= 1e-12


class TestFisherInformation:
    def test_uniform_is_zero(self):
        f = mf.uniform_density(mf.PhaseGrid(cells_x=8, cells_v=16, v_halfwidth=2.0))
        assert mf.fisher_information(f) == 0.0

    def test_gaussian_matches_inverse_variance(self):
        sigma = 0.5
        f = gaussian_phase_field(Mx=8, Mv=64, Lv=6 * sigma, sigma=sigma)
        val = mf.fisher_information(f)
        assert abs(val - 1.0 / sigma**2) <= 0.02 / sigma**2

    def test_refinement_stability(self):
        sigma = 0.5
        coarse = gaussian_phase_field(Mx=8, Mv=64, Lv=6 * sigma, sigma=sigma)
        fine = gaussian_phase_field(Mx=8, Mv=128, Lv=6 * sigma, sigma=sigma)
        a, b = mf.fisher_information(coarse), mf.fisher_information(fine)
        assert abs(a - b) <= 0.01 * abs(b)


class TestCouplingField:
    def test_zero_kernel_vanishes(self):
        rng = np.random.default_rng(0)
        f = smooth_random_phase_field(rng)
        V = mf.coupling_field(f, kn.zero_kernel(1))
        assert np.abs(V.dense()).max() == 0.0
        assert mf.coupling_norm(f, kn.zero_kernel(1)) == 0.0

    def test_uniform_in_x_reduces_to_pair_term(self):
        grid = mf.PhaseGrid(cells_x=8, cells_v=16, v_halfwidth=2.0)
        v = grid.v_coords()
        vals = np.ones(grid.shape) * np.exp(-(v[None, :] ** 2))
        vals /= np.sum(vals) * grid.dz
        f = mf.DensityField(grid, vals)
        kernel = kn.fourier_kernel([1.0, -0.2])
        V = mf.coupling_field(f, kernel)
        Kg = kn.grid_samples(kernel, grid.cells_x)[..., 0]
        idx = np.arange(grid.cells_x)
        pair = Kg[(idx[:, None] - idx[None, :]) % grid.cells_x]
        assert np.abs(V.force_gap - pair).max() <= 1e-13

    def test_both_cancellations_machine_precision(self):
        rng = np.random.default_rng(42)
        for trial in range(5):
            f = smooth_random_phase_field(rng, Mx=10, Mv=12)
            V = mf.coupling_field(f, kn.fourier_kernel([0.9, -0.4]))
            r2, r1 = V.cancellation_residuals()
            assert r2 <= 1e-13
            assert r1 <= 1e-13

    def test_uniform_field_norm_zero(self):
        f = mf.uniform_density(mf.PhaseGrid(cells_x=8, cells_v=8, v_halfwidth=2.0))
        assert mf.coupling_norm(f, kn.fourier_kernel([1.0])) == 0.0

    def test_norm_matches_dense_double_sum(self):
        rng = np.random.default_rng(3)
        f = smooth_random_phase_field(rng, Mx=8, Mv=8)
        kernel = kn.fourier_kernel([1.0, 0.3])
        V = mf.coupling_field(f, kernel)
        fast = V.l2_weighted_norm()
        dense = V.dense()
        w = V.weight
        acc = 0.0
        for i1 in range(8):
            for j1 in range(8):
                for i2 in range(8):
                    for j2 in range(8):
                        acc += (
                            dense[i1, j1, i2, j2] ** 2
                            * w[i1, j1]
                            * w[i2, j2]
                        )
        slow = np.sqrt(acc * f.grid.dz**2)
        assert abs(fast - slow) <= 1e-10 * max(1.0, slow)

    def test_degenerate_density_raises(self):
        grid = mf.PhaseGrid(cells_x=8, cells_v=8, v_halfwidth=2.0)
        vals = np.zeros(grid.shape)
        vals[0, 0] = 1.0
        vals /= np.sum(vals) * grid.dz
        f = mf.DensityField(grid, vals)
        with pytest.raises(DegenerateDensity):
            mf.coupling_field(f, kn.fourier_kernel([1.0]))


class TestSymmetrizedCouplingNorm:
    def test_uniform_is_zero(self):
        rho = mf.uniform_density(mf.SpatialGrid(dim=1, cells=16))
        assert mf.symmetrized_coupling_norm(rho, kn.fourier_kernel([1.0])) == 0.0

    def test_log_linear_patch_vanishes(self):
        grid = mf.SpatialGrid(dim=1, cells=24, periodic=False)
        x = grid.axis_coords()
        vals = np.exp(1.3 * x)
        vals /= np.sum(vals) * grid.dz
        rho = mf.DensityField(grid, vals)
        kernel = kn.fourier_kernel([0.8], domain="free")
        assert mf.symmetrized_coupling_norm(rho, kernel) <= 1e-12

    def test_generic_matches_loop_oracle(self):
        grid = mf.SpatialGrid(dim=1, cells=12)
        x = grid.axis_coords()
        vals = 1.0 + 0.5 * np.sin(2 * np.pi * x) + 0.2 * np.cos(4 * np.pi * x)
        vals /= np.sum(vals) * grid.dz
        rho = mf.DensityField(grid, vals)
        kernel = kn.fourier_kernel([1.0, -0.5])
        fast = mf.symmetrized_coupling_norm(rho, kernel)
        # independent loop evaluation
        w = rho.values / (np.sum(rho.values) * grid.dz)
        logr = np.log(w)
        slope = (np.roll(logr, -1) - np.roll(logr, 1)) / (2 * grid.dx)
        acc = 0.0
        for i in range(12):
            for j in range(12):
                if i == j:
                    continue
                Kv = kn.eval_kernel(kernel, np.array([x[i] - x[j]])).ravel()[0]
                acc += (Kv * (slope[i] - slope[j])) ** 2 * w[i] * w[j]
        slow = np.sqrt(acc * grid.dz**2)
        assert abs(fast - slow) <= 1e-10 * max(1.0, slow)
