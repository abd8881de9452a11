import numpy as np
import pytest

from manevlab.kernels import KernelSpec
from manevlab.phase_grid import (
    PhaseGrid,
    chang_cooper_generator,
    export_moments_csv,
    fokker_planck_step,
    force_step,
    load_checkpoint,
    maxwellian_values,
    moments,
    save_checkpoint,
    strang_step,
    transport_step,
    uniform_phase_grid,
)


def gaussian_grid_1d(n_x=64, n_v=64, L_x=8.0, L_v=8.0, mass=1.0,
                     x_scale=1.0, v_scale=1.0):
    g = uniform_phase_grid(1, L_x, n_x, L_v, n_v)
    x = g.x_coords[:, None]
    v = g.v_coords[None, :]
    vals = np.exp(-(x / x_scale) ** 2 / 2 - (v / v_scale) ** 2 / 2)
    vals *= mass / (vals.sum() * g.cell_volume)
    return g.with_values(vals)


class TestPhaseGrid:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            PhaseGrid(1, 1.0, 8, 1.0, 8, np.zeros((8, 4)))

    def test_negative_rejected(self):
        vals = np.zeros((8, 8))
        vals[0, 0] = -1.0
        with pytest.raises(ValueError):
            PhaseGrid(1, 1.0, 8, 1.0, 8, vals)

    def test_dimension_restricted(self):
        with pytest.raises(ValueError):
            PhaseGrid(3, 1.0, 4, 1.0, 4, np.zeros((4, 4, 4, 4, 4, 4)))

    def test_cell_centered_coords(self):
        g = uniform_phase_grid(1, 2.0, 4, 1.0, 2)
        np.testing.assert_allclose(g.x_coords, [-1.5, -0.5, 0.5, 1.5])
        np.testing.assert_allclose(g.v_coords, [-0.5, 0.5])
        assert g.cell_volume == pytest.approx(1.0)

    def test_mass(self):
        g = uniform_phase_grid(1, 1.0, 10, 1.0, 10, fill=0.25)
        assert g.mass == pytest.approx(0.25 * 4.0)


class TestMoments:
    def test_uniform_box_exact_mass(self):
        g = uniform_phase_grid(2, 1.0, 8, 1.0, 8, fill=1.0)
        rho, mom = moments(g)
        assert np.ptp(rho.values) == 0.0
        assert rho.mass == pytest.approx(g.mass, rel=1e-12)
        np.testing.assert_array_equal(mom, 0.0)

    def test_odd_in_v_zero_momentum(self):
        g = gaussian_grid_1d()
        _, mom = moments(g)  # even f is a special odd-moment case
        assert np.abs(mom).max() < 1e-14
        # genuinely asymmetric-but-odd construction
        vals = g.values * (1.0 + 0.0 * g.v_coords[None, :])
        skew = vals * g.v_coords[None, :] ** 3
        gg = g.with_values(np.clip(vals + skew - skew, 0, None))
        _, mom2 = moments(gg)
        assert np.abs(mom2).max() < 1e-14

    def test_gaussian_profile_matches(self):
        g = gaussian_grid_1d(n_x=128, n_v=128)
        rho, _ = moments(g)
        x = g.x_coords
        exact = np.exp(-(x**2) / 2) / np.sqrt(2 * np.pi)
        np.testing.assert_allclose(rho.values, exact, rtol=1e-6, atol=1e-9)

    def test_mass_consistency(self):
        g = gaussian_grid_1d(mass=2.5)
        rho, _ = moments(g)
        assert rho.mass == pytest.approx(g.mass, rel=1e-12)


class TestTransport:
    def test_x_independent_interior_unchanged(self):
        g = uniform_phase_grid(1, 8.0, 64, 2.0, 16)
        vals = np.broadcast_to(
            np.exp(-g.v_coords**2), (64, 16)
        ).copy()
        g = g.with_values(vals)
        out = transport_step(g, dt=0.1)
        # max displacement is 2.0*0.1 = 0.2 < hx, so cells two layers in are exact
        np.testing.assert_allclose(
            out.values[3:-3], g.values[3:-3], rtol=1e-13, atol=1e-15
        )

    def test_single_cell_pulse_integer_shift(self):
        g = uniform_phase_grid(1, 8.0, 64, 8.0, 64)
        vals = np.zeros((64, 64))
        j = np.searchsorted(g.v_coords, 2.0)  # v* = v_coords[j]
        vals[20, j] = 1.0
        g = g.with_values(vals)
        vstar = g.v_coords[j]
        dt = g.hx / vstar  # exactly one cell per step
        out = transport_step(g, dt)
        expected = np.zeros((64, 64))
        expected[21, j] = 1.0
        np.testing.assert_allclose(out.values, expected, atol=1e-13)

    def test_l2_nonincreasing_100_steps(self):
        g = gaussian_grid_1d()
        l2 = [np.sum(g.values**2)]
        for _ in range(100):
            g = transport_step(g, 0.02)
            l2.append(np.sum(g.values**2))
        assert all(b <= a * (1 + 1e-12) for a, b in zip(l2, l2[1:]))

    def test_mass_nonincreasing_and_loss_recorded(self):
        g = gaussian_grid_1d(L_x=4.0, x_scale=2.0)
        m0 = g.mass
        cur = g
        for _ in range(50):
            cur = transport_step(cur, 0.05)
        assert cur.mass <= m0 + 1e-14
        assert cur.boundary_loss == pytest.approx(m0 - cur.mass, abs=1e-13)

    def test_cfl_guard(self):
        g = uniform_phase_grid(1, 1.0, 16, 8.0, 16, fill=1.0)
        with pytest.raises(ValueError):
            transport_step(g, dt=1.0)

    def test_positivity(self):
        rng = np.random.default_rng(0)
        g = uniform_phase_grid(1, 4.0, 32, 4.0, 32)
        g = g.with_values(rng.random((32, 32)))
        for _ in range(10):
            g = transport_step(g, 0.05)
            assert np.all(g.values >= 0)


class TestForceStep:
    def test_zero_field_unchanged(self):
        g = gaussian_grid_1d()
        out = force_step(g, np.zeros((64, 1)), dt=0.1)
        np.testing.assert_array_equal(out.values, g.values)

    def test_constant_field_translates_v_marginal(self):
        g = gaussian_grid_1d(n_x=32, n_v=128)
        a = 3 * g.hv  # integer number of cells for an exact shift
        fld = np.full((32, 1), a)
        out = force_step(g, fld, dt=1.0)
        marg_in = g.values.sum(axis=0)
        marg_out = out.values.sum(axis=0)
        np.testing.assert_allclose(marg_out[3:], marg_in[:-3], rtol=1e-10, atol=1e-12)

    def test_odd_field_preserves_point_symmetry(self):
        g = gaussian_grid_1d(n_x=64, n_v=64)
        base = g.values * (1.0 + 0.3 * np.cos(g.x_coords)[:, None])
        sym = 0.5 * (base + base[::-1, ::-1])  # f(x,v) = f(-x,-v)
        g = g.with_values(sym)
        fld = np.sin(g.x_coords)[:, None]  # odd in x
        out = force_step(g, fld, dt=0.05)
        np.testing.assert_allclose(
            out.values, out.values[::-1, ::-1], rtol=1e-12, atol=1e-15
        )

    def test_guard(self):
        g = uniform_phase_grid(1, 1.0, 8, 1.0, 8, fill=1.0)
        with pytest.raises(ValueError):
            force_step(g, np.full((8, 1), 100.0), dt=1.0)


class TestFokkerPlanck:
    def test_sigma_zero_identity(self):
        g = gaussian_grid_1d()
        out = fokker_planck_step(g, 0.0, 0.1)
        np.testing.assert_array_equal(out.values, g.values)

    def test_maxwellian_fixed_point(self):
        g = uniform_phase_grid(1, 6.0, 32, 6.0, 64)
        g = g.with_values(maxwellian_values(g))
        out = fokker_planck_step(g, 1.0, 0.1)
        err = np.abs(out.values - g.values).max() / g.values.max()
        assert err < 1e-12

    def test_maxwellian_fixed_point_2d(self):
        g = uniform_phase_grid(2, 4.0, 12, 5.0, 24)
        g = g.with_values(maxwellian_values(g))
        out = fokker_planck_step(g, 0.7, 0.2)
        err = np.abs(out.values - g.values).max() / g.values.max()
        assert err < 1e-12

    def test_mass_per_cell_conserved(self):
        rng = np.random.default_rng(3)
        g = uniform_phase_grid(1, 4.0, 16, 6.0, 48)
        g = g.with_values(rng.random((16, 48)))
        out = fokker_planck_step(g, 1.3, 0.25)
        np.testing.assert_allclose(
            out.values.sum(axis=1), g.values.sum(axis=1), rtol=1e-12
        )

    def test_positivity(self):
        rng = np.random.default_rng(4)
        g = uniform_phase_grid(1, 4.0, 8, 6.0, 64)
        g = g.with_values(rng.random((8, 64)) ** 4)
        out = fokker_planck_step(g, 2.0, 0.5)
        assert np.all(out.values >= 0)

    def test_relative_entropy_monotone(self):
        g = uniform_phase_grid(1, 4.0, 4, 8.0, 96)
        x = g.x_coords[:, None]
        v = g.v_coords[None, :]
        vals = np.exp(-(x**2) / 2 - ((v - 1.5) ** 2))  # shifted, wrong width
        g = g.with_values(vals)
        M = maxwellian_values(g, mass=g.mass)

        def rel_entropy(f):
            mask = f > 0
            return float(
                np.sum(f[mask] * np.log(f[mask] / M[mask])) * g.cell_volume
            )

        h = [rel_entropy(g.values)]
        for _ in range(40):
            g = fokker_planck_step(g, 1.0, 0.1)
            h.append(rel_entropy(g.values))
        assert all(b <= a + 1e-12 for a, b in zip(h, h[1:]))
        assert h[-1] < 1e-3 * h[0]  # relaxed to equilibrium by t = 4/sigma

    def test_generator_column_sums_zero(self):
        L = chang_cooper_generator(48, 6.0)
        np.testing.assert_allclose(L.sum(axis=0), 0.0, atol=1e-12)

    def test_negative_sigma_rejected(self):
        g = gaussian_grid_1d()
        with pytest.raises(ValueError):
            fokker_planck_step(g, -1.0, 0.1)


POWER_KERNEL = KernelSpec("power-law", c_manev=0.5, alpha=1.0, epsilon=0.25, dim=1)


class TestStrang:
    def test_sigma_zero_no_kernel_is_pure_transport(self):
        g = gaussian_grid_1d()
        a = strang_step(g, None, 0.0, 0.1)
        b = transport_step(transport_step(g, 0.05), 0.05)
        np.testing.assert_allclose(a.values, b.values, rtol=1e-12, atol=1e-15)
        assert a.time == pytest.approx(g.time + 0.1)

    def test_richardson_order(self):
        def solve(dt, T=0.4):
            g = gaussian_grid_1d(n_x=128, n_v=128, L_x=8.0, L_v=8.0)
            while g.time < T - 1e-12:
                g = strang_step(g, POWER_KERNEL, 0.5, dt)
            return g.values

        f1 = solve(0.2)
        f2 = solve(0.1)
        f4 = solve(0.05)
        e12 = np.abs(f1 - f2).max()
        e24 = np.abs(f2 - f4).max()
        order = np.log2(e12 / e24)
        assert 1.7 <= order <= 2.3

    def test_mass_loss_small_for_contained_data(self):
        g = gaussian_grid_1d(n_x=64, n_v=64, L_x=10.0, L_v=10.0)
        m0 = g.mass
        while g.time < 1.0 - 1e-12:
            g = strang_step(g, POWER_KERNEL, 0.5, 0.05)
        assert (m0 - g.mass) / m0 < 1e-6

    def test_max_principle_growth_rate(self):
        g = gaussian_grid_1d(n_x=48, n_v=48, v_scale=1.4)
        sigma, dt = 1.0, 0.05
        cur = g
        for _ in range(20):
            nxt = strang_step(cur, POWER_KERNEL, sigma, dt)
            bound = cur.values.max() * np.exp(cur.d * sigma * dt) * (1 + 1e-3)
            assert nxt.values.max() <= bound
            cur = nxt

    def test_boundary_warning_for_small_box(self):
        g = gaussian_grid_1d(n_x=16, n_v=16, L_x=2.0, L_v=2.0)
        with pytest.warns(RuntimeWarning):
            strang_step(g, None, 0.2, 0.1)

    def test_2d_runs_and_conserves(self):
        g = uniform_phase_grid(2, 6.0, 16, 6.0, 16)
        x2 = g.x_coords[:, None] ** 2 + g.x_coords[None, :] ** 2
        v2 = g.v_coords[:, None] ** 2 + g.v_coords[None, :] ** 2
        vals = np.exp(-x2 / 2)[:, :, None, None] * np.exp(-v2 / 2)[None, None, :, :]
        g = g.with_values(vals / (vals.sum() * g.cell_volume))
        spec2 = KernelSpec("manev-2d", c_manev=0.2, epsilon=0.5, dim=2)
        out = strang_step(g, spec2, 1.0, 0.05)
        assert np.all(out.values >= 0)
        assert out.mass <= g.mass + 1e-12
        assert out.mass >= 0.999 * g.mass


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        g = gaussian_grid_1d(n_x=32, n_v=48, mass=1.7)
        g = g.with_values(g.values, time=2.5, boundary_loss=3e-4)
        path = tmp_path / "state.bin"
        save_checkpoint(g, path)
        back = load_checkpoint(path)
        assert back.d == g.d
        assert (back.n_x, back.n_v) == (g.n_x, g.n_v)
        assert (back.L_x, back.L_v) == (g.L_x, g.L_v)
        assert back.time == g.time
        assert back.boundary_loss == g.boundary_loss
        np.testing.assert_array_equal(back.values, g.values)

    def test_round_trip_2d(self, tmp_path):
        rng = np.random.default_rng(1)
        g = uniform_phase_grid(2, 3.0, 6, 4.0, 5)
        g = g.with_values(rng.random((6, 6, 5, 5)), time=0.25)
        path = tmp_path / "state2.bin"
        save_checkpoint(g, path)
        back = load_checkpoint(path)
        np.testing.assert_array_equal(back.values, g.values)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"nope" + b"\0" * 100)
        with pytest.raises(ValueError):
            load_checkpoint(path)


class TestMomentsCsv:
    def test_export(self, tmp_path):
        g = gaussian_grid_1d(n_x=16, n_v=16)
        path = tmp_path / "moments.csv"
        export_moments_csv(g, path)
        import csv

        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["x0", "rho", "momentum0"]
        assert len(rows) == 17
        rho, _ = moments(g)
        got = np.array([float(r[1]) for r in rows[1:]])
        np.testing.assert_array_equal(got, rho.values)
