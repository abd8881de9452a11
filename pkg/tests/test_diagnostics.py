import math

import numpy as np
import pytest

from manevlab.diagnostics import (
    CSV_COLUMNS,
    DiagnosticsRecord,
    default_kde,
    dissipation,
    entropy,
    entropy_split,
    free_energy,
    grid_record,
    lp_norm,
    negative_entropy_bound,
    particle_record,
    read_ndjson,
    second_moments,
    virial_margin_grid,
    virial_margin_particles,
    write_csv,
)
from manevlab.errors import SingularEvaluationError
from manevlab.kernels import KernelSpec
from manevlab.particles import InitialDataSpec, ParticleEnsemble, sample_initial
from manevlab.phase_grid import (
    fokker_planck_step,
    maxwellian_values,
    moments,
    uniform_phase_grid,
)


def maxwellian_grid(n=128, L=8.0, mass=1.0, d=1):
    g = uniform_phase_grid(d, L, n, L, n)
    return g.with_values(maxwellian_values(g, mass=mass))


def smooth_grid(n=96, L=6.0):
    g = uniform_phase_grid(1, L, n, L, n)
    x = g.x_coords[:, None]
    v = g.v_coords[None, :]
    vals = np.exp(-(x**2) / 2 - (v**4) / 4)
    return g.with_values(vals / (vals.sum() * g.cell_volume))


class TestLpNorm:
    def test_indicator_relation(self):
        g = uniform_phase_grid(1, 4.0, 32, 4.0, 32)
        vals = np.zeros((32, 32))
        vals[8:16, 8:24] = 3.0  # height 3 on 8x16 cells
        g = g.with_values(vals)
        mass = g.mass
        for p in (1.0, 2.0, 5.0 / 3.0):
            expect = mass ** (1 / p) * 3.0 ** (1 - 1 / p)
            assert lp_norm(g, p) == pytest.approx(expect, rel=1e-12)
        assert lp_norm(g, math.inf) == 3.0

    def test_invalid_p(self):
        g = maxwellian_grid(16)
        with pytest.raises(ValueError):
            lp_norm(g, -1.0)


class TestEntropy:
    def test_maxwellian_entropy_value(self):
        # 2D phase-space unit Gaussian: integral f log f = -1 - log(2 pi)
        g = maxwellian_grid(n=192, L=9.0)
        assert entropy(g) == pytest.approx(-1.0 - math.log(2 * math.pi), rel=1e-6)

    def test_split_identity(self):
        rng = np.random.default_rng(0)
        g = uniform_phase_grid(1, 4.0, 24, 4.0, 24)
        g = g.with_values(rng.random((24, 24)) * 3.0)
        pos, neg = entropy_split(g)
        assert pos >= 0 and neg >= 0
        assert entropy(g) == pytest.approx(pos - neg, abs=1e-13)

    def test_zero_cells_ignored(self):
        g = uniform_phase_grid(1, 4.0, 16, 4.0, 16)
        vals = np.zeros((16, 16))
        vals[8, 8] = 4.0
        g = g.with_values(vals)
        assert np.isfinite(entropy(g))


class TestSecondMomentsAndFreeEnergy:
    def test_maxwellian_kinetic(self):
        for d, n in ((1, 96), (2, 32)):
            g = maxwellian_grid(n=n, L=7.0, mass=2.0, d=d)
            kin, xmom = second_moments(g)
            assert kin == pytest.approx(d / 2 * 2.0, rel=1e-4)
            assert xmom == pytest.approx(d / 2 * 2.0, rel=1e-4)

    def test_scaling_degrees(self):
        spec = KernelSpec("power-law", c_manev=0.5, alpha=1.0, epsilon=0.3, dim=1)
        g = smooth_grid()
        g2 = g.with_values(2.0 * g.values)
        kin1, _ = second_moments(g)
        kin2, _ = second_moments(g2)
        assert kin2 == pytest.approx(2 * kin1, rel=1e-12)
        from manevlab.diagnostics import interaction_energy_of_grid

        i1 = interaction_energy_of_grid(g, spec)
        i2 = interaction_energy_of_grid(g2, spec)
        assert i2 == pytest.approx(4 * i1, rel=1e-10)

    def test_free_energy_fp_only_monotone(self):
        g = smooth_grid()
        fe = [free_energy(g, None)]
        for _ in range(30):
            g = fokker_planck_step(g, 1.0, 0.1)
            fe.append(free_energy(g, None))
        assert all(b <= a + 1e-10 for a, b in zip(fe, fe[1:]))

    def test_repulsive_interaction_subtraction_raises_energy(self):
        rep = KernelSpec("repulsive-power-law", c_manev=0.5, alpha=1.0,
                         epsilon=0.3, dim=1)
        att = KernelSpec("power-law", c_manev=0.5, alpha=1.0, epsilon=0.3, dim=1)
        g = smooth_grid()
        assert free_energy(g, rep) > free_energy(g, None) > free_energy(g, att)


class TestDissipation:
    def test_maxwellian_near_zero(self):
        g = maxwellian_grid(n=128, L=8.0)
        kin, _ = second_moments(g)
        assert dissipation(g) < 1e-4 * kin

    def test_constant_in_v_positive(self):
        g = uniform_phase_grid(1, 4.0, 16, 4.0, 16)
        vals = np.zeros((16, 16))
        vals[:, 4:12] = 1.0
        g = g.with_values(vals)
        assert dissipation(g) > 0

    def test_nonnegative_random(self):
        rng = np.random.default_rng(5)
        g = uniform_phase_grid(1, 4.0, 20, 4.0, 20)
        g = g.with_values(rng.random((20, 20)))
        assert dissipation(g) >= 0

    def test_refinement_consistency(self):
        def value(n):
            g = smooth_grid(n=n)
            return dissipation(g)

        assert value(96) == pytest.approx(value(192), rel=0.05)


class TestNegativeEntropyBound:
    def test_unit_gaussian(self):
        g = maxwellian_grid(n=128, L=8.0)
        lhs, rhs = negative_entropy_bound(g)
        assert lhs == pytest.approx(1.0 + math.log(2 * math.pi), rel=1e-3)
        assert rhs == pytest.approx(1.0 + 4 * math.pi / math.e, rel=1e-3)
        assert lhs <= rhs

    def test_holds_along_fp_run(self):
        g = smooth_grid()
        for _ in range(20):
            lhs, rhs = negative_entropy_bound(g)
            assert lhs <= rhs
            g = fokker_planck_step(g, 1.0, 0.1)


class TestVirialMargin:
    def gauss_cloud(self, mass=1.0, n=4000, seed=21):
        return sample_initial(InitialDataSpec("gaussian-gaussian", mass=mass),
                              n, seed=seed)

    def test_gaussian_value(self):
        # margin = 3 M sigma_v^2 - C_M M^2 E[1/|X-Y|^2], E = 1/(2 s^2) = 0.5
        ens = self.gauss_cloud()
        margin = virial_margin_particles(ens, c_manev=1.0)
        assert margin == pytest.approx(3.0 - 0.5, rel=0.05)

    def test_zero_coupling(self):
        ens = self.gauss_cloud()
        margin = virial_margin_particles(ens, c_manev=0.0)
        assert margin == pytest.approx(3.0, rel=0.05)
        assert margin >= 0

    def test_sign_flip_with_mass(self):
        # 3 M = M^2 / 2 at M = 6: below positive, above negative
        below = virial_margin_particles(self.gauss_cloud(mass=5.0), 1.0)
        above = virial_margin_particles(self.gauss_cloud(mass=7.0), 1.0)
        assert below > 0 > above

    def test_translation_invariance(self):
        ens = self.gauss_cloud(n=500)
        shifted = ParticleEnsemble(
            ens.positions + np.array([3.0, -2.0, 1.0]),
            ens.velocities, ens.weights, ens.time, ens.seed, ens.step_index,
        )
        a = virial_margin_particles(ens, 1.0)
        b = virial_margin_particles(shifted, 1.0)
        assert a == pytest.approx(b, rel=1e-12)

    def test_coincident_particles_raise(self):
        pos = np.zeros((2, 3))
        ens = ParticleEnsemble(pos, np.zeros((2, 3)), np.ones(2), 0.0, 0)
        with pytest.raises(SingularEvaluationError):
            virial_margin_particles(ens, 1.0)

    def test_grid_matches_double_loop_oracle(self):
        g = smooth_grid(n=24)
        rho, _ = moments(g)
        x = np.asarray(rho.axis_coords(0))
        w = rho.values * rho.cell_volume
        pair = 0.0
        for i in range(len(x)):
            for j in range(len(x)):
                if i != j:
                    pair += w[i] * w[j] / (x[i] - x[j]) ** 2
        kin, _ = second_moments(g)
        expect = 2 * kin - 0.7 * pair
        assert virial_margin_grid(g, 0.7) == pytest.approx(expect, rel=1e-10)


class TestRecords:
    def test_grid_record_fields(self):
        spec = KernelSpec("power-law", c_manev=0.3, alpha=1.0, epsilon=0.3, dim=1)
        g = smooth_grid()
        rec = grid_record(g, spec)
        assert rec.entropy is not None
        assert rec.dissipation is not None
        assert rec.min_pair_dist is None
        assert rec.lp_source == "grid"
        assert rec.l1 == pytest.approx(g.mass, rel=1e-10)
        assert rec.free_energy == pytest.approx(
            rec.kinetic + rec.entropy - rec.interaction, rel=1e-12
        )

    def test_particle_record_fields(self):
        spec = KernelSpec("manev-combined", c_manev=0.2, c_coulomb=0.1,
                          epsilon=0.05)
        ens = sample_initial(InitialDataSpec("gaussian-gaussian"), 300, seed=3)
        rec = particle_record(ens, spec, kde=default_kde(ens))
        assert rec.entropy is None
        assert rec.dissipation is None
        assert rec.free_energy is None
        assert rec.min_pair_dist is not None and rec.min_pair_dist > 0
        assert rec.lp_source == "kde"
        assert rec.l1 == pytest.approx(ens.mass, rel=0.02)
        assert rec.interaction is not None and rec.interaction > 0

    def test_ndjson_round_trip(self):
        rec = DiagnosticsRecord(t=0.5, mass=1.0, kinetic=1.5, entropy=None)
        back = DiagnosticsRecord.from_json(rec.to_json())
        assert back == rec

    def test_csv_layout(self, tmp_path):
        import csv

        recs = [
            DiagnosticsRecord(t=0.0, mass=1.0, kinetic=1.5),
            DiagnosticsRecord(t=0.1, mass=1.0, kinetic=1.4, entropy=-2.0),
        ]
        path = tmp_path / "diag.csv"
        write_csv(recs, path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == list(CSV_COLUMNS)
        assert rows[1][CSV_COLUMNS.index("kinetic")] == "1.5"
        assert rows[1][CSV_COLUMNS.index("entropy")] == ""
        assert rows[2][CSV_COLUMNS.index("entropy")] == "-2.0"

    def test_read_ndjson(self, tmp_path):
        recs = [
            DiagnosticsRecord(t=float(k), mass=1.0, kinetic=1.0 / (k + 1))
            for k in range(3)
        ]
        path = tmp_path / "diag.ndjson"
        path.write_text("".join(r.to_json() + "\n" for r in recs))
        back = read_ndjson(path)
        assert back == recs
