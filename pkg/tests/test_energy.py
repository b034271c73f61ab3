"""Free-energy surface tests: class energies, global potential, gradient."""

import numpy as np
import pytest

from hambr.energy import (
    BankEntry,
    EmptyBank,
    EmptyClass,
    EnergyParams,
    FeatureBank,
    ZeroMass,
    class_free_energy,
    dump_bank,
    global_potential,
    load_bank,
    potential_batch,
    riemannian_grad_U,
)
from hambr.sphere import UnitVector, geodesic_step, normalize, project_tangent

# frozen constants recomputed by tests/oracles/energy_constants.py
E_HALF_WEIGHT = -0.30685281944005466   # k=z, w=0.5, tau=1 -> ln 2 - 1
SHIFT_037 = 0.09942522733438669        # -tau*log(lam) at lam=0.37, tau=0.1


def e(i, d=3):
    v = np.zeros(d)
    v[i] = 1.0
    return UnitVector(v)


def single_entry_bank(feature, weight=1.0, class_id=0):
    bank = FeatureBank()
    bank.add(BankEntry(feature, weight, class_id))
    return bank


def random_bank(rng, d, n_entries, n_classes=2):
    bank = FeatureBank()
    for i in range(n_entries):
        bank.add(BankEntry(normalize(rng.standard_normal(d)),
                           float(rng.uniform(0.1, 1.0)), i % n_classes))
    return bank


class TestBankEntry:
    def test_weight_out_of_range(self):
        with pytest.raises(ValueError):
            BankEntry(e(0), 1.5, 0)

    def test_negative_class(self):
        with pytest.raises(ValueError):
            BankEntry(e(0), 0.5, -1)


class TestFeatureBank:
    def test_fifo_eviction(self):
        bank = FeatureBank(capacity_per_class=2)
        bank.add(BankEntry(e(0), 0.1, 0))
        bank.add(BankEntry(e(1), 0.2, 0))
        bank.add(BankEntry(e(2), 0.3, 0))
        weights = [entry.weight for entry in bank.entries(0)]
        assert weights == [0.2, 0.3]

    def test_round_trip_serialization(self, tmp_path):
        rng = np.random.default_rng(3)
        bank = random_bank(rng, 4, 6, n_classes=3)
        path = tmp_path / "bank.jsonl"
        with open(path, "w") as fh:
            dump_bank(bank, fh)
        with open(path) as fh:
            loaded = load_bank(fh)
        assert len(loaded) == len(bank)
        for c in bank.classes():
            orig = bank.entries(c)
            back = loaded.entries(c)
            for a, b in zip(orig, back):
                assert np.allclose(a.feature.coords, b.feature.coords)
                assert a.weight == pytest.approx(b.weight)


class TestClassFreeEnergy:
    def test_aligned_unit_weight(self):
        bank = single_entry_bank(e(0))
        val = class_free_energy(e(0), bank, 0, EnergyParams(tau_energy=0.5))
        assert val == pytest.approx(-1.0, abs=1e-12)

    def test_orthogonal_entry(self):
        bank = single_entry_bank(e(1))
        val = class_free_energy(e(0), bank, 0, EnergyParams(tau_energy=1.0))
        assert val == pytest.approx(0.0, abs=1e-12)

    def test_half_weight(self):
        bank = single_entry_bank(e(0), weight=0.5)
        val = class_free_energy(e(0), bank, 0, EnergyParams(tau_energy=1.0))
        assert val == pytest.approx(E_HALF_WEIGHT, abs=1e-12)

    def test_empty_class_raises(self):
        bank = single_entry_bank(e(0), class_id=1)
        with pytest.raises(EmptyClass):
            class_free_energy(e(0), bank, 0)

    def test_zero_mass_raises(self):
        bank = single_entry_bank(e(0), weight=0.0)
        with pytest.raises(ZeroMass):
            class_free_energy(e(0), bank, 0)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        entries = [BankEntry(normalize(rng.standard_normal(4)),
                             float(rng.uniform(0.2, 1.0)), 0) for _ in range(9)]
        z = normalize(rng.standard_normal(4))
        a = FeatureBank()
        a.extend(entries)
        b = FeatureBank()
        b.extend(entries[::-1])
        assert class_free_energy(z, a, 0) == pytest.approx(
            class_free_energy(z, b, 0), abs=1e-12)

    def test_weight_scaling_shifts_by_constant(self):
        rng = np.random.default_rng(9)
        z = normalize(rng.standard_normal(4))
        entries = [(normalize(rng.standard_normal(4)), float(rng.uniform(0.3, 0.9)))
                   for _ in range(6)]
        params = EnergyParams(tau_energy=0.1)
        base = FeatureBank()
        scaled = FeatureBank()
        for k, w in entries:
            base.add(BankEntry(k, w, 0))
            scaled.add(BankEntry(k, 0.37 * w, 0))
        shift = (class_free_energy(z, scaled, 0, params)
                 - class_free_energy(z, base, 0, params))
        assert shift == pytest.approx(SHIFT_037, abs=1e-12)


class TestGlobalPotential:
    def test_takes_the_min(self):
        bank = FeatureBank()
        bank.add(BankEntry(e(0), 1.0, 0))   # energy -1 at z=e0, tau=1
        bank.add(BankEntry(e(1), 1.0, 1))   # energy 0 at z=e0
        val, cls = global_potential(e(0), bank, EnergyParams(tau_energy=1.0))
        assert val == pytest.approx(-1.0)
        assert cls == 0

    def test_tie_breaks_to_smallest_id(self):
        bank = FeatureBank()
        bank.add(BankEntry(e(1), 1.0, 0))
        bank.add(BankEntry(e(2), 1.0, 1))   # both orthogonal to e0: equal energy
        _, cls = global_potential(e(0), bank, EnergyParams(tau_energy=1.0))
        assert cls == 0

    def test_single_class(self):
        bank = single_entry_bank(e(0), class_id=4)
        val, cls = global_potential(e(0), bank, EnergyParams(tau_energy=0.5))
        assert (val, cls) == (pytest.approx(-1.0), 4)

    def test_empty_bank_raises(self):
        with pytest.raises(EmptyBank):
            global_potential(e(0), FeatureBank())

    def test_weight_scaling_keeps_argmin_and_gradient(self):
        rng = np.random.default_rng(21)
        z = normalize(rng.standard_normal(4))
        params = EnergyParams(tau_energy=0.1)
        base = random_bank(rng, 4, 8, n_classes=2)
        scaled = FeatureBank()
        for c in base.classes():
            for entry in base.entries(c):
                scaled.add(BankEntry(entry.feature, 0.37 * entry.weight, c))
        _, c_base = global_potential(z, base, params)
        _, c_scaled = global_potential(z, scaled, params)
        assert c_base == c_scaled
        g_base = riemannian_grad_U(z, base, params)
        g_scaled = riemannian_grad_U(z, scaled, params)
        assert np.allclose(g_base.coords, g_scaled.coords, atol=1e-12)

    def test_grid_minimum_at_lone_unit_weight_feature(self):
        # singleton class: U over the whole sphere bottoms out at the feature
        for d in (2, 3):
            rng = np.random.default_rng(d)
            k = normalize(rng.standard_normal(d))
            bank = single_entry_bank(k)
            if d == 2:
                grid = np.stack([np.cos(t := np.linspace(0, 2 * np.pi, 720)),
                                 np.sin(t)], axis=1)
            else:
                grid = rng.standard_normal((4000, 3))
                grid /= np.linalg.norm(grid, axis=1)[:, None]
                grid = np.concatenate([grid, k.coords[None, :]])
            vals = potential_batch(grid, bank)
            best = grid[np.argmin(vals)]
            assert float(best @ k.coords) >= 1.0 - 1e-6

    def test_potential_batch_matches_scalar_path(self):
        rng = np.random.default_rng(33)
        bank = random_bank(rng, 5, 12, n_classes=3)
        pts = np.array([normalize(rng.standard_normal(5)).coords for _ in range(20)])
        batch = potential_batch(pts, bank)
        singles = [global_potential(UnitVector(p), bank)[0] for p in pts]
        assert np.allclose(batch, singles, atol=1e-12)


class TestRiemannianGrad:
    def test_aligned_entry_gives_zero_tangent(self):
        bank = single_entry_bank(e(0))
        g = riemannian_grad_U(e(0), bank)
        assert np.allclose(g.coords, 0.0, atol=1e-12)

    def test_orthogonal_entry(self):
        bank = single_entry_bank(e(1))
        g = riemannian_grad_U(e(0), bank, EnergyParams(tau_energy=1.0))
        assert np.allclose(g.coords, [0.0, -1.0, 0.0], atol=1e-12)

    def test_output_is_tangent(self):
        rng = np.random.default_rng(41)
        for _ in range(50):
            bank = random_bank(rng, 6, 10, n_classes=2)
            z = normalize(rng.standard_normal(6))
            g = riemannian_grad_U(z, bank)
            assert abs(float(g.coords @ z.coords)) <= 1e-9

    def test_matches_finite_differences(self):
        # directional derivative along random tangent directions, h=1e-5.
        # tau=1 keeps the one-sided truncation error (h/2 * U'') below the
        # 1e-4 relative tolerance; the acceptance suite covers the default
        # temperature with central differences.
        rng = np.random.default_rng(55)
        params = EnergyParams(tau_energy=1.0)
        h = 1e-5
        checked = 0
        while checked < 40:
            bank = random_bank(rng, 4, 5, n_classes=1)
            z = normalize(rng.standard_normal(4))
            u = project_tangent(rng.standard_normal(4), z)
            if u.norm < 1e-6:
                continue
            g = riemannian_grad_U(z, bank, params)
            analytic = float(g.coords @ u.coords)
            if abs(analytic) < 0.1:   # relative error needs a live derivative
                continue
            u0 = global_potential(z, bank, params)[0]
            u1 = global_potential(geodesic_step(z, u, h), bank, params)[0]
            fd = (u1 - u0) / h
            assert analytic == pytest.approx(fd, rel=1e-4)
            checked += 1
