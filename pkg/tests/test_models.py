import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from catstab.errors import ConfigError, DimensionError, HierarchyWarning
from catstab.fock import DensityMatrix, ModeLayout, cat_state, destroy, embed, fock_state, partial_trace
from catstab.lindblad import dissipator_apply, evolve, liouvillian_apply
from catstab.models import (
    EffectiveParams,
    PumpParams,
    ThreeModeParams,
    alpha_from_drive,
    build_model,
    check_rate_hierarchy,
    default_n_tilde,
    effective_model,
    load_params,
    params_from_dict,
    params_to_dict,
    parity_pump_frequency,
    pump_g_2ph,
    pump_g_ps,
    rate_kappa_2ph,
    rate_kappa_ps,
    three_mode_model,
    two_mode_reduced_model,
    two_photon_pump_frequency,
)
from catstab.observables import fidelity

# frozen values of the parity-selection rate formula
KAPPA_PS_OPTIMUM = 3200.0 / 4.2
KAPPA_PS_BLACK = 223.60248447204967

SMALL3 = ModeLayout((8, 2, 2))


def hermitian_defect(model):
    h = np.asarray(model.hamiltonian.matrix)
    return float(np.max(np.abs(h - h.conj().T)))


def pump(**kw):
    base = dict(eps_p=1.0, eps_p_prime=1.0, omega_s=5.0, omega_r1=7.0, omega_r2=9.0,
                omega_p=3.0, omega_p_prime=4.0, chi_sr1=2.0, chi_r2r2=1.0, chi_sr2=4.0)
    base.update(kw)
    return PumpParams(**base)


class TestRates:
    def test_two_photon(self):
        assert rate_kappa_2ph(250, 1000) == 250
        assert rate_kappa_2ph(0, 7) == 0
        assert rate_kappa_2ph(50, 1000) == 10

    def test_parity_selection(self):
        assert rate_kappa_ps(400, 1000, 2) == pytest.approx(761.90, abs=0.01)
        assert rate_kappa_ps(400, 1000, 2) == pytest.approx(KAPPA_PS_OPTIMUM, rel=1e-12)
        assert abs(rate_kappa_ps(400, 1000, 2) - 760) / 760 < 0.005
        assert rate_kappa_ps(0, 1000, 2) == 0
        assert rate_kappa_ps(120, 1000, 2) == pytest.approx(KAPPA_PS_BLACK, rel=1e-12)

    def test_zero_divisors(self):
        with pytest.raises(ZeroDivisionError):
            rate_kappa_2ph(1, 0)
        with pytest.raises(ZeroDivisionError):
            rate_kappa_ps(1, 0, 2)

    def test_parity_selection_monotone_and_bounded(self):
        g = np.linspace(0, 5000, 100)
        rates = np.array([rate_kappa_ps(x, 1000, 2) for x in g])
        assert np.all(np.diff(rates) > 0)
        assert np.all(rates < 1000)

    @given(st.floats(min_value=1e-3, max_value=1e4), st.floats(min_value=1.0, max_value=1e4),
           st.integers(min_value=0, max_value=6))
    def test_parity_selection_below_readout_rate(self, g, k, n):
        assert 0 <= rate_kappa_ps(g, k, n) < k


class TestDrive:
    def test_alpha(self):
        assert alpha_from_drive(1000, 250, 1000)[0] == pytest.approx(2)
        assert alpha_from_drive(200, 50, 1000)[0] == pytest.approx(2)
        assert alpha_from_drive(13, 13, 100)[0] == pytest.approx(1)

    def test_drive_consistent_with_alpha(self):
        alpha, eps = alpha_from_drive(1000, 250, 1000)
        k2 = rate_kappa_2ph(250, 1000)
        assert math.sqrt(2 * eps / k2) == pytest.approx(abs(alpha))

    def test_zero_coupling(self):
        with pytest.raises(ZeroDivisionError):
            alpha_from_drive(1, 0, 1)

    def test_pump_couplings(self):
        assert pump_g_2ph(pump(eps_p=0.0)) == 0
        base = pump()
        assert pump_g_2ph(pump(eps_p=2.0)) == pytest.approx(2 * pump_g_2ph(base))
        assert pump_g_ps(pump(eps_p_prime=2.0)) == pytest.approx(4 * pump_g_ps(base))
        # chi_sr1 = 2, eps_p / (omega_p - omega_r1) = 10
        assert pump_g_2ph(pump(eps_p=20.0, omega_p=9.0, omega_r1=7.0, chi_sr1=2.0)) == pytest.approx(10)

    def test_resonant_pump(self):
        with pytest.raises(ZeroDivisionError):
            pump_g_2ph(pump(omega_p=7.0))
        with pytest.raises(ZeroDivisionError):
            pump_g_ps(pump(omega_p_prime=9.0))

    def test_pump_frequencies(self):
        assert two_photon_pump_frequency(5.0, 7.0) == 3.0
        assert parity_pump_frequency(10.0, 50.0, 2.0, 2) == 16.0
        tuned = PumpParams.tuned(1.0, 1.0, 5.0, 7.0, 50.0, 2.0, 1.0, 2.0, 2)
        assert tuned.omega_p == 3.0 and tuned.omega_p_prime == 18.5

    def test_positive_frequencies(self):
        with pytest.raises(ValueError):
            pump(omega_s=0.0)

    def test_default_n_tilde(self):
        assert default_n_tilde(2) == 2
        # exact ties break downward
        assert default_n_tilde(1) == 0
        assert default_n_tilde(3) == 4
        assert default_n_tilde(math.sqrt(5.4)) == 3


class TestHierarchy:
    def test_optimum_is_clean(self):
        assert check_rate_hierarchy(ThreeModeParams()) == []

    def test_selectivity(self):
        issues = check_rate_hierarchy(ThreeModeParams(chi_sr2=1000.0))
        assert any("selectivity" in msg for msg in issues)

    def test_adiabaticity(self):
        issues = check_rate_hierarchy(ThreeModeParams(g_2ph=2000.0))
        assert any("adiabaticity" in msg for msg in issues)

    def test_emits_warnings(self):
        with pytest.warns(HierarchyWarning):
            check_rate_hierarchy(ThreeModeParams(chi_sr2=1000.0), emit=True)


class TestEffectiveModel:
    def test_terms(self):
        model = effective_model(EffectiveParams())
        assert len(model.collapse_terms) == 3
        rates = [r for r, _ in model.collapse_terms]
        assert rates == [250.0, 1.0, 760.0]
        assert hermitian_defect(model) < 1e-12

    def test_parity_jump(self):
        model = effective_model(EffectiveParams(dim=8))
        jump_op = np.asarray(model.collapse_terms[2][1].matrix)
        assert jump_op[4, 5] == 1 and np.count_nonzero(jump_op) == 1
        odd = effective_model(EffectiveParams(dim=8, target_parity="-"))
        jump_odd = np.asarray(odd.collapse_terms[2][1].matrix)
        assert jump_odd[3, 4] == 1 and np.count_nonzero(jump_odd) == 1

    def test_reduces_to_two_photon_model(self):
        p = EffectiveParams(kappa_1ph=0.0, kappa_ps=0.0, dim=10, eps_2ph=3.0)
        model = effective_model(p)
        a = np.asarray(destroy(10).matrix)
        a2 = a @ a
        h = 1j * (3.0 * a2.conj().T - 3.0 * a2)
        rho = DensityMatrix.from_state(cat_state(0.8 + 0.4j, "+", 10)).matrix
        expected = -1j * (h @ rho - rho @ h) + 250.0 * dissipator_apply(a2, rho)
        assert np.allclose(liouvillian_apply(model, rho), expected, atol=1e-10)

    def test_for_alpha(self):
        p = EffectiveParams.for_alpha(2.0, 250.0)
        assert p.alpha == pytest.approx(2.0)
        assert p.n_tilde == 2

    def test_odd_parity_stays_zero(self):
        p = EffectiveParams(kappa_1ph=0.0, kappa_ps=0.0, eps_2ph=500.0)
        odd = np.diag((np.arange(p.dim) % 2).astype(float))
        rho0 = DensityMatrix.from_state(cat_state(1.0, "+", p.dim))
        series = evolve(effective_model(p), rho0, np.linspace(0, 0.05, 6),
                        observers={"odd": lambda r: np.trace(odd @ np.asarray(r.matrix)).real})
        assert np.max(np.abs(series["odd"])) < 1e-9


class TestThreeModeModel:
    def test_structure(self):
        model = three_mode_model(ThreeModeParams(layout=SMALL3))
        assert len(model.collapse_terms) == 3
        assert hermitian_defect(model) < 1e-12

    def test_layout_arity(self):
        with pytest.raises(DimensionError):
            three_mode_model(ThreeModeParams(layout=(8, 2)))
        with pytest.raises(DimensionError):
            two_mode_reduced_model(ThreeModeParams(layout=SMALL3))

    def test_free_model_keeps_vacuum(self):
        p = ThreeModeParams(g_2ph=0.0, g_ps=0.0, eps_r1=0.0, layout=SMALL3)
        model = three_mode_model(p)
        rho0 = DensityMatrix.from_state(fock_state(0, SMALL3.total))
        rho0 = DensityMatrix(rho0.matrix, SMALL3)
        series = evolve(model, rho0, [0.0, 0.5, 1.0], store_states=True)
        assert np.allclose(series.states[-1].matrix, rho0.matrix, atol=1e-12)

    def test_no_cross_kerr_in_readout_vacuum(self):
        p = ThreeModeParams(layout=SMALL3)
        h_full = np.asarray(three_mode_model(p).hamiltonian.matrix)
        h_nochi = np.asarray(three_mode_model(p.replace(chi_sr2=0.0)).hamiltonian.matrix)
        vac = np.zeros(2)
        vac[0] = 1.0
        proj = np.kron(np.eye(16), np.outer(vac, vac))
        assert np.allclose(proj @ h_full @ proj, proj @ h_nochi @ proj)

    def test_readout_r2_stays_empty_without_coupling(self):
        p = ThreeModeParams(g_2ph=250.0, g_ps=0.0, eps_r1=1000.0, layout=SMALL3)
        model = three_mode_model(p)
        n2 = np.asarray((embed(destroy(2), 2, SMALL3).dag() @ embed(destroy(2), 2, SMALL3)).matrix)
        rho0 = np.zeros((32, 32), dtype=complex)
        rho0[0, 0] = 1.0
        series = evolve(model, DensityMatrix(rho0, SMALL3), np.linspace(0, 0.02, 5),
                        observers={"n2": lambda r: np.trace(n2 @ np.asarray(r.matrix)).real})
        assert np.max(series["n2"]) <= 1e-8

    def test_self_kerr_flag(self):
        p = ThreeModeParams(layout=SMALL3, chi_ss=5.0)
        off = np.asarray(three_mode_model(p).hamiltonian.matrix)
        on = np.asarray(three_mode_model(p.replace(self_kerr=True)).hamiltonian.matrix)
        assert np.allclose(off, np.asarray(three_mode_model(p.replace(chi_ss=0.0)).hamiltonian.matrix))
        assert not np.allclose(off, on)


class TestTwoModeModel:
    def test_hermitian(self):
        model = two_mode_reduced_model(ThreeModeParams(layout=(10, 3)))
        assert hermitian_defect(model) < 1e-12

    def test_readout_vacuum_block_is_two_photon_model(self):
        p = ThreeModeParams(g_ps=0.0, layout=(10, 3))
        two = two_mode_reduced_model(p)
        eff = p.effective(10)
        single = effective_model(EffectiveParams(kappa_1ph=eff.kappa_1ph, kappa_2ph=eff.kappa_2ph,
                                                 kappa_ps=0.0, eps_2ph=eff.eps_2ph, dim=10))
        rng = np.random.default_rng(0)
        m = rng.normal(size=(10, 10)) + 1j * rng.normal(size=(10, 10))
        rho_s = m @ m.conj().T
        rho_s /= np.trace(rho_s)
        vac = np.zeros((3, 3))
        vac[0, 0] = 1.0
        out = liouvillian_apply(two, np.kron(rho_s, vac))
        assert np.allclose(out, np.kron(liouvillian_apply(single, rho_s), vac), atol=1e-9)

    def test_dressed_readout_loss_sums_to_plain_loss(self):
        p = ThreeModeParams(layout=(5, 3))
        model = two_mode_reduced_model(p)
        ns, n2 = 5, 3
        dressed = [op for rate, op in model.collapse_terms if rate == p.kappa_r2]
        assert len(dressed) == ns
        plain = np.kron(np.eye(ns), destroy(n2).matrix)
        rng = np.random.default_rng(5)
        for _ in range(5):
            pops = rng.uniform(size=ns)
            m = rng.normal(size=(n2, n2)) + 1j * rng.normal(size=(n2, n2))
            rho = np.kron(np.diag(pops / pops.sum()), m @ m.conj().T / np.trace(m @ m.conj().T))
            total = sum(dissipator_apply(op, rho) for op in dressed)
            assert np.allclose(total, dissipator_apply(plain, rho), atol=1e-12)

    def test_matches_effective_at_black_square(self, quiet):
        p = ThreeModeParams(g_2ph=50.0, g_ps=120.0, eps_r1=200.0, layout=(20, 3))
        target = cat_state(2.0, "+", 20)
        grid = np.linspace(0, 0.5, 26)
        rho0 = np.zeros((60, 60), dtype=complex)
        rho0[0, 0] = 1.0
        two = evolve(two_mode_reduced_model(p), DensityMatrix(rho0, p.layout), grid,
                     observers={"F": lambda r: fidelity(partial_trace(r, [0]), target)})
        vac = np.zeros((20, 20), dtype=complex)
        vac[0, 0] = 1.0
        eff = evolve(effective_model(p.effective(20)), DensityMatrix(vac), grid,
                     observers={"F": lambda r: fidelity(r, target)})
        assert np.max(np.abs(two["F"] - eff["F"])) <= 0.05


class TestParamsIO:
    def test_round_trip(self):
        p = ThreeModeParams(g_2ph=50.0, layout=(12, 3, 3))
        data = params_to_dict(p)
        assert data["layout"] == [12, 3, 3]
        assert params_from_dict("three_mode", json.loads(json.dumps(data))) == p

    def test_complex_drive(self):
        p = params_from_dict("effective", {"eps_2ph": [1.0, 2.0]})
        assert p.eps_2ph == complex(1, 2)
        assert params_to_dict(p)["eps_2ph"] == [1.0, 2.0]

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="chi_sr3"):
            params_from_dict("three_mode", {"chi_sr3": 1.0})

    def test_unknown_model(self):
        with pytest.raises(ConfigError):
            params_from_dict("four_mode", {})

    def test_invalid_value(self):
        with pytest.raises(ConfigError):
            params_from_dict("effective", {"kappa_1ph": -1.0})

    def test_two_mode_default_layout(self):
        assert params_from_dict("two_mode", {}).layout.dims == (20, 3)

    def test_load(self, tmp_path):
        path = tmp_path / "p.json"
        path.write_text(json.dumps({"kappa_ps": 0.0}))
        assert load_params("effective", path).kappa_ps == 0.0

    def test_build_model(self):
        assert build_model("effective", EffectiveParams(dim=6)).name == "effective"
        assert build_model("two_mode", ThreeModeParams(layout=(6, 2))).name == "two_mode"
        with pytest.raises(ConfigError):
            build_model("other", None)
