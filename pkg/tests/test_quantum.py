import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from qubitline.errors import (DegenerateSteadyStateError, RWAViolationError, TruncationError,
                              IntegrationError)
from qubitline.params import TWO_PI, AtomParams, DriveSpec, FilterMode
from qubitline.quantum import (DensityOperator, Liouvillian, build_atom_liouvillian,
                               build_cascaded_liouvillian, dag, dissipator, dump_snapshot, evolve,
                               lindbladian, load_snapshot, normalize_port, sigma_minus, sigma_z,
                               steady_state, two_time_correlator)


def bloch_steady_state(atom, drive, t_end=None):
    """Integrate the optical Bloch equations for <sigma_minus> and P_e."""
    g, g2, om = atom.gamma10, atom.gamma2, drive.omega_rabi
    delta = drive.detuning(atom)

    def rhs(_t, y):
        s = y[0] + 1j * y[1]
        pe = y[2]
        ds = (1j * delta - g2) * s + 0.5j * om * (2 * pe - 1)
        dpe = -om * s.imag - g * pe
        return [ds.real, ds.imag, dpe]

    t_end = t_end or 60.0 / min(g, g2)
    sol = solve_ivp(rhs, (0, t_end), [0.0, 0.0, 0.0], method="LSODA", rtol=1e-11, atol=1e-13)
    s = sol.y[0, -1] + 1j * sol.y[1, -1]
    return s, sol.y[2, -1]


def random_state(rng, d):
    z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    m = z @ dag(z)
    return m / np.trace(m).real


def test_operators():
    sm = sigma_minus()
    assert np.allclose(sm @ sm, 0)
    assert np.allclose(dag(sm) @ sm, np.diag([0, 1]))
    assert np.allclose(sigma_z(), dag(sm) @ sm - sm @ dag(sm))


def test_port_aliases():
    assert normalize_port("R") == "reflected"
    assert normalize_port("transmission") == "transmitted"
    with pytest.raises(ValueError):
        normalize_port("sideways")


@pytest.mark.parametrize("n,detuning_mhz", [(0.05, 0.0), (0.4, 0.0), (3.0, 0.0), (1.0, 15.0),
                                            (10.0, -40.0)])
def test_steady_state_matches_bloch_equations(atom, n, detuning_mhz):
    drive = DriveSpec.from_photon_number(atom, n, TWO_PI * detuning_mhz * 1e6)
    L = build_atom_liouvillian(atom, drive)
    rho = steady_state(L)
    rho.check()
    s, pe = bloch_steady_state(atom, drive)
    assert rho.expect(L.ops["sm"]) == pytest.approx(s, abs=1e-8)
    assert rho.matrix[1, 1].real == pytest.approx(pe, abs=1e-8)


def test_weak_drive_closed_form(atom):
    # Saturation formula for the steady-state excited population.
    drive = DriveSpec.from_photon_number(atom, 2.0, TWO_PI * 10e6)
    rho = steady_state(build_atom_liouvillian(atom, drive))
    g, g2, om, d = atom.gamma10, atom.gamma2, drive.omega_rabi, drive.detuning(atom)
    sat = om ** 2 * g2 / (g * (g2 ** 2 + d ** 2))
    assert rho.matrix[1, 1].real == pytest.approx(0.5 * sat / (1 + sat), rel=1e-10)


def test_damped_rabi_first_maximum(clean_atom):
    drive = DriveSpec.from_rabi(clean_atom, 10 * clean_atom.gamma10)
    L = build_atom_liouvillian(clean_atom, drive)
    rho0 = DensityOperator(np.diag([1.0, 0.0]).astype(complex))
    mu = math.sqrt(drive.omega_rabi ** 2 - clean_atom.gamma10 ** 2 / 16)
    t_guess = math.pi / mu
    ts = np.linspace(0.6 * t_guess, 1.4 * t_guess, 401)
    pe = [evolve(L, rho0, t).matrix[1, 1].real for t in ts]
    t_max = ts[int(np.argmax(pe))]
    assert t_max == pytest.approx(t_guess, rel=0.01)


def test_evolve_zero_time_and_negative(atom):
    L = build_atom_liouvillian(atom, DriveSpec.from_photon_number(atom, 1.0))
    rho0 = DensityOperator(np.diag([1.0, 0.0]).astype(complex))
    out = evolve(L, rho0, 0.0)
    assert np.array_equal(out.matrix, rho0.matrix) and out.matrix is not rho0.matrix
    with pytest.raises(ValueError):
        evolve(L, rho0, -1.0)


def test_long_time_evolution_reaches_steady_state(atom):
    L = build_atom_liouvillian(atom, DriveSpec.from_photon_number(atom, 2.0))
    rho0 = DensityOperator(np.diag([1.0, 0.0]).astype(complex))
    late = evolve(L, rho0, 50.0 / atom.gamma10)
    assert np.allclose(late.matrix, steady_state(L).matrix, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.01, 50.0), st.floats(0.0, 20.0))
def test_trace_and_positivity_preserved(seed, n, t_gamma):
    atom = AtomParams(TWO_PI * 5.12e9, TWO_PI * 41e6, TWO_PI * 1e6, 0.02)
    L = build_atom_liouvillian(atom, DriveSpec.from_photon_number(atom, n))
    rho0 = DensityOperator(random_state(np.random.default_rng(seed), 2))
    evolve(L, rho0, t_gamma / atom.gamma10).check(trace_tol=1e-8, positivity_tol=1e-8)


def test_propagator_is_completely_positive(atom):
    drive = DriveSpec.from_photon_number(atom, 5.0, TWO_PI * 20e6)
    for L in (build_atom_liouvillian(atom, drive),
              build_cascaded_liouvillian(atom, drive, FilterMode.from_bandwidth(55e6, 4, 0.1),
                                         "reflected")):
        d = L.dim
        prop = sla.expm(L.generator * 3e-9)
        choi = np.zeros((d * d, d * d), dtype=complex)
        for i in range(d):
            for j in range(d):
                e = np.zeros((d, d), dtype=complex)
                e[i, j] = 1
                choi += np.kron(e, (prop @ e.reshape(-1)).reshape(d, d))
        assert np.linalg.eigvalsh(0.5 * (choi + dag(choi)))[0] > -1e-9


def test_two_time_correlator_matches_explicit_expm(atom):
    drive = DriveSpec.from_photon_number(atom, 0.7, TWO_PI * 5e6)
    L = build_atom_liouvillian(atom, drive)
    rho = steady_state(L)
    sm, sp = L.ops["sm"], dag(L.ops["sm"])
    taus = np.array([0.0, 1e-9, 3.5e-9, 10e-9, 10e-9, 40e-9])
    got = two_time_correlator(L, sp, sm, taus, rho=rho)
    got4 = two_time_correlator(L, sp, sm, taus, mid=sp @ sm, rho=rho)
    for t, g, g4 in zip(taus, got, got4):
        v = sla.expm(L.generator * t) @ (sm @ rho.matrix).reshape(-1)
        assert g == pytest.approx(np.trace(sp @ v.reshape(2, 2)), abs=1e-12)
        w = sla.expm(L.generator * t) @ (sm @ rho.matrix @ sp).reshape(-1)
        assert g4 == pytest.approx(np.trace(sp @ sm @ w.reshape(2, 2)), abs=1e-12)
    with pytest.raises(ValueError):
        two_time_correlator(L, sp, sm, [1e-9, 0.0], rho=rho)


def test_degenerate_steady_state():
    h = np.zeros((2, 2), dtype=complex)
    L = Liouvillian(lindbladian(h, []), (2,), 1.0, h, ())
    with pytest.raises(DegenerateSteadyStateError):
        steady_state(L)


def test_rwa_violation(atom):
    with pytest.raises(RWAViolationError):
        build_atom_liouvillian(atom, DriveSpec.from_power(atom, -120, 0.2 * atom.omega01))


def test_truncation_error_when_filter_is_overfilled(atom):
    drive = DriveSpec.from_photon_number(atom, 50.0)
    L = build_cascaded_liouvillian(atom, drive, FilterMode.from_bandwidth(5e6, 4, 1.0),
                                   "transmitted")
    with pytest.raises(TruncationError):
        steady_state(L)


@pytest.mark.parametrize("port", ["reflected", "transmitted"])
def test_cascaded_reduced_atom_state_equals_atom_only(atom, port):
    drive = DriveSpec.from_photon_number(atom, 0.8)
    full = steady_state(build_cascaded_liouvillian(atom, drive,
                                                   FilterMode.from_bandwidth(55e6, 6, 0.2), port))
    nf = 7
    reduced = full.matrix.reshape(2, nf, 2, nf).trace(axis1=1, axis2=3)
    alone = steady_state(build_atom_liouvillian(atom, drive)).matrix
    assert np.allclose(reduced, alone, atol=1e-9)


def test_dissipator_is_trace_preserving():
    c = np.array([[0.3, 1.0], [0.2j, -0.5]])
    d = dissipator(c)
    rho = random_state(np.random.default_rng(1), 2)
    assert abs(np.trace((d @ rho.reshape(-1)).reshape(2, 2))) < 1e-14


def test_snapshot_round_trip():
    m = random_state(np.random.default_rng(3), 3)
    text = dump_snapshot(m, 2.5e10)
    back, freq = load_snapshot(text)
    assert np.array_equal(back, m) and freq == 2.5e10
    assert text.splitlines()[0] == "# dim = 3 3"


def test_integration_error_is_reported(atom, monkeypatch):
    import qubitline.quantum as q

    class Failed:
        status, t, message = -1, np.array([0.0, 1e-9]), "forced"
    monkeypatch.setattr(q, "solve_ivp", lambda *a, **k: Failed())
    L = build_atom_liouvillian(atom, DriveSpec.from_photon_number(atom, 1.0))
    with pytest.raises(IntegrationError, match="1.000000e-09"):
        evolve(L, DensityOperator(np.eye(2) / 2), 1e-8)
