import math

import pytest
from hypothesis import given, settings, strategies as st
from scipy.constants import hbar

from qubitline.errors import ModelError
from qubitline.params import (DEFAULT_ATOM, TWO_PI, AtomParams, DriveSpec, FilterMode,
                              dbm_to_watts, thermal_occupancy, watts_to_dbm)


def test_dbm_round_trip():
    assert dbm_to_watts(-30.0) == pytest.approx(1e-6)
    assert watts_to_dbm(1e-3) == pytest.approx(0.0)
    assert dbm_to_watts(-math.inf) == 0.0
    assert watts_to_dbm(0.0) == -math.inf


@given(st.floats(-200, 20))
def test_dbm_watts_inverse(p):
    assert watts_to_dbm(dbm_to_watts(p)) == pytest.approx(p, abs=1e-9)


def test_thermal_occupancy_limits():
    assert thermal_occupancy(0.0, 1e10) == 0.0
    w = TWO_PI * 5.12e9
    assert thermal_occupancy(0.05, w) == pytest.approx(1 / math.expm1(hbar * w / (1.380649e-23 * 0.05)))
    # High-temperature limit kT/hbar w.
    assert thermal_occupancy(100.0, w) == pytest.approx(1.380649e-23 * 100 / (hbar * w), rel=0.01)


def test_default_device():
    assert DEFAULT_ATOM.omega01 == pytest.approx(TWO_PI * 5.12e9)
    assert DEFAULT_ATOM.gamma10 == pytest.approx(TWO_PI * 41e6)
    assert DEFAULT_ATOM.gamma2 == pytest.approx(TWO_PI * 21.5e6)


@pytest.mark.parametrize("kwargs", [dict(omega01=-1.0, gamma10=1.0),
                                    dict(omega01=1.0, gamma10=-1.0),
                                    dict(omega01=1.0, gamma10=0.0, gamma_phi=0.0),
                                    dict(omega01=1.0, gamma10=1.0, n_thermal=math.nan)])
def test_atom_validation(kwargs):
    with pytest.raises(ModelError):
        AtomParams(**kwargs)


def test_photon_number_calibration():
    # N = 2 pi P / (hbar w Gamma): about 1.14 at -128 dBm for this device.
    d = DriveSpec.from_power(DEFAULT_ATOM, -128.0)
    expected = TWO_PI * dbm_to_watts(-128.0) / (hbar * DEFAULT_ATOM.omega01 * DEFAULT_ATOM.gamma10)
    assert d.n_photons == pytest.approx(expected)
    assert d.omega_rabi == pytest.approx(DEFAULT_ATOM.gamma10 * math.sqrt(d.n_photons / math.pi))


@settings(max_examples=30)
@given(st.floats(1e-3, 1e3))
def test_drive_constructors_agree(n):
    a = DriveSpec.from_photon_number(DEFAULT_ATOM, n)
    b = DriveSpec.from_rabi(DEFAULT_ATOM, a.omega_rabi)
    c = DriveSpec.from_watts(DEFAULT_ATOM, a.power_watts)
    assert a.n_photons == pytest.approx(n, rel=1e-9)
    assert b.n_photons == pytest.approx(n, rel=1e-9)
    assert c.power_dbm == pytest.approx(a.power_dbm, abs=1e-9)


def test_drive_validation():
    with pytest.raises(ModelError):
        DriveSpec(-1.0, -120.0, 1.0)
    with pytest.raises(ModelError):
        DriveSpec(1.0, math.nan, 1.0)
    assert DriveSpec(1.0, -math.inf, 1.0).photon_flux == 0.0


def test_filter_mode():
    f = FilterMode.from_bandwidth(55e6)
    assert f.kappa == pytest.approx(TWO_PI * 55e6)
    assert f.bandwidth == pytest.approx(55e6)
    with pytest.raises(ModelError):
        FilterMode(1.0, n_max=2)
    with pytest.raises(ModelError):
        FilterMode(1.0, tap=0.0)
