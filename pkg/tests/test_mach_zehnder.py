import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import zeno_leak
from projev.engine import BranchImpossibleError, enumerate_path_table, step_outcome_probabilities
from projev.errors import ConfigError, NonOrthonormalBasisError
from projev.hilbert import COMPLEMENT, DensityOperator, LatticeSpace, StateVector, family_residuals
from projev.mach_zehnder import (
    DeviceLayout,
    EpsilonRamp,
    TimeBasis,
    arrival_offsets,
    beam_splitter_effective,
    beam_splitter_family,
    beam_splitter_vectors,
    combined_device_operator,
    detection_distribution,
    device_power,
    forward_branch_filter,
    forward_times,
    free_family,
    mean_arrival_time,
    mean_arrival_time_closed_form,
    mean_arrival_time_over_emissions,
    model1_schedule,
    model2_schedule,
    phase_shifter_effective,
    phase_shifter_family,
    phase_shifter_pair_starts,
    spacetime_observable,
    time_channel_observable,
    time_operator_at,
)


@pytest.fixture(scope="module")
def lat():
    return LatticeSpace.from_bounds(0, 7, 0, 7)


def test_layout_ordering_and_bounds(lat):
    with pytest.raises(ConfigError):
        DeviceLayout(x_BS1=3, x_PS=3)
    with pytest.raises(ConfigError):
        DeviceLayout(x_D=9).validate(lat)
    with pytest.raises(ConfigError):
        DeviceLayout(x_BS2=6, x_D=7, x_Da=7).validate(LatticeSpace.from_bounds(0, 7, 0, 6))
    lay = DeviceLayout().with_phases(0.5, 0.2)
    assert lay.delta_phi == pytest.approx(0.3)
    assert lay.x_Da == lay.x_D == 6


def test_time_basis(lat):
    b = TimeBasis.fourier(lat)
    assert b.value(1, 2) == pytest.approx(np.exp(2j * np.pi * 2 / 8) / np.sqrt(8))
    loc = TimeBasis.localized(lat, [3, 0, 1, 2, 4, 5, 6, 7])
    assert loc.value(0, 3) == 1
    with pytest.raises(NonOrthonormalBasisError):
        TimeBasis(lat.time_points, np.ones((8, 8)))
    with pytest.raises(NonOrthonormalBasisError):
        TimeBasis.localized(lat, [0] * 8)


def test_epsilon_ramp():
    assert np.allclose(EpsilonRamp(4).values, [np.pi / 8, np.pi / 4, 3 * np.pi / 8, np.pi / 2])
    with pytest.raises(ConfigError):
        EpsilonRamp(0)


def test_beam_splitter_endpoints(lat):
    x = 1
    start = beam_splitter_family(lat, x, 0.0)
    end = beam_splitter_family(lat, x, np.pi / 2)
    a_in, a_out = lat.ket(3, x, "a").amplitudes, lat.ket(3, x + 1, "a").amplitudes
    # eps = 0 keeps the input slice, eps = pi/2 selects the output slice
    assert np.allclose(start[(1, 3)].matrix @ a_in, a_in)
    assert np.allclose(end[(1, 3)].matrix @ a_out, a_out)
    v = beam_splitter_vectors(lat, x, 0.37, 3)
    G = np.array([[np.vdot(p.amplitudes, q.amplitudes) for q in v] for p in v])
    assert np.allclose(G, np.eye(4))


def test_beam_splitter_effective(lat):
    fam = beam_splitter_effective(lat, 1)
    assert fam.kind == "kraus"
    assert family_residuals(fam)["completeness"] < 1e-12
    out = fam[(1, 0)].matrix @ lat.ket(0, 1, "a").amplitudes
    exp = (lat.ket(0, 2, "a").amplitudes + lat.ket(0, 2, "b").amplitudes) / np.sqrt(2)
    assert np.allclose(out, exp)
    assert np.allclose(fam[(3, 0)].matrix, -fam[(1, 0)].matrix.conj().T)
    # mirrored splitter returns a coherent (a + b) input to channel a
    mir = beam_splitter_effective(lat, 4, mirrored=True)
    psi = (lat.ket(0, 4, "a").amplitudes + lat.ket(0, 4, "b").amplitudes) / np.sqrt(2)
    assert np.allclose(mir[(1, 0)].matrix @ psi, lat.ket(0, 5, "a").amplitudes)


def test_phase_shifter(lat):
    assert phase_shifter_pair_starts(lat) == [0, 2, 4, 6]
    assert phase_shifter_pair_starts(lat, anchor=1) == [1, 3, 5, 7]
    assert phase_shifter_pair_starts(LatticeSpace.from_bounds(0, 4, 0, 4)) == [0, 2]
    lay = DeviceLayout(phi_a=0.4, phi_b=-0.1)
    eff = phase_shifter_effective(lat, lay)
    out = eff[(1, 2)].matrix @ lat.ket(2, lay.x_PS, "b").amplitudes
    assert np.allclose(out, np.exp(-0.1j) * lat.ket(3, lay.x_PS, "b").amplitudes)
    # the shifter wraps on an even circle
    out = eff[(1, 6)].matrix @ lat.ket(7, lay.x_PS, "a").amplitudes
    assert np.allclose(out, 0)
    fam = phase_shifter_family(lat, lay, 0.3)
    assert max(family_residuals(fam).values()) < 1e-12
    assert COMPLEMENT in fam.labels


@settings(max_examples=10, deadline=None)
@given(st.sampled_from([1, 2, 4, 8, 32]), st.sampled_from(["a", "b"]), st.integers(0, 7))
def test_zeno_leak_single_splitter(n, ch, t):
    lat = LatticeSpace.from_bounds(0, 7, 0, 7)
    amp = lat.ket(t, 1, ch).amplitudes
    for e in EpsilonRamp(n).values:
        fam = beam_splitter_family(lat, 1, e)
        amp = fam[(1, t)].matrix @ amp
    eff = beam_splitter_effective(lat, 1)[(1, t)].matrix @ lat.ket(t, 1, ch).amplitudes
    assert 1 - np.vdot(amp, amp).real == pytest.approx(zeno_leak(n), abs=1e-10)
    # the surviving amplitude points the same way as the effective output
    assert abs(np.vdot(eff, amp)) ** 2 == pytest.approx(np.vdot(amp, amp).real, abs=1e-10)


def test_combined_device_operator(lat):
    S = combined_device_operator(lat, DeviceLayout(phi_a=1.0))
    assert S.tag == "unitary"
    assert np.allclose(device_power(S, -3) @ device_power(S, 3), np.eye(lat.space_channel_dim))


def test_schedules(lat):
    b = TimeBasis.fourier(lat)
    lay = DeviceLayout()
    assert model1_schedule(lat, lay, b).names == ("Z", "F1", "BS1", "F2", "PS", "F3", "BS2", "F4", "D")
    ramp = model1_schedule(lat, lay, b, effective=EpsilonRamp(3))
    assert len(ramp) == 9 + 3 * 2
    assert "PS[2]" in ramp.names
    assert model2_schedule(lat, lay, b).names == ("Z", "DEV", "D")
    with pytest.raises(ConfigError):
        model1_schedule(lat, lay, b, effective="no")
    for step in model1_schedule(lat, lay, b):
        assert max(family_residuals(step.family).values()) < 1e-10


def test_free_family_moves_orbit(lat):
    b = TimeBasis.fourier(lat)
    F = free_family(lat, b)
    # orbit t -> |t> S^t |x>: the projector keeps a free orbit's component
    orbit = sum(b.value(2, t) * lat.ket(t, (1 + t) % 8, "a").amplitudes for t in lat.time_points)
    assert np.allclose(F[2].matrix @ orbit, orbit)


def test_forward_times_match_enumeration(lat):
    b = TimeBasis.fourier(lat)
    lay = DeviceLayout(phi_a=0.3)
    sch = model1_schedule(lat, lay, b)
    fw = enumerate_path_table(sch, lat.ket(0, 0, "a"), branch_filter=forward_branch_filter)
    ft = forward_times(lay, 0)
    for path, p in fw.as_dict().items():
        assert path[2] == (1, ft["t_BS1"])
        assert path[4] == (1, ft["t_PS"])
        assert path[6] == (1, ft["t_BS2"])
        assert path[8] in ((ft["t_D"], "a"), (ft["t_D"], "b"), COMPLEMENT)
    assert arrival_offsets(fw, lay) == [ft["t_D"] - ft["t_Z"] - (lay.x_D - lay.x_Z)]


@pytest.mark.parametrize("n", [6, 10])
def test_model2_other_lattices(n):
    lat = LatticeSpace.from_bounds(0, n - 1, 0, n - 1)
    lay = DeviceLayout(x_Z=0, x_BS1=1, x_PS=2, x_BS2=3, x_D=n - 1, phi_a=0.9, phi_b=0.9)
    det = detection_distribution(model2_schedule(lat, lay, TimeBasis.fourier(lat)), lat.ket(0, 0, "a"))
    assert det.channel_masses()["b"] < 1e-12
    assert det.detected > 0


def test_detection_modes_agree(lat):
    b = TimeBasis.fourier(lat)
    lay = DeviceLayout(phi_a=0.8)
    sch = model2_schedule(lat, lay, b)
    psi = lat.ket(0, 0, "a")
    en = detection_distribution(sch, psi, "enumerate")
    ex = detection_distribution(sch, psi, "exact")
    for k in en.masses:
        assert en.masses[k] == pytest.approx(ex.masses[k], abs=1e-12)
    rows = en.rows()
    assert rows[-1][:2] == ("", COMPLEMENT)
    assert sum(r[2] for r in rows) == pytest.approx(1, abs=1e-12)
    sm = detection_distribution(sch, psi, "sample", shots=4000, seed=3)
    pa = en.channel_masses()["a"]
    assert abs(sm.channel_masses()["a"] - pa) < 4 * math.sqrt(pa * (1 - pa) / 4000)
    with pytest.raises(ConfigError):
        detection_distribution(sch, psi, "sample")
    assert en.mean_arrival_time() == pytest.approx(lay.x_D - lay.x_Z)


def test_observables(lat):
    assert max(family_residuals(time_channel_observable(lat)).values()) < 1e-12
    assert max(family_residuals(spacetime_observable(lat)).values()) < 1e-12
    T = time_operator_at(lat, 2)
    assert T.matrix[lat.index(5, 2, "b"), lat.index(5, 2, "b")] == 5
    assert T.matrix[lat.index(5, 3, "b"), lat.index(5, 3, "b")] == 0


def test_arrival_time_localized_basis(lat):
    lay = DeviceLayout(x_Z=0, x_BS1=3, x_PS=4, x_BS2=5, x_D=6)
    loc = TimeBasis.localized(lat, [4, 0, 1, 2, 3, 5, 6, 7])
    # chi_0 sits on t = 4, which the orbit from t_Z = 1 reaches at x_BS1
    assert mean_arrival_time_closed_form(lat, lay, loc, 0, 1) == pytest.approx(4)
    # but a source click at t_Z = 1 can never be followed by the free branch chi_0
    with pytest.raises(BranchImpossibleError):
        mean_arrival_time(lat, lay, loc, 0, 1)


def test_arrival_time_over_emissions(lat):
    lay = DeviceLayout(x_Z=0, x_BS1=3, x_PS=4, x_BS2=5, x_D=6)
    b = TimeBasis.fourier(lat)
    amp = np.zeros(lat.dim, complex)
    for t, c in [(0, 0.6), (1, 0.8j)]:
        amp[lat.index(t, 0, "a")] = c
    psi = StateVector(amp)
    e = mean_arrival_time_over_emissions(lat, lay, b, 2, psi)
    c = mean_arrival_time_over_emissions(lat, lay, b, 2, psi, engine=False)
    assert e == pytest.approx(c, abs=1e-12)
    assert c == pytest.approx(0.36 * 3 / 8 + 0.64 * 4 / 8)
    w = step_outcome_probabilities(model2_schedule(lat, lay, b)[0].family, DensityOperator.from_ket(psi))
    assert w[1] == pytest.approx(0.64)
