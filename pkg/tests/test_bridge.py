import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from projev.bridge import (
    GeneratingSet,
    WavePacketProfile,
    branch_components,
    bridge_report,
    build_w1,
    fourier_derivative,
    level_lattice,
    localized_packet,
    mean_time,
    oscillator_hamiltonian,
    pev_family_from_generators,
    reference_unitary_check,
    slice_state,
    stationary_state,
    time_slice,
    time_wave_packet,
    two_level_hamiltonian,
)
from projev.engine import EvolutionSchedule, enumerate_path_table
from projev.errors import DimensionMismatchError, NonCommutingError, NotHermitianError
from projev.hilbert import DensityOperator, LinearOperator, family_residuals


def test_fourier_derivative_spectrum():
    D = fourier_derivative(range(6)).matrix
    w = np.sort(np.linalg.eigvalsh(D))
    assert np.allclose(w, np.sort(2 * np.pi * np.fft.fftfreq(6)))
    f = np.exp(-1j * (2 * np.pi / 6) * np.arange(6)) / np.sqrt(6)
    assert np.allclose(D @ f, (2 * np.pi / 6) * f)


def test_w1_checks():
    lat = level_lattice(4, 2)
    with pytest.raises(DimensionMismatchError):
        build_w1(lat, np.eye(3))
    with pytest.raises(NotHermitianError):
        build_w1(lat, np.array([[0, 1], [0, 0]]))
    with pytest.raises(NonCommutingError):
        GeneratingSet((build_w1(lat, two_level_hamiltonian()), LinearOperator(np.diag(np.arange(8.0)), "hermitian")))


def test_family_labels_and_size():
    lat = level_lattice(4, 2)
    fam = pev_family_from_generators(GeneratingSet.schrodinger(lat, two_level_hamiltonian()))
    assert len(fam) == 8
    assert max(family_residuals(fam).values()) < 1e-10
    energies = sorted({round(lab[1], 9) for lab in fam.labels})
    assert np.allclose(energies, np.linalg.eigvalsh(two_level_hamiltonian().matrix))


def test_stationarity_across_steps():
    lat = level_lattice(6, 2)
    fam = pev_family_from_generators(GeneratingSet.schrodinger(lat, two_level_hamiltonian()))
    rng = np.random.default_rng(0)
    v = rng.normal(size=lat.dim) + 1j * rng.normal(size=lat.dim)
    rho = DensityOperator.from_ket(v / np.linalg.norm(v))
    # the same family at every step: after the first collapse nothing changes
    sch = EvolutionSchedule.from_families([fam, fam, fam])
    tab = enumerate_path_table(sch, rho)
    for path in tab.paths():
        assert path[0] == path[1] == path[2]
    assert np.allclose(tab.conditional[:, 1:], 1.0)
    lab = fam.labels[3]
    comp = branch_components(fam, rho.ket)[lab]
    if comp.norm > 1e-6:
        st_ = stationary_state(fam, lab, rho)
        assert abs(np.vdot(st_.amplitudes, comp.amplitudes)) == pytest.approx(comp.norm)


def test_localized_packet_moves():
    H = oscillator_hamiltonian(3)
    lat = level_lattice(8, 3)
    fam = pev_family_from_generators(GeneratingSet.schrodinger(lat, H))
    base = np.array([1, 1j, 0.5]) / np.linalg.norm([1, 1j, 0.5])
    psi0 = slice_state(lat, 2, base)
    packet = localized_packet(fam, psi0, 3)
    assert mean_time(lat, packet) == pytest.approx(5)
    got = time_slice(lat, packet, 5)
    assert np.allclose(got, scipy.linalg.expm(-3j * H.matrix) @ base, atol=1e-10)


def test_packet_profiles():
    with pytest.raises(ValueError):
        WavePacketProfile({})
    lat = level_lattice(4, 2)
    fam = pev_family_from_generators(GeneratingSet.schrodinger(lat, two_level_hamiltonian()))
    prof = WavePacketProfile.gaussian(fam.labels, 0.0, 1.0)
    comps = branch_components(fam, slice_state(lat, 0, [1, 0]))
    assert time_wave_packet(prof, comps).norm > 0
    with pytest.raises(KeyError):
        time_wave_packet(WavePacketProfile({("x",): 1}), comps)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 4), st.integers(3, 9), st.integers(0, 8))
def test_random_hamiltonian_reconstruction(seed, n, n_time, t_prime):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    H = (A + A.conj().T) / 2
    s = rng.normal(size=n) + 1j * rng.normal(size=n)
    fids = reference_unitary_check(H, t_prime % n_time, s / np.linalg.norm(s), n_time)
    assert np.min(fids) >= 1 - 1e-9


def test_bridge_report():
    rep = bridge_report(two_level_hamiltonian(), 8)
    assert rep["family_size"] == 16
    assert rep["reconstruction_residual"] < 1e-10
    assert rep["min_fidelity"] >= 1 - 1e-10
    assert len(rep["fidelities"]) == 8
