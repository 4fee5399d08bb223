import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from projev.errors import (
    DependentVectorsError,
    DimensionMismatchError,
    IncompleteFamilyError,
    InvalidStateError,
    NonCommutingError,
    NotHermitianError,
    OvercompleteError,
    UnknownLabelError,
)
from projev.hilbert import (
    COMPLEMENT,
    DensityOperator,
    LatticeSpace,
    LinearOperator,
    OperatorFamily,
    StateVector,
    complete_family,
    family_residuals,
    fidelity,
    partial_trace,
    projector_onto_span,
    purity,
    random_density,
    random_unitary,
    spectral_family,
    tensor_product,
    trivial_family,
)

seeds = st.integers(0, 2**32 - 1)


def test_lattice_index_roundtrip():
    lat = LatticeSpace.from_bounds(1, 3, 2, 2)
    assert lat.dim == 5 * 5 * 2
    for i in range(lat.dim):
        assert lat.index(*lat.coords(i)) == i
    # time-major, then space, then channel
    assert lat.index(-1, -2, "a") == 0
    assert lat.index(-1, -2, "b") == 1
    assert lat.index(-1, -1, "a") == 2
    assert lat.index(0, -2, "a") == 10


def test_lattice_wraps():
    lat = LatticeSpace.from_bounds(0, 7, 0, 7)
    assert lat.index(8, 0, "a") == lat.index(0, 0, "a")
    assert lat.index(0, -1, "b") == lat.index(0, 7, "b")


def test_empty_lattice_rejected():
    with pytest.raises(ValueError):
        LatticeSpace.from_bounds(0, -1, 0, 3)


def test_state_vector_norm_and_normalize():
    v = StateVector([3, 4j])
    assert v.norm == pytest.approx(5)
    assert v.normalized().norm == pytest.approx(1)
    with pytest.raises(InvalidStateError):
        StateVector([0, 0]).normalized()
    with pytest.raises(InvalidStateError):
        StateVector([1, 0], norm=2.0)


def test_density_validation():
    with pytest.raises(InvalidStateError):
        DensityOperator(np.diag([0.5, 0.6]))
    with pytest.raises(InvalidStateError):
        DensityOperator(np.diag([1.5, -0.5]))
    with pytest.raises(InvalidStateError):
        DensityOperator(np.array([[0.5, 1], [0, 0.5]]))
    with pytest.raises(InvalidStateError):
        DensityOperator.from_ket([1, 1])
    rho = DensityOperator.from_ket(np.array([1, 1j]) / np.sqrt(2))
    assert purity(rho) == pytest.approx(1)
    assert purity(DensityOperator.maximally_mixed(4)) == pytest.approx(0.25)


def test_operator_tags():
    with pytest.raises(NotHermitianError):
        LinearOperator([[0, 1], [0, 0]], "hermitian")
    with pytest.raises(ValueError):
        LinearOperator(np.diag([1, 2]), "projector")
    with pytest.raises(ValueError):
        LinearOperator(np.diag([1, 2]), "unitary")
    with pytest.raises(DimensionMismatchError):
        LinearOperator(np.ones((2, 3)))


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_fidelity_phase_invariant(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=5) + 1j * rng.normal(size=5)
    a = StateVector(v)
    b = StateVector(np.exp(1j * rng.uniform(0, 6)) * 2.5 * v)
    assert fidelity(a, b) == pytest.approx(1, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(2, 4), st.integers(2, 3))
def test_partial_trace_of_product(seed, da, db):
    rng = np.random.default_rng(seed)
    ra, rb = random_density(da, rng), random_density(db, rng)
    w = np.kron(ra.matrix, rb.matrix)
    assert np.allclose(partial_trace(DensityOperator(w), (da, db), 0).matrix, ra.matrix, atol=1e-12)
    assert np.allclose(partial_trace(DensityOperator(w), (da, db), 1).matrix, rb.matrix, atol=1e-12)


def test_partial_trace_bell_is_mixed():
    phi = np.array([1, 0, 0, 1]) / np.sqrt(2)
    red = partial_trace(DensityOperator.from_ket(phi), (2, 2), 0)
    assert np.allclose(red.matrix, np.eye(2) / 2)
    with pytest.raises(DimensionMismatchError):
        partial_trace(DensityOperator.from_ket(phi), (2, 3), 0)


def test_tensor_product_dims():
    a = LinearOperator(np.eye(2))
    b = LinearOperator(np.diag([1, 0, 0]), "projector")
    assert tensor_product(a, b).dim == 6


def test_projector_onto_span():
    P = projector_onto_span([StateVector([1, 1, 0]), StateVector([1, -1, 0])])
    assert np.allclose(P.matrix, np.diag([1, 1, 0]))
    with pytest.raises(DependentVectorsError):
        projector_onto_span([StateVector([1, 1, 0]), StateVector([2, 2, 0])])


def test_complete_orthogonal_family():
    fam = complete_family([("x", np.diag([1, 0, 0]))], "orthogonal")
    assert fam.labels == ("x", COMPLEMENT)
    assert np.allclose(fam[COMPLEMENT].matrix, np.diag([0, 1, 1]))
    assert family_residuals(fam)["completeness"] < 1e-12
    full = complete_family([("x", np.diag([1, 0])), ("y", np.diag([0, 1]))], "orthogonal")
    assert COMPLEMENT not in full.labels


def test_complete_family_rejects_overlap():
    with pytest.raises(ValueError):
        complete_family([("x", np.diag([1, 0])), ("y", np.full((2, 2), 0.5))], "orthogonal")
    with pytest.raises(OvercompleteError):
        complete_family([("x", np.sqrt(2) * np.diag([1, 0]))], "kraus")


def test_trivial_family():
    fam = trivial_family(3)
    assert fam.labels == (COMPLEMENT,)
    assert np.allclose(fam[COMPLEMENT].matrix, np.eye(3))


def test_kraus_complement_projector_and_sqrt():
    # partial isometry: complement I - S is a projector and is used as is
    E = np.zeros((3, 3))
    E[1, 0] = 1
    fam = complete_family([("m", E)], "kraus")
    assert np.allclose(fam[COMPLEMENT].matrix, np.diag([0, 1, 1]))
    # generic contraction: complement is the square root
    fam2 = complete_family([("m", 0.6 * np.eye(2))], "kraus")
    assert np.allclose(fam2[COMPLEMENT].matrix, 0.8 * np.eye(2))
    assert family_residuals(fam2)["completeness"] < 1e-12


def test_family_checks():
    with pytest.raises(IncompleteFamilyError):
        OperatorFamily([("x", np.diag([1, 0]))], "orthogonal")
    with pytest.raises(IncompleteFamilyError):
        OperatorFamily([("x", np.array([[1, 1], [0, 0]])), ("y", np.array([[0, -1], [0, 1]]))], "orthogonal")
    with pytest.raises(ValueError):
        OperatorFamily([("x", np.eye(2)), ("x", np.zeros((2, 2)))], "orthogonal")
    with pytest.raises(UnknownLabelError):
        trivial_family(2)["missing"]


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(2, 6))
def test_spectral_family_reconstructs(seed, d):
    rng = np.random.default_rng(seed)
    U = random_unitary(d, rng)
    ev = rng.integers(-2, 3, size=d).astype(float)
    H = U @ np.diag(ev) @ U.conj().T
    fam = spectral_family([LinearOperator((H + H.conj().T) / 2, "hermitian")])
    assert len(fam) == len(set(ev))
    res = family_residuals(fam)
    assert max(res.values()) < 1e-10
    recon = sum(lab[0] * fam[lab].matrix for lab in fam.labels)
    assert np.allclose(recon, H, atol=1e-10)


def test_spectral_family_joint_and_noncommuting():
    A = np.diag([1.0, 1.0, 2.0, 2.0])
    B = np.diag([0.0, 1.0, 0.0, 1.0])
    fam = spectral_family([LinearOperator(A, "hermitian"), LinearOperator(B, "hermitian")])
    assert fam.labels == ((1.0, 0.0), (1.0, 1.0), (2.0, 0.0), (2.0, 1.0))
    X = np.array([[0, 1], [1, 0]])
    Z = np.diag([1, -1])
    with pytest.raises(NonCommutingError):
        spectral_family([LinearOperator(X, "hermitian"), LinearOperator(Z, "hermitian")])
    with pytest.raises(NotHermitianError):
        spectral_family([np.array([[0, 1], [0, 0]])])
