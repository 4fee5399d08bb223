"""
Generating operators on a time circle and their stationary projection evolution.

The space is ``time (x) levels`` (time-major). ``W1 = D_t (x) I - I (x) H``
with ``D_t`` the spectral derivative: its eigenvectors are the lattice modes
``f_k(t) = exp(-i w_k t) / sqrt(N)`` with ``w_k = 2 pi k / N``, ``k`` in
the symmetric (fftfreq) order. The joint spectral family of ``W1`` and
``I (x) H`` is independent of the evolution step, so the first collapse fixes
the state for good.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from .engine import collapse
from .errors import BranchImpossibleError, DimensionMismatchError, NonCommutingError, NotHermitianError
from .hilbert import (
    COMMUTE_TOL,
    DensityOperator,
    LatticeSpace,
    LinearOperator,
    OperatorFamily,
    StateVector,
    fidelity,
    max_abs,
    spectral_family,
)


def level_lattice(n_time: int, n_levels: int, t0: int = 0) -> LatticeSpace:
    """Time circle times a level factor, encoded as a one-channel lattice."""
    return LatticeSpace(tuple(range(t0, t0 + n_time)), tuple(range(n_levels)), ("0",))


def two_level_hamiltonian() -> LinearOperator:
    return LinearOperator(np.array([[0.0, 0.4], [0.4, 1.0]]), "hermitian")


def oscillator_hamiltonian(n_levels: int = 4) -> LinearOperator:
    """Truncated oscillator ``diag(n + 1/2)``, ``n < n_levels``."""
    return LinearOperator(np.diag(np.arange(n_levels) + 0.5), "hermitian")


BUILTIN_HAMILTONIANS = {"two_level": two_level_hamiltonian, "oscillator": oscillator_hamiltonian}


def fourier_frequencies(n_time: int) -> np.ndarray:
    return 2 * np.pi * np.fft.fftfreq(n_time)


def fourier_modes(time_points: Sequence[int]) -> np.ndarray:
    """``modes[k, it] = exp(-i w_k t) / sqrt(N)``."""
    t = np.asarray(time_points, dtype=float)
    w = fourier_frequencies(len(t))
    return np.exp(-1j * np.outer(w, t)) / np.sqrt(len(t))


def fourier_derivative(time_points: Sequence[int]) -> LinearOperator:
    """Hermitian ``D_t = sum_k w_k |f_k><f_k|`` (lattice analog of ``i d/dt``)."""
    f = fourier_modes(time_points)
    w = fourier_frequencies(len(time_points))
    D = (f.T * w) @ f.conj()
    return LinearOperator((D + D.conj().T) / 2, "hermitian")


def _as_matrix(H) -> np.ndarray:
    return H.matrix if isinstance(H, LinearOperator) else np.asarray(H, dtype=complex)


def build_w1(lattice: LatticeSpace, H) -> LinearOperator:
    """``W1 = D_t (x) I - I (x) H``."""
    h = _as_matrix(H)
    n = lattice.space_channel_dim
    if h.shape != (n, n):
        raise DimensionMismatchError(f"H has shape {h.shape}, level factor has dimension {n}")
    if max_abs(h - h.conj().T) > 1e-10:
        raise NotHermitianError("H must be Hermitian")
    D = fourier_derivative(lattice.time_points).matrix
    W = np.kron(D, np.eye(n)) - np.kron(np.eye(lattice.n_time), h)
    return LinearOperator((W + W.conj().T) / 2, "hermitian", check=False)


def lift_hamiltonian(lattice: LatticeSpace, H) -> LinearOperator:
    """``I (x) H`` on the full space."""
    return LinearOperator(np.kron(np.eye(lattice.n_time), _as_matrix(H)), "hermitian", check=False)


@dataclass(frozen=True)
class GeneratingSet:
    """Pairwise commuting Hermitian operators with names."""

    operators: tuple[LinearOperator, ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        ops = tuple(self.operators)
        names = tuple(self.names) or tuple(f"W{i + 1}" for i in range(len(ops)))
        if len(names) != len(ops):
            raise ValueError("one name per operator")
        for op in ops:
            if max_abs(op.matrix - op.matrix.conj().T) > 1e-10:
                raise NotHermitianError("generating operators must be Hermitian")
        for i in range(len(ops)):
            for j in range(i + 1, len(ops)):
                a, b = ops[i].matrix, ops[j].matrix
                if max_abs(a @ b - b @ a) > COMMUTE_TOL:
                    raise NonCommutingError(f"{names[i]} and {names[j]} do not commute")
        object.__setattr__(self, "operators", ops)
        object.__setattr__(self, "names", names)

    @classmethod
    def schrodinger(cls, lattice: LatticeSpace, H) -> "GeneratingSet":
        """``{W1, I (x) H}``: the energy acts as the residual label."""
        return cls((build_w1(lattice, H), lift_hamiltonian(lattice, H)), ("W1", "H"))


def pev_family_from_generators(gs: GeneratingSet) -> OperatorFamily:
    """Joint spectral projectors; labels are eigenvalue tuples ``(w, ...)``."""
    return spectral_family(list(gs.operators))


def stationary_state(family: OperatorFamily, label, rho0) -> StateVector:
    """Collapsed pure state of the branch ``label``."""
    rho, _ = collapse(family, label, rho0)
    if rho.ket is None:
        w, v = np.linalg.eigh(rho.matrix)
        if w[-1] < 1 - 1e-10:
            raise ValueError("collapsed state is mixed; start from a pure state")
        return StateVector(v[:, -1])
    return StateVector(rho.ket)


@dataclass(frozen=True)
class WavePacketProfile:
    """Complex weight per spectral label of a stationary family."""

    amplitudes: Mapping

    def __post_init__(self):
        amps = {k: complex(v) for k, v in dict(self.amplitudes).items()}
        if not amps or all(v == 0 for v in amps.values()):
            raise ValueError("wave packet profile must have a nonzero weight")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def plane(cls, labels, t_shift: float) -> "WavePacketProfile":
        """``a(w) = exp(+i w t_shift)`` on every label, with ``w`` the first label entry."""
        return cls({lab: np.exp(1j * _w(lab) * t_shift) for lab in labels})

    @classmethod
    def gaussian(cls, labels, center: float, width: float, t_shift: float = 0.0) -> "WavePacketProfile":
        return cls(
            {lab: np.exp(-((_w(lab) - center) ** 2) / (2 * width**2) + 1j * _w(lab) * t_shift) for lab in labels}
        )


def _w(label) -> float:
    return float(label[0] if isinstance(label, tuple) else label)


def time_wave_packet(profile: WavePacketProfile, branch_states: Mapping) -> StateVector:
    """``sum_w a(w) Phi_w`` over the labels present in both arguments."""
    out = None
    for lab, a in profile.amplitudes.items():
        if lab not in branch_states:
            continue
        v = branch_states[lab]
        amp = v.amplitudes if isinstance(v, StateVector) else np.asarray(v)
        out = a * amp if out is None else out + a * amp
    if out is None:
        raise KeyError("profile and branch states share no labels")
    return StateVector(out)


def branch_components(family: OperatorFamily, psi0) -> dict:
    """Unnormalized ``E_nu psi0`` for every label (zero branches included)."""
    amp = psi0.amplitudes if isinstance(psi0, StateVector) else np.asarray(psi0, complex)
    return {lab: StateVector(family[lab].matrix @ amp) for lab in family.labels}


def localized_packet(family: OperatorFamily, psi0, t_shift: int) -> StateVector:
    """``sum_nu exp(i w_nu s) E_nu psi0`` with ``s = t_shift``.

    For ``psi0`` supported on one time slice ``t'`` the result sits on the
    slice ``t' + s`` (wrapped on the circle).
    """
    prof = WavePacketProfile.plane(family.labels, t_shift)
    return time_wave_packet(prof, branch_components(family, psi0))


def time_slice(lattice: LatticeSpace, state, t: int) -> np.ndarray:
    amp = state.amplitudes if isinstance(state, StateVector) else np.asarray(state)
    it = (int(t) - lattice.time_points[0]) % lattice.n_time
    n = lattice.space_channel_dim
    return np.asarray(amp[it * n : (it + 1) * n])


def slice_state(lattice: LatticeSpace, t: int, level_state) -> StateVector:
    """``|t> (x) level_state`` on the full space."""
    v = np.zeros(lattice.dim, complex)
    it = (int(t) - lattice.time_points[0]) % lattice.n_time
    n = lattice.space_channel_dim
    v[it * n : (it + 1) * n] = np.asarray(level_state, complex)
    return StateVector(v)


def mean_time(lattice: LatticeSpace, state) -> float:
    """``sum_{t,n} t |psi(t, n)|^2`` divided by the squared norm."""
    amp = state.amplitudes if isinstance(state, StateVector) else np.asarray(state)
    w = (np.abs(amp.reshape(lattice.n_time, -1)) ** 2).sum(axis=1)
    tot = w.sum()
    if tot == 0:
        raise ValueError("zero state has no mean time")
    return float(np.dot(np.asarray(lattice.time_points, float), w) / tot)


def reference_unitary_check(H, t_prime: int, state, n_time: int, family: OperatorFamily | None = None) -> np.ndarray:
    """Fidelities between packet slices and the exact propagator, one per shift.

    For every ``s = 0..n_time-1`` a packet is built from ``|t'> (x) state``
    with profile ``exp(i w s)`` over all labels; its slice at ``t' + s`` is
    compared with ``exp(-i H s) state``.
    """
    h = _as_matrix(H)
    lat = level_lattice(n_time, h.shape[0])
    fam = family if family is not None else pev_family_from_generators(GeneratingSet.schrodinger(lat, h))
    base = np.asarray(state.amplitudes if isinstance(state, StateVector) else state, complex)
    psi0 = slice_state(lat, t_prime, base)
    comps = branch_components(fam, psi0)
    out = np.empty(n_time)
    for s in range(n_time):
        packet = time_wave_packet(WavePacketProfile.plane(fam.labels, s), comps)
        got = StateVector(time_slice(lat, packet, t_prime + s))
        ref = StateVector(scipy.linalg.expm(-1j * h * s) @ base)
        out[s] = fidelity(got, ref) if got.norm > 0 else 0.0
    return out


def bridge_report(H, n_time: int, t_prime: int = 0, state=None) -> dict:
    """Summary numbers for the command-line demo."""
    h = _as_matrix(H)
    lat = level_lattice(n_time, h.shape[0])
    gs = GeneratingSet.schrodinger(lat, h)
    fam = pev_family_from_generators(gs)
    base = np.zeros(h.shape[0], complex)
    base[0] = 1.0
    if state is not None:
        base = np.asarray(state, complex)
    base = base / np.linalg.norm(base)
    fids = reference_unitary_check(h, t_prime, base, n_time, fam)
    recon = max(
        max_abs(sum(lab[i] * fam[lab].matrix for lab in fam.labels) - op.matrix) for i, op in enumerate(gs.operators)
    )
    return {
        "n_time": n_time,
        "levels": int(h.shape[0]),
        "family_size": len(fam),
        "reconstruction_residual": float(recon),
        "min_fidelity": float(fids.min()),
        "fidelities": [float(f) for f in fids],
    }
