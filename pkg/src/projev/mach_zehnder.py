"""
One-dimensional Mach-Zehnder interferometer on a space-time-channel lattice.

Two device models are built:

* model I: source, free steps, beam splitters and phase shifter as separate
  projection steps (effective Kraus operators or an epsilon ramp of
  projections), detectors;
* model II: source, one combined device step built like a free step with a
  modified shift operator, detectors.

Outcome labels: source ``t``; free and combined-device ``l``; beam splitter
``(1, t)`` / ``(3, t)``; phase shifter ``(1, t)`` / ``(2, t)``; detector
``(t, channel)``; complement ``"⊥"``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .engine import (
    EvolutionSchedule,
    PathTable,
    Step,
    collapse,
    enumerate_path_table,
    final_step_masses,
    sample_trajectories,
    step_outcome_probabilities,
)
from .errors import ConfigError, NonOrthonormalBasisError
from .hilbert import (
    COMPLEMENT,
    DensityOperator,
    LatticeSpace,
    LinearOperator,
    OperatorFamily,
    StateVector,
    complete_family,
    max_abs,
    projector_onto_span,
)

DEVICE_STEPS = ("BS1", "PS", "BS2")


# ---------------------------------------------------------------------------
# Configuration types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeviceLayout:
    """Positions of source, devices and detectors, and the two phases.

    ``bs2_mirrored`` swaps the roles of channels a and b in the second beam
    splitter of model I, so the two splitters undo each other when the phases
    are equal. ``ps_anchor`` fixes the parity of the time slots that the
    model-I phase shifter pairs as ``(t, t+1)``.
    """

    x_Z: int = 0
    x_BS1: int = 1
    x_PS: int = 3
    x_BS2: int = 4
    x_D: int = 6
    phi_a: float = 0.0
    phi_b: float = 0.0
    x_Da: int | None = None
    x_Db: int | None = None
    ps_anchor: int = 0
    bs2_mirrored: bool = True

    def __post_init__(self):
        xs = [self.x_Z, self.x_BS1, self.x_PS, self.x_BS2, self.x_D]
        if any(b <= a for a, b in zip(xs[:-1], xs[1:])):
            raise ConfigError(f"layout positions must satisfy x_Z < x_BS1 < x_PS < x_BS2 < x_D, got {xs}")
        if self.x_Da is None:
            object.__setattr__(self, "x_Da", self.x_D)
        if self.x_Db is None:
            object.__setattr__(self, "x_Db", self.x_D)

    @property
    def delta_phi(self) -> float:
        return float(self.phi_a - self.phi_b)

    def with_phases(self, phi_a: float, phi_b: float) -> "DeviceLayout":
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(phi_a=float(phi_a), phi_b=float(phi_b))
        return DeviceLayout(**kw)

    def validate(self, lattice: LatticeSpace):
        lo, hi = lattice.space_points[0], lattice.space_points[-1]
        for name in ("x_Z", "x_BS1", "x_PS", "x_BS2", "x_D", "x_Da", "x_Db"):
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ConfigError(f"layout.{name}={v} lies outside the space points [{lo}, {hi}]")
        for name in ("x_BS1", "x_BS2"):
            if getattr(self, name) + 1 > hi:
                raise ConfigError(f"layout.{name} needs an output site inside the lattice")


@dataclass(frozen=True)
class TimeBasis:
    """Orthonormal functions ``chi[l, it]`` over the lattice time points."""

    time_points: tuple[int, ...]
    chi: np.ndarray

    def __post_init__(self):
        chi = np.array(self.chi, dtype=complex)
        n = len(self.time_points)
        if chi.shape != (n, n):
            raise NonOrthonormalBasisError(f"expected a {n}x{n} array of time functions, got {chi.shape}")
        err = max_abs(chi.conj() @ chi.T - np.eye(n))
        if err > 1e-10:
            raise NonOrthonormalBasisError(f"time functions are not orthonormal (residual {err:.2e})")
        chi.flags.writeable = False
        object.__setattr__(self, "chi", chi)
        object.__setattr__(self, "time_points", tuple(int(t) for t in self.time_points))

    @classmethod
    def fourier(cls, lattice: LatticeSpace) -> "TimeBasis":
        """``chi_l(t) = N^{-1/2} exp(2 pi i l t / N)`` with ``t`` the time label."""
        t = np.array(lattice.time_points)
        n = len(t)
        l = np.arange(n)[:, None]
        return cls(lattice.time_points, np.exp(2j * np.pi * l * t[None, :] / n) / np.sqrt(n))

    @classmethod
    def localized(cls, lattice: LatticeSpace, order: Sequence[int] | None = None) -> "TimeBasis":
        """``chi_l`` concentrated on a single time label, ``order[l]``."""
        tp = lattice.time_points
        order = list(tp) if order is None else [int(t) for t in order]
        if sorted(order) != sorted(tp):
            raise NonOrthonormalBasisError("order must be a permutation of the time points")
        chi = np.zeros((len(tp), len(tp)), complex)
        for l, t in enumerate(order):
            chi[l, tp.index(t)] = 1.0
        return cls(tp, chi)

    @property
    def labels(self) -> tuple[int, ...]:
        return tuple(range(len(self.time_points)))

    def value(self, l: int, t: int) -> complex:
        it = (int(t) - self.time_points[0]) % len(self.time_points)
        return complex(self.chi[l, it])


@dataclass(frozen=True)
class EpsilonRamp:
    """Uniform ramp ``eps_k = (k / N) * pi / 2`` for ``k = 1..N``.

    The implicit starting point ``eps_0 = 0`` is the untouched input slice.
    """

    step_count: int

    def __post_init__(self):
        if int(self.step_count) < 1:
            raise ConfigError("ramp_steps must be a positive integer")

    @property
    def values(self) -> np.ndarray:
        n = int(self.step_count)
        return np.arange(1, n + 1) * (np.pi / 2) / n


# ---------------------------------------------------------------------------
# Shift operators and free evolution
# ---------------------------------------------------------------------------


def space_shift(lattice: LatticeSpace) -> np.ndarray:
    """``|x, s> -> |x+1, s>`` on the space-channel factor (wrapping)."""
    D = lattice.space_channel_dim
    S = np.zeros((D, D), complex)
    for x in lattice.space_points:
        for ch in lattice.channels:
            S[lattice.space_channel_index(x + 1, ch), lattice.space_channel_index(x, ch)] = 1.0
    return S


def shift_operator(lattice: LatticeSpace) -> LinearOperator:
    """Space shift on the full lattice, identity on time."""
    return LinearOperator(np.kron(np.eye(lattice.n_time), space_shift(lattice)), "unitary")


def _time_local_unitary(lattice: LatticeSpace, S: np.ndarray) -> np.ndarray:
    """Block-diagonal ``U = sum_t |t><t| (x) S^t``; negative powers use the adjoint."""
    D = lattice.space_channel_dim
    U = np.zeros((lattice.dim, lattice.dim), complex)
    for it, t in enumerate(lattice.time_points):
        base = S if t >= 0 else S.conj().T
        U[it * D : (it + 1) * D, it * D : (it + 1) * D] = np.linalg.matrix_power(base, abs(t))
    return U


def free_family(lattice: LatticeSpace, basis: TimeBasis, space_unitary: np.ndarray | None = None) -> OperatorFamily:
    """Projectors ``sum_{x,s} |phi_{l,x,s}><phi_{l,x,s}|`` with time-dependent shift powers.

    ``phi_{l,x,s}(t) = chi_l(t) S^t |x, s>``. Passing ``space_unitary`` replaces
    the plain shift (model II uses the combined device operator).
    """
    if basis.time_points != lattice.time_points:
        raise NonOrthonormalBasisError("time basis does not match the lattice time points")
    S = space_shift(lattice) if space_unitary is None else np.asarray(space_unitary, complex)
    U = _time_local_unitary(lattice, S)
    eye = np.eye(lattice.space_channel_dim)
    entries = []
    for l in basis.labels:
        c = basis.chi[l]
        P = U @ np.kron(np.outer(c, c.conj()), eye) @ U.conj().T
        entries.append((l, LinearOperator((P + P.conj().T) / 2, "projector", check=False)))
    return OperatorFamily(entries, "orthogonal")


# ---------------------------------------------------------------------------
# Source and detectors
# ---------------------------------------------------------------------------


def _ket(lattice, t, x, ch) -> np.ndarray:
    v = np.zeros(lattice.dim, complex)
    v[lattice.index(t, x, ch)] = 1.0
    return v


def _diag_projector(lattice, indices) -> LinearOperator:
    m = np.zeros((lattice.dim, lattice.dim), complex)
    idx = list(indices)
    m[idx, idx] = 1.0
    return LinearOperator(m, "projector", check=False)


def source_family(lattice: LatticeSpace, layout: DeviceLayout) -> OperatorFamily:
    """``|t, x_Z, a><t, x_Z, a|`` for each time label, plus the complement."""
    ch = lattice.channels[0]
    entries = [(t, _diag_projector(lattice, [lattice.index(t, layout.x_Z, ch)])) for t in lattice.time_points]
    return complete_family(entries, "orthogonal")


def detector_family(lattice: LatticeSpace, layout: DeviceLayout) -> OperatorFamily:
    """``(t, a)`` at ``x_Da`` and ``(t, b)`` at ``x_Db``, plus the complement."""
    ca, cb = lattice.channels[0], lattice.channels[1]
    entries = []
    for t in lattice.time_points:
        entries.append(((t, ca), _diag_projector(lattice, [lattice.index(t, layout.x_Da, ca)])))
        entries.append(((t, cb), _diag_projector(lattice, [lattice.index(t, layout.x_Db, cb)])))
    return complete_family(entries, "orthogonal")


# ---------------------------------------------------------------------------
# Beam splitter
# ---------------------------------------------------------------------------


def _bs_channels(lattice, mirrored: bool):
    a, b = lattice.channels[0], lattice.channels[1]
    return (b, a) if mirrored else (a, b)


def beam_splitter_vectors(lattice: LatticeSpace, x_BS: int, eps: float, t: int = 0, *, mirrored: bool = False):
    """The four orthonormal kets ``bs_1..bs_4`` at time ``t``.

    ``mirrored`` exchanges the roles of the two channels.
    """
    a, b = _bs_channels(lattice, mirrored)
    c, s = np.cos(eps), np.sin(eps)
    plus = (_ket(lattice, t, x_BS + 1, b) + _ket(lattice, t, x_BS + 1, a)) / np.sqrt(2)
    minus = (-_ket(lattice, t, x_BS + 1, b) + _ket(lattice, t, x_BS + 1, a)) / np.sqrt(2)
    in_a, in_b = _ket(lattice, t, x_BS, a), _ket(lattice, t, x_BS, b)
    return (
        StateVector(c * in_a + s * plus),
        StateVector(-s * minus + c * in_b),
        StateVector(-s * in_a + c * plus),
        StateVector(c * minus + s * in_b),
    )


def beam_splitter_family(lattice: LatticeSpace, x_BS: int, eps: float, *, mirrored: bool = False) -> OperatorFamily:
    """Rank-2 projectors ``(1, t)`` onto span{bs1, bs2} and ``(3, t)`` onto span{bs3, bs4}."""
    if not -1e-12 <= eps <= np.pi / 2 + 1e-12:
        raise ConfigError(f"epsilon {eps} outside [0, pi/2]")
    ones, threes = [], []
    for t in lattice.time_points:
        v = beam_splitter_vectors(lattice, x_BS, eps, t, mirrored=mirrored)
        ones.append(((1, t), projector_onto_span(v[:2])))
        threes.append(((3, t), projector_onto_span(v[2:])))
    return complete_family(ones + threes, "orthogonal")


def beam_splitter_effective(lattice: LatticeSpace, x_BS: int, *, mirrored: bool = False) -> OperatorFamily:
    """Effective splitter: ``(1, t)`` moves the input slice forward with channel mixing,
    ``(3, t) = -(1, t)^dagger`` moves the output slice back."""
    a, b = _bs_channels(lattice, mirrored)
    ones, threes = [], []
    for t in lattice.time_points:
        plus = (_ket(lattice, t, x_BS + 1, b) + _ket(lattice, t, x_BS + 1, a)) / np.sqrt(2)
        minus = (-_ket(lattice, t, x_BS + 1, b) + _ket(lattice, t, x_BS + 1, a)) / np.sqrt(2)
        in_a, in_b = _ket(lattice, t, x_BS, a), _ket(lattice, t, x_BS, b)
        e1 = np.outer(plus, in_a) - np.outer(minus, in_b)
        e3 = -np.outer(in_a, plus.conj()) + np.outer(in_b, minus.conj())
        ones.append(((1, t), LinearOperator(e1, "effective", check=False)))
        threes.append(((3, t), LinearOperator(e3, "effective", check=False)))
    return complete_family(ones + threes, "kraus")


# ---------------------------------------------------------------------------
# Phase shifter
# ---------------------------------------------------------------------------


def phase_shifter_pair_starts(lattice: LatticeSpace, anchor: int = 0) -> list[int]:
    """Time labels ``t`` whose slot pair ``(t, t+1)`` the phase shifter acts on.

    Pairs must be disjoint, so only ``t`` with ``t - anchor`` even qualify. On
    an even circle the pairing wraps; on an odd circle one slot stays unpaired.
    """
    tp = lattice.time_points
    wrap_ok = lattice.n_time % 2 == 0 and lattice.n_time > 1
    starts = []
    for t in tp:
        if (t - anchor) % 2:
            continue
        if t + 1 > tp[-1] and not wrap_ok:
            continue
        starts.append(t)
    return starts


def phase_shifter_vectors(lattice: LatticeSpace, x_PS: int, phase: float, channel, eps: float, t: int = 0):
    """``ps_1, ps_2`` for one channel at slot pair ``(t, t+1)``."""
    c, s = np.cos(eps), np.sin(eps)
    here, nxt = _ket(lattice, t, x_PS, channel), _ket(lattice, t + 1, x_PS, channel)
    e = np.exp(1j * phase)
    return StateVector(c * here + s * e * nxt), StateVector(-s * here + c * e * nxt)


def _phases(lattice, layout):
    return {lattice.channels[0]: layout.phi_a, lattice.channels[1]: layout.phi_b}


def phase_shifter_family(lattice: LatticeSpace, layout: DeviceLayout, eps: float) -> OperatorFamily:
    """Projectors ``(k, t) = sum_channel |ps_k><ps_k|`` for ``k = 1, 2``."""
    if not -1e-12 <= eps <= np.pi / 2 + 1e-12:
        raise ConfigError(f"epsilon {eps} outside [0, pi/2]")
    ph = _phases(lattice, layout)
    ones, twos = [], []
    for t in phase_shifter_pair_starts(lattice, layout.ps_anchor):
        p1 = np.zeros((lattice.dim, lattice.dim), complex)
        p2 = np.zeros_like(p1)
        for ch in lattice.channels[:2]:
            v1, v2 = phase_shifter_vectors(lattice, layout.x_PS, ph[ch], ch, eps, t)
            p1 += np.outer(v1.amplitudes, v1.amplitudes.conj())
            p2 += np.outer(v2.amplitudes, v2.amplitudes.conj())
        ones.append(((1, t), LinearOperator(p1, "projector", check=False)))
        twos.append(((2, t), LinearOperator(p2, "projector", check=False)))
    return complete_family(ones + twos, "orthogonal")


def phase_shifter_effective(lattice: LatticeSpace, layout: DeviceLayout) -> OperatorFamily:
    """``(1, t)``: ``|t, x_PS, s> -> e^{i phi_s} |t+1, x_PS, s>``; ``(2, t)`` reverses it."""
    ph = _phases(lattice, layout)
    ones, twos = [], []
    for t in phase_shifter_pair_starts(lattice, layout.ps_anchor):
        e1 = np.zeros((lattice.dim, lattice.dim), complex)
        e2 = np.zeros_like(e1)
        for ch in lattice.channels[:2]:
            here, nxt = _ket(lattice, t, layout.x_PS, ch), _ket(lattice, t + 1, layout.x_PS, ch)
            e1 += np.exp(1j * ph[ch]) * np.outer(nxt, here)
            e2 -= np.exp(-1j * ph[ch]) * np.outer(here, nxt)
        ones.append(((1, t), LinearOperator(e1, "effective", check=False)))
        twos.append(((2, t), LinearOperator(e2, "effective", check=False)))
    return complete_family(ones + twos, "kraus")


# ---------------------------------------------------------------------------
# Model II combined device
# ---------------------------------------------------------------------------


def combined_device_operator(lattice: LatticeSpace, layout: DeviceLayout) -> LinearOperator:
    """Space-channel unitary for both splitters and the phase shifter at once."""
    a, b = lattice.channels[0], lattice.channels[1]
    D = lattice.space_channel_dim
    S = np.zeros((D, D), complex)
    ix = lattice.space_channel_index
    r2 = 1 / np.sqrt(2)
    ph = _phases(lattice, layout)
    for x in lattice.space_points:
        for ch in lattice.channels:
            col = ix(x, ch)
            if x in (layout.x_BS1, layout.x_BS2) and ch in (a, b):
                S[ix(x + 1, a), col] = r2
                S[ix(x + 1, b), col] = r2 if ch == a else -r2
            elif x == layout.x_PS and ch in ph:
                S[ix(x + 1, ch), col] = np.exp(1j * ph[ch])
            else:
                S[ix(x + 1, ch), col] = 1.0
    return LinearOperator(S, "unitary")


def device_power(S: LinearOperator, n: int) -> np.ndarray:
    base = S.matrix if n >= 0 else S.matrix.conj().T
    return np.linalg.matrix_power(base, abs(int(n)))


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


def model1_schedule(lattice: LatticeSpace, layout: DeviceLayout, basis: TimeBasis, effective=True) -> EvolutionSchedule:
    """Steps Z, F1, BS1, F2, PS, F3, BS2, F4, D.

    ``effective=True`` uses the effective device operators (nine steps). An
    :class:`EpsilonRamp` instead expands each device into one projection step
    per ramp value, named like ``BS1[3]``.
    """
    layout.validate(lattice)
    F = free_family(lattice, basis)
    mirror2 = layout.bs2_mirrored
    if effective is True:
        dev = {
            "BS1": [("BS1", beam_splitter_effective(lattice, layout.x_BS1))],
            "PS": [("PS", phase_shifter_effective(lattice, layout))],
            "BS2": [("BS2", beam_splitter_effective(lattice, layout.x_BS2, mirrored=mirror2))],
        }
    elif isinstance(effective, EpsilonRamp):
        eps = effective.values
        dev = {
            "BS1": [(f"BS1[{k + 1}]", beam_splitter_family(lattice, layout.x_BS1, e)) for k, e in enumerate(eps)],
            "PS": [(f"PS[{k + 1}]", phase_shifter_family(lattice, layout, e)) for k, e in enumerate(eps)],
            "BS2": [
                (f"BS2[{k + 1}]", beam_splitter_family(lattice, layout.x_BS2, e, mirrored=mirror2))
                for k, e in enumerate(eps)
            ],
        }
    else:
        raise ConfigError("effective must be True or an EpsilonRamp")
    seq = [("Z", source_family(lattice, layout)), ("F1", F)]
    seq += dev["BS1"] + [("F2", F)] + dev["PS"] + [("F3", F)] + dev["BS2"] + [("F4", F)]
    seq.append(("D", detector_family(lattice, layout)))
    return EvolutionSchedule(Step(i, fam, name) for i, (name, fam) in enumerate(seq))


def model2_schedule(lattice: LatticeSpace, layout: DeviceLayout, basis: TimeBasis) -> EvolutionSchedule:
    """Steps Z, DEV, D with DEV a free family over the combined device operator."""
    layout.validate(lattice)
    dev = free_family(lattice, basis, combined_device_operator(lattice, layout).matrix)
    seq = [("Z", source_family(lattice, layout)), ("DEV", dev), ("D", detector_family(lattice, layout))]
    return EvolutionSchedule(Step(i, fam, name) for i, (name, fam) in enumerate(seq))


def is_device_step(step: Step) -> bool:
    return step.name.split("[")[0] in DEVICE_STEPS


def forward_branch_filter(position: int, step: Step, label: Hashable) -> bool:
    """Keep only forward passages ``(1, t)`` through splitter and shifter steps."""
    if not is_device_step(step):
        return True
    return isinstance(label, tuple) and label[0] == 1


def forward_times(layout: DeviceLayout, t_Z: int) -> dict:
    """Device arrival times along the forward model-I path (before wrapping)."""
    t_bs1 = t_Z + layout.x_BS1 - layout.x_Z
    t_ps = t_bs1 + layout.x_PS - layout.x_BS1 - 1
    t_bs2 = t_ps + 1 + layout.x_BS2 - layout.x_PS
    t_d = t_bs2 + layout.x_D - layout.x_BS2 - 1
    return {"t_Z": t_Z, "t_BS1": t_bs1, "t_PS": t_ps, "t_BS2": t_bs2, "t_D": t_d}


# ---------------------------------------------------------------------------
# Observables
# ---------------------------------------------------------------------------


def time_channel_observable(lattice: LatticeSpace) -> OperatorFamily:
    """``M_T(t, s) = sum_x |t, x, s><t, x, s|``."""
    entries = []
    for t in lattice.time_points:
        for ch in lattice.channels:
            entries.append(((t, ch), _diag_projector(lattice, [lattice.index(t, x, ch) for x in lattice.space_points])))
    return OperatorFamily(entries, "orthogonal")


def spacetime_observable(lattice: LatticeSpace) -> OperatorFamily:
    """``M_G(t, x) = sum_s |t, x, s><t, x, s|``."""
    entries = []
    for t in lattice.time_points:
        for x in lattice.space_points:
            entries.append(((t, x), _diag_projector(lattice, [lattice.index(t, x, ch) for ch in lattice.channels])))
    return OperatorFamily(entries, "orthogonal")


def time_operator_at(lattice: LatticeSpace, x: int) -> LinearOperator:
    """``T(x) = sum_t t M_G(t, x)``."""
    d = np.zeros(lattice.dim)
    for t in lattice.time_points:
        for ch in lattice.channels:
            d[lattice.index(t, x, ch)] = t
    return LinearOperator(np.diag(d).astype(complex), "hermitian", check=False)


def expectation(op: LinearOperator, rho) -> float:
    m = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho)
    return float(np.trace(op.matrix @ m).real)


def _source_free_state(lattice, layout, basis, nu_F, t_Z):
    rho = DensityOperator.from_ket(_ket(lattice, t_Z, layout.x_Z, lattice.channels[0]))
    rho, _ = collapse(source_family(lattice, layout), t_Z, rho)
    rho, _ = collapse(free_family(lattice, basis), nu_F, rho)
    return rho


def mean_arrival_time(lattice: LatticeSpace, layout: DeviceLayout, basis: TimeBasis, nu_F: int, t_Z: int) -> float:
    """``Tr(T(x_BS1) rho)`` after emission at ``t_Z`` and the free step ``nu_F``, via the engine."""
    rho = _source_free_state(lattice, layout, basis, nu_F, t_Z)
    return expectation(time_operator_at(lattice, layout.x_BS1), rho)


def mean_arrival_time_closed_form(
    lattice: LatticeSpace, layout: DeviceLayout, basis: TimeBasis, nu_F: int, t_Z: int
) -> float:
    """``sum_t t |chi(t)|^2`` over the times at which the free orbit sits at ``x_BS1``.

    On a lattice with ``N_X >= N_T`` this is the single term
    ``(x_BS1 - x_Z + t_Z) |chi(x_BS1 - x_Z + t_Z)|^2``.
    """
    total = 0.0
    for it, t in enumerate(lattice.time_points):
        if (layout.x_Z - t_Z + t - layout.x_BS1) % lattice.n_space == 0:
            total += t * abs(basis.chi[nu_F, it]) ** 2
    return float(total)


def mean_arrival_time_over_emissions(
    lattice: LatticeSpace, layout: DeviceLayout, basis: TimeBasis, nu_F: int, psi0, engine: bool = True
) -> float:
    """Arrival time at ``x_BS1`` averaged over emission times drawn from ``psi0``.

    With ``engine=True`` the emission weights come from the source family and
    the per-emission average from :func:`mean_arrival_time`; emissions whose
    free branch is impossible contribute nothing. Otherwise the closed form is
    summed directly.
    """
    rho0 = psi0 if isinstance(psi0, DensityOperator) else DensityOperator.from_ket(psi0)
    src = source_family(lattice, layout)
    w = step_outcome_probabilities(src, rho0)
    F = free_family(lattice, basis) if engine else None
    total = 0.0
    for t_Z in lattice.time_points:
        if w[t_Z] <= 0.0:
            continue
        if engine:
            p_free = step_outcome_probabilities(F, DensityOperator.from_ket(_ket(lattice, t_Z, layout.x_Z, lattice.channels[0])))
            if p_free[nu_F] <= 1e-12:
                continue
            total += w[t_Z] * mean_arrival_time(lattice, layout, basis, nu_F, t_Z)
        else:
            total += w[t_Z] * mean_arrival_time_closed_form(lattice, layout, basis, nu_F, t_Z)
    return float(total)


# ---------------------------------------------------------------------------
# Detection statistics
# ---------------------------------------------------------------------------


@dataclass
class DetectionTable:
    """Detection masses over ``(t_D, channel)`` plus an ``other`` bucket.

    ``other`` collects everything that is not a detector click on an included
    path: the detector complement, and with a branch filter the mass of the
    excluded paths. Masses plus ``other`` sum to one.
    """

    masses: dict
    other: float
    channels: tuple[str, ...]
    shots: int | None = None

    @property
    def detected(self) -> float:
        return float(sum(self.masses.values()))

    def channel_masses(self) -> dict:
        out = {ch: 0.0 for ch in self.channels}
        for (t, ch), v in self.masses.items():
            out[ch] += v
        return out

    def conditional_channels(self) -> dict:
        """Channel distribution given a detection."""
        cm = self.channel_masses()
        tot = sum(cm.values())
        if tot <= 0.0:
            return {ch: 0.0 for ch in cm}
        return {ch: v / tot for ch, v in cm.items()}

    def rows(self) -> list[tuple]:
        """``(t, channel, probability)`` rows in label order, then the ``⊥`` row."""
        return [(t, ch, float(v)) for (t, ch), v in self.masses.items()] + [("", COMPLEMENT, float(self.other))]

    def mean_arrival_time(self) -> float | None:
        tot = self.detected
        if tot <= 0.0:
            return None
        return float(sum(t * v for (t, ch), v in self.masses.items()) / tot)


def _as_rho(psi0) -> DensityOperator:
    if isinstance(psi0, DensityOperator):
        return psi0
    return DensityOperator.from_ket(psi0)


def detection_distribution(
    schedule: EvolutionSchedule,
    psi0,
    mode: str = "enumerate",
    *,
    shots: int | None = None,
    seed: int | None = None,
    branch_filter=None,
    prune: float = 0.0,
    max_paths: int | None = None,
) -> DetectionTable:
    """Marginal distribution of the final detector step.

    ``mode``: ``"enumerate"`` (path enumeration), ``"exact"`` (density-matrix
    propagation, same numbers without listing paths) or ``"sample"`` (needs
    ``shots`` and ``seed``; filtered-out trajectories count as ``other``).
    """
    rho0 = _as_rho(psi0)
    last = schedule[-1]
    det_labels = [lab for lab in last.family.labels if lab != COMPLEMENT]
    channels = tuple(dict.fromkeys(lab[1] for lab in det_labels))
    if mode == "enumerate":
        kw = {} if max_paths is None else {"max_paths": max_paths}
        table = enumerate_path_table(schedule, rho0, prune, branch_filter=branch_filter, **kw)
        marg = table.marginal(-1)
        masses = {lab: marg[lab] for lab in det_labels}
        return DetectionTable(masses, max(0.0, 1.0 - sum(masses.values())), channels)
    if mode == "exact":
        fm = final_step_masses(schedule, rho0, branch_filter)
        masses = {lab: fm[lab] for lab in det_labels}
        return DetectionTable(masses, max(0.0, 1.0 - sum(masses.values())), channels)
    if mode == "sample":
        if shots is None or seed is None:
            raise ConfigError("sample mode needs both shots and seed")
        st = sample_trajectories(schedule, rho0, shots, seed)
        keep = np.ones(shots, bool)
        if branch_filter is not None:
            for s, step in enumerate(schedule):
                ok = np.array([bool(branch_filter(s, step, lab)) for lab in step.family.labels])
                keep &= ok[st.label_index[:, s]]
        counts = np.bincount(st.label_index[keep, -1], minlength=len(last.family))
        masses = {lab: counts[last.family.index(lab)] / shots for lab in det_labels}
        return DetectionTable(masses, 1.0 - sum(masses.values()), channels, shots)
    raise ConfigError(f"unknown detection mode {mode!r}")


def arrival_offsets(table: PathTable, layout: DeviceLayout, modulus: int | None = None) -> list[int]:
    """Distinct ``t_D - t_Z - (x_D - x_Z)`` over paths that end in a detector click.

    ``modulus`` reduces the offsets (e.g. the time-circle size for model II).
    """
    names = table.schedule.names
    iz, idet = names.index("Z"), len(names) - 1
    zl = table.schedule[iz].family.labels
    dl = table.schedule[idet].family.labels
    offs = set()
    for row, tot in zip(table.label_index, table.total):
        if tot <= 0.0:
            continue
        tz, lab = zl[row[iz]], dl[row[idet]]
        if tz == COMPLEMENT or lab == COMPLEMENT:
            continue
        o = lab[0] - tz - (layout.x_D - layout.x_Z)
        offs.add(o % modulus if modulus else o)
    return sorted(offs)
