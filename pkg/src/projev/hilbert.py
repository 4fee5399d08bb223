"""
Finite-dimensional Hilbert-space primitives.

Everything here is dense numpy. Values are immutable after construction:
arrays are copied and flagged read-only, and operations return new objects.

Basis convention for lattice spaces: time-major, then space, then channel,
so ``index = (it * n_space + ix) * n_channels + ic``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (
    DependentVectorsError,
    DimensionMismatchError,
    IncompleteFamilyError,
    InvalidStateError,
    NonCommutingError,
    NotHermitianError,
    OvercompleteError,
    UnknownLabelError,
)

ATOL = 1e-10
COMMUTE_TOL = 1e-8
CLUSTER_RTOL = 1e-8
INDEPENDENCE_TOL = 1e-8

#: Reserved outcome label for the auto-generated completing operator.
COMPLEMENT = "⊥"

TAGS = ("projector", "effective", "hermitian", "unitary", "general")


def _frozen(a, dtype=complex) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


def max_abs(a) -> float:
    a = np.asarray(a)
    return float(np.max(np.abs(a))) if a.size else 0.0


# ---------------------------------------------------------------------------
# Lattice
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatticeSpace:
    """Discrete time circle x space circle x channel set.

    Coordinates are integer labels; any shift wraps modulo the circle size.
    """

    time_points: tuple[int, ...]
    space_points: tuple[int, ...]
    channels: tuple[str, ...] = ("a", "b")

    def __post_init__(self):
        object.__setattr__(self, "time_points", tuple(int(t) for t in self.time_points))
        object.__setattr__(self, "space_points", tuple(int(x) for x in self.space_points))
        object.__setattr__(self, "channels", tuple(str(c) for c in self.channels))
        for name, pts in (("time_points", self.time_points), ("space_points", self.space_points)):
            if not pts:
                raise ValueError(f"{name} must be non-empty")
            if list(pts) != list(range(pts[0], pts[0] + len(pts))):
                raise ValueError(f"{name} must be consecutive increasing integers")
        if not self.channels or len(set(self.channels)) != len(self.channels):
            raise ValueError("channels must be a non-empty set of distinct labels")

    @classmethod
    def from_bounds(cls, T_a: int, T_b: int, X_a: int, X_b: int, channels=("a", "b")) -> "LatticeSpace":
        """Lattice with ``-T_a <= t <= T_b`` and ``-X_a <= x <= X_b``."""
        if T_a + T_b < 0 or X_a + X_b < 0:
            raise ValueError("empty lattice")
        return cls(tuple(range(-T_a, T_b + 1)), tuple(range(-X_a, X_b + 1)), tuple(channels))

    @property
    def n_time(self) -> int:
        return len(self.time_points)

    @property
    def n_space(self) -> int:
        return len(self.space_points)

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def space_channel_dim(self) -> int:
        return self.n_space * self.n_channels

    @property
    def dim(self) -> int:
        return self.n_time * self.n_space * self.n_channels

    def wrap_t(self, t: int) -> int:
        t0 = self.time_points[0]
        return t0 + (int(t) - t0) % self.n_time

    def wrap_x(self, x: int) -> int:
        x0 = self.space_points[0]
        return x0 + (int(x) - x0) % self.n_space

    def channel_index(self, ch) -> int:
        try:
            return self.channels.index(str(ch))
        except ValueError:
            raise KeyError(f"unknown channel {ch!r}") from None

    def space_channel_index(self, x: int, ch) -> int:
        ix = (int(x) - self.space_points[0]) % self.n_space
        return ix * self.n_channels + self.channel_index(ch)

    def index(self, t: int, x: int, ch) -> int:
        it = (int(t) - self.time_points[0]) % self.n_time
        return it * self.space_channel_dim + self.space_channel_index(x, ch)

    def coords(self, i: int) -> tuple[int, int, str]:
        if not 0 <= i < self.dim:
            raise IndexError(i)
        it, rest = divmod(int(i), self.space_channel_dim)
        ix, ic = divmod(rest, self.n_channels)
        return self.time_points[it], self.space_points[ix], self.channels[ic]

    def basis(self):
        """All ``(t, x, channel)`` triples in basis order."""
        return [self.coords(i) for i in range(self.dim)]

    def ket(self, t: int, x: int, ch) -> "StateVector":
        v = np.zeros(self.dim, complex)
        v[self.index(t, x, ch)] = 1.0
        return StateVector(v)


# ---------------------------------------------------------------------------
# States and operators
# ---------------------------------------------------------------------------


class StateVector:
    """Complex amplitudes over a basis, with the 2-norm stored alongside."""

    __slots__ = ("amplitudes", "norm")

    def __init__(self, amplitudes, norm: float | None = None):
        amp = _frozen(np.ravel(amplitudes))
        computed = float(np.linalg.norm(amp))
        if norm is not None and abs(float(norm) - computed) > 1e-12:
            raise InvalidStateError(f"stored norm {norm} differs from computed {computed}")
        self.amplitudes = amp
        self.norm = computed

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    def normalized(self) -> "StateVector":
        if self.norm == 0.0:
            raise InvalidStateError("cannot normalize the zero vector")
        return StateVector(self.amplitudes / self.norm)

    def density(self) -> "DensityOperator":
        return DensityOperator.from_ket(self)

    def __add__(self, other: "StateVector") -> "StateVector":
        return StateVector(self.amplitudes + other.amplitudes)

    def __rmul__(self, c) -> "StateVector":
        return StateVector(complex(c) * self.amplitudes)

    def __repr__(self):
        return f"StateVector(dim={self.dim}, norm={self.norm:.6g})"


class DensityOperator:
    """Hermitian, positive semidefinite, unit-trace matrix.

    A pure state may be stored as its ket; the matrix is then formed on demand
    so that long trajectories of pure states stay cheap to hold.
    """

    __slots__ = ("_matrix", "_ket")

    def __init__(self, matrix, *, validate: bool = True):
        m = _frozen(matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatchError("density matrix must be square")
        if validate:
            if max_abs(m - m.conj().T) > ATOL:
                raise InvalidStateError("density matrix is not Hermitian")
            tr = np.trace(m)
            if abs(tr - 1.0) > ATOL:
                raise InvalidStateError(f"density matrix trace {tr.real:.3g} != 1")
            if np.linalg.eigvalsh((m + m.conj().T) / 2).min() < -ATOL:
                raise InvalidStateError("density matrix has a negative eigenvalue")
        self._matrix = m
        self._ket = None

    @classmethod
    def from_ket(cls, psi) -> "DensityOperator":
        amp = psi.amplitudes if isinstance(psi, StateVector) else np.ravel(psi)
        n = np.linalg.norm(amp)
        if abs(n - 1.0) > 1e-10:
            raise InvalidStateError(f"ket must be normalized (norm {n})")
        obj = cls.__new__(cls)
        obj._matrix = None
        obj._ket = _frozen(amp)
        return obj

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityOperator":
        return cls(np.eye(dim) / dim)

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is not None:
            return self._matrix
        m = np.outer(self._ket, self._ket.conj())
        m.flags.writeable = False
        return m

    @property
    def ket(self) -> np.ndarray | None:
        """The stored ket for pure states built with :meth:`from_ket`, else None."""
        return self._ket

    @property
    def dim(self) -> int:
        return (self._ket if self._ket is not None else self._matrix).shape[0]

    def __repr__(self):
        kind = "pure" if self._ket is not None else "matrix"
        return f"DensityOperator(dim={self.dim}, {kind})"


def _check_tag(m: np.ndarray, tag: str):
    if tag not in TAGS:
        raise ValueError(f"unknown operator tag {tag!r}")
    if tag in ("projector", "hermitian") and max_abs(m - m.conj().T) > ATOL:
        raise NotHermitianError(f"{tag} operator is not Hermitian")
    if tag == "projector" and max_abs(m @ m - m) > ATOL:
        raise ValueError("projector operator is not idempotent")
    if tag == "unitary" and max_abs(m.conj().T @ m - np.eye(m.shape[0])) > ATOL:
        raise ValueError("unitary operator fails U^dagger U = I")


class LinearOperator:
    """Square complex matrix with a structural tag that is checked on creation."""

    __slots__ = ("matrix", "tag")

    def __init__(self, matrix, tag: str = "general", *, check: bool = True):
        m = _frozen(matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatchError("operator matrix must be square")
        if check:
            _check_tag(m, tag)
        self.matrix = m
        self.tag = tag

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def adjoint(self) -> "LinearOperator":
        return adjoint(self)

    def __matmul__(self, other):
        if isinstance(other, LinearOperator):
            return matmul(self, other)
        if isinstance(other, StateVector):
            return apply(self, other)
        return NotImplemented

    def __repr__(self):
        return f"LinearOperator(dim={self.dim}, tag={self.tag!r})"


def identity(dim: int) -> LinearOperator:
    return LinearOperator(np.eye(dim), "projector", check=False)


def adjoint(op: LinearOperator) -> LinearOperator:
    tag = op.tag if op.tag in ("projector", "hermitian", "unitary") else "general"
    return LinearOperator(op.matrix.conj().T, tag, check=False)


def matmul(a: LinearOperator, b: LinearOperator) -> LinearOperator:
    if a.dim != b.dim:
        raise DimensionMismatchError(f"cannot multiply dims {a.dim} and {b.dim}")
    tag = "unitary" if a.tag == b.tag == "unitary" else "general"
    return LinearOperator(a.matrix @ b.matrix, tag, check=False)


def apply(op: LinearOperator, psi: StateVector) -> StateVector:
    if op.dim != psi.dim:
        raise DimensionMismatchError(f"operator dim {op.dim} vs state dim {psi.dim}")
    return StateVector(op.matrix @ psi.amplitudes)


def inner_product(psi1: StateVector, psi2: StateVector) -> complex:
    """``<psi1|psi2>``, conjugate-linear in the first argument."""
    if psi1.dim != psi2.dim:
        raise DimensionMismatchError("state dimensions differ")
    return complex(np.vdot(psi1.amplitudes, psi2.amplitudes))


def trace(op) -> complex:
    m = op.matrix if hasattr(op, "matrix") else np.asarray(op)
    return complex(np.trace(m))


def purity(rho: DensityOperator) -> float:
    """``tr(rho^2)``, evaluated from the matrix as the squared Frobenius norm."""
    if rho.ket is not None:
        # tr(|k><k| |k><k|) computed through the matrix all the same
        m = rho.matrix
    else:
        m = rho.matrix
    return float(np.vdot(m, m).real)


def fidelity(psi1: StateVector, psi2: StateVector) -> float:
    """``|<psi1|psi2>|^2 / (|psi1|^2 |psi2|^2)``; insensitive to global phase."""
    num = abs(inner_product(psi1, psi2)) ** 2
    den = psi1.norm**2 * psi2.norm**2
    if den == 0.0:
        return 0.0
    return float(num / den)


def tensor_product(a: LinearOperator, b: LinearOperator) -> LinearOperator:
    """Kronecker product with the first factor as the major index."""
    m = np.kron(a.matrix, b.matrix)
    if a.tag == b.tag and a.tag in ("projector", "unitary", "hermitian"):
        tag = a.tag
    elif {a.tag, b.tag} <= {"projector", "hermitian"}:
        tag = "hermitian"
    else:
        tag = "general"
    return LinearOperator(m, tag, check=False)


def partial_trace(rho, dims: Sequence[int], keep) -> DensityOperator:
    """Reduce a density operator on ``prod(dims)`` to the factors in ``keep``.

    ``keep`` is a factor index or a sequence of them; kept factors stay in
    their original order.
    """
    m = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho, complex)
    dims = tuple(int(d) for d in dims)
    total = int(np.prod(dims))
    if m.shape != (total, total):
        raise DimensionMismatchError(f"matrix shape {m.shape} does not match factorization {dims}")
    keep = (keep,) if np.isscalar(keep) else tuple(keep)
    n = len(dims)
    if any(not 0 <= k < n for k in keep):
        raise DimensionMismatchError(f"keep={keep} out of range for {n} factors")
    keep = tuple(sorted(set(keep)))
    letters = "abcdefghijklmnopqrstuvwxyz"
    rows = list(letters[:n])
    cols = list(letters[n : 2 * n])
    for i in range(n):
        if i not in keep:
            cols[i] = rows[i]
    out = "".join(rows[i] for i in keep) + "".join(cols[i] for i in keep)
    reduced = np.einsum("".join(rows) + "".join(cols) + "->" + out, m.reshape(dims + dims))
    kd = int(np.prod([dims[i] for i in keep]))
    reduced = reduced.reshape(kd, kd)
    return DensityOperator(reduced, validate=isinstance(rho, DensityOperator))


def projector_onto_span(vectors: Sequence[StateVector]) -> LinearOperator:
    """Orthogonal projector onto the span of linearly independent vectors."""
    if not vectors:
        raise ValueError("need at least one vector")
    V = np.column_stack([v.amplitudes for v in vectors])
    norms = np.linalg.norm(V, axis=0)
    if np.any(norms == 0):
        raise DependentVectorsError("zero vector in input")
    Vn = V / norms
    gram = Vn.conj().T @ Vn
    if np.linalg.eigvalsh(gram).min() < INDEPENDENCE_TOL:
        raise DependentVectorsError("vectors are linearly dependent within tolerance")
    P = Vn @ np.linalg.solve(gram, Vn.conj().T)
    P = (P + P.conj().T) / 2
    return LinearOperator(P, "projector", check=False)


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    """Positive square root of a Hermitian PSD matrix, clipping tiny negatives."""
    h = (m + m.conj().T) / 2
    w, v = np.linalg.eigh(h)
    w = np.clip(w, 0.0, None)
    r = (v * np.sqrt(w)) @ v.conj().T
    return (r + r.conj().T) / 2


# ---------------------------------------------------------------------------
# Operator families
# ---------------------------------------------------------------------------

FAMILY_KINDS = ("orthogonal", "kraus")


class OperatorFamily:
    """Labeled operators forming a resolution of unity.

    ``kind="orthogonal"``: mutually orthogonal projectors summing to I.
    ``kind="kraus"``: arbitrary operators with ``sum E^dagger E = I``.

    Construction checks completeness, hermiticity and idempotence. Pairwise
    orthogonality follows from those for projectors; :func:`family_residuals`
    measures it explicitly.
    """

    def __init__(self, entries, kind: str, *, check: bool = True):
        if kind not in FAMILY_KINDS:
            raise ValueError(f"unknown family kind {kind!r}")
        pairs = list(entries.items()) if isinstance(entries, Mapping) else list(entries)
        labels = [lab for lab, _ in pairs]
        if len(set(labels)) != len(labels):
            raise ValueError("outcome labels must be unique")
        if not pairs:
            raise IncompleteFamilyError("family has no entries")
        ops = [op if isinstance(op, LinearOperator) else LinearOperator(op, check=False) for _, op in pairs]
        dims = {op.dim for op in ops}
        if len(dims) != 1:
            raise DimensionMismatchError(f"family entries have mixed dimensions {sorted(dims)}")
        self._entries = dict(zip(labels, ops))
        self.kind = kind
        self.complement_label = COMPLEMENT
        if check:
            self._check()

    def _check(self):
        d = self.dim
        stack = self.stack
        if self.kind == "orthogonal":
            herm = max_abs(stack - stack.conj().transpose(0, 2, 1))
            if herm > ATOL:
                raise IncompleteFamilyError(f"orthogonal family entry not Hermitian ({herm:.2e})")
            idem = max_abs(stack @ stack - stack)
            if idem > ATOL:
                raise IncompleteFamilyError(f"orthogonal family entry not idempotent ({idem:.2e})")
            res = max_abs(stack.sum(axis=0) - np.eye(d))
        else:
            res = max_abs(self.gram.sum(axis=0) - np.eye(d))
        if res > ATOL:
            raise IncompleteFamilyError(f"family is not a resolution of unity (residual {res:.2e})")

    @property
    def labels(self) -> tuple:
        return tuple(self._entries)

    @property
    def entries(self) -> dict:
        return dict(self._entries)

    @property
    def dim(self) -> int:
        return next(iter(self._entries.values())).dim

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __contains__(self, label):
        return label in self._entries

    def __getitem__(self, label) -> LinearOperator:
        try:
            return self._entries[label]
        except (KeyError, TypeError):
            raise UnknownLabelError(label) from None

    def index(self, label) -> int:
        try:
            return self._label_index[label]
        except (KeyError, TypeError):
            raise UnknownLabelError(label) from None

    @cached_property
    def _label_index(self) -> dict:
        return {lab: i for i, lab in enumerate(self._entries)}

    @cached_property
    def stack(self) -> np.ndarray:
        """Entries as a read-only ``(K, d, d)`` array in label order."""
        s = np.stack([op.matrix for op in self._entries.values()])
        s.flags.writeable = False
        return s

    @cached_property
    def flat_csr(self):
        """The stack reshaped to ``(K*d, d)`` as a CSR matrix (exact zeros dropped)."""
        a = sp.csr_array(self.stack.reshape(-1, self.dim))
        a.eliminate_zeros()
        return a

    @cached_property
    def gram(self) -> np.ndarray:
        """``E^dagger E`` for every entry, shape ``(K, d, d)``."""
        s = self.stack
        g = s.conj().transpose(0, 2, 1) @ s
        g.flags.writeable = False
        return g

    def __repr__(self):
        return f"OperatorFamily(kind={self.kind!r}, size={len(self)}, dim={self.dim})"


def family_residuals(family: OperatorFamily) -> dict:
    """Max-norm residuals of the family's defining relations.

    Orthogonal kind: ``products`` is ``max |E_i E_j - delta_ij E_i|`` over all
    pairs and ``completeness`` is ``max |sum E_i - I|``. Kraus kind:
    ``completeness`` is ``max |sum E^dagger E - I|``.
    """
    d = family.dim
    s = family.stack
    out = {}
    if family.kind == "orthogonal":
        worst = 0.0
        k = len(family)
        for j in range(k):
            # all E_i E_j at once through the sparse stack
            prods = (family.flat_csr @ s[j]).reshape(k, d, d)
            prods[j] -= s[j]
            worst = max(worst, max_abs(prods))
        out["products"] = worst
        out["hermiticity"] = max_abs(s - s.conj().transpose(0, 2, 1))
        out["completeness"] = max_abs(s.sum(axis=0) - np.eye(d))
    else:
        out["completeness"] = max_abs(family.gram.sum(axis=0) - np.eye(d))
    return out


def complete_family(entries, kind: str) -> OperatorFamily:
    """Add the completing operator under :data:`COMPLEMENT`.

    Orthogonal kind adds ``I - sum E``; kraus kind adds the positive square
    root of ``I - sum E^dagger E``. A complement that would be numerically
    zero is omitted.
    """
    pairs = list(entries.items()) if isinstance(entries, Mapping) else list(entries)
    ops = [op if isinstance(op, LinearOperator) else LinearOperator(op, check=False) for _, op in pairs]
    if any(lab == COMPLEMENT for lab, _ in pairs):
        raise ValueError(f"label {COMPLEMENT!r} is reserved for the complement")
    if not ops:
        raise ValueError("complete_family needs at least one entry to fix the dimension; use identity()")
    d = ops[0].dim
    if kind == "orthogonal":
        for op in ops:
            _check_tag(op.matrix, "projector")
        total = sum(op.matrix for op in ops)
        for (i, a), (j, b) in itertools.combinations(enumerate(ops), 2):
            if max_abs(a.matrix @ b.matrix) > ATOL:
                raise ValueError(f"entries {pairs[i][0]!r} and {pairs[j][0]!r} are not orthogonal")
        comp = np.eye(d) - total
        if np.linalg.eigvalsh((comp + comp.conj().T) / 2).min() < -ATOL:
            raise OvercompleteError("projectors already exceed the identity")
        comp = (comp + comp.conj().T) / 2
        comp_tag = "projector"
    elif kind == "kraus":
        S = sum(op.matrix.conj().T @ op.matrix for op in ops)
        ev = np.linalg.eigvalsh((S + S.conj().T) / 2)
        if ev.max() > 1 + ATOL:
            raise OvercompleteError(f"sum E^dagger E has eigenvalue {ev.max():.12g} > 1")
        comp = np.eye(d) - S
        comp = (comp + comp.conj().T) / 2
        if max_abs(comp @ comp - comp) > ATOL:
            # not a projector: take the positive square root
            comp = psd_sqrt(comp)
        comp_tag = "effective"
    else:
        raise ValueError(f"unknown family kind {kind!r}")
    out = list(zip([lab for lab, _ in pairs], ops))
    if max_abs(comp) > ATOL:
        out.append((COMPLEMENT, LinearOperator(comp, comp_tag, check=False)))
    return OperatorFamily(out, kind)


def trivial_family(dim: int) -> OperatorFamily:
    """The one-entry family ``{⊥: I}``."""
    return OperatorFamily([(COMPLEMENT, identity(dim))], "orthogonal")


def _cluster(values: np.ndarray, tol: float) -> list[np.ndarray]:
    order = np.argsort(values, kind="stable")
    groups, current = [], [order[0]]
    for a, b in zip(order[:-1], order[1:]):
        if values[b] - values[a] > tol:
            groups.append(np.array(current))
            current = []
        current.append(b)
    groups.append(np.array(current))
    return groups


def spectral_family(ops: Sequence[LinearOperator]) -> OperatorFamily:
    """Joint spectral projectors of commuting Hermitian operators.

    Each label is the tuple of eigenvalues (one per input operator) on the
    joint eigenspace; eigenvalues within ``1e-8`` relative are merged. Labels
    are sorted lexicographically.
    """
    if not ops:
        raise ValueError("need at least one operator")
    mats = [op.matrix if isinstance(op, LinearOperator) else np.asarray(op, complex) for op in ops]
    d = mats[0].shape[0]
    for m in mats:
        if m.shape != (d, d):
            raise DimensionMismatchError("operators have different dimensions")
        if max_abs(m - m.conj().T) > COMMUTE_TOL:
            raise NotHermitianError("spectral_family requires Hermitian operators")
    for a, b in itertools.combinations(mats, 2):
        if max_abs(a @ b - b @ a) > COMMUTE_TOL:
            raise NonCommutingError("operators do not commute")

    # successive refinement: diagonalize each operator inside the blocks of the previous ones
    blocks: list[tuple[tuple, np.ndarray]] = [((), np.eye(d, dtype=complex))]
    for m in mats:
        h = (m + m.conj().T) / 2
        tol = CLUSTER_RTOL * max(1.0, float(np.abs(np.linalg.eigvalsh(h)).max()))
        refined = []
        for label, Q in blocks:
            sub = Q.conj().T @ h @ Q
            w, v = np.linalg.eigh((sub + sub.conj().T) / 2)
            for g in _cluster(w, tol):
                refined.append((label + (float(np.mean(w[g])),), Q @ v[:, g]))
        blocks = refined
    blocks.sort(key=lambda b: b[0])
    entries = []
    for label, Q in blocks:
        P = Q @ Q.conj().T
        entries.append((label, LinearOperator((P + P.conj().T) / 2, "projector", check=False)))
    return OperatorFamily(entries, "orthogonal")


def random_density(dim: int, rng: np.random.Generator, rank: int | None = None) -> DensityOperator:
    """Random density operator (Wishart construction) for tests and demos."""
    r = dim if rank is None else rank
    g = rng.normal(size=(dim, r)) + 1j * rng.normal(size=(dim, r))
    m = g @ g.conj().T
    return DensityOperator(m / np.trace(m).real)


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))
