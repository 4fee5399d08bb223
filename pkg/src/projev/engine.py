"""
Stochastic projection evolution on finite-dimensional states.

A schedule is an ordered list of operator families. At each step one outcome
is drawn with Born weights ``Tr[E rho E^dagger]`` and the state is replaced by
the selectively collapsed ``E rho E^dagger / p``.

Pure states are propagated as kets through a flattened sparse family stack
of shape ``(K*d, d)``. Each row's result does not depend on how many other
rows share the product, so single trajectories and batched runs agree bit
for bit, and so do the sampled labels.
"""
from __future__ import annotations

import concurrent.futures
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    BranchImpossibleError,
    DimensionMismatchError,
    IncompleteFamilyError,
    InvalidStateError,
    ProbabilityError,
    ResourceLimitError,
    UnknownLabelError,
)
from .hilbert import DensityOperator, OperatorFamily, max_abs, partial_trace

P_MIN = 1e-12
PROB_TOL = 1e-10
CHUNK_ROWS = 2048
DEFAULT_MAX_PATHS = 1_000_000

BranchFilter = Callable[[int, "Step", Hashable], bool]


# ---------------------------------------------------------------------------
# Schedules and records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Step:
    index: int
    family: OperatorFamily
    name: str = ""


class EvolutionSchedule:
    """Ordered steps with strictly increasing integer step indices."""

    def __init__(self, steps: Iterable[Step]):
        steps = tuple(steps)
        if not steps:
            raise ValueError("schedule needs at least one step")
        idx = [s.index for s in steps]
        if any(b <= a for a, b in zip(idx[:-1], idx[1:])):
            raise ValueError(f"step indices must be strictly increasing, got {idx}")
        dims = {s.family.dim for s in steps}
        if len(dims) != 1:
            raise DimensionMismatchError(f"schedule mixes family dimensions {sorted(dims)}")
        self.steps = steps

    @classmethod
    def from_families(cls, families: Sequence[OperatorFamily], names: Sequence[str] | None = None, start: int = 0):
        names = list(names) if names is not None else [f"step{i}" for i in range(len(families))]
        if len(names) != len(families):
            raise ValueError("names and families differ in length")
        return cls(Step(start + i, f, n) for i, (f, n) in enumerate(zip(families, names)))

    @property
    def dim(self) -> int:
        return self.steps[0].family.dim

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.steps)

    def __len__(self):
        return len(self.steps)

    def __iter__(self) -> Iterator[Step]:
        return iter(self.steps)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return EvolutionSchedule(self.steps[i])
        return self.steps[i]

    def __repr__(self):
        return f"EvolutionSchedule({', '.join(self.names)})"


@dataclass(frozen=True)
class PathEntry:
    step_index: int
    label: Hashable
    probability: float
    state: DensityOperator | None = None
    name: str = ""


@dataclass(frozen=True)
class PathRecord:
    entries: tuple[PathEntry, ...]
    total_probability: float

    @property
    def labels(self) -> tuple:
        return tuple(e.label for e in self.entries)

    @property
    def conditionals(self) -> tuple[float, ...]:
        return tuple(e.probability for e in self.entries)

    def final_state(self) -> DensityOperator | None:
        return self.entries[-1].state if self.entries else None


def _make_record(schedule, lab_idx, cond, states=None) -> PathRecord:
    entries = []
    for s, step in enumerate(schedule):
        st = None if states is None else states[s]
        entries.append(PathEntry(step.index, step.family.labels[lab_idx[s]], float(cond[s]), st, step.name))
    return PathRecord(tuple(entries), float(np.prod(cond)))


@dataclass(frozen=True)
class RngStream:
    """Independent random stream keyed by ``(seed, stream_id)``."""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or not 0 <= int(v) < 2**64:
                raise ValueError(f"{name} must be an integer in [0, 2**64), got {v!r}")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))

    def uniforms(self, n: int) -> np.ndarray:
        return self.generator().random(n)


class PathTable:
    """Compact array form of many paths through one schedule.

    ``label_index[i, s]`` indexes ``schedule[s].family.labels``; ``conditional``
    holds the per-step conditional probabilities and ``total`` their product.
    """

    def __init__(self, schedule: EvolutionSchedule, label_index, conditional):
        self.schedule = schedule
        self.label_index = np.asarray(label_index, dtype=np.int32).reshape(-1, len(schedule))
        self.conditional = np.asarray(conditional, dtype=float).reshape(-1, len(schedule))
        self.total = np.prod(self.conditional, axis=1)

    def __len__(self):
        return self.label_index.shape[0]

    def path(self, i: int) -> tuple:
        return tuple(step.family.labels[j] for step, j in zip(self.schedule, self.label_index[i]))

    def paths(self) -> list[tuple]:
        return [self.path(i) for i in range(len(self))]

    def record(self, i: int) -> PathRecord:
        return _make_record(self.schedule, self.label_index[i], self.conditional[i])

    def records(self) -> list[PathRecord]:
        return [self.record(i) for i in range(len(self))]

    def as_dict(self) -> dict:
        return {self.path(i): float(self.total[i]) for i in range(len(self))}

    def marginal(self, step: int = -1, weights=None) -> dict:
        """Total path mass per outcome label of one step, in label order."""
        s = step % len(self.schedule)
        w = self.total if weights is None else np.asarray(weights)
        labels = self.schedule[s].family.labels
        sums = np.bincount(self.label_index[:, s], weights=w, minlength=len(labels))
        return {lab: float(v) for lab, v in zip(labels, sums)}

    def subset(self, mask) -> "PathTable":
        mask = np.asarray(mask)
        return PathTable(self.schedule, self.label_index[mask], self.conditional[mask])


# ---------------------------------------------------------------------------
# Single-step primitives
# ---------------------------------------------------------------------------


def _clean_probs(p: np.ndarray) -> np.ndarray:
    """Tolerance-check then clamp probabilities into [0, 1]."""
    if p.size and (p.min() < -PROB_TOL or p.max() > 1 + PROB_TOL):
        raise ProbabilityError(f"probability outside [0,1]: min {p.min():.3e}, max {p.max():.3e}")
    return np.clip(p, 0.0, 1.0)


def _check_sums(p: np.ndarray):
    s = p.sum(axis=-1)
    bad = np.abs(s - 1.0) > PROB_TOL
    if np.any(bad):
        raise IncompleteFamilyError(f"outcome probabilities sum to {np.ravel(s)[np.argmax(np.ravel(bad))]!r}, not 1")


def _as_density(rho) -> DensityOperator:
    if isinstance(rho, DensityOperator):
        return rho
    if hasattr(rho, "amplitudes"):
        return DensityOperator.from_ket(rho)
    raise InvalidStateError(f"expected a DensityOperator, got {type(rho).__name__}")


def _probs_matrix(family: OperatorFamily, m: np.ndarray) -> np.ndarray:
    # Tr[E rho E^dagger] = Tr[(E^dagger E) rho]
    return np.einsum("kij,ji->k", family.gram, m).real


def step_outcome_probabilities(family: OperatorFamily, rho) -> dict:
    """Born weights of every outcome label, in the family's label order."""
    rho = _as_density(rho)
    if rho.dim != family.dim:
        raise DimensionMismatchError(f"state dim {rho.dim} vs family dim {family.dim}")
    if rho.ket is not None:
        out = family.stack @ rho.ket
        p = (out.real**2 + out.imag**2).sum(axis=1)
    else:
        p = _probs_matrix(family, rho.matrix)
    _check_sums(p)
    p = _clean_probs(p)
    return dict(zip(family.labels, p.tolist()))


def collapse(family: OperatorFamily, label, rho) -> tuple[DensityOperator, float]:
    """Selective collapse onto ``label``; returns the new state and its probability."""
    rho = _as_density(rho)
    E = family[label].matrix
    if rho.ket is not None:
        v = E @ rho.ket
        p = float(np.vdot(v, v).real)
        if p <= P_MIN:
            raise BranchImpossibleError(f"outcome {label!r} has probability {p:.3e}")
        p = float(_clean_probs(np.array([p]))[0])
        return DensityOperator.from_ket(v / np.sqrt(np.vdot(v, v).real)), p
    r = E @ rho.matrix @ E.conj().T
    p = float(np.trace(r).real)
    if p <= P_MIN:
        raise BranchImpossibleError(f"outcome {label!r} has probability {p:.3e}")
    p_clean = float(_clean_probs(np.array([p]))[0])
    r = r / p
    return DensityOperator((r + r.conj().T) / 2, validate=False), p_clean


def observable_distribution(family: OperatorFamily, rho) -> dict:
    """``Tr[M rho]`` for each entry of a resolution of unity."""
    rho = _as_density(rho)
    if rho.ket is not None:
        k = rho.ket
        p = np.einsum("i,kij,j->k", k.conj(), family.stack, k).real
    else:
        p = np.einsum("kij,ji->k", family.stack, rho.matrix).real
    _check_sums(p)
    return dict(zip(family.labels, _clean_probs(p).tolist()))


# ---------------------------------------------------------------------------
# Batched ket propagation
# ---------------------------------------------------------------------------


def _branch_kets(psi: np.ndarray, family: OperatorFamily) -> np.ndarray:
    """Apply every family entry to every row: ``(m, d) -> (m, K, d)``.

    The sparse product accumulates each output column in a fixed order that
    does not depend on the other columns, so a row's result is the same
    whether it is propagated alone or in a batch.
    """
    m, d = psi.shape
    K = len(family)
    A = family.flat_csr
    out = np.empty((m, K, d), dtype=complex)
    for s in range(0, m, CHUNK_ROWS):
        blk = psi[s : s + CHUNK_ROWS]
        out[s : s + len(blk)] = (A @ blk.T).T.reshape(len(blk), K, d)
    return out


def _row_probs(out: np.ndarray) -> np.ndarray:
    v = np.ascontiguousarray(out).view(np.float64)
    return np.einsum("...i,...i->...", v, v)


def _inverse_cdf(p: np.ndarray, u) -> np.ndarray | int:
    """Pick indices from cleaned weights ``p`` (rows) with uniforms ``u`` in [0, 1).

    Branches at or below ``P_MIN`` get zero width, so they are never chosen.
    """
    w = np.where(p > P_MIN, p, 0.0)
    c = np.cumsum(w, axis=-1)
    tot = c[..., -1:]
    if np.any(tot <= 0.0):
        raise BranchImpossibleError("all outcomes are at or below the zero-branch threshold")
    idx = (c / tot <= np.asarray(u)[..., None]).sum(axis=-1)
    idx = np.minimum(idx, p.shape[-1] - 1)
    return int(idx) if np.ndim(idx) == 0 else idx


def _sample_kets(schedule, psi0: np.ndarray, u: np.ndarray, keep_states: bool):
    """Run ``len(u)`` trajectories from the same ket; ``u`` has shape (n, S).

    Trajectories with equal label histories share their state, so only the
    distinct states are propagated. Rows are independent in the kernel, so
    this gives the same numbers as propagating every row.
    """
    n, S = u.shape
    d = psi0.shape[0]
    lab = np.empty((n, S), dtype=np.int32)
    cond = np.empty((n, S))
    states = np.empty((n, S, d), complex) if keep_states else None
    uniq = np.asarray(psi0, complex)[None, :].copy()
    inv = np.zeros(n, dtype=np.int64)
    rows = np.arange(n)
    for s, step in enumerate(schedule):
        K = len(step.family)
        out = _branch_kets(uniq, step.family)
        p = _row_probs(out)
        _check_sums(p)
        p = _clean_probs(p)
        lab[:, s] = _inverse_cdf(p[inv], u[:, s])
        cond[:, s] = p[inv, lab[:, s]]
        keys, inv = np.unique(inv * K + lab[:, s], return_inverse=True)
        src, k = np.divmod(keys, K)
        child = out[src, k]
        uniq = child / np.sqrt(_row_probs(child))[:, None]
        inv = inv.reshape(-1)
        if keep_states:
            states[rows, s] = uniq[inv]
    return lab, cond, states


def _sample_density(schedule, m0: np.ndarray, u: np.ndarray, keep_states: bool):
    S = len(schedule)
    lab = np.empty(S, dtype=np.int32)
    cond = np.empty(S)
    states = []
    m = m0
    for s, step in enumerate(schedule):
        p = _probs_matrix(step.family, m)
        _check_sums(p)
        p = _clean_probs(p)
        k = _inverse_cdf(p, u[s])
        E = step.family.stack[k]
        r = E @ m @ E.conj().T
        tr = np.trace(r).real
        m = r / tr
        m = (m + m.conj().T) / 2
        lab[s], cond[s] = k, p[k]
        if keep_states:
            states.append(DensityOperator(m, validate=False))
    return lab, cond, (states if keep_states else None)


def _resolve_mode(rho: DensityOperator, mode: str) -> str:
    if mode not in ("auto", "ket", "density"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "auto":
        return "ket" if rho.ket is not None else "density"
    if mode == "ket" and rho.ket is None:
        raise InvalidStateError("ket mode needs a pure state built from a ket")
    return mode


def sample_trajectory(schedule: EvolutionSchedule, rho0, rng: RngStream, mode: str = "auto") -> PathRecord:
    """One realized path with the collapsed state after every step."""
    rho0 = _as_density(rho0)
    u = rng.uniforms(len(schedule))
    if _resolve_mode(rho0, mode) == "ket":
        lab, cond, st = _sample_kets(schedule, rho0.ket, u[None, :], keep_states=True)
        states = [DensityOperator.from_ket(v) for v in st[0]]
        return _make_record(schedule, lab[0], cond[0], states)
    lab, cond, states = _sample_density(schedule, rho0.matrix, u, keep_states=True)
    return _make_record(schedule, lab, cond, states)


@dataclass
class SampleTable:
    """Labels and conditional probabilities of many sampled trajectories."""

    schedule: EvolutionSchedule
    label_index: np.ndarray
    conditional: np.ndarray
    seed: int
    first_stream: int = 0
    purities: np.ndarray | None = None

    def __len__(self):
        return self.label_index.shape[0]

    @property
    def total(self) -> np.ndarray:
        return np.prod(self.conditional, axis=1)

    def path(self, i: int) -> tuple:
        return tuple(step.family.labels[j] for step, j in zip(self.schedule, self.label_index[i]))

    def counts(self) -> Counter:
        """Occurrences of each distinct path (keyed by label tuple)."""
        uniq, cnt = np.unique(self.label_index, axis=0, return_counts=True)
        return Counter(
            {tuple(step.family.labels[j] for step, j in zip(self.schedule, row)): int(c) for row, c in zip(uniq, cnt)}
        )

    def marginal_counts(self, step: int = -1) -> dict:
        s = step % len(self.schedule)
        labels = self.schedule[s].family.labels
        c = np.bincount(self.label_index[:, s], minlength=len(labels))
        return {lab: int(v) for lab, v in zip(labels, c)}


def sample_trajectories(
    schedule: EvolutionSchedule,
    rho0,
    shots: int,
    seed: int,
    *,
    first_stream: int = 0,
    mode: str = "auto",
    track_purity: bool = False,
    workers: int = 1,
) -> SampleTable:
    """Sample ``shots`` independent trajectories; stream ``first_stream + i`` drives shot ``i``.

    Chunks of trajectories may run on several threads; results are merged in
    trajectory order, so the table does not depend on ``workers``.
    ``track_purity`` (density mode only) records ``tr(rho^2)`` after each step.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    rho0 = _as_density(rho0)
    mode = _resolve_mode(rho0, mode)
    S = len(schedule)
    u = np.empty((shots, S))
    for i in range(shots):
        u[i] = RngStream(seed, first_stream + i).uniforms(S)
    lab = np.empty((shots, S), dtype=np.int32)
    cond = np.empty((shots, S))
    pur = np.empty((shots, S)) if track_purity else None
    if mode == "ket":
        if track_purity:
            raise ValueError("track_purity requires density mode")

        def work(start):
            stop = min(start + CHUNK_ROWS, shots)
            lab[start:stop], cond[start:stop], _ = _sample_kets(schedule, rho0.ket, u[start:stop], False)

        starts = range(0, shots, CHUNK_ROWS)
    else:

        def work(i):
            li, ci, states = _sample_density(schedule, rho0.matrix, u[i], track_purity)
            lab[i], cond[i] = li, ci
            if track_purity:
                pur[i] = [float(np.vdot(r.matrix, r.matrix).real) for r in states]

        starts = range(shots)
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(workers) as ex:
            list(ex.map(work, starts))
    else:
        for s0 in starts:
            work(s0)
    return SampleTable(schedule, lab, cond, int(seed), int(first_stream), pur)


# ---------------------------------------------------------------------------
# Enumeration
# ---------------------------------------------------------------------------


def _filter_masks(schedule, branch_filter: BranchFilter | None) -> list[np.ndarray]:
    masks = []
    for s, step in enumerate(schedule):
        if branch_filter is None:
            masks.append(np.ones(len(step.family), bool))
        else:
            masks.append(np.array([bool(branch_filter(s, step, lab)) for lab in step.family.labels]))
    return masks


def enumerate_path_table(
    schedule: EvolutionSchedule,
    rho0,
    prune: float = 0.0,
    *,
    max_paths: int = DEFAULT_MAX_PATHS,
    branch_filter: BranchFilter | None = None,
) -> PathTable:
    """Depth-first expansion of every outcome sequence.

    A branch is kept while its conditional probability exceeds ``P_MIN`` and
    its running probability exceeds ``prune``. ``branch_filter(position, step,
    label)`` can further restrict which labels are followed. Paths come out in
    lexicographic order of label index.
    """
    if prune < 0:
        raise ValueError("prune must be >= 0")
    rho0 = _as_density(rho0)
    if rho0.dim != schedule.dim:
        raise DimensionMismatchError(f"state dim {rho0.dim} vs schedule dim {schedule.dim}")
    masks = _filter_masks(schedule, branch_filter)
    if rho0.ket is None:
        return _enumerate_density(schedule, rho0.matrix, prune, max_paths, masks)
    S = len(schedule)
    d = schedule.dim
    leaves_idx, leaves_cond = [], []
    n_leaves = 0
    stack = [(0, rho0.ket[None, :].copy(), np.zeros((1, 0), np.int32), np.zeros((1, 0)), np.ones(1))]
    pending = 1
    while stack:
        s, kets, idx, cond, run = stack.pop()
        pending -= len(run)
        if s == S:
            leaves_idx.append(idx)
            leaves_cond.append(cond)
            n_leaves += len(run)
            continue
        out = _branch_kets(kets, schedule[s].family)
        p = _row_probs(out)
        _check_sums(p)
        p = _clean_probs(p)
        keep = (p > P_MIN) & masks[s][None, :] & (run[:, None] * p > prune)
        r, k = np.nonzero(keep)
        if len(r) == 0:
            continue
        pending += len(r)
        if n_leaves + pending > max_paths:
            raise ResourceLimitError(f"enumeration exceeds max_paths={max_paths} at step {s} ({schedule[s].name})")
        pk = p[r, k]
        child = out[r, k] / np.sqrt(_row_probs(out[r, k]))[:, None]
        cidx = np.concatenate([idx[r], k[:, None].astype(np.int32)], axis=1)
        ccond = np.concatenate([cond[r], pk[:, None]], axis=1)
        crun = run[r] * pk
        bounds = list(range(0, len(r), CHUNK_ROWS))
        for b in reversed(bounds):
            e = b + CHUNK_ROWS
            stack.append((s + 1, child[b:e], cidx[b:e], ccond[b:e], crun[b:e]))
    if not leaves_idx:
        return PathTable(schedule, np.zeros((0, S), np.int32), np.zeros((0, S)))
    return PathTable(schedule, np.concatenate(leaves_idx), np.concatenate(leaves_cond))


def _enumerate_density(schedule, m0, prune, max_paths, masks) -> PathTable:
    S = len(schedule)
    rows_idx, rows_cond = [], []

    def rec(s, m, idx, cond, run):
        if s == S:
            rows_idx.append(idx)
            rows_cond.append(cond)
            if len(rows_idx) > max_paths:
                raise ResourceLimitError(f"enumeration exceeds max_paths={max_paths}")
            return
        fam = schedule[s].family
        p = _probs_matrix(fam, m)
        _check_sums(p)
        p = _clean_probs(p)
        for k in np.nonzero((p > P_MIN) & masks[s] & (run * p > prune))[0]:
            E = fam.stack[k]
            r = E @ m @ E.conj().T
            r = r / np.trace(r).real
            rec(s + 1, (r + r.conj().T) / 2, idx + [int(k)], cond + [float(p[k])], run * p[k])

    rec(0, m0, [], [], 1.0)
    if not rows_idx:
        return PathTable(schedule, np.zeros((0, S), np.int32), np.zeros((0, S)))
    return PathTable(schedule, rows_idx, rows_cond)


def enumerate_paths(
    schedule: EvolutionSchedule,
    rho0,
    prune: float = 0.0,
    *,
    max_paths: int = DEFAULT_MAX_PATHS,
    branch_filter: BranchFilter | None = None,
) -> list[PathRecord]:
    """All paths as records (labels and conditionals; states are not stored)."""
    return enumerate_path_table(schedule, rho0, prune, max_paths=max_paths, branch_filter=branch_filter).records()


# ---------------------------------------------------------------------------
# Direct path probabilities
# ---------------------------------------------------------------------------


def path_probability_direct(schedule: EvolutionSchedule, rho0, outcomes: Sequence) -> float:
    """``Tr[E_n ... E_1 rho0 E_1^dagger ... E_n^dagger]`` for one outcome sequence.

    ``outcomes`` may be a prefix of the schedule.
    """
    rho0 = _as_density(rho0)
    if len(outcomes) > len(schedule):
        raise ValueError("more outcomes than schedule steps")
    r = np.array(rho0.matrix)
    for step, lab in zip(schedule, outcomes):
        E = step.family[lab].matrix
        r = E @ r @ E.conj().T
    return float(_clean_probs(np.array([np.trace(r).real]))[0])


def path_probabilities_direct(schedule: EvolutionSchedule, rho0, paths) -> np.ndarray:
    """Unnormalized nested products for many paths at once.

    Uses the eigendecomposition ``rho0 = sum_i w_i |v_i><v_i|`` and applies the
    individual entry matrices to each ``v_i``, grouping paths that share a label
    at a step. ``paths`` is a :class:`PathTable`, an integer array of label
    indices, or a sequence of label tuples.
    """
    rho0 = _as_density(rho0)
    if isinstance(paths, PathTable):
        idx = paths.label_index
    else:
        arr = np.asarray(paths, dtype=object) if len(paths) else np.zeros((0, len(schedule)), object)
        if arr.size and all(isinstance(v, (int, np.integer)) for v in arr.ravel()):
            idx = arr.astype(np.int64)
        else:
            idx = np.array([[step.family.index(lab) for step, lab in zip(schedule, row)] for row in paths], dtype=np.int64)
    idx = np.asarray(idx).reshape(-1, idx.shape[-1] if idx.ndim > 1 else 1)
    if idx.shape[1] > len(schedule):
        raise ValueError("paths longer than the schedule")
    if rho0.ket is not None:
        w = np.ones(1)
        V = rho0.ket[None, :]
    else:
        ev, vec = np.linalg.eigh(rho0.matrix)
        keep = ev > 1e-15
        w, V = ev[keep], vec[:, keep].T
    n, d = idx.shape[0], rho0.dim
    r = V.shape[0]
    # rows are (path, component) pairs; regroup them by label before each step
    X = np.broadcast_to(V, (n, r, d)).reshape(n * r, d).copy()
    owner = np.repeat(np.arange(n), r)
    comp_w = np.tile(w, n)
    lab = np.repeat(idx, r, axis=0)
    for s in range(idx.shape[1]):
        fam = schedule[s].family
        order = np.argsort(lab[:, s], kind="stable")
        X, owner, comp_w, lab = X[order], owner[order], comp_w[order], lab[order]
        keys, starts = np.unique(lab[:, s], return_index=True)
        stops = list(starts[1:]) + [len(X)]
        for k, a, b in zip(keys, starts, stops):
            E = fam.flat_csr[k * d : (k + 1) * d]
            X[a:b] = (E @ X[a:b].T).T
    p = np.zeros(n)
    np.add.at(p, owner, (X.real**2 + X.imag**2).sum(axis=1) * comp_w)
    return _clean_probs(p)


# ---------------------------------------------------------------------------
# Non-selective propagation
# ---------------------------------------------------------------------------


def nonselective_evolve(schedule: EvolutionSchedule, rho0, branch_filter: BranchFilter | None = None) -> np.ndarray:
    """``sum over allowed labels of E rho E^dagger``, applied step by step.

    The result is unnormalized: its trace is the total probability of all
    paths that pass the filter.
    """
    rho0 = _as_density(rho0)
    masks = _filter_masks(schedule, branch_filter)
    m = np.array(rho0.matrix)
    for step, mask in zip(schedule, masks):
        E = step.family.stack[mask]
        m = np.einsum("kij,jl,kml->im", E, m, E.conj(), optimize=True)
        m = (m + m.conj().T) / 2
    return m


def final_step_masses(schedule: EvolutionSchedule, rho0, branch_filter: BranchFilter | None = None) -> dict:
    """Total probability of the filtered paths, split by the last step's label.

    Equals the last-step marginal of the enumerated path table with the same
    filter, at the cost of density-matrix propagation instead of enumeration.
    """
    m = nonselective_evolve(schedule[:-1], rho0, branch_filter) if len(schedule) > 1 else np.array(_as_density(rho0).matrix)
    last = schedule[-1]
    mask = _filter_masks(schedule, branch_filter)[-1]
    p = _probs_matrix(last.family, m)
    return {lab: (float(max(v, 0.0)) if ok else 0.0) for lab, v, ok in zip(last.family.labels, p, mask)}


# ---------------------------------------------------------------------------
# Scaling condition
# ---------------------------------------------------------------------------


def check_scaling_condition(rho_W, E_W, E_A, factorization: Sequence[int], keep=0) -> float:
    """Max-norm gap between the reduced collapsed state and the local collapse.

    Left side: ``Tr_{A'}[E_W rho_W E_W^dagger] / Tr[...]``. Right side:
    ``E_A rho_A E_A^dagger / Tr[...]`` with ``rho_A = Tr_{A'} rho_W``.
    """
    rho_W = _as_density(rho_W)
    mW = E_W.matrix if hasattr(E_W, "matrix") else np.asarray(E_W, complex)
    mA = E_A.matrix if hasattr(E_A, "matrix") else np.asarray(E_A, complex)
    left = mW @ rho_W.matrix @ mW.conj().T
    tl = np.trace(left).real
    if tl <= P_MIN:
        raise BranchImpossibleError("composite branch has zero probability")
    red_left = partial_trace(left / tl, factorization, keep).matrix
    rho_A = partial_trace(rho_W, factorization, keep).matrix
    if mA.shape != rho_A.shape:
        raise DimensionMismatchError(f"subsystem operator shape {mA.shape} vs reduced state {rho_A.shape}")
    right = mA @ rho_A @ mA.conj().T
    tr = np.trace(right).real
    if tr <= P_MIN:
        raise BranchImpossibleError("subsystem branch has zero probability")
    return max_abs(red_left - right / tr)
