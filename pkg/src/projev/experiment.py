"""Turn a validated :class:`ExperimentConfig` into result tables."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bridge import bridge_report
from .config import ExperimentConfig
from .engine import EvolutionSchedule, PathTable, collapse, enumerate_path_table, sample_trajectories
from .hilbert import COMPLEMENT, DensityOperator, LatticeSpace, StateVector, purity
from .mach_zehnder import (
    DetectionTable,
    DeviceLayout,
    EpsilonRamp,
    TimeBasis,
    arrival_offsets,
    forward_branch_filter,
    model1_schedule,
    model2_schedule,
)


@dataclass
class ExperimentResult:
    """Tables produced by one run. ``path_rows`` hold label tuples and a probability."""

    summary: dict
    path_header: list = field(default_factory=list)
    path_rows: list = field(default_factory=list)
    histogram_rows: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def build_lattice(cfg: ExperimentConfig) -> LatticeSpace:
    lc = cfg.lattice
    return LatticeSpace.from_bounds(lc.T_a, lc.T_b, lc.X_a, lc.X_b)


def build_layout(cfg: ExperimentConfig) -> DeviceLayout:
    lc = cfg.layout
    return DeviceLayout(
        x_Z=lc.x_Z, x_BS1=lc.x_BS1, x_PS=lc.x_PS, x_BS2=lc.x_BS2, x_D=lc.x_D,
        phi_a=lc.phi_a, phi_b=lc.phi_b, x_Da=lc.x_Da, x_Db=lc.x_Db,
        ps_anchor=lc.ps_anchor, bs2_mirrored=lc.bs2_mirrored,
    )  # fmt: skip


def build_schedule(cfg: ExperimentConfig, lattice: LatticeSpace | None = None) -> EvolutionSchedule:
    lat = lattice or build_lattice(cfg)
    layout = build_layout(cfg)
    basis = TimeBasis.fourier(lat) if cfg.time_basis == "fourier" else TimeBasis.localized(lat)
    if cfg.model == "model1_effective":
        return model1_schedule(lat, layout, basis, effective=True)
    if cfg.model == "model1_ramp":
        return model1_schedule(lat, layout, basis, effective=EpsilonRamp(cfg.ramp_steps))
    if cfg.model == "model2":
        return model2_schedule(lat, layout, basis)
    raise ValueError(f"model {cfg.model!r} has no schedule")


def build_initial_state(cfg: ExperimentConfig, lattice: LatticeSpace) -> StateVector:
    ini = cfg.initial_state
    if ini.amplitudes is not None:
        return StateVector(np.array(ini.amplitudes, dtype=complex)).normalized()
    return lattice.ket(*ini.ket)


def _purity_trace(schedule, psi0, labels) -> list[float]:
    rho = DensityOperator.from_ket(psi0)
    out = []
    for step, lab in zip(schedule, labels):
        rho, _ = collapse(step.family, lab, rho)
        out.append(purity(rho))
    return out


def _detections(schedule, table: PathTable, weights=None, shots=None) -> DetectionTable:
    last = schedule[-1].family
    marg = table.marginal(-1, weights)
    det = [lab for lab in last.labels if lab != COMPLEMENT]
    masses = {lab: marg[lab] for lab in det}
    channels = tuple(dict.fromkeys(lab[1] for lab in det))
    return DetectionTable(masses, max(0.0, 1.0 - sum(masses.values())), channels, shots)


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    if cfg.model == "bridge":
        return _run_bridge(cfg)
    lat = build_lattice(cfg)
    layout = build_layout(cfg)
    schedule = build_schedule(cfg, lat)
    psi0 = build_initial_state(cfg, lat)
    run = cfg.run
    flt = forward_branch_filter if (run.branch == "forward" and cfg.model != "model2") else None
    summary = {"model": cfg.model, "mode": run.mode, "branch": run.branch if flt else "all", "dim": lat.dim}
    summary["steps"] = list(schedule.names)
    if run.mode == "enumerate":
        table = enumerate_path_table(
            schedule, DensityOperator.from_ket(psi0), run.prune, max_paths=run.max_paths, branch_filter=flt
        )
        probs = table.total
        weights = None
        rows_idx = table.label_index
        dets = _detections(schedule, table)
        summary["paths"] = len(table)
        ref = int(np.argmax(probs)) if len(table) else None
    else:
        st = sample_trajectories(schedule, psi0, run.shots, run.seed)
        keep = np.ones(run.shots, bool)
        if flt is not None:
            for s, step in enumerate(schedule):
                ok = np.array([bool(flt(s, step, lab)) for lab in step.family.labels])
                keep &= ok[st.label_index[:, s]]
        table = PathTable(schedule, st.label_index[keep], st.conditional[keep])
        weights = np.full(len(table), 1.0 / run.shots)
        dets = _detections(schedule, table, weights, run.shots)
        uniq, counts = (
            np.unique(table.label_index, axis=0, return_counts=True)
            if len(table)
            else (np.empty((0, len(schedule)), np.int32), np.empty(0, int))
        )
        rows_idx = uniq
        probs = counts / run.shots
        summary["shots"] = run.shots
        summary["seed"] = run.seed
        summary["kept_shots"] = int(keep.sum())
        summary["distinct_paths"] = len(uniq)
        ref = 0 if len(table) else None
    names = schedule.names
    label_lists = [step.family.labels for step in schedule]
    path_rows = [tuple(label_lists[s][j] for s, j in enumerate(row)) + (float(p),) for row, p in zip(rows_idx, probs)]
    summary["total_probability"] = float(np.sum(probs))
    summary["detected"] = dets.detected
    for ch, v in dets.channel_masses().items():
        summary[f"mass_{ch}"] = v
    for ch, v in dets.conditional_channels().items():
        summary[f"conditional_{ch}"] = v
    summary["mean_arrival_time"] = dets.mean_arrival_time()
    summary["arrival_offsets"] = arrival_offsets(table, layout, lat.n_time if cfg.model == "model2" else None)
    if ref is not None:
        labels = tuple(label_lists[s][j] for s, j in enumerate(table.label_index[ref]))
        summary["purity_trace"] = _purity_trace(schedule, psi0, labels)
    else:
        summary["purity_trace"] = []
    return ExperimentResult(summary, list(names) + ["probability"], path_rows, dets.rows())


def _run_bridge(cfg: ExperimentConfig) -> ExperimentResult:
    b = cfg.bridge
    rep = bridge_report(b.hamiltonian_matrix(), b.n_time, b.t_prime, b.state)
    fids = rep.pop("fidelities")
    rep = {"model": "bridge", "hamiltonian": b.hamiltonian, **rep}
    return ExperimentResult(rep, extra={"fidelities": [(s, f) for s, f in enumerate(fids)]})
