"""
Declarative experiment documents (YAML) and their validation.

Every problem is reported as a :class:`ConfigError` whose message starts with
the dotted name of the offending field, e.g. ``run.shots: must be >= 1``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import ConfigError

MODELS = ("model1_effective", "model1_ramp", "model2", "bridge")
MODES = ("enumerate", "sample")
FORMATS = ("csv", "jsonl")
BRANCHES = ("forward", "all")

_PI_EXPR = re.compile(r"^\s*([+-]?\d*\.?\d*)\s*\*?\s*pi\s*(?:/\s*(\d+\.?\d*))?\s*$")


def _fail(path: str, msg: str):
    raise ConfigError(f"{path}: {msg}")


def _int(v, path, lo=None):
    if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
        if isinstance(v, float) and v.is_integer():
            v = int(v)
        else:
            _fail(path, f"expected an integer, got {v!r}")
    v = int(v)
    if lo is not None and v < lo:
        _fail(path, f"must be >= {lo}, got {v}")
    return v


def _real(v, path):
    """Number, or a string such as ``pi/2`` or ``-3*pi/4``."""
    if isinstance(v, bool):
        _fail(path, f"expected a number, got {v!r}")
    if isinstance(v, (int, float, np.integer, np.floating)):
        return float(v)
    if isinstance(v, str):
        m = _PI_EXPR.match(v)
        if m:
            coef = m.group(1)
            c = 1.0 if coef in ("", "+") else -1.0 if coef == "-" else float(coef)
            den = float(m.group(2)) if m.group(2) else 1.0
            return c * math.pi / den
        try:
            return float(v)
        except ValueError:
            pass
    _fail(path, f"expected a number or a multiple of pi, got {v!r}")


def _complex(v, path):
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(_real(v[0], path), _real(v[1], path))
    if isinstance(v, str):
        try:
            return complex(v.replace(" ", ""))
        except ValueError:
            _fail(path, f"cannot parse complex number {v!r}")
    return complex(_real(v, path))


def _section(doc, name) -> dict:
    v = doc.get(name, {})
    if v is None:
        return {}
    if not isinstance(v, dict):
        _fail(name, "expected a mapping")
    return v


def _check_keys(d: dict, allowed, path):
    extra = sorted(set(d) - set(allowed))
    if extra:
        _fail(f"{path}.{extra[0]}", f"unknown field (allowed: {', '.join(allowed)})")


@dataclass(frozen=True)
class LatticeConfig:
    T_a: int = 0
    T_b: int = 7
    X_a: int = 0
    X_b: int = 7

    @classmethod
    def from_dict(cls, d):
        _check_keys(d, [f.name for f in fields(cls)], "lattice")
        kw = {k: _int(v, f"lattice.{k}", 0 if k in ("T_a", "X_a") else None) for k, v in d.items()}
        out = cls(**kw)
        if out.T_a + out.T_b < 0:
            _fail("lattice.T_b", "time range is empty")
        if out.X_a + out.X_b < 0:
            _fail("lattice.X_b", "space range is empty")
        return out


@dataclass(frozen=True)
class LayoutConfig:
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

    @classmethod
    def from_dict(cls, d):
        _check_keys(d, [f.name for f in fields(cls)], "layout")
        kw = {}
        for k, v in d.items():
            p = f"layout.{k}"
            if k in ("phi_a", "phi_b"):
                kw[k] = _real(v, p)
            elif k == "bs2_mirrored":
                if not isinstance(v, bool):
                    _fail(p, f"expected true or false, got {v!r}")
                kw[k] = v
            elif k in ("x_Da", "x_Db") and v is None:
                kw[k] = None
            else:
                kw[k] = _int(v, p)
        return cls(**kw)


@dataclass(frozen=True)
class InitialStateConfig:
    """Either a basis ket ``[t, x, channel]`` or a full amplitude list."""

    ket: tuple | None = (0, 0, "a")
    amplitudes: tuple | None = None

    @classmethod
    def from_dict(cls, d):
        _check_keys(d, ["ket", "amplitudes"], "initial_state")
        if "ket" in d and "amplitudes" in d:
            _fail("initial_state", "give either ket or amplitudes, not both")
        if "amplitudes" in d:
            amps = d["amplitudes"]
            if not isinstance(amps, (list, tuple)) or not amps:
                _fail("initial_state.amplitudes", "expected a non-empty list")
            vals = tuple(_complex(v, f"initial_state.amplitudes[{i}]") for i, v in enumerate(amps))
            if all(v == 0 for v in vals):
                _fail("initial_state.amplitudes", "all amplitudes are zero")
            return cls(ket=None, amplitudes=vals)
        if "ket" in d:
            k = d["ket"]
            if not isinstance(k, (list, tuple)) or len(k) != 3:
                _fail("initial_state.ket", "expected [t, x, channel]")
            return cls(ket=(_int(k[0], "initial_state.ket[0]"), _int(k[1], "initial_state.ket[1]"), str(k[2])))
        return cls()


@dataclass(frozen=True)
class RunConfig:
    mode: str = "enumerate"
    shots: int | None = None
    seed: int | None = None
    prune: float = 0.0
    max_paths: int = 1_000_000
    branch: str = "forward"

    @classmethod
    def from_dict(cls, d):
        _check_keys(d, [f.name for f in fields(cls)], "run")
        kw = {}
        for k, v in d.items():
            p = f"run.{k}"
            if k in ("mode", "branch"):
                kw[k] = str(v)
            elif k == "prune":
                kw[k] = _real(v, p)
            elif k == "max_paths":
                kw[k] = _int(v, p, 1)
            elif v is None:
                kw[k] = None
            else:
                kw[k] = _int(v, p, 0 if k == "seed" else None)
        return cls(**kw)

    def validate(self):
        if self.mode not in MODES:
            _fail("run.mode", f"must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.branch not in BRANCHES:
            _fail("run.branch", f"must be one of {', '.join(BRANCHES)}, got {self.branch!r}")
        if self.prune < 0:
            _fail("run.prune", "must be >= 0")
        if self.mode == "sample":
            if self.shots is None or self.shots < 1:
                _fail("run.shots", "sample mode needs shots >= 1")
            if self.seed is None:
                _fail("run.seed", "sample mode needs an explicit seed")
        if self.seed is not None and not 0 <= self.seed < 2**64:
            _fail("run.seed", "must lie in [0, 2**64)")


@dataclass(frozen=True)
class OutputConfig:
    path: str = "results"
    format: str = "csv"

    @classmethod
    def from_dict(cls, d):
        _check_keys(d, ["path", "format"], "output")
        out = cls(**{k: str(v) for k, v in d.items()})
        out.validate()
        return out

    def validate(self):
        if self.format not in FORMATS:
            _fail("output.format", f"must be one of {', '.join(FORMATS)}, got {self.format!r}")


@dataclass(frozen=True)
class BridgeConfig:
    hamiltonian: str = "two_level"
    levels: int = 4
    matrix: tuple | None = None
    n_time: int = 8
    t_prime: int = 0
    state: tuple | None = None

    @classmethod
    def from_dict(cls, d):
        _check_keys(d, [f.name for f in fields(cls)], "bridge")
        kw = {}
        for k, v in d.items():
            p = f"bridge.{k}"
            if k == "hamiltonian":
                kw[k] = str(v)
            elif k == "matrix":
                if not isinstance(v, (list, tuple)) or not v or not all(isinstance(r, (list, tuple)) for r in v):
                    _fail(p, "expected a list of rows")
                kw[k] = tuple(tuple(_complex(x, f"{p}[{i}][{j}]") for j, x in enumerate(r)) for i, r in enumerate(v))
            elif k == "state":
                if not isinstance(v, (list, tuple)) or not v:
                    _fail(p, "expected a non-empty list")
                kw[k] = tuple(_complex(x, f"{p}[{i}]") for i, x in enumerate(v))
            else:
                kw[k] = _int(v, p, 1 if k in ("levels", "n_time") else None)
        out = cls(**kw)
        out.validate()
        return out

    def validate(self):
        if self.hamiltonian not in ("two_level", "oscillator", "matrix"):
            _fail("bridge.hamiltonian", f"must be two_level, oscillator or matrix, got {self.hamiltonian!r}")
        if self.hamiltonian == "matrix":
            if self.matrix is None:
                _fail("bridge.matrix", "required when hamiltonian is matrix")
            m = np.array(self.matrix, dtype=complex)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                _fail("bridge.matrix", "must be square")
            if np.max(np.abs(m - m.conj().T)) > 1e-10:
                _fail("bridge.matrix", "must be Hermitian")
        n = self.hamiltonian_matrix().shape[0]
        if self.state is not None and len(self.state) != n:
            _fail("bridge.state", f"needs {n} amplitudes")
        if self.state is not None and all(v == 0 for v in self.state):
            _fail("bridge.state", "all amplitudes are zero")

    def hamiltonian_matrix(self) -> np.ndarray:
        if self.hamiltonian == "matrix":
            return np.array(self.matrix, dtype=complex)
        if self.hamiltonian == "oscillator":
            return np.diag(np.arange(self.levels) + 0.5).astype(complex)
        return np.array([[0.0, 0.4], [0.4, 1.0]], dtype=complex)


TOP_KEYS = ("lattice", "layout", "model", "ramp_steps", "time_basis", "initial_state", "run", "output", "bridge")


@dataclass(frozen=True)
class ExperimentConfig:
    lattice: LatticeConfig = field(default_factory=LatticeConfig)
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    model: str = "model2"
    ramp_steps: int = 16
    time_basis: str = "fourier"
    initial_state: InitialStateConfig = field(default_factory=InitialStateConfig)
    run: RunConfig = field(default_factory=RunConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    bridge: BridgeConfig = field(default_factory=BridgeConfig)

    @classmethod
    def from_dict(cls, doc) -> "ExperimentConfig":
        if doc is None:
            doc = {}
        if not isinstance(doc, dict):
            _fail("<root>", "config document must be a mapping")
        _check_keys(doc, TOP_KEYS, "<root>")
        model = str(doc.get("model", "model2"))
        cfg = cls(
            lattice=LatticeConfig.from_dict(_section(doc, "lattice")),
            layout=LayoutConfig.from_dict(_section(doc, "layout")),
            model=model,
            ramp_steps=_int(doc.get("ramp_steps", 16), "ramp_steps", 1),
            time_basis=str(doc.get("time_basis", "fourier")),
            initial_state=InitialStateConfig.from_dict(_section(doc, "initial_state")),
            run=RunConfig.from_dict(_section(doc, "run")),
            output=OutputConfig.from_dict(_section(doc, "output")),
            bridge=BridgeConfig.from_dict(_section(doc, "bridge")),
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as e:
            raise ConfigError(f"<file>: cannot read {path}: {e.strerror}") from None
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError(f"<file>: invalid YAML: {e}") from None
        return cls.from_dict(doc)

    def with_overrides(self, *, seed=None, shots=None, prune=None, out=None, fmt=None, mode=None) -> "ExperimentConfig":
        run = self.run
        if seed is not None:
            run = replace(run, seed=int(seed))
        if shots is not None:
            run = replace(run, shots=int(shots))
        if prune is not None:
            run = replace(run, prune=float(prune))
        if mode is not None:
            run = replace(run, mode=mode)
        output = self.output
        if out is not None:
            output = replace(output, path=str(out))
        if fmt is not None:
            output = replace(output, format=str(fmt))
        cfg = replace(self, run=run, output=output)
        cfg.validate()
        return cfg

    def validate(self):
        if self.model not in MODELS:
            _fail("model", f"must be one of {', '.join(MODELS)}, got {self.model!r}")
        if self.time_basis not in ("fourier", "localized"):
            _fail("time_basis", f"must be fourier or localized, got {self.time_basis!r}")
        self.output.validate()
        if self.model == "bridge":
            self.bridge.validate()
            return
        self.run.validate()
        lat = self.lattice
        lo_x, hi_x = -lat.X_a, lat.X_b
        lo_t, hi_t = -lat.T_a, lat.T_b
        lay = self.layout
        xs = [lay.x_Z, lay.x_BS1, lay.x_PS, lay.x_BS2, lay.x_D]
        names = ["x_Z", "x_BS1", "x_PS", "x_BS2", "x_D"]
        for a, b, name in zip(xs[:-1], xs[1:], names[1:]):
            if b <= a:
                _fail(f"layout.{name}", "positions must satisfy x_Z < x_BS1 < x_PS < x_BS2 < x_D")
        for name in names + ["x_Da", "x_Db"]:
            v = getattr(lay, name)
            if v is not None and not lo_x <= v <= hi_x:
                _fail(f"layout.{name}", f"position {v} outside the lattice [{lo_x}, {hi_x}]")
        for name in ("x_BS1", "x_BS2"):
            if getattr(lay, name) + 1 > hi_x:
                _fail(f"layout.{name}", "beam splitter needs an output site inside the lattice")
        dim = (lat.T_a + lat.T_b + 1) * (lat.X_a + lat.X_b + 1) * 2
        ini = self.initial_state
        if ini.amplitudes is not None:
            if len(ini.amplitudes) != dim:
                _fail("initial_state.amplitudes", f"needs {dim} amplitudes for this lattice, got {len(ini.amplitudes)}")
        elif ini.ket is not None:
            t, x, ch = ini.ket
            if not lo_t <= t <= hi_t:
                _fail("initial_state.ket[0]", f"time {t} outside [{lo_t}, {hi_t}]")
            if not lo_x <= x <= hi_x:
                _fail("initial_state.ket[1]", f"position {x} outside [{lo_x}, {hi_x}]")
            if ch not in ("a", "b"):
                _fail("initial_state.ket[2]", f"channel must be a or b, got {ch!r}")
