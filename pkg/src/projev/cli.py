"""
Command-line interface.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 resource
limit (too many paths), 1 any other error.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import BridgeConfig, ExperimentConfig
from .errors import ConfigError, ResourceLimitError
from .experiment import run_experiment
from .report import fmt_float, write_result

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_RESOURCE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_common(p):
    p.add_argument("--out", help="output directory (overrides output.path)")
    p.add_argument("--format", choices=("csv", "jsonl"), help="table format (overrides output.format)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="projev", description="Projection-evolution simulator on finite space-time lattices.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, hlp in (
        ("run", "run a YAML experiment with its own run.mode"),
        ("enumerate", "run a YAML experiment by exhaustive path enumeration"),
        ("sample", "run a YAML experiment by Monte Carlo sampling"),
    ):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("config", help="path to a YAML experiment file")
        p.add_argument("--seed", type=int)
        p.add_argument("--shots", type=int)
        p.add_argument("--prune", type=float)
        _add_common(p)
    p = sub.add_parser("bridge-demo", help="check the time-circle construction against exp(-iHs)")
    p.add_argument("config", nargs="?", help="optional YAML file with a bridge section")
    p.add_argument("--hamiltonian", choices=("two_level", "oscillator"))
    p.add_argument("--levels", type=int)
    p.add_argument("--n-time", type=int)
    _add_common(p)
    return ap


def _summary_lines(summary: dict) -> list[str]:
    out = []
    for k, v in summary.items():
        if isinstance(v, float):
            v = fmt_float(v)
        elif isinstance(v, list):
            v = " ".join(fmt_float(x) if isinstance(x, float) else str(x) for x in v)
        out.append(f"{k}: {v}")
    return out


def _load(args) -> ExperimentConfig:
    if args.command == "bridge-demo":
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig(model="bridge")
        if cfg.model != "bridge":
            raise ConfigError("model: bridge-demo needs model: bridge")
        b = cfg.bridge
        kw = {}
        if args.hamiltonian:
            kw["hamiltonian"] = args.hamiltonian
        if args.levels is not None:
            kw["levels"] = args.levels
        if args.n_time is not None:
            kw["n_time"] = args.n_time
        if kw:
            d = {**{f: getattr(b, f) for f in ("hamiltonian", "levels", "n_time", "t_prime")}, **kw}
            if b.matrix is not None and d["hamiltonian"] == "matrix":
                d["matrix"] = b.matrix
            if b.state is not None and "hamiltonian" not in kw and "levels" not in kw:
                d["state"] = b.state
            b = BridgeConfig.from_dict(d)
        return replace(cfg, bridge=b).with_overrides(out=args.out, fmt=args.format)
    cfg = ExperimentConfig.load(args.config)
    if cfg.model == "bridge":
        raise ConfigError("model: use the bridge-demo command for model: bridge")
    mode = {"enumerate": "enumerate", "sample": "sample"}.get(args.command)
    return cfg.with_overrides(
        seed=args.seed, shots=args.shots, prune=args.prune, out=args.out, fmt=args.format, mode=mode
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        result = run_experiment(cfg)
        files = write_result(result, cfg.output.path, cfg.output.format)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceLimitError as e:
        print(f"resource limit: {e}", file=sys.stderr)
        return EXIT_RESOURCE
    except Exception as e:  # noqa: BLE001
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR
    for line in _summary_lines(result.summary):
        print(line)
    for f in files:
        print(f"wrote {f}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
