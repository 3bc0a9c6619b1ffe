"""Command line interface: ``ergokit <subcommand> ...``.

Grid files ending in ``.csv`` are read as CSV, anything else as the binary
grid format of :mod:`ergokit.io`. Every subcommand prints a JSON summary on
stdout. Exit codes: 0 success, 2 precondition violation, 3 invariant
violation, 4 resource guard, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import averaging, factors, grid, io
from .antiuniform import correlate_search_1, correlate_search_e
from .averaging import EdgeFunction
from .dynamics import DynamicalSystem, Observable, orbit_sample
from .errors import ErgokitError, PreconditionError, exit_code_for
from .experiment import (ExperimentConfig, _csv_text, emit_report, ledger_rows, parse_key_values,
                         run_experiment)
from .growth import GrowthFunction
from .kvn import KvnConfig, ScaleLadder, kvn_decompose_1d
from .metastability import (DiagonalSequence, MultipleAverageSequence, SlidingSequence,
                            exhaustive_max_deviation, find_metastable_window)


def read_grid(path):
    return io.load_grid_csv(path) if str(path).endswith(".csv") else io.load_grid(path)


def _ints(text: str) -> list[int]:
    return [int(x) for x in str(text).replace(" ", "").split(",") if x]


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n")


# ---------------------------------------------------------------------------
# average


def _average(fs, op: str, N: int, oracle: bool):
    if op == "AN":
        return averaging.multiple_average(fs, N, oracle=oracle)
    if len(fs) != 1:
        raise PreconditionError(f"{op} takes a single input function")
    if op == "SN":
        return averaging.sliding_average(fs[0], N, oracle=oracle)
    return averaging.diagonal_projection(fs[0], N, oracle=oracle)


def cmd_average(args) -> dict:
    fs = [read_grid(p) for p in args.inputs]
    out = _outdir(args.out)
    rows = []
    for N in _ints(args.N):
        res = _average(fs, args.op, N, args.oracle)
        other = _average(fs, args.op, N, not args.oracle)
        resid = float(np.max(np.abs(np.asarray(res.values) - np.asarray(other.values))))
        io.save_grid_csv(res, out / f"{args.op}_N{N}.csv")
        rows.append([N, repr(resid)])
    (out / "residuals.csv").write_text(_csv_text(["N", "max_abs_residual"], rows))
    return {"op": args.op, "oracle": args.oracle, "N": _ints(args.N),
            "max_residual": max((float(r[1]) for r in rows), default=0.0)}


# ---------------------------------------------------------------------------
# factor


def cmd_factor(args) -> dict:
    if args.action == "build":
        phi = read_grid(args.input)
        Y = factors.build_interval_factor(phi, args.eta0, alpha=args.alpha, seed=args.seed)
        io.save_factor(Y, args.out)
        return {"atoms": Y.atom_count, "nonempty": Y.nonempty_atoms(), "provenance": Y.provenance}
    if args.action == "inspect":
        Y = io.load_factor(args.stem)
        sizes = Y.atom_sizes()
        return {"shape": list(Y.shape), "atoms": Y.atom_count, "nonempty": Y.nonempty_atoms(),
                "largest_atom": int(sizes.max()) if sizes.size else 0, "provenance": Y.provenance}
    Y = factors.join_all([io.load_factor(s) for s in args.stems])
    io.save_factor(Y, args.out)
    return {"atoms": Y.atom_count, "nonempty": Y.nonempty_atoms()}


# ---------------------------------------------------------------------------
# correlate


def _edge_inputs(specs):
    """``file:1,2`` pairs into a family {edge: EdgeFunction} on Z_P^d."""
    raw = []
    for spec in specs:
        path, sep, edge = spec.rpartition(":")
        if not sep:
            raise PreconditionError(f"expected FILE:EDGE, got {spec!r}")
        raw.append((read_grid(path), tuple(_ints(edge))))
    d = max(max(e) for _, e in raw)
    return {e: EdgeFunction(f.values, e, d, f.P) for f, e in raw}


def cmd_correlate(args) -> dict:
    out = _outdir(args.out)
    if args.edge is None:
        g = read_grid(args.inputs[0])
        w = correlate_search_1(g, args.M, args.N, args.eps, window_constant=args.window_constant,
                               sample=args.sample, seed=args.seed)
    else:
        w = correlate_search_e(_edge_inputs(args.inputs), tuple(_ints(args.edge)), args.M, args.N,
                               args.eps, window_constant=args.window_constant)
    summary = {"M": args.M, "N": args.N, "eps": args.eps, "found": w is not None}
    if w is not None:
        io.save_grid_csv(grid.GridFunction(w.phi.compact()), out / "witness.csv")
        summary.update(correlation=w.correlation, search_value=w.search_value, location=list(w.location),
                       uniformity_norm=w.uniformity_norm, edge=list(w.phi.edge))
    _write_json(out / "summary.json", summary)
    return summary


# ---------------------------------------------------------------------------
# kvn

_KVN_KEYS = {"window_constant": float, "K_max": int, "probes": int, "correlation_threshold": float,
             "eta0": float, "energy_increment": float, "uniformity": float}


def cmd_kvn(args) -> dict:
    conf = parse_key_values(Path(args.config).read_text()) if args.config else {}
    eps = args.eps if args.eps is not None else float(conf.pop("eps", 1.0))
    conf.pop("eps", None)
    ladder_text = args.ladder or conf.pop("ladder", None)
    growth = args.growth or conf.pop("growth", None)
    K = args.K if args.K is not None else int(conf.pop("K", 4))
    conf.pop("K", None)
    conf.pop("ladder", None)
    conf.pop("growth", None)
    seed = int(conf.pop("seed", args.seed))
    if ladder_text:
        ladder = ScaleLadder.parse(ladder_text)
    elif growth:
        ladder = ScaleLadder.from_growth(growth, K)
    else:
        raise PreconditionError("give --ladder or --growth")
    overrides = {}
    for key, val in conf.items():
        if key not in _KVN_KEYS:
            raise PreconditionError(f"unknown kvn key {key!r}")
        overrides[key] = _KVN_KEYS[key](val)
    if args.window_constant is not None:
        overrides["window_constant"] = args.window_constant
    cfg = KvnConfig.default(eps, seed=seed, **overrides)
    g = read_grid(args.input)
    if args.rescale:
        g = g.with_values((np.asarray(g.values) + 1) / 2)
    d = kvn_decompose_1d(g, ladder, cfg)
    out = _outdir(args.out)
    io.save_grid(d.structured, out / "structured.grid")
    io.save_grid(d.uniform, out / "uniform.grid")
    io.save_factor(d.factor, out / "factor")
    rows, cols = ledger_rows(d.ledger)
    (out / "ledger.csv").write_text(_csv_text(cols, rows))
    report = {"status": d.status, "k": d.k, "K": d.K, "scales": list(ladder.scales), "eps": eps,
              "check_grid": d.check_grid, "uniformity": {str(k): v for k, v in d.uniformity.items()},
              "energy": d.energy, "steps": len(d.ledger), "constant_deviations": cfg.deviations(),
              "relaxed": cfg.relaxed}
    _write_json(out / "report.json", report)
    return {k: report[k] for k in ("status", "k", "K", "steps", "energy")}


# ---------------------------------------------------------------------------
# metastable


def _sequence(fs, op: str):
    if op == "AN":
        return MultipleAverageSequence(fs)
    if len(fs) != 1:
        raise PreconditionError(f"{op} takes a single input function")
    return SlidingSequence(fs[0]) if op == "SN" else DiagonalSequence(fs[0])


def cmd_metastable(args) -> dict:
    fs = [read_grid(p) for p in args.inputs]
    seq = _sequence(fs, args.op)
    F = GrowthFunction.parse(args.F)
    rep = find_metastable_window(seq, F, args.eps, args.Mstar, args.Mcap, exhaustive=args.exhaustive,
                                 N_max=args.Nmax)
    out = _outdir(args.out)
    summary = {"status": rep.status, "M": rep.M, "F_M": rep.F_M, "eps": args.eps, "growth": str(F),
               "certificate": rep.max_deviation, "exhaustive_max": rep.exhaustive_max,
               "window_truncated": rep.window_truncated, "scanned": rep.scanned}
    if rep.certified:
        Ns = np.arange(rep.M, rep.F_M + 1)
        base = seq(rep.M)
        dev = np.sqrt(((seq.batch(Ns) - base) ** 2) @ seq.weights)
        rows = [[int(n), repr(float(x))] for n, x in zip(Ns, dev)]
        (out / "deviations.csv").write_text(_csv_text(["N", "deviation_from_M"], rows))
        if rep.exhaustive_max is None:
            summary["exhaustive_recheck"] = exhaustive_max_deviation(seq, rep.M, rep.F_M)
    _write_json(out / "report.json", summary)
    return summary


# ---------------------------------------------------------------------------
# orbit


def cmd_orbit(args) -> dict:
    alphas = [a.strip() for a in args.alpha.split(",")]
    if args.system == "rotation":
        if len(alphas) == 1:
            alphas *= args.l
        system = DynamicalSystem.rotation([[a] for a in alphas])
        x0 = [args.x0[0] if args.x0 else 0.0]
    else:
        system = DynamicalSystem.skew(alphas[0], args.beta)
        x0 = args.x0 or [0.0, 0.0]
    if args.observable == "cos":
        obs = [Observable("cos", 0)] * system.l
    else:
        obs = [Observable("indicator", 0, args.interval[0], args.interval[1])] * system.l
    sample = orbit_sample(system, x0, args.P, obs)
    out = _outdir(args.out)
    paths = []
    for i, g in enumerate(sample, 1):
        p = out / (f"g{i}.csv" if args.csv else f"g{i}.grid")
        (io.save_grid_csv if args.csv else io.save_grid)(g, p)
        paths.append(str(p))
    _write_json(out / "orbit.json", sample.meta)
    return {"files": paths, "P": args.P, "l": system.l}


# ---------------------------------------------------------------------------
# run


def cmd_run(args) -> dict:
    cfg = ExperimentConfig.from_file(args.config)
    report = run_experiment(cfg)
    out = args.out or cfg.output
    if out:
        emit_report(report, out, tuple(args.format))
    summary = {"stages": [[s.name, s.status] for s in report.stages], "error": report.error,
               "claims": len(report.claims), "output": out}
    if report.exit_code:
        summary["exit_code"] = report.exit_code
    return summary


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="seed for every random choice (default 0)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="recorded in reports; kernels are single-threaded")
    common.add_argument("--mem-cap", type=int, default=argparse.SUPPRESS,
                        help="largest array, in float64 entries")
    p = argparse.ArgumentParser(prog="ergokit", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)

    sub.add_parser = add_parser

    a = sub.add_parser("average", help="A_N, S_N or Delta_N of grid files")
    a.add_argument("inputs", nargs="+")
    a.add_argument("--N", required=True, help="comma separated window lengths")
    a.add_argument("--op", choices=["AN", "SN", "DeltaN"], default="AN")
    a.add_argument("--oracle", action="store_true", help="use the brute-force evaluation")
    a.add_argument("--out", default="average_out")
    a.set_defaults(func=cmd_average)

    f = sub.add_parser("factor", help="build, inspect or join factors")
    fsub = f.add_subparsers(dest="action", required=True)
    fb = fsub.add_parser("build", parents=[common])
    fb.add_argument("input")
    fb.add_argument("--eta0", type=float, required=True)
    fb.add_argument("--alpha", type=float, default=None, help="offset in [0,1); drawn from --seed if absent")
    fb.add_argument("--out", required=True, help="output stem (writes .npy and .json)")
    fi = fsub.add_parser("inspect", parents=[common])
    fi.add_argument("stem")
    fj = fsub.add_parser("join", parents=[common])
    fj.add_argument("stems", nargs="+")
    fj.add_argument("--out", required=True)
    f.set_defaults(func=cmd_factor)

    c = sub.add_parser("correlate", help="search for a correlating anti-uniform function")
    c.add_argument("inputs", nargs="+", help="one file, or FILE:EDGE pairs with --edge")
    c.add_argument("--M", type=int, required=True)
    c.add_argument("--N", type=int, required=True)
    c.add_argument("--eps", type=float, required=True)
    c.add_argument("--edge", default=None, help="target edge, e.g. 1,2 (hypergraph search)")
    c.add_argument("--sample", type=int, default=None, help="score only this many random shifts")
    c.add_argument("--window-constant", type=float, default=10.0)
    c.add_argument("--out", default="correlate_out")
    c.set_defaults(func=cmd_correlate)

    k = sub.add_parser("kvn", help="greedy decomposition of a function on Z_P")
    k.add_argument("input")
    k.add_argument("--eps", type=float, default=None)
    k.add_argument("--ladder", default=None, help='explicit scales, e.g. "1,8,64"')
    k.add_argument("--growth", default=None, help='scale growth, e.g. "M*8"')
    k.add_argument("--K", type=int, default=None, help="ladder length with --growth")
    k.add_argument("--config", default=None, help="key=value file")
    k.add_argument("--window-constant", type=float, default=None)
    k.add_argument("--rescale", action="store_true", help="map values from [-1,1] to [0,1] first")
    k.add_argument("--out", default="kvn_out")
    k.set_defaults(func=cmd_kvn)

    m = sub.add_parser("metastable", help="certify a metastability window")
    m.add_argument("inputs", nargs="+")
    m.add_argument("--op", choices=["AN", "SN", "DeltaN"], default="AN")
    m.add_argument("--F", default="M^2")
    m.add_argument("--eps", type=float, required=True)
    m.add_argument("--Mstar", type=int, default=1)
    m.add_argument("--Mcap", type=int, default=1000)
    m.add_argument("--Nmax", type=int, default=None, help="truncate windows at this N")
    m.add_argument("--exhaustive", action="store_true")
    m.add_argument("--out", default="metastable_out")
    m.set_defaults(func=cmd_metastable)

    o = sub.add_parser("orbit", help="sample observables along an orbit")
    o.add_argument("--system", choices=["rotation", "skew"], default="rotation")
    o.add_argument("--alpha", default="phi-1", help="angle(s): number or name like sqrt2-1")
    o.add_argument("--beta", default=None, help="second skew generator y -> y + beta")
    o.add_argument("--l", type=int, default=1)
    o.add_argument("--P", type=int, required=True)
    o.add_argument("--x0", type=float, nargs="*", default=None)
    o.add_argument("--observable", choices=["cos", "indicator"], default="cos")
    o.add_argument("--interval", type=float, nargs=2, default=(0.0, 0.5))
    o.add_argument("--csv", action="store_true", help="write CSV instead of binary grids")
    o.add_argument("--out", default="orbit_out")
    o.set_defaults(func=cmd_orbit)

    r = sub.add_parser("run", help="run a key=value experiment config")
    r.add_argument("config")
    r.add_argument("--out", default=None)
    r.add_argument("--format", nargs="+", choices=["json", "csv", "markdown"],
                   default=["json", "csv", "markdown"])
    r.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("seed", 0), ("threads", 1), ("mem_cap", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    if args.mem_cap is not None:
        grid.set_memory_cap(args.mem_cap)
    try:
        summary = args.func(args)
    except (ErgokitError, MemoryError) as exc:
        print(f"ergokit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except OSError as exc:
        print(f"ergokit: {exc}", file=sys.stderr)
        return 1
    summary = {"command": args.command, "seed": args.seed, "threads": args.threads, **summary}
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return int(summary.get("exit_code", 0))


if __name__ == "__main__":
    sys.exit(main())
