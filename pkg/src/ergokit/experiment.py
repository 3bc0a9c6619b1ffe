"""Experiment pipelines from plain-text key=value configs, and their reports.

Config example::

    seed = 7
    pipeline = orbit, average, metastable
    orbit.system = rotation
    orbit.alpha = phi-1
    orbit.P = 997
    average.op = AN
    metastable.F = M^2
    metastable.eps = 0.1

Stages share a context: ``orbit`` produces sampled functions, ``lift``
checks the lifted product against A_N, ``average`` fixes the sequence that
``metastable`` certifies, ``kvn`` and ``correlate`` act on the first
sampled function. All randomness derives from ``seed``.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import averaging
from .antiuniform import correlate_search_1
from .dynamics import DynamicalSystem, Observable, orbit_sample
from .errors import ErgokitError, PreconditionError
from .grid import GridFunction, random_grid_function
from .growth import GrowthFunction
from .kvn import KvnConfig, ScaleLadder, kvn_decompose_1d
from .metastability import (
    DiagonalSequence,
    MultipleAverageSequence,
    SlidingSequence,
    exhaustive_max_deviation,
    find_metastable_window,
)

STAGES = ("orbit", "lift", "average", "metastable", "kvn", "correlate")


def parse_key_values(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise PreconditionError(f"line {lineno}: expected key = value")
        out[key.strip()] = value.strip()
    return out


@dataclass
class ExperimentConfig:
    pipeline: list
    params: dict
    seed: int
    output: str | None = None

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        kv = parse_key_values(text)
        if "seed" not in kv:
            raise PreconditionError("configs must set an explicit seed")
        pipeline = [s.strip() for s in kv.pop("pipeline", "").split(",") if s.strip()]
        seed = int(kv.pop("seed"))
        output = kv.pop("output", None)
        params: dict = {}
        for key, value in kv.items():
            stage, dot, name = key.partition(".")
            if not dot:
                raise PreconditionError(f"unknown top-level key {key!r}")
            params.setdefault(stage, {})[name] = value
        cfg = cls(pipeline, params, seed, output)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())

    def validate(self) -> None:
        for s in self.pipeline:
            if s not in STAGES:
                raise PreconditionError(f"unknown stage {s!r}")
        for s in self.params:
            if s not in STAGES:
                raise PreconditionError(f"parameters for unknown stage {s!r}")
        needs_source = {"lift", "average", "kvn", "correlate"}
        for i, s in enumerate(self.pipeline):
            if s in needs_source and "orbit" not in self.pipeline[:i]:
                raise PreconditionError(f"stage {s!r} needs an earlier orbit stage")
            if s == "metastable" and "average" not in self.pipeline[:i]:
                raise PreconditionError("stage 'metastable' needs an earlier average stage")

    def get(self, stage: str, name: str, default=None, kind=str):
        raw = self.params.get(stage, {}).get(name)
        if raw is None:
            return default
        if kind is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        return kind(raw)


@dataclass
class Claim:
    stage: str
    name: str
    value: float
    bound: float
    certified: bool
    recheck: str
    recheck_value: float | None = None


@dataclass
class StageResult:
    name: str
    status: str
    seconds: float
    summary: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)


@dataclass
class RunReport:
    config: dict
    stages: list = field(default_factory=list)
    claims: list = field(default_factory=list)
    deviations: list = field(default_factory=list)
    error: str | None = None
    exit_code: int = 0

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "stages": [{"name": s.name, "status": s.status, "seconds": s.seconds,
                        "summary": s.summary, "tables": sorted(s.tables)} for s in self.stages],
            "claims": [asdict(c) for c in self.claims],
            "deviations": self.deviations,
            "error": self.error,
            "exit_code": self.exit_code,
        }


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


class _Runner:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.functions: list[GridFunction] = []
        self.sequence = None
        self.report = RunReport({"seed": cfg.seed, "pipeline": list(cfg.pipeline),
                                 "params": cfg.params, "output": cfg.output})

    def orbit(self) -> StageResult:
        c = self.cfg
        system = c.get("orbit", "system", "rotation")
        P = c.get("orbit", "P", 997, int)
        l = c.get("orbit", "l", 1, int)
        alpha = c.get("orbit", "alpha", "phi-1")
        alphas = [a.strip() for a in alpha.split(",")]
        if system == "rotation":
            if len(alphas) == 1:
                alphas = [alphas[0]] * l
            if len(alphas) != l:
                raise PreconditionError("give one angle per generator")
            sys_ = DynamicalSystem.rotation([[a] for a in alphas])
            x0 = [c.get("orbit", "x0", 0.0, float)]
        elif system == "skew":
            beta = c.get("orbit", "beta", None)
            sys_ = DynamicalSystem.skew(alphas[0], beta)
            x0 = _floats(c.get("orbit", "x0", "0,0"))
        elif system == "random":
            self.functions = [random_grid_function(self.rng, P, l) for _ in range(l)]
            return StageResult("orbit", "ok", 0.0, {"P": P, "l": l, "system": "random"})
        else:
            raise PreconditionError(f"unknown system {system!r}")
        obs_name = c.get("orbit", "observable", "cos")
        if obs_name == "cos":
            obs = [Observable("cos", min(i, sys_.dim - 1) if system == "skew" else 0) for i in range(sys_.l)]
        elif obs_name == "indicator":
            lo, hi = _floats(c.get("orbit", "interval", "0,0.5"))
            obs = [Observable("indicator", 0, lo, hi) for _ in range(sys_.l)]
        else:
            raise PreconditionError(f"unknown observable {obs_name!r}")
        sample = orbit_sample(sys_, x0, P, obs)
        self.functions = list(sample)
        means = [float(np.mean(g.values)) for g in sample]
        rows = [[i + 1, g.P, g.l, repr(m)] for i, (g, m) in enumerate(zip(sample, means))]
        return StageResult("orbit", "ok", 0.0, {"P": P, "l": sys_.l, "system": system, "means": means},
                           {"orbit": (["function", "P", "l", "mean"], rows)})

    def lift(self) -> StageResult:
        fs = self.functions
        Ns = [int(x) for x in self.cfg.get("lift", "Ns", "1,2,3").split(",")]
        rows, worst = [], 0.0
        lifts = averaging.lift_functions(fs)
        for N in Ns:
            a = averaging.multiple_average(fs, N).values
            d = averaging.diagonal_projection_product(lifts, N).values
            gap = float(np.max(np.abs(a - d)))
            worst = max(worst, gap)
            rows.append([N, repr(gap)])
        self.report.claims.append(Claim("lift", "A_N equals Delta_N of lifted product", worst, 1e-12,
                                        worst <= 1e-12, "direct comparison", worst))
        return StageResult("lift", "ok", 0.0, {"max_gap": worst}, {"lift": (["N", "max_abs_gap"], rows)})

    def average(self) -> StageResult:
        op = self.cfg.get("average", "op", "AN")
        fs = self.functions
        if op == "AN":
            self.sequence = MultipleAverageSequence(fs)
        elif op == "SN":
            if fs[0].l != 1:
                raise PreconditionError("S_N needs functions of one variable")
            self.sequence = SlidingSequence(fs[0])
        elif op == "DeltaN":
            lifted = averaging.lift_functions(fs)
            prod = np.ones((fs[0].P,) * (fs[0].l + 1))
            for ef in lifted:
                prod = prod * ef.expand()
            self.sequence = DiagonalSequence(GridFunction(prod))
        else:
            raise PreconditionError(f"unknown op {op!r}")
        Ns = [int(x) for x in self.cfg.get("average", "Ns", "1,2,4,8,16,32").split(",")]
        rows = []
        for N in Ns:
            v = self.sequence(N)
            rows.append([N, repr(float(np.sqrt(v**2 @ self.sequence.weights)))])
        return StageResult("average", "ok", 0.0, {"op": op}, {"average": (["N", "l2_norm"], rows)})

    def metastable(self) -> StageResult:
        c = self.cfg
        F = GrowthFunction.parse(c.get("metastable", "F", "M^2"))
        eps = c.get("metastable", "eps", 0.1, float)
        M_star = c.get("metastable", "Mstar", 2, int)
        M_cap = c.get("metastable", "Mcap", 2000, int)
        N_max = c.get("metastable", "Nmax", None, int)
        if N_max is None and self.functions:
            N_max = self.functions[0].P
        rep = find_metastable_window(self.sequence, F, eps, M_star, M_cap, N_max=N_max)
        summary = {"status": rep.status, "M": rep.M, "F_M": rep.F_M, "eps": eps,
                   "certificate": rep.max_deviation, "growth": str(F), "N_max": N_max}
        tables = {}
        if rep.certified:
            ex = exhaustive_max_deviation(self.sequence, rep.M, rep.F_M)
            self.report.claims.append(Claim("metastable", f"window [{rep.M}, {rep.F_M}] stable",
                                            rep.max_deviation, eps, True,
                                            "exhaustive pairs " + ("passed" if ex <= eps + 1e-12 else "FAILED"), ex))
            base = self.sequence(rep.M)
            Ns = np.arange(rep.M, rep.F_M + 1)
            dev = np.sqrt(((self.sequence.batch(Ns) - base) ** 2) @ self.sequence.weights)
            tables["deviations"] = (["N", "deviation_from_M"], [[int(n), repr(float(d))] for n, d in zip(Ns, dev)])
        return StageResult("metastable", "ok", 0.0, summary, tables)

    def kvn(self) -> StageResult:
        c = self.cfg
        g = self.functions[0]
        if g.l != 1:
            raise PreconditionError("the kvn stage decomposes a function on Z_P")
        g01 = g.with_values((np.clip(g.values, -1, 1) + 1) / 2)
        eps = c.get("kvn", "eps", 2.0, float)
        ladder = c.get("kvn", "ladder", None)
        if ladder:
            lad = ScaleLadder.parse(ladder)
        else:
            lad = ScaleLadder.from_growth(c.get("kvn", "growth", "8*M"), c.get("kvn", "K", 4, int))
        overrides = {}
        for name, kind in (("window_constant", float), ("K_max", int), ("probes", int)):
            val = c.get("kvn", name, None, kind)
            if val is not None:
                overrides[name] = val
        cfg = KvnConfig.default(eps, seed=self.cfg.seed, **overrides)
        d = kvn_decompose_1d(g01, lad, cfg)
        for row in cfg.deviations():
            self.report.deviations.append({"stage": "kvn", **row})
        recheck = {N: float(np.sqrt(np.mean(averaging.sliding_average(d.uniform, N, oracle=g.P <= 2048).values ** 2)))
                   for N in d.check_grid}
        worst = max(recheck.values(), default=0.0)
        if d.status == "Uniform":
            self.report.claims.append(Claim("kvn", "uniform part small on check grid", max(d.uniformity.values(), default=0.0),
                                            cfg.uniformity, bool(d.check_grid),
                                            ("fresh sliding averages " + ("passed" if worst <= cfg.uniformity else "FAILED"))
                                            if d.check_grid else "vacuous: empty check grid", worst))
        rows, cols = ledger_rows(d.ledger)
        return StageResult("kvn", "ok", 0.0, {"status": d.status, "k": d.k, "K": d.K, "steps": len(d.ledger),
                                               "check_grid": d.check_grid, "energy": d.energy},
                           {"ledger": (cols, rows)})

    def correlate(self) -> StageResult:
        c = self.cfg
        g = self.functions[0]
        M = c.get("correlate", "M", 1, int)
        eps = c.get("correlate", "eps", 0.5, float)
        N = c.get("correlate", "N", math.ceil(10 * M / eps**2), int)
        w = correlate_search_1(g, M, N, eps)
        if w is None:
            return StageResult("correlate", "ok", 0.0, {"found": False})
        direct = float(np.mean(g.values * w.phi.compact()))
        self.report.claims.append(Claim("correlate", "correlation with witness", abs(w.correlation), eps**2 / 2,
                                        abs(w.correlation) >= eps**2 / 2, "direct summation", direct))
        return StageResult("correlate", "ok", 0.0, {"found": True, "shift": w.location[0],
                                                    "correlation": w.correlation, "M": M, "N": N})


LEDGER_COLUMNS = ["iteration", "edge", "k", "scale", "N", "uniformity_norm", "correlation", "alpha",
                  "energy_before", "energy_after"]


def ledger_rows(ledger) -> tuple[list, list]:
    rows = [[e.iteration, " ".join(map(str, e.edge)), e.k, e.scale, e.N, repr(e.uniformity_norm),
             repr(e.correlation), repr(e.alpha), repr(e.energy_before), repr(e.energy_after)] for e in ledger]
    return rows, LEDGER_COLUMNS


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    """Run the stages in order; a failing stage ends the run with a partial report."""
    from .errors import exit_code_for

    runner = _Runner(cfg)
    for name in cfg.pipeline:
        start = time.perf_counter()
        try:
            res = getattr(runner, name)()
        except (ErgokitError, MemoryError) as exc:
            runner.report.stages.append(StageResult(name, "failed", time.perf_counter() - start,
                                                    {"error": f"{type(exc).__name__}: {exc}"}))
            runner.report.error = f"{name}: {type(exc).__name__}: {exc}"
            runner.report.exit_code = exit_code_for(exc)
            break
        res.seconds = time.perf_counter() - start
        runner.report.stages.append(res)
    return runner.report


def _csv_text(columns, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


CLAIM_COLUMNS = ["stage", "name", "value", "bound", "certified", "recheck", "recheck_value"]
DEVIATION_COLUMNS = ["stage", "constant", "reference", "used", "deviates"]


def emit_report(report: RunReport, outdir, formats=("json", "csv", "markdown")) -> list[Path]:
    """Write report.json, CSV tables and report.md; returns the written paths.

    CSV files carry numbers only (no timings), so identical runs give
    identical bytes.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        p = out / "report.json"
        p.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True, default=str) + "\n")
        written.append(p)
    if "csv" in formats:
        claims = [[c.stage, c.name, repr(c.value), repr(c.bound), c.certified, c.recheck,
                   "" if c.recheck_value is None else repr(c.recheck_value)] for c in report.claims]
        p = out / "claims.csv"
        p.write_text(_csv_text(CLAIM_COLUMNS, claims))
        written.append(p)
        devs = [[d["stage"], d["constant"], repr(d["reference"]), repr(d["used"]), d["deviates"]]
                for d in report.deviations]
        p = out / "deviations.csv"
        p.write_text(_csv_text(DEVIATION_COLUMNS, devs))
        written.append(p)
        for stage in report.stages:
            for tname, (cols, rows) in sorted(stage.tables.items()):
                p = out / f"{stage.name}_{tname}.csv"
                p.write_text(_csv_text(cols, rows))
                written.append(p)
    if "markdown" in formats:
        p = out / "report.md"
        p.write_text(render_markdown(report))
        written.append(p)
    return written


def render_markdown(report: RunReport) -> str:
    lines = ["# Run report", "", f"Seed: {report.config.get('seed')}",
             f"Pipeline: {', '.join(report.config.get('pipeline', [])) or '(empty)'}", ""]
    if report.error:
        lines += [f"**Aborted:** {report.error}", ""]
    lines += ["## Stages", "", "| stage | status | seconds |", "|---|---|---|"]
    lines += [f"| {s.name} | {s.status} | {s.seconds:.3f} |" for s in report.stages]
    lines += ["", "## Claims", "", "| stage | claim | value | bound | certified | re-check |", "|---|---|---|---|---|---|"]
    lines += [f"| {c.stage} | {c.name} | {c.value:.6g} | {c.bound:.6g} | {c.certified} | {c.recheck} |"
              for c in report.claims]
    lines += ["", "## Constant deviations", "", "| stage | constant | reference | used |", "|---|---|---|---|"]
    lines += [f"| {d['stage']} | {d['constant']} | {d['reference']:.6g} | {d['used']:.6g} |"
              for d in report.deviations if d["deviates"]]
    return "\n".join(lines) + "\n"
