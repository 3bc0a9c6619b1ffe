"""Greedy Koopman-von Neumann decompositions.

Starting from the trivial factor, the loop tests whether the uniform part
is small under averaging at every N on a finite check grid. If some test
fails, a correlation search produces an anti-uniform witness at the next
smaller ladder scale, its interval factor is joined in and the split is
recomputed. Each witness raises the energy ||E(g | Y)||_2^2 by at least
the configured increment, which bounds the number of iterations.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .antiuniform import AntiUniform, Witness, correlate_search_1, correlate_search_e
from .averaging import EdgeFunction, _edge, diagonal_projection_product, sliding_average
from .errors import InvariantViolation, PreconditionError, ShapeMismatchError
from .factors import Factor, build_interval_factor, cond_expectation, join, trivial_factor
from .grid import IDENTITY_TOL, GridFunction
from .growth import GrowthFunction


@dataclass(frozen=True)
class ScaleLadder:
    """Scales 1 = M_1 <= M_2 <= ... <= M_K, optionally generated by M_{i+1} = F(M_i)."""

    scales: tuple
    generator: str | None = None

    def __post_init__(self):
        sc = tuple(int(m) for m in self.scales)
        object.__setattr__(self, "scales", sc)
        if not sc:
            raise PreconditionError("a ladder needs at least one scale")
        if sc[0] != 1:
            raise PreconditionError("ladders start at M_1 = 1")
        if any(b < a for a, b in zip(sc, sc[1:])):
            raise PreconditionError("ladder scales must be non-decreasing")
        if self.generator is not None:
            F = GrowthFunction.parse(self.generator)
            if any(F(a) != b for a, b in zip(sc, sc[1:])):
                raise PreconditionError(f"scales do not follow M -> {self.generator}")

    @classmethod
    def from_growth(cls, F: GrowthFunction | str, K: int) -> "ScaleLadder":
        F = GrowthFunction.parse(F) if isinstance(F, str) else F
        if K < 1:
            raise PreconditionError("K must be positive")
        scales = [1]
        while len(scales) < K:
            scales.append(F(scales[-1]))
        return cls(tuple(scales), str(F))

    @classmethod
    def parse(cls, text: str) -> "ScaleLadder":
        return cls(tuple(int(x) for x in text.replace(" ", "").split(",") if x))

    @property
    def K(self) -> int:
        return len(self.scales)

    def __getitem__(self, i: int) -> int:
        """M_i with the 1-based index used by the algorithm."""
        return self.scales[i - 1]


@dataclass(frozen=True)
class KvnConfig:
    """Thresholds of the greedy loop.

    ``uniformity`` is the target bound u on the averaged uniform part.
    Each step must find a witness with correlation at least
    ``correlation_threshold``; interval factors have width ``eta0``;
    ``energy_increment`` is the guaranteed energy gain per step. Checks run
    for N >= window_constant * M_{k-1} / u^2.
    """

    eps: float
    uniformity: float
    correlation_threshold: float
    eta0: float
    energy_increment: float
    K_max: int = 12
    window_constant: float = 10.0
    check_N: tuple = ()
    probes: int = 16
    seed: int = 0
    edge_count: int = 1

    def __post_init__(self):
        for name in ("eps", "uniformity", "correlation_threshold", "eta0", "energy_increment"):
            if not getattr(self, name) > 0:
                raise PreconditionError(f"{name} must be positive")
        if self.K_max < 2:
            raise PreconditionError("K_max must be at least 2")
        if self.window_constant < 0:
            raise PreconditionError("window_constant must be non-negative")
        u = self.uniformity
        if self.correlation_threshold > u**2 / 2 + 1e-15:
            raise PreconditionError(
                "correlation_threshold above u^2/2 is not guaranteed by the correlation search")
        if self.eta0 >= self.correlation_threshold:
            raise PreconditionError("eta0 must be below correlation_threshold")
        if self.energy_increment > (self.correlation_threshold - self.eta0) ** 2 * (1 + 1e-12):
            raise PreconditionError(
                "energy_increment exceeds (correlation_threshold - eta0)^2, the guaranteed gain")
        object.__setattr__(self, "check_N", tuple(sorted(set(int(n) for n in self.check_N))))

    @classmethod
    def default(cls, eps: float, edge_count: int = 1, **overrides) -> "KvnConfig":
        """u = eps/(10 |I|), threshold u^2/2, eta0 threshold/2, increment (threshold - eta0)^2."""
        if not eps > 0:
            raise PreconditionError("eps must be positive")
        u = eps / (10 * edge_count)
        thr = u**2 / 2
        eta0 = thr / 2
        base = dict(eps=eps, uniformity=u, correlation_threshold=thr, eta0=eta0,
                    energy_increment=(thr - eta0) ** 2, edge_count=edge_count)
        base.update(overrides)
        return cls(**base)

    @property
    def relaxed(self) -> bool:
        return self.window_constant < 10.0

    def max_iterations(self) -> int:
        return math.ceil(self.edge_count / self.energy_increment) + 1

    def check_grid(self, M_prev: int, P: int) -> list[int]:
        start = math.ceil(self.window_constant * M_prev / self.uniformity**2 - 1e-9)
        start = max(start, 1)
        grid = []
        N = start
        while N <= P:
            grid.append(N)
            N *= 2
        grid.extend(n for n in self.check_N if n >= start)
        return sorted(set(grid))

    def deviations(self) -> list[dict]:
        """Reference constants from the source argument next to the ones used."""
        eps, m = self.eps, self.edge_count
        ref = {
            "uniformity": eps / (10 * m),
            "correlation_threshold": eps**2 / (200 * m**2),
            "eta0": eps**2 / (400 * m**2),
            "energy_increment": eps**4 / (1e6 * m**4),
            "window_constant": 10.0,
            "K_max": math.floor(1e6 * m**5 / eps**4 + 2) + 1,
        }
        rows = []
        for name, reference in ref.items():
            used = getattr(self, name)
            rows.append({"constant": name, "reference": reference, "used": used,
                         "deviates": not math.isclose(reference, used, rel_tol=1e-9)})
        return rows


@dataclass
class LedgerEntry:
    iteration: int
    k: int
    scale: int
    edge: tuple
    N: int
    uniformity_norm: float
    correlation: float
    alpha: float
    energy_before: float
    energy_after: float


@dataclass
class Decomposition:
    """g = structured + uniform with structured = E(g | factor)."""

    g: GridFunction
    structured: GridFunction
    uniform: GridFunction
    k: int
    K: int
    witnesses: dict
    factor: Factor
    ledger: list
    status: str
    check_grid: list
    uniformity: dict
    edge: tuple = (1,)
    meta: dict = field(default_factory=dict)

    @property
    def energy(self) -> float:
        return float(np.mean(self.structured.values**2))


def _sliding_norm(g: GridFunction, N: int) -> float:
    return float(np.sqrt(np.mean(sliding_average(g, N).values ** 2)))


def _split(g: GridFunction, factor: Factor) -> tuple[GridFunction, GridFunction]:
    s = cond_expectation(g, factor)
    return s, g.with_values(g.values - s.values)


def _factor_of(witnesses: dict, shape: tuple, eta0: float) -> Factor:
    fac = trivial_factor(shape)
    for j in sorted(witnesses):
        phi, alpha = witnesses[j]
        if phi is None:
            continue
        vals = phi.compact() if isinstance(phi, AntiUniform) else phi
        Y = build_interval_factor(GridFunction(vals), eta0, alpha=alpha, interval=(-1.0, 1.0))
        fac = join(fac, Y)
    return fac


def _ladder_K(ladder: ScaleLadder, cfg: KvnConfig) -> int:
    return min(ladder.K, cfg.K_max)


def kvn_decompose_1d(g: GridFunction, ladder: ScaleLadder, cfg: KvnConfig) -> Decomposition:
    """Greedy decomposition of g: Z_P -> [0, 1].

    Status is ``Uniform`` when every N on the check grid passes,
    ``TerminatedAtFloor`` if the ladder runs out (k reaches 1), and
    ``Stalled`` if, under a relaxed window constant, a failed check yields
    no witness above the threshold.
    """
    if not isinstance(g, GridFunction) or g.l != 1:
        raise ShapeMismatchError("g must be a deterministic function on Z_P")
    if g.values.size and (g.values.min() < -IDENTITY_TOL or g.values.max() > 1 + IDENTITY_TOL):
        raise PreconditionError("g must take values in [0, 1]")
    P = g.P
    K = _ladder_K(ladder, cfg)
    rng = np.random.default_rng(cfg.seed)
    witnesses: dict = {}
    ledger: list = []
    k = K + 1
    status = "Uniform"
    iteration = 0
    while True:
        factor = _factor_of(witnesses, (P,), cfg.eta0)
        structured, uniform = _split(g, factor)
        energy = float(np.mean(structured.values**2))
        grid = cfg.check_grid(ladder[k - 1], P) if k >= 2 else []
        norms = {N: _sliding_norm(uniform, N) for N in grid}
        failing = [N for N in grid if norms[N] > cfg.uniformity]
        if k < 2:
            status = "TerminatedAtFloor"
            break
        if not failing:
            break
        N = failing[0]
        M = ladder[k - 1]
        found = correlate_search_1(uniform, M, N, cfg.uniformity,
                                   window_constant=cfg.window_constant, strict=not cfg.relaxed)
        if found is None or abs(found.correlation) < cfg.correlation_threshold:
            if cfg.relaxed:
                status = "Stalled"
                break
            raise InvariantViolation("uniformity check failed but no witness reached the threshold")
        if iteration >= cfg.max_iterations():
            raise InvariantViolation("iteration bound exceeded")
        alpha = float(rng.uniform())
        witnesses[k - 1] = (found.phi, alpha)
        new_factor = _factor_of(witnesses, (P,), cfg.eta0)
        after = float(np.mean(cond_expectation(g, new_factor).values ** 2))
        ledger.append(LedgerEntry(iteration, k - 1, M, (1,), N, norms[N], found.correlation,
                                  alpha, energy, after))
        if after - energy < cfg.energy_increment - IDENTITY_TOL:
            raise InvariantViolation(
                f"energy grew by {after - energy:.3e}, below the guaranteed {cfg.energy_increment:.3e}")
        iteration += 1
        k -= 1
    return Decomposition(g, structured, uniform, k, K, witnesses, factor, ledger, status,
                         grid, norms, (1,), {"P": P, "ladder": list(ladder.scales[:K])})


# ---------------------------------------------------------------------------
# Hypergraph version


@dataclass
class HypergraphDecomposition:
    parts: dict
    k: int
    K: int
    ledger: list
    combined_energy: list
    status: str
    check_grid: list
    probe_max: dict
    meta: dict = field(default_factory=dict)

    def __getitem__(self, e):
        return self.parts[tuple(e)]

    def __iter__(self):
        return iter(self.parts)

    def items(self):
        return self.parts.items()


def _probe_family(e_other: tuple, current: dict, P: int, rng: np.random.Generator,
                  count: int, n: int) -> dict:
    fams = {}
    for e in e_other:
        base = [current[e]["structured"], current[e]["g"], np.ones((P,) * len(e))]
        base += [rng.uniform(-1.0, 1.0, size=(P,) * len(e)) for _ in range(count)]
        fams[e] = base
    return fams


def _probe_choices(fams: dict, e_other: tuple, limit: int = 256):
    sizes = [len(fams[e]) for e in e_other]
    if int(np.prod(sizes)) <= limit:
        yield from itertools.product(*(range(s) for s in sizes))
    else:
        for i in range(max(sizes)):
            yield tuple(min(i, s - 1) for s in sizes)


def kvn_decompose_hypergraph(g_map: Mapping[tuple, EdgeFunction], ladder: ScaleLadder,
                             cfg: KvnConfig) -> HypergraphDecomposition:
    """Run the greedy loop for every edge function in parallel.

    A failed check for edge e means some probe family (h_{e'}) gives
    ||Delta_N(g_{e,U} prod h_{e'})||_2 > u; the correlation search is then
    run on that family with target e. Edges that find nothing at a step get
    the constant filler 1, which leaves their factor unchanged.
    """
    if not g_map:
        raise PreconditionError("empty family")
    first = next(iter(g_map.values()))
    P, n = first.P, first.n_coords
    edges = sorted(_edge(e, n) for e in g_map)
    fam = {_edge(e, n): ge for e, ge in g_map.items()}
    d = len(edges[0])
    for e in edges:
        ge = fam[e]
        if ge.space is not None or (ge.P, ge.n_coords) != (P, n) or len(e) != d or n not in e:
            raise PreconditionError("edge functions must be deterministic, share P and d, and contain l+1")
        if ge.compact.min() < -IDENTITY_TOL or ge.compact.max() > 1 + IDENTITY_TOL:
            raise PreconditionError("edge functions must take values in [0, 1]")
    if cfg.edge_count != len(edges):
        raise PreconditionError(f"config was built for {cfg.edge_count} edges, family has {len(edges)}")
    K = _ladder_K(ladder, cfg)
    rng = np.random.default_rng(cfg.seed)
    witnesses = {e: {} for e in edges}
    ledger: list = []
    combined: list = []
    k = K + 1
    status = "Uniform"
    iteration = 0
    probe_max: dict = {}
    grid: list = []
    while True:
        current = {}
        for e in edges:
            fac = _factor_of(witnesses[e], (P,) * d, cfg.eta0)
            g_c = GridFunction(fam[e].compact, P, d)
            s, u = _split(g_c, fac)
            current[e] = {"g": g_c.values, "structured": s.values, "uniform": u.values, "factor": fac}
        energy = float(sum(np.mean(current[e]["structured"] ** 2) for e in edges))
        combined.append(energy)
        if k < 2:
            status = "TerminatedAtFloor"
            break
        grid = cfg.check_grid(ladder[k - 1], P)
        violation = None
        probe_max = {}
        probe_rng = np.random.default_rng([cfg.seed, iteration])
        for e in edges:
            others = tuple(x for x in edges if x != e)
            fams = _probe_family(others, current, P, probe_rng, cfg.probes, n)
            worst = 0.0
            for N in grid:
                for choice in _probe_choices(fams, others):
                    parts = [EdgeFunction(current[e]["uniform"], e, n, P)]
                    parts += [EdgeFunction(fams[o][c], o, n, P) for o, c in zip(others, choice)]
                    val = float(np.sqrt(np.mean(diagonal_projection_product(parts, N).values ** 2)))
                    worst = max(worst, val)
                    if val > cfg.uniformity and violation is None:
                        violation = (e, N, {o: fams[o][c] for o, c in zip(others, choice)}, val)
            probe_max[e] = worst
        if violation is None:
            break
        e, N, probes, val = violation
        M = ladder[k - 1]
        family = {e: EdgeFunction(current[e]["uniform"], e, n, P)}
        family.update({o: EdgeFunction(h, o, n, P) for o, h in probes.items()})
        found = correlate_search_e(family, e, M, N, cfg.uniformity,
                                   window_constant=cfg.window_constant, strict=not cfg.relaxed)
        if found is None or abs(found.correlation) < cfg.correlation_threshold:
            if cfg.relaxed:
                status = "Stalled"
                break
            raise InvariantViolation("uniformity check failed but no witness reached the threshold")
        if iteration >= cfg.max_iterations():
            raise InvariantViolation("iteration bound exceeded")
        alpha = float(rng.uniform())
        for other in edges:
            witnesses[other][k - 1] = (found.phi, alpha) if other == e else (None, None)
        new_fac = _factor_of(witnesses[e], (P,) * d, cfg.eta0)
        before_e = float(np.mean(current[e]["structured"] ** 2))
        after_e = float(np.mean(cond_expectation(GridFunction(fam[e].compact, P, d), new_fac).values ** 2))
        ledger.append(LedgerEntry(iteration, k - 1, M, e, N, val, found.correlation, alpha,
                                  energy, energy - before_e + after_e))
        if after_e - before_e < cfg.energy_increment - IDENTITY_TOL:
            raise InvariantViolation("combined energy grew by less than the guaranteed increment")
        iteration += 1
        k -= 1

    parts = {}
    for e in edges:
        c = current[e]
        g_c = GridFunction(c["g"], P, d)
        parts[e] = Decomposition(g_c, GridFunction(c["structured"], P, d), GridFunction(c["uniform"], P, d),
                                 k, K, {j: w for j, w in witnesses[e].items() if w[0] is not None},
                                 c["factor"], [x for x in ledger if x.edge == e], status, grid,
                                 {}, e, {"n_coords": n, "compact": True})
    return HypergraphDecomposition(parts, k, K, ledger, combined, status, grid, probe_max,
                                   {"P": P, "n_coords": n, "d": d, "ladder": list(ladder.scales[:K])})


# ---------------------------------------------------------------------------
# Telescoping


@dataclass(frozen=True)
class TelescopingCheck:
    residual: float
    term_norms: tuple
    bound_holds: bool
    target: float | None = None

    @property
    def budget(self) -> float:
        return float(sum(self.term_norms))

    @property
    def within_target(self) -> bool | None:
        return None if self.target is None else self.budget <= self.target


def telescoping_residual(g_map: Mapping[tuple, EdgeFunction], structured_map: Mapping[tuple, EdgeFunction],
                         N: int, target: float | None = None) -> TelescopingCheck:
    """||Delta_N(prod g_e) - Delta_N(prod s_e)||_2 against the telescoping budget.

    With edges ordered e_1..e_m and u_j = g_j - s_j,
    prod g - prod s = sum_j s_1 .. s_{j-1} u_j g_{j+1} .. g_m; each term's
    Delta_N norm is evaluated separately.
    """
    edges = sorted(g_map)
    if sorted(structured_map) != edges:
        raise ShapeMismatchError("both maps need the same edges")
    full = diagonal_projection_product([g_map[e] for e in edges], N).values
    struct = diagonal_projection_product([structured_map[e] for e in edges], N).values
    residual = float(np.sqrt(np.mean((full - struct) ** 2)))
    terms = []
    for j, e in enumerate(edges):
        u = g_map[e].with_compact(g_map[e].compact - structured_map[e].compact)
        parts = [structured_map[x] for x in edges[:j]] + [u] + [g_map[x] for x in edges[j + 1:]]
        terms.append(float(np.sqrt(np.mean(diagonal_projection_product(parts, N).values ** 2))))
    return TelescopingCheck(residual, tuple(terms), residual <= sum(terms) + 1e-10, target)


def structured_edge_functions(decomp: HypergraphDecomposition) -> dict:
    n = decomp.meta["n_coords"]
    P = decomp.meta["P"]
    return {e: EdgeFunction(part.structured.values, e, n, P) for e, part in decomp.items()}
