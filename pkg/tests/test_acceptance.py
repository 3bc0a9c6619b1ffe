"""Acceptance criteria, one test each.

Every test prints ``criterion N: PASS|FAIL <detail>`` before asserting, so
the outcome of all twelve is visible in ``pytest -v`` output even when one
of them fails.
"""

import itertools
import math
import time

import numpy as np
import pytest

from ergokit import averaging, kernels, oracles
from ergokit.antiuniform import basic_antiuniform_1, correlate_search_1, hyperedges
from ergokit.averaging import EdgeFunction
from ergokit.dynamics import DynamicalSystem, Observable, orbit_sample
from ergokit.experiment import ExperimentConfig, emit_report, run_experiment
from ergokit.factors import (Factor, atom_polynomial, build_interval_factor, cond_expectation, join,
                             trivial_factor)
from ergokit.grid import FiniteProbabilitySpace, GridFunction, RandomizedGridFunction
from ergokit.kvn import (KvnConfig, ScaleLadder, kvn_decompose_1d, kvn_decompose_hypergraph,
                         structured_edge_functions, telescoping_residual)
from ergokit.metastability import SlidingSequence, find_metastable_window, j_reduction_sides


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return emit


# -- 1 ----------------------------------------------------------------------

def test_criterion_01_average_equals_diagonal_projection(report):
    start = time.perf_counter()
    worst = 0.0
    for l, P, seed in itertools.product((1, 2, 3), (5, 7, 11), range(20)):
        rng = np.random.default_rng([l, P, seed])
        fs = [rng.uniform(-1, 1, (P,) * l) for _ in range(l)]
        # the lifted product comes from the brute-force builder, not the fast lifts
        lifted = GridFunction(oracles.lifted_product(fs, P)) if P**(l + 1) <= 1331 else None
        gfs = [GridFunction(f) for f in fs]
        lifts = averaging.lift_functions(gfs)
        for N in range(1, P + 1):
            a = averaging.multiple_average(gfs, N).values
            d = averaging.diagonal_projection_product(lifts, N).values
            worst = max(worst, float(np.max(np.abs(a - d))))
            if lifted is not None:
                d2 = averaging.diagonal_projection(lifted, N).values
                worst = max(worst, float(np.max(np.abs(a - d2))))
    secs = time.perf_counter() - start
    ok = report(1, worst <= 1e-12 and secs < 30, f"max |A_N - Delta_N(prod lifts)| = {worst:.2e}, {secs:.1f} s")
    assert ok


# -- 2 ----------------------------------------------------------------------

def test_criterion_02_module_identity(report):
    worst = 0.0
    rng = np.random.default_rng(2)
    for _ in range(100):
        l = int(rng.integers(1, 4))
        P = int(rng.integers(2, 12 if l < 3 else 8))
        N = int(rng.integers(1, 2 * P + 1))
        g = rng.uniform(-1, 1, (P,) * l)
        h = rng.uniform(-1, 1, (P,) * (l + 1))
        out = averaging.module_multiply(EdgeFunction(g, tuple(range(1, l + 1)), l + 1, P),
                                        GridFunction(h), N).values
        lhs = oracles.diagonal_projection(g[..., None] * h, P, l, N)
        rhs = g * oracles.diagonal_projection(h, P, l, N)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))), float(np.max(np.abs(out - rhs))))
    ok = report(2, worst <= 1e-12, f"max |Delta_N(g h) - g Delta_N(h)| = {worst:.2e} over 100 instances")
    assert ok


# -- 3 ----------------------------------------------------------------------

def test_criterion_03_kernels_match_brute_force(report):
    worst = {}
    for backend in kernels.available_backends():
        with kernels.use_backend(backend):
            w = 0.0
            for l, P, seed in itertools.product((1, 2, 3), (5, 7, 11), range(20)):
                rng = np.random.default_rng([l, P, seed, 3])
                fs = [rng.uniform(-1, 1, (P,) * l) for _ in range(l)]
                g = rng.uniform(-1, 1, P)
                f = rng.uniform(-1, 1, (P,) * (l + 1))
                for N in range(1, P + 1):
                    w = max(w, float(np.max(np.abs(
                        averaging.sliding_average(GridFunction(g), N).values - oracles.sliding_average(g, N)))))
                    w = max(w, float(np.max(np.abs(
                        averaging.diagonal_projection(GridFunction(f), N).values
                        - oracles.diagonal_projection(f, P, l, N)))))
                    w = max(w, float(np.max(np.abs(
                        averaging.multiple_average([GridFunction(x) for x in fs], N).values
                        - oracles.multiple_average(fs, P, N)))))
            worst[backend] = w
    # timing at P = 2^20 is reported but does not decide the criterion
    big = GridFunction(np.random.default_rng(0).uniform(-1, 1, 2**20))
    per_N = []
    for N in (1, 1000, 2**19, 2**20 + 7):
        t = time.perf_counter()
        averaging.sliding_average(big, N)
        per_N.append(time.perf_counter() - t)
    ok = all(w <= 1e-12 for w in worst.values())
    detail = ", ".join(f"{b}: {w:.2e}" for b, w in worst.items())
    report(3, ok, f"max kernel/reference gap {detail}; S_N at P=2^20 worst {1000 * max(per_N):.1f} ms per N"
           f" ({'within' if max(per_N) < 0.1 else 'over'} 100 ms, informational)")
    assert ok


# -- 4 ----------------------------------------------------------------------

def test_criterion_04_lipschitz(report):
    P = 101
    rng = np.random.default_rng(4)
    worst = -np.inf
    for _ in range(100):
        b = rng.uniform(-1, 1, P)
        M = int(rng.integers(1, 3 * P))
        phi = basic_antiuniform_1(b, M).compact()
        v = np.arange(P)
        for n in range(-M, M + 1):
            gap = np.abs(phi[(v + n) % P] - phi) - 2 * abs(n) / M
            worst = max(worst, float(gap.max()))
    ok = report(4, worst <= 1e-12, f"max |phi(v+n) - phi(v)| - 2|n|/M = {worst:.2e}")
    assert ok


# -- 5 ----------------------------------------------------------------------

def test_criterion_05_correlation_search_completeness(report):
    P, M, N, eps = 1009, 2, 223, 0.3
    v = np.arange(P)
    start = time.perf_counter()
    found, weakest, inputs = 0, np.inf, 0
    rng = np.random.default_rng(5)
    while inputs < 50:
        amp = rng.uniform(0.4, 0.9)
        freq = int(rng.integers(1, 3))
        g = np.clip(amp * np.cos(2 * np.pi * freq * v / P + rng.uniform(0, 2 * np.pi))
                    + rng.uniform(0, 0.3) * rng.uniform(-1, 1, P), -1, 1)
        sn = np.mean([np.roll(g, -n) for n in range(N)], axis=0)
        if np.sqrt(np.mean(sn**2)) < eps:
            continue  # precondition not met; draw another input
        inputs += 1
        w = correlate_search_1(GridFunction(g), M, N, eps)
        if w is None:
            continue
        corr = abs(float(np.mean(g * oracles.antiuniform_1(w.phi.blocks[1], M))))
        if corr >= eps**2 / 2:
            found += 1
        weakest = min(weakest, corr)
    secs = time.perf_counter() - start
    ok = report(5, found == 50 and secs < 60,
                f"{found}/50 witnesses verified, weakest |<g,phi>| = {weakest:.4f} (threshold 0.045), {secs:.1f} s")
    assert ok


# -- 6 ----------------------------------------------------------------------

def _ip(a, b, w):
    return float(np.sum(a * b * w))


def test_criterion_06_conditional_expectation_laws(report):
    rng = np.random.default_rng(6)
    worst = 0.0
    for i in range(200):
        P, l = int(rng.integers(2, 8)), int(rng.integers(1, 3))
        if i % 2:
            nx = int(rng.integers(1, 4))
            space = FiniteProbabilitySpace(rng.dirichlet(np.ones(nx)))
            shape = (P,) * l + (nx,)
            f = RandomizedGridFunction(rng.uniform(-1, 1, shape), space)
            g = RandomizedGridFunction(rng.uniform(-1, 1, shape), space)
            w = np.broadcast_to(space.weights, shape) / P**l
        else:
            shape = (P,) * l
            f, g = GridFunction(rng.uniform(-1, 1, shape)), GridFunction(rng.uniform(-1, 1, shape))
            w = np.full(shape, 1.0 / P**l)
        atoms = int(rng.integers(1, 9))
        fine = Factor(rng.integers(0, atoms, size=shape), atoms)
        coarse = Factor(fine.labels // 2, (atoms + 1) // 2)
        Ef = cond_expectation(f, fine).values
        Eg = cond_expectation(g, fine).values
        F, G = np.asarray(f.values), np.asarray(g.values)
        pyth = abs(_ip(F, F, w) - _ip(Ef, Ef, w) - _ip(F - Ef, F - Ef, w))
        idem = float(np.max(np.abs(cond_expectation(f.with_values(Ef), fine).values - Ef)))
        adj = abs(_ip(Ef, G, w) - _ip(F, Eg, w))
        tower = float(np.max(np.abs(cond_expectation(f.with_values(Ef), coarse).values
                                    - cond_expectation(f, coarse).values)))
        ref = float(np.max(np.abs(Ef - oracles.conditional_expectation(F, fine.labels, w))))
        worst = max(worst, pyth, idem, adj, tower, ref)
    ok = report(6, worst <= 1e-10, f"worst law defect {worst:.2e} over 200 pairs")
    assert ok


# -- 7 ----------------------------------------------------------------------

def test_criterion_07_atom_polynomials(report):
    P = 1000
    phi = GridFunction(np.arange(P) / P)
    rows = []
    ok = True
    for eta1 in (0.1, 0.01):
        for alpha in (0.0, 0.25, 0.5, 0.9):
            Y = build_interval_factor(phi, 0.3, alpha=alpha)
            for atom in range(Y.atom_count):
                ind = (Y.labels == atom).astype(float)
                if not ind.any():
                    continue
                poly = atom_polynomial(Y, atom, eta1)
                lo, hi = poly.domain
                # evaluate from the raw Chebyshev coefficients, mapping the domain by hand
                vals = np.polynomial.chebyshev.chebval((2 * phi.values - lo - hi) / (hi - lo),
                                                       poly.coefficients)
                l1 = float(np.sum(np.abs(ind - vals)) / P)
                ok &= poly.degree <= 200 and l1 <= eta1
                rows.append((eta1, poly.degree, l1))
    worst = {e: max(r[2] for r in rows if r[0] == e) for e in (0.1, 0.01)}
    deg = max(r[1] for r in rows)
    report(7, ok, f"{len(rows)} atoms, max degree {deg}, worst L1 error "
           f"{worst[0.1]:.4f} (eta1=0.1), {worst[0.01]:.5f} (eta1=0.01)")
    assert ok


# -- 8 ----------------------------------------------------------------------

def _kvn_inputs():
    P = 4096
    v = np.arange(P)
    out = []
    for seed in range(20):
        r = np.random.default_rng([8, seed])
        x = 0.5 + r.uniform(0.15, 0.45) * np.cos(2 * np.pi * r.integers(1, 3) * v / P + r.uniform(0, 6.3))
        x += r.uniform(0, 0.15) * np.cos(2 * np.pi * r.integers(1, 8) * v / P + r.uniform(0, 6.3))
        x += r.uniform(0, 0.3) * r.uniform(-1, 1, P)
        out.append((f"random {seed}", GridFunction(np.clip(x, 0, 1)), 2.0))
    ind = Observable("indicator", 0, 0.0, 0.5)
    for alpha, eps in (("0.00037", 3.0), ("0.0011", 2.0), ("sqrt2-1", 2.0), ("golden", 2.0)):
        g = orbit_sample(DynamicalSystem.rotation([[alpha]]), [0.0], P, [ind])[0]
        out.append((f"rotation {alpha}", g, eps))
    return out


def _rebuilt_factors(witnesses, P, eta0):
    fac = trivial_factor((P,))
    yield fac
    for k in sorted(witnesses, reverse=True):
        phi, alpha = witnesses[k]
        fac = join(fac, build_interval_factor(GridFunction(phi.compact()), eta0, alpha=alpha,
                                              interval=(-1.0, 1.0)))
        yield fac


def test_criterion_08_kvn_integrity(report):
    ladder = ScaleLadder((1, 2, 4, 8))
    problems, steps, vacuous = [], 0, 0
    for name, g, eps in _kvn_inputs():
        cfg = KvnConfig.default(eps)
        P = g.P
        w = np.full(P, 1.0 / P)
        d = kvn_decompose_1d(g, ladder, cfg)
        G = np.asarray(g.values)
        steps += len(d.ledger)
        if len(d.ledger) > math.ceil(1 / cfg.energy_increment) + 1:
            problems.append(f"{name}: too many iterations")
        if np.max(np.abs(d.structured.values + d.uniform.values - G)) > 1e-12:
            problems.append(f"{name}: split not exact")
        facs = list(_rebuilt_factors(d.witnesses, P, cfg.eta0))
        if not np.allclose(d.structured.values, oracles.conditional_expectation(G, facs[-1].labels, w),
                           atol=1e-12, rtol=0):
            problems.append(f"{name}: structured part not measurable w.r.t. the rebuilt factor")
        energies = [float(np.mean(oracles.conditional_expectation(G, f.labels, w) ** 2)) for f in facs]
        for i, step in enumerate(d.ledger):
            if not (math.isclose(step.energy_before, energies[i], abs_tol=1e-12)
                    and math.isclose(step.energy_after, energies[i + 1], abs_tol=1e-12)):
                problems.append(f"{name}: ledger energy differs from recomputation at step {i}")
            if energies[i + 1] - energies[i] < cfg.energy_increment:
                problems.append(f"{name}: increment below threshold at step {i}")
        if d.status != "Uniform":
            problems.append(f"{name}: status {d.status}")
        if not d.check_grid:
            vacuous += 1
        U = np.asarray(d.uniform.values)
        for N in d.check_grid:
            cs = np.concatenate([[0.0], np.cumsum(np.concatenate([U] * (N // P + 2)))])
            sn = (cs[np.arange(P) + N] - cs[np.arange(P)]) / N
            if np.sqrt(np.mean(sn**2)) > eps / 10:
                problems.append(f"{name}: ||S_{N} g_U|| above eps/10")
    ok = report(8, not problems and not vacuous,
                f"24 runs, {steps} witness steps, {vacuous} vacuous check grids"
                + (f"; {problems[:3]}" if problems else ""))
    assert ok


# -- 9 ----------------------------------------------------------------------

def _hyper_family(P, seed):
    rng = np.random.default_rng(seed)
    v = np.arange(P)
    fam = {}
    for e in hyperedges(2, 2):
        base = (1 + np.cos(2 * np.pi * (v[:, None] + rng.integers(P) * v[None, :]) / P)) / 2
        fam[e] = EdgeFunction(np.clip(0.8 * base + 0.2 * rng.uniform(0, 1, (P, P)), 0, 1), e, 3, P)
    return fam


def _dense(ef):
    return np.broadcast_to(ef.expand(), (ef.P,) * ef.n_coords)


def test_criterion_09_hypergraph_kvn(report):
    P, edges = 31, hyperedges(2, 2)
    problems, steps = [], 0
    worst_tel = -np.inf
    w = np.full((P, P), 1.0 / P**2)
    for seed in range(4):
        fam = _hyper_family(P, seed)
        cfg = KvnConfig.default(2.0, edge_count=2, window_constant=0.01, probes=4, seed=seed)
        d = kvn_decompose_hypergraph(fam, ScaleLadder((1, 2, 4)), cfg)
        c = d.combined_energy
        steps += len(d.ledger)
        if any(b < a for a, b in zip(c, c[1:])) or max(c) > len(edges):
            problems.append(f"seed {seed}: energy not monotone or above |I|")
        # rebuild each edge's factor step by step and recompute the combined energy
        facs = {e: trivial_factor((P, P)) for e in edges}
        energy = lambda: sum(float(np.mean(oracles.conditional_expectation(fam[e].compact, facs[e].labels, w) ** 2))
                             for e in edges)
        recomputed = [energy()]
        for step in d.ledger:
            phi, alpha = d[step.edge].witnesses[step.k]
            facs[step.edge] = join(facs[step.edge], build_interval_factor(
                GridFunction(phi.compact()), cfg.eta0, alpha=alpha, interval=(-1.0, 1.0)))
            recomputed.append(energy())
            if recomputed[-1] - recomputed[-2] < cfg.energy_increment:
                problems.append(f"seed {seed}: increment below threshold")
        if not np.allclose(recomputed, c, atol=1e-12, rtol=0):
            problems.append(f"seed {seed}: ledger energies differ from recomputation")
        structured = structured_edge_functions(d)
        for N in (1, 3, 10, 31):
            chk = telescoping_residual(fam, structured, N)
            g1, g2 = (_dense(fam[e]) for e in edges)
            s1, s2 = (_dense(structured[e]) for e in edges)
            full = oracles.diagonal_projection(g1 * g2, P, 2, N)
            struct = oracles.diagonal_projection(s1 * s2, P, 2, N)
            resid = float(np.sqrt(np.mean((full - struct) ** 2)))
            t1 = float(np.sqrt(np.mean(oracles.diagonal_projection((g1 - s1) * g2, P, 2, N) ** 2)))
            t2 = float(np.sqrt(np.mean(oracles.diagonal_projection(s1 * (g2 - s2), P, 2, N) ** 2)))
            worst_tel = max(worst_tel, resid - (t1 + t2))
            if resid > t1 + t2 + 1e-10 or not chk.bound_holds or abs(chk.residual - resid) > 1e-10:
                problems.append(f"seed {seed}: telescoping bound fails at N={N}")
    ok = report(9, not problems and steps > 0,
                f"4 families, {steps} witness steps, max residual - budget = {worst_tel:.2e}"
                + (f"; {problems[:3]}" if problems else ""))
    assert ok


# -- 10 ---------------------------------------------------------------------

def test_criterion_10_metastability_end_to_end(report):
    start = time.perf_counter()
    P, eps = 10007, 0.1
    g = orbit_sample(DynamicalSystem.rotation([["sqrt2-1"]]), [0.0], P, [Observable("cos", 0)])[0]
    rep = find_metastable_window(SlidingSequence(g), "M^2", eps, M_star=2, M_cap=2000, N_max=P)
    ok = rep.certified and rep.M <= 2000
    worst = None
    if ok:
        hi = min(rep.M**2, P)
        G = np.asarray(g.values)
        cs = np.concatenate([[0.0], np.cumsum(np.concatenate([G, G]))])
        v = np.arange(P)
        rows = np.array([(cs[v + N] - cs[v]) / N for N in range(rep.M, hi + 1)])
        sq = np.einsum("ij,ij->i", rows, rows) / P
        gram = rows @ rows.T / P
        worst = float(np.sqrt(max((sq[:, None] + sq[None, :] - 2 * gram).max(), 0.0)))
        ok = worst <= eps
    secs = time.perf_counter() - start
    ok = ok and secs < 300
    report(10, ok, f"status {rep.status} at M = {rep.M}, window [{rep.M}, {rep.F_M}], "
           f"exhaustive max pair deviation {worst if worst is None else f'{worst:.4f}'}, {secs:.1f} s")
    assert ok


# -- 11 ---------------------------------------------------------------------

def test_criterion_11_j_reduction_identity(report):
    """Both sides of the J^(1/2) norm identity are compared as stated.

    The identity does not hold in general: with J equal parts the summed
    side is J times the extended norm, not J^(1/2) times it. The always-true
    bound lhs <= J * extended is checked and reported alongside.
    """
    worst_gap, worst_ratio, bound_ok = 0.0, 0.0, True
    for J, P, seed in itertools.product((2, 3), (5, 7), range(50)):
        rng = np.random.default_rng([11, J, P, seed])
        parts = [GridFunction(rng.uniform(-1, 1, (P,) * 3)) for _ in range(J)]
        N = int(rng.integers(1, P + 1))
        N2 = N + int(rng.integers(1, P + 1))
        chk = j_reduction_sides(parts, N, N2)
        # independent evaluation of both sides
        total = sum(np.asarray(p.values) for p in parts)
        lhs = np.sqrt(np.mean((oracles.diagonal_projection(total, P, 2, N)
                               - oracles.diagonal_projection(total, P, 2, N2)) ** 2))
        ext = np.stack([np.asarray(p.values) for p in parts], axis=-1)
        ext_d = oracles.diagonal_projection(ext, P, 2, N) - oracles.diagonal_projection(ext, P, 2, N2)
        ext_norm = np.sqrt(np.mean(ext_d**2))
        assert abs(lhs - chk.lhs) <= 1e-10 and abs(ext_norm - chk.extended_norm) <= 1e-10
        worst_gap = max(worst_gap, abs(lhs - math.sqrt(J) * ext_norm))
        worst_ratio = max(worst_ratio, lhs / (math.sqrt(J) * ext_norm))
        bound_ok &= chk.bound_holds
    ok = worst_gap <= 1e-10
    report(11, ok, f"max |lhs - J^(1/2) ext| = {worst_gap:.3e} (largest ratio {worst_ratio:.3f}); "
           f"bound lhs <= J ext {'holds' if bound_ok else 'FAILS'} on all 200 instances")
    assert ok


# -- 12 ---------------------------------------------------------------------

CONFIGS = {
    "metastable": """seed = 7
pipeline = orbit, average, metastable
orbit.system = rotation
orbit.alpha = phi-1
orbit.P = 997
average.op = AN
metastable.F = M^2
metastable.eps = 0.1
""",
    "kvn": """seed = 11
pipeline = orbit, kvn, correlate
orbit.system = rotation
orbit.alpha = 0.00037
orbit.P = 4096
orbit.observable = indicator
orbit.interval = 0, 0.5
kvn.eps = 3
kvn.ladder = 1, 2, 4, 8
correlate.M = 2
correlate.eps = 0.3
""",
    "random": """seed = 3
pipeline = orbit, lift, average, metastable
orbit.system = random
orbit.P = 7
orbit.l = 2
average.op = DeltaN
metastable.eps = 0.5
metastable.Mstar = 1
""",
}


def test_criterion_12_determinism(report, tmp_path):
    mismatched, files = [], 0
    for name, text in CONFIGS.items():
        outs = []
        for run in range(2):
            rep = run_experiment(ExperimentConfig.from_text(text))
            emit_report(rep, tmp_path / f"{name}{run}")
            outs.append({p.name: p.read_bytes() for p in (tmp_path / f"{name}{run}").glob("*.csv")})
        files += len(outs[0])
        if outs[0] != outs[1]:
            mismatched.append(name)
    ok = report(12, not mismatched, f"{files} CSV files from {len(CONFIGS)} configs, "
                f"{len(mismatched)} differ between reruns")
    assert ok
