"""Kernel tests: simplex vs scipy, branch and bound vs enumeration."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from freqdispatch.lp import (
    BinariesPresent,
    KernelError,
    NonConvexCost,
    OptModel,
    PwlCost,
    pwl_quadratic,
    solve_lp,
    solve_milp,
)


def random_lp(rng):
    """Random bounded LP plus the same model in scipy linprog form."""
    n = int(rng.integers(1, 9))
    m_rows = int(rng.integers(1, 10))
    c = rng.normal(size=n).round(3)
    A = np.where(rng.random((m_rows, n)) < 0.35, 0.0,
                 rng.normal(size=(m_rows, n))).round(3)
    senses = rng.choice(["<=", ">=", "="], size=m_rows, p=[0.5, 0.3, 0.2])
    b = rng.normal(scale=2.0, size=m_rows).round(3)
    lb = np.where(rng.random(n) < 0.75, rng.uniform(-5, 0, n), -np.inf)
    ub = np.where(rng.random(n) < 0.75, rng.uniform(0, 5, n), np.inf)
    ub = np.maximum(ub, lb)
    mod = OptModel()
    for j in range(n):
        mod.add_var(f"x{j}", float(lb[j]), float(ub[j]))
        mod.add_obj(j, float(c[j]))
    A_ub, b_ub, A_eq, b_eq = [], [], [], []
    for i in range(m_rows):
        mod.add_constr({j: float(A[i, j]) for j in range(n) if A[i, j]},
                       str(senses[i]), float(b[i]))
        if senses[i] == "<=":
            A_ub.append(A[i]); b_ub.append(b[i])
        elif senses[i] == ">=":
            A_ub.append(-A[i]); b_ub.append(-b[i])
        else:
            A_eq.append(A[i]); b_eq.append(b[i])
    ref = linprog(c, A_ub=np.array(A_ub) if A_ub else None,
                  b_ub=np.array(b_ub) if b_ub else None,
                  A_eq=np.array(A_eq) if A_eq else None,
                  b_eq=np.array(b_eq) if b_eq else None,
                  bounds=list(zip(lb, ub)), method="highs")
    return mod, ref


def test_min_x_geq_3():
    m = OptModel()
    x = m.add_var("x")
    m.add_obj(x, 1.0)
    m.add_constr({x: 1.0}, ">=", 3.0)
    s = solve_lp(m)
    assert s.status == "Optimal"
    assert s.objective == pytest.approx(3.0, abs=1e-9)
    assert s.value(x) == pytest.approx(3.0, abs=1e-9)


def test_conflicting_rows_infeasible():
    m = OptModel()
    x = m.add_var("x")
    m.add_obj(x, 1.0)
    m.add_constr({x: 1.0}, ">=", 3.0)
    m.add_constr({x: 1.0}, "<=", 2.0)
    assert solve_lp(m).status == "Infeasible"


def test_unbounded_status():
    m = OptModel()
    x = m.add_var("x")
    m.add_obj(x, -1.0)
    m.add_constr({x: 1.0}, ">=", 0.0)
    assert solve_lp(m).status == "Unbounded"


def test_lp_matches_reference_solver():
    rng = np.random.default_rng(42)
    checked_opt = 0
    for _ in range(150):
        mod, ref = random_lp(rng)
        s = solve_lp(mod)
        refst = {0: "Optimal", 2: "Infeasible", 3: "Unbounded"}.get(
            ref.status, "other")
        assert s.status == refst
        if s.status == "Optimal":
            checked_opt += 1
            assert s.objective == pytest.approx(ref.fun, abs=1e-6, rel=1e-6)
            assert s.max_primal_infeas <= 1e-7
            assert s.max_dual_infeas <= 1e-6
            # strong duality certificate
            assert abs(s.dual_bound - s.objective) <= 1e-6 * max(
                1.0, abs(s.objective))
    assert checked_opt >= 30


def test_duals_price_rhs_shift():
    # duals are d(obj)/d(rhs): tighten the binding row, re-solve, compare
    m = OptModel()
    a = m.add_var("a", 0.0, 10.0)
    b = m.add_var("b", 0.0, 10.0)
    m.add_obj(a, 2.0)
    m.add_obj(b, 3.0)
    r = m.add_constr({a: 1.0, b: 1.0}, ">=", 6.0)
    s = solve_lp(m)
    assert s.status == "Optimal"
    m2 = OptModel()
    a2 = m2.add_var("a", 0.0, 10.0)
    b2 = m2.add_var("b", 0.0, 10.0)
    m2.add_obj(a2, 2.0)
    m2.add_obj(b2, 3.0)
    m2.add_constr({a2: 1.0, b2: 1.0}, ">=", 6.5)
    s2 = solve_lp(m2)
    assert s2.objective - s.objective == pytest.approx(
        0.5 * s.duals[r], abs=1e-8)


def brute_force_milp(c, A, senses, b, nb, clb, cub):
    """Enumerate binaries; optimize any continuous tail with linprog."""
    nc = len(clb)
    best = None
    for bits in itertools.product([0.0, 1.0], repeat=nb):
        bits = np.array(bits)
        if nc:
            A_ub, b_ub, A_eq, b_eq = [], [], [], []
            for i, sense in enumerate(senses):
                r = b[i] - A[i, :nb] @ bits
                if sense == "<=":
                    A_ub.append(A[i, nb:]); b_ub.append(r)
                elif sense == ">=":
                    A_ub.append(-A[i, nb:]); b_ub.append(-r)
                else:
                    A_eq.append(A[i, nb:]); b_eq.append(r)
            ref = linprog(c[nb:], A_ub=np.array(A_ub) if A_ub else None,
                          b_ub=np.array(b_ub) if b_ub else None,
                          A_eq=np.array(A_eq) if A_eq else None,
                          b_eq=np.array(b_eq) if b_eq else None,
                          bounds=list(zip(clb, cub)), method="highs")
            if ref.status != 0:
                continue
            val = float(c[:nb] @ bits + ref.fun)
        else:
            ax = A @ bits
            ok = all((ax[i] <= b[i] + 1e-9) if s == "<="
                     else (ax[i] >= b[i] - 1e-9) if s == ">="
                     else abs(ax[i] - b[i]) <= 1e-9
                     for i, s in enumerate(senses))
            if not ok:
                continue
            val = float(c[:nb] @ bits)
        if best is None or val < best:
            best = val
    return best


def random_milp(rng):
    nb = int(rng.integers(1, 9))
    nc = int(rng.integers(0, 3))
    m_rows = int(rng.integers(1, 7))
    n = nb + nc
    c = rng.normal(size=n).round(3)
    A = np.where(rng.random((m_rows, n)) < 0.3, 0.0,
                 rng.normal(size=(m_rows, n))).round(3)
    senses = [str(s) for s in
              rng.choice(["<=", ">=", "="], size=m_rows, p=[0.6, 0.3, 0.1])]
    b = rng.normal(scale=2.0, size=m_rows).round(3)
    clb = rng.uniform(-3, 0, nc).round(3)
    cub = rng.uniform(0, 3, nc).round(3)
    mod = OptModel()
    for j in range(nb):
        mod.add_var(f"y{j}", binary=True)
        mod.add_obj(j, float(c[j]))
    for k in range(nc):
        j = mod.add_var(f"x{k}", float(clb[k]), float(cub[k]))
        mod.add_obj(j, float(c[j]))
    for i in range(m_rows):
        mod.add_constr({j: float(A[i, j]) for j in range(n) if A[i, j]},
                       senses[i], float(b[i]))
    return mod, (c, A, senses, b, nb, clb, cub)


def test_milp_matches_enumeration():
    rng = np.random.default_rng(7)
    n_feasible = 0
    for _ in range(50):
        mod, raw = random_milp(rng)
        s = solve_milp(mod, time_limit_s=30.0)
        best = brute_force_milp(*raw)
        if best is None:
            assert s.status == "Infeasible"
        else:
            n_feasible += 1
            assert s.status == "Optimal"
            assert abs(s.objective - best) <= 1e-9 * max(1.0, abs(best))
    assert n_feasible >= 20


def test_milp_branches_and_stays_exact():
    # knapsacks whose LP relaxations are fractional
    rng = np.random.default_rng(11)
    saw_branching = False
    for _ in range(10):
        nb = 12
        w = rng.uniform(1, 10, nb).round(2)
        v = rng.uniform(1, 10, nb).round(2)
        cap = float(0.45 * w.sum())
        mod = OptModel()
        for j in range(nb):
            mod.add_var(f"b{j}", binary=True)
            mod.add_obj(j, float(-v[j]))
        mod.add_constr({j: float(w[j]) for j in range(nb)}, "<=", cap)
        s = solve_milp(mod, time_limit_s=60.0)
        best = None
        for bits in itertools.product([0, 1], repeat=nb):
            if w @ np.array(bits) <= cap + 1e-12:
                val = float(-(v @ np.array(bits)))
                if best is None or val < best:
                    best = val
        assert s.status == "Optimal"
        assert abs(s.objective - best) < 1e-9
        saw_branching = saw_branching or s.node_count > 1
    assert saw_branching


def test_milp_deterministic_reruns():
    def build():
        rng = np.random.default_rng(11)
        w = rng.uniform(1, 10, 12).round(2)
        v = rng.uniform(1, 10, 12).round(2)
        mod = OptModel()
        for j in range(12):
            mod.add_var(f"b{j}", binary=True)
            mod.add_obj(j, float(-v[j]))
        mod.add_constr({j: float(w[j]) for j in range(12)}, "<=",
                       float(0.45 * w.sum()))
        return mod

    runs = [solve_milp(build()) for _ in range(3)]
    assert len({r.objective for r in runs}) == 1
    assert len({r.node_count for r in runs}) == 1
    assert all(np.array_equal(runs[0].x, r.x) for r in runs)


def test_milp_time_limit_returns_gap():
    rng = np.random.default_rng(2)
    mod = OptModel()
    for j in range(16):
        mod.add_var(f"b{j}", binary=True)
        mod.add_obj(j, float(-rng.uniform(1, 10)))
    mod.add_constr({j: float(rng.uniform(1, 10)) for j in range(16)},
                   "<=", 30.0)
    s = solve_milp(mod, time_limit_s=0.0)
    assert s.status == "TimeLimit"
    assert s.gap is not None


def test_milp_with_fixed_binaries_reduces_to_lp():
    mod = OptModel()
    b0 = mod.add_var("b0", lb=1.0, ub=1.0, binary=True)
    b1 = mod.add_var("b1", lb=0.0, ub=0.0, binary=True)
    x = mod.add_var("x", 0.0, 4.0)
    mod.add_obj(b0, 5.0)
    mod.add_obj(x, 1.0)
    mod.add_constr({b0: 1.0, b1: 1.0, x: 1.0}, ">=", 3.0)
    s = solve_milp(mod)
    s_lp = solve_lp(mod)  # fixed binaries are allowed through
    assert s.status == s_lp.status == "Optimal"
    assert s.objective == pytest.approx(s_lp.objective, abs=1e-9)
    assert s.node_count == 1


def test_solve_lp_rejects_free_binaries():
    mod = OptModel()
    mod.add_var("b", binary=True)
    with pytest.raises(BinariesPresent):
        solve_lp(mod)


def test_pwl_quadratic_rejects_concave():
    with pytest.raises(NonConvexCost):
        pwl_quadratic(-0.1, 1.0, 0.0, 0.0, 10.0, 5)


def test_pwl_breakpoints_must_increase():
    with pytest.raises(KernelError):
        PwlCost([(0.0, 1.0), (0.0, 2.0)])


@settings(max_examples=200, deadline=None)
@given(a=st.floats(0.0, 0.05), b=st.floats(-20.0, 20.0),
       c=st.floats(-100.0, 500.0),
       span=st.floats(1.0, 600.0), n_seg=st.integers(1, 24),
       frac=st.floats(0.0, 1.0))
def test_pwl_overestimates_within_gap_bound(a, b, c, span, n_seg, frac):
    p_min = 10.0
    pw = pwl_quadratic(a, b, c, p_min, p_min + span, n_seg)
    p = p_min + frac * span
    true = a * p * p + b * p + c
    delta = span / n_seg
    gap_bound = a * delta * delta / 4.0
    val = pw.value(p)
    assert val >= true - 1e-7 * max(1.0, abs(true))
    assert val <= true + gap_bound + 1e-7 * max(1.0, abs(true))


def test_pwl_cost_in_model_hits_chord_value():
    pw = pwl_quadratic(0.1, 5.0, 20.0, 0.0, 100.0, 10)
    m = OptModel()
    p = m.add_var("p", 0.0, 100.0)
    m.add_pwl_cost(p, pw)
    m.add_constr({p: 1.0}, ">=", 55.0)
    s = solve_lp(m)
    assert s.status == "Optimal"
    assert s.objective == pytest.approx(pw.value(55.0), abs=1e-9)
    # midpoint of a segment: over-estimate is exactly a*delta^2/4
    assert s.objective - (0.1 * 55.0**2 + 5 * 55.0 + 20.0) == pytest.approx(
        0.1 * 10.0**2 / 4.0, abs=1e-9)


def test_duplicate_var_name_rejected():
    m = OptModel()
    m.add_var("x")
    with pytest.raises(KernelError):
        m.add_var("x")


def test_lp_text_dump_mentions_rows_and_binaries():
    m = OptModel()
    x = m.add_var("x", 0.0, 2.0)
    bvar = m.add_var("flag", binary=True)
    m.add_obj(x, 1.5)
    m.add_constr({x: 1.0, bvar: -1.0}, "<=", 1.0, name="link")
    txt = m.lp_text()
    assert "Minimize" in txt and "Binary" in txt and "link" in txt


def test_equality_row_with_pwl_and_bounds():
    # two generators sharing a load, convex costs: cheaper one loads first
    pw1 = pwl_quadratic(0.02, 1.0, 0.0, 0.0, 50.0, 10)
    pw2 = pwl_quadratic(0.02, 3.0, 0.0, 0.0, 50.0, 10)
    m = OptModel()
    p1 = m.add_var("p1", 0.0, 50.0)
    p2 = m.add_var("p2", 0.0, 50.0)
    m.add_pwl_cost(p1, pw1)
    m.add_pwl_cost(p2, pw2)
    m.add_constr({p1: 1.0, p2: 1.0}, "=", 60.0)
    s = solve_lp(m)
    assert s.status == "Optimal"
    assert s.value(p1) > s.value(p2)
    assert s.value(p1) + s.value(p2) == pytest.approx(60.0, abs=1e-9)
