import math

import numpy as np
import pytest

from visrted.milp_solver import (Basis, DualSimplex, MilpProblem, check_solution, enumerate_binaries,
                                 export_mps, import_solution, read_mps, solve_lp, solve_milp, write_solution)
from visrted.milp_solver.simplex import AT_LB, BASIC
from oracles import lp_vertex_enum


def random_lp(rng, n, m):
    """Dense bounded LP that is feasible by construction."""
    A = rng.normal(size=(m, n))
    lo, hi = -rng.uniform(0.5, 3, n), rng.uniform(0.5, 3, n)
    x0 = lo + (hi - lo) * rng.random(n)
    b = A @ x0 + rng.uniform(0.0, 1.0, m)
    return rng.normal(size=n), A, b, lo, hi


def lp_problem(c, A, b, lo, hi):
    p = MilpProblem("lp")
    for j in range(len(c)):
        p.add_var(f"x{j}", lo[j], hi[j], obj=c[j])
    for i in range(len(b)):
        p.add_constraint(list(enumerate(A[i])), "<=", b[i])
    return p


def random_milp(rng, n_bin, n_cont, m):
    p = MilpProblem("milp")
    for j in range(n_bin):
        p.add_var(f"b{j}", 0, 1, obj=rng.normal(), integer=True)
    for j in range(n_cont):
        p.add_var(f"y{j}", -rng.uniform(0, 2), rng.uniform(0, 2), obj=rng.normal())
    n = n_bin + n_cont
    for i in range(m):
        a = rng.normal(size=n)
        p.add_constraint(list(enumerate(a)), "<=", float(rng.uniform(0.0, 1.5)))
    # a coupling equality keeps some instances interesting
    p.add_constraint([(j, 1.0) for j in range(n_bin)] + [(n_bin, 1.0)], "==", 1.0)
    return p


def test_lp_single_bound():
    p = MilpProblem()
    x = p.add_var("x", -math.inf, math.inf, obj=1.0)
    p.add_constraint([(x, 1.0)], ">=", 3.0)
    sol = solve_lp(p)
    assert sol.status == "optimal" and sol.x[0] == 3.0 and sol.objective == 3.0


def test_lp_infeasible_pair():
    p = MilpProblem()
    x = p.add_var("x", -math.inf, math.inf, obj=1.0)
    p.add_constraint([(x, 1.0)], "<=", 0.0)
    p.add_constraint([(x, 1.0)], ">=", 1.0)
    assert solve_lp(p).status == "infeasible"
    assert solve_milp(p).status == "infeasible"


def test_lp_unbounded():
    p = MilpProblem()
    x = p.add_var("x", -math.inf, math.inf, obj=-1.0)
    y = p.add_var("y", 0, 1)
    p.add_constraint([(x, 1.0), (y, -1.0)], ">=", 0.0)
    assert solve_lp(p).status == "unbounded"


def test_random_lps_vs_vertex_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n, m = int(rng.integers(2, 5)), int(rng.integers(1, 5))
        c, A, b, lo, hi = random_lp(rng, n, m)
        ref, _ = lp_vertex_enum(c, A, b, lo, hi)
        sol = solve_lp(lp_problem(c, A, b, lo, hi))
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(ref, rel=1e-7, abs=1e-9)


def test_random_lps_vs_reference_solver():
    linprog = pytest.importorskip("scipy.optimize").linprog
    rng = np.random.default_rng(1)
    for _ in range(50):
        n, m = int(rng.integers(5, 30)), int(rng.integers(3, 25))
        c, A, b, lo, hi = random_lp(rng, n, m)
        ref = linprog(c, A_ub=A, b_ub=b, bounds=list(zip(lo, hi)), method="highs")
        sol = solve_lp(lp_problem(c, A, b, lo, hi))
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(ref.fun, rel=1e-7, abs=1e-9)
        # the returned point is primal feasible
        assert np.all(A @ sol.x <= b + 1e-9)


def test_equality_rows_and_free_variables():
    linprog = pytest.importorskip("scipy.optimize").linprog
    rng = np.random.default_rng(2)
    for _ in range(20):
        n, m = 8, 4
        A = rng.normal(size=(m, n))
        x0 = rng.uniform(-1, 1, n)
        c = rng.normal(size=n)
        p = MilpProblem()
        for j in range(n):
            p.add_var(f"x{j}", -2.0 if j % 2 else -math.inf, 2.0, obj=c[j])
        for i in range(m):
            p.add_constraint(list(enumerate(A[i])), "==", float(A[i] @ x0))
        bounds = [(-2.0 if j % 2 else None, 2.0) for j in range(n)]
        ref = linprog(c, A_eq=A, b_eq=A @ x0, bounds=bounds, method="highs")
        sol = solve_lp(p)
        assert sol.status == ("optimal" if ref.status == 0 else "unbounded")
        if ref.status == 0:
            assert sol.objective == pytest.approx(ref.fun, rel=1e-7, abs=1e-9)
            assert np.abs(A @ sol.x - A @ x0).max() < 1e-9


def test_lowest_index_tie_rule():
    p = MilpProblem()
    x = p.add_var("x", 0, 1, obj=-1.0, integer=True)
    y = p.add_var("y", 0, 1, obj=-1.0, integer=True)
    p.add_constraint([(x, 1.0), (y, 1.0)], "<=", 1.5)
    sol = solve_milp(p)
    assert sol.status == "optimal" and sol.objective == -1.0
    assert list(sol.x) == [1.0, 0.0]


def test_milp_matches_enumeration():
    rng = np.random.default_rng(3)
    for k in range(30):
        p = random_milp(rng, int(rng.integers(2, 13)), int(rng.integers(1, 5)), int(rng.integers(2, 7)))
        ref = enumerate_binaries(p, max_binaries=12)
        sol = solve_milp(p)
        assert sol.status == ref.status, k
        if ref.status == "optimal":
            assert sol.objective == pytest.approx(ref.objective, rel=1e-9, abs=1e-9)
            assert sol.best_bound <= sol.objective + 1e-12
            assert p.residuals(sol.x)["integrality"] <= 1e-9
            objs = [v for _, v in sol.incumbents]
            assert all(a >= b for a, b in zip(objs, objs[1:]))


def test_worker_count_does_not_change_search():
    rng = np.random.default_rng(4)
    for _ in range(5):
        p = random_milp(rng, 12, 4, 6)
        a = solve_milp(p, workers=1)
        b = solve_milp(p, workers=8)
        assert a.nodes == b.nodes and a.incumbents == b.incumbents
        assert np.array_equal(a.x, b.x) if a.x is not None else b.x is None


def test_node_limit_reports_gap():
    rng = np.random.default_rng(5)
    p = random_milp(rng, 12, 4, 6)
    sol = solve_milp(p, node_limit=1)
    assert sol.status in ("gap_limit", "optimal")
    if sol.status == "gap_limit":
        assert sol.gap > 0


def test_start_seeds_incumbent():
    p = MilpProblem()
    x = p.add_var("x", 0, 1, obj=-1.0, integer=True)
    y = p.add_var("y", 0, 1, obj=-2.0, integer=True)
    p.add_constraint([(x, 1.0), (y, 1.0)], "<=", 1.0)
    sol = solve_milp(p, start={"x": 1.0})
    assert sol.incumbents[0] == (0, -1.0)
    assert sol.objective == -2.0
    p.add_var("z", 0, 1)
    with pytest.raises(ValueError, match="non-binary"):
        solve_milp(p, start={"z": 1.0})


def test_singular_warm_basis_is_repaired():
    # columns 0 and 1 are identical, so a basis holding both is singular
    A = np.array([[1.0, 1.0, 0.0], [2.0, 2.0, 1.0], [0.0, 0.0, 1.0]])
    c = np.array([1.0, 2.0, 1.0])
    lp = DualSimplex(c, A, ["<=", ">=", ">="], [4.0, 1.0, 0.5], np.zeros(3), np.full(3, 5.0))
    ref = lp.solve()
    status = np.full(6, AT_LB, dtype=np.int8)
    head = np.array([0, 1, 2])
    status[head] = BASIC
    warm = lp.solve(basis=Basis(head, status))
    assert ref.status == warm.status == "optimal"
    assert warm.objective == pytest.approx(ref.objective, abs=1e-12)


def two_var_problem(integer=False):
    p = MilpProblem("two")
    x = p.add_var("x", 0, 1 if integer else 4, obj=-1.0, integer=integer)
    y = p.add_var("y", 0, 3, obj=-2.0)
    p.add_constraint([(x, 1.0), (y, 1.0)], "<=", 4.5, name="cap")
    p.add_constraint([(x, 1.0), (y, -1.0)], ">=", -2.0, name="gap")
    return p


def test_mps_sections_in_order(tmp_path):
    text = export_mps(two_var_problem(), tmp_path / "a.mps").read_text()
    heads = [ln.split()[0] for ln in text.splitlines() if ln and not ln[0].isspace()]
    order = [h for h in heads if h in ("NAME", "ROWS", "COLUMNS", "RHS", "BOUNDS", "ENDATA")]
    assert order == ["NAME", "ROWS", "COLUMNS", "RHS", "BOUNDS", "ENDATA"]
    assert "MARKER" not in text


def test_mps_integer_markers(tmp_path):
    text = export_mps(two_var_problem(True), tmp_path / "b.mps").read_text()
    assert "'INTORG'" in text and "'INTEND'" in text
    assert text.index("'INTORG'") < text.index("'INTEND'")


def test_mps_round_trip(tmp_path):
    p = two_var_problem(True)
    q = read_mps(export_mps(p, tmp_path / "c.mps"))
    a, b = solve_milp(p), solve_milp(q)
    assert a.objective == pytest.approx(b.objective, abs=1e-12)
    assert q.n_binaries == p.n_binaries


def test_solution_file_round_trip(tmp_path):
    p = two_var_problem(True)
    sol = solve_milp(p)
    path = write_solution(p, sol.x, tmp_path / "s.sol", header="built-in")
    rep = check_solution(p, import_solution(path))
    assert rep["feasible"] and rep["objective"] == pytest.approx(sol.objective, abs=1e-9)
    bad = dict(import_solution(path), x=3.0)
    assert not check_solution(p, bad)["feasible"]
    (tmp_path / "broken.sol").write_text("x 1 2\n")
    with pytest.raises(ValueError, match="line 1"):
        import_solution(tmp_path / "broken.sol")


def test_external_solver_agrees(tmp_path):
    highspy = pytest.importorskip("highspy")
    rng = np.random.default_rng(6)
    for k in range(10):
        p = random_milp(rng, int(rng.integers(2, 13)), 3, 5)
        ref = solve_milp(p)
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.readModel(str(export_mps(p, tmp_path / f"r{k}.mps")))
        h.run()
        if ref.status == "infeasible":
            assert h.getModelStatus() == highspy.HighsModelStatus.kInfeasible
            continue
        vals = h.getSolution().col_value
        names = [h.getColName(j)[1] for j in range(h.getNumCol())]
        path = tmp_path / f"r{k}.sol"
        path.write_text("".join(f"{n} {v!r}\n" for n, v in zip(names, vals)))
        rep = check_solution(p, import_solution(path))
        assert rep["feasible"]
        assert rep["objective"] == pytest.approx(ref.objective, abs=1e-6)
