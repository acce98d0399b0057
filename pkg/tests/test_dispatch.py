import numpy as np
import pytest

from visrted import casedata as cd
from visrted import dispatch as dp
from visrted import surrogate as sg
from oracles import dc_flows


@pytest.fixture(scope="module")
def small_models(case):
    """Narrow nets: fast to solve, good enough to exercise the encoding."""
    ctx = case.synthetic()
    nets = {}
    for t in sg.TARGETS:
        ds = sg.generate_dataset(t, case.surrogate_box(t), 4000, 5, ctx)
        nets[t] = sg.train_mlp(ds, hidden=5, epochs=40, lr=0.05, seed=5)
    return dp.SurrogateModels(nets["nadir"], nets["peak_power"])


@pytest.fixture(scope="module")
def forecast(case):
    return cd.forecast_intervals(cd.default_profile(42), shares=case.load_shares())


def loads_at(forecast, t):
    return dict(zip(forecast.buses, forecast.per_bus[t]))


# ---------------------------------------------------------------------------
# network and cost


def test_gsf_two_bus():
    # injection at bus 2, withdrawn at reference bus 1, flows 2 -> 1
    net = dp.Network([1, 2], [(2, 1, 0.1, 100.0)], 1)
    assert dp.compute_gsf(net).tolist() == [[0.0, 1.0]]


def test_gsf_triangle():
    net = dp.Network([1, 2, 3], [(1, 2, 0.1, 1), (2, 3, 0.1, 1), (1, 3, 0.1, 1)], 3)
    g = dp.compute_gsf(net)
    assert g[:, 0] == pytest.approx([1 / 3, 1 / 3, 2 / 3])
    assert np.all(g[:, 2] == 0.0)


def test_gsf_disconnected():
    net = dp.Network([1, 2, 3, 4], [(1, 2, 0.1, 1), (3, 4, 0.1, 1)], 1)
    with pytest.raises(ValueError, match="disconnected or degenerate network"):
        dp.compute_gsf(net)


def test_gsf_matches_dc_flow_on_random_networks():
    rng = np.random.default_rng(0)
    for _ in range(20):
        nb = int(rng.integers(3, 15))
        buses = list(range(1, nb + 1))
        lines = [(int(rng.integers(1, k)), k, float(rng.uniform(0.01, 0.3)), 100.0) for k in range(2, nb + 1)]
        for _ in range(int(rng.integers(0, nb))):
            a, b = rng.choice(buses, 2, replace=False)
            lines.append((int(a), int(b), float(rng.uniform(0.01, 0.3)), 100.0))
        ref = int(rng.choice(buses))
        net = dp.Network(buses, lines, ref)
        g = dp.compute_gsf(net)
        inj = rng.normal(size=nb)
        inj[buses.index(ref)] -= inj.sum()
        assert np.abs(g @ inj - dc_flows(buses, lines, ref, inj)).max() <= 1e-9


def test_builtin_gsf_reference_column(case):
    g = dp.compute_gsf(case.network)
    assert np.all(g[:, case.network.buses.index(case.network.ref_bus)] == 0.0)


def _max_pwl_error(cost, lo, hi, nseg):
    segs = dp.piecewise_cost(cost, lo, hi, nseg)
    p = np.linspace(lo, hi, 20001)
    pw = np.array([dp.pwl_value(segs, v) for v in p])
    return float(np.max(pw - cost.hourly(p))), float(np.min(pw - cost.hourly(p)))


def test_pwl_error_bound():
    cost = dp.GenCost(0.014, 20.0, 500.0, 10.0)
    e1, lo1 = _max_pwl_error(cost, 0.0, 10.0, 1)
    assert e1 == pytest.approx(0.35, abs=1e-9) and lo1 >= -1e-9
    e2, _ = _max_pwl_error(cost, 0.0, 10.0, 2)
    assert e2 == pytest.approx(e1 / 4, rel=1e-6)
    for nseg in (3, 8):
        e, _ = _max_pwl_error(cost, 100.0, 646.0, nseg)
        assert e <= 0.014 * (546.0 / nseg) ** 2 / 4 + 1e-9


def test_pwl_linear_cost_exact():
    cost = dp.GenCost(0.0, 3.0, 7.0, 1.0)
    for nseg in (1, 4):
        assert dp.piecewise_cost(cost, 0.0, 5.0, nseg) == [(3.0, 7.0)]


def test_pwl_errors():
    with pytest.raises(ValueError, match="nonconvex cost"):
        dp.piecewise_cost(dp.GenCost(-0.1, 1, 0, 0), 0, 1, 2)
    with pytest.raises(ValueError):
        dp.piecewise_cost(dp.GenCost(0.1, 1, 0, 0), 1, 1, 2)


# ---------------------------------------------------------------------------
# problem construction


def test_method_table():
    assert dp.MethodConfig.from_variant("iv").ibr_inertia == "scheduled"
    with pytest.raises(ValueError, match="unknown method"):
        dp.MethodConfig.from_variant("V")
    with pytest.raises(ValueError, match="peak_margin"):
        dp.MethodConfig("IV", "scheduled", True, True, 1.5)


def test_method_one_has_no_binaries(case, forecast):
    im = dp.build_interval_problem(case, loads_at(forecast, 0), 0.03, dp.MethodConfig.from_variant("I"))
    assert im.problem.n_binaries == 0
    assert not any(n.startswith(("M_", "D_")) for n in im.problem.var_names)


def test_rocof_floor(case, forecast, small_models):
    im = dp.build_interval_problem(case, loads_at(forecast, 0), 0.04, dp.MethodConfig.from_variant("IV"),
                                   small_models)
    p = im.problem
    k = p.row_index["rocof"]
    idx, val, sense, rhs = p.rows[k]
    sg_m = case.synthetic([(0.0, 0.0)] * len(case.ibrs)).M
    assert sense == ">=" and rhs + sg_m == pytest.approx(4.8, rel=1e-12)
    im0 = dp.build_interval_problem(case, loads_at(forecast, 0), 0.0, dp.MethodConfig.from_variant("IV"),
                                    small_models)
    assert im0.problem.rows[im0.problem.row_index["rocof"]][3] + sg_m == 0.0
    assert im0.problem.n_binaries == 0


def test_surrogate_domain_enforced(case, forecast, small_models):
    with pytest.raises(dp.DispatchError, match="surrogate out of domain"):
        dp.build_interval_problem(case, loads_at(forecast, 0), 0.2, dp.MethodConfig.from_variant("IV"), small_models)


def test_fixed_methods_need_md(case, forecast, small_models):
    with pytest.raises(ValueError, match="fixed_md"):
        dp.build_interval_problem(case, loads_at(forecast, 0), 0.03, dp.MethodConfig.from_variant("II"), small_models)


# ---------------------------------------------------------------------------
# solving


def test_constant_profile_has_no_reserve_cost(case, small_models):
    fs = cd.forecast_intervals(cd.synth_profile({"base": 5600.0}, 0, 900), shares=case.load_shares())
    sol = dp.solve_horizon(case, fs, dp.MethodConfig.from_variant("IV"), small_models)
    t = sol.totals()
    assert t["reserve_cost"] == pytest.approx(0.0, abs=1e-6)
    assert t["inertia_support_cost"] == pytest.approx(0.0, abs=1e-6)


def test_interval_solution_rechecks(case, forecast, small_models):
    dpe = float(forecast.dPe[7])
    res, im, sol = dp.solve_interval(case, loads_at(forecast, 7), dpe, dp.MethodConfig.from_variant("IV"),
                                     small_models, t=7)
    chk = dp.check_interval(case, im, sol.x)
    assert chk["ok"], chk
    assert sum(res.P_sg.values()) + sum(res.P_ibr.values()) == pytest.approx(res.load_mw, abs=1e-6)
    total_M = case.synthetic([(res.M_ibr[u.params.id], res.D_ibr[u.params.id]) for u in case.ibrs]).M
    assert case.f0 * abs(dpe) / total_M <= case.limits.rocof_lim + 1e-9
    for u in case.ibrs:
        k = u.params.id
        assert u.params.m_bounds[0] <= res.M_ibr[k] <= u.params.m_bounds[1]
        assert res.P_ibr[k] + res.ru[k] + res.peak[k] <= u.capacity + 1e-6
    # the objective is the recomputed piecewise cost
    recomputed = res.generation_cost + res.reserve_cost + res.inertia_cost
    assert res.objective == pytest.approx(recomputed, rel=1e-6)


def test_solution_round_trip(case, forecast, tmp_path):
    fs = cd.forecast_intervals(cd.default_profile(42, 2), shares=case.load_shares())
    sol = dp.solve_horizon(case, fs, dp.MethodConfig.from_variant("I"))
    back = dp.DispatchSolution.load(sol.save(tmp_path / "s.json"))
    assert back.totals() == sol.totals()


@pytest.mark.parametrize("seed", range(20))
def test_stable_neuron_fixing_keeps_optimum(case, small_models, monkeypatch, seed):
    rng = np.random.default_rng(seed)
    base = rng.uniform(5200, 6000)
    dpe = float(rng.uniform(0.01, 0.05)) * (1 if rng.random() < 0.7 else -1)
    loads = {b: base * s for b, s in case.load_shares().items()}
    cfg = dp.MethodConfig.from_variant("IV")
    opts = {"gap_tol": 1e-10, "node_limit": 100000, "time_limit": 1e9}
    fixed = dp.solve_interval(case, loads, dpe, cfg, small_models, solver_opts=opts)[2]
    orig = sg.encode_relu_milp
    monkeypatch.setattr(sg, "encode_relu_milp", lambda m, b, fix_stable=True: orig(m, b, fix_stable=False))
    free = dp.solve_interval(case, loads, dpe, cfg, small_models, solver_opts=opts)[2]
    assert fixed.status == free.status == "optimal"
    assert free.objective == pytest.approx(fixed.objective, rel=1e-7)


def test_worst_case_fixed_md_loose_limits(case):
    loose = cd.Case(case.name, case.network, case.sgs, case.ibrs, case.system_mva, case.f0,
                    cd.Limits(1e6, 1e6), case.nominal_loads)
    assert dp.worst_case_fixed_md(loose, 0.04, None) == (0.0, 0.0)


def test_worst_case_fixed_md_rocof_floor(case, small_models):
    M, D = dp.worst_case_fixed_md(case, 0.04, small_models)
    sg_m = case.synthetic([(0.0, 0.0)] * len(case.ibrs)).M
    total_ibr = M * case.ibr_weights().sum()
    assert total_ibr >= 4.8 - sg_m - 1e-12
    assert 0.0 <= M <= 8.0 and 0.0 <= D <= 6.0


def test_worst_case_fixed_md_unattainable(case, small_models):
    tight = cd.Case(case.name, case.network, case.sgs, case.ibrs, case.system_mva, case.f0,
                    cd.Limits(0.01, 0.1), case.nominal_loads)
    with pytest.raises(dp.DispatchError, match="limits unattainable"):
        dp.worst_case_fixed_md(tight, 0.04, small_models)
