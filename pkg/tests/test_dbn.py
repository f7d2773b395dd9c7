import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import classdbn.dbn.model as dbn_model
from classdbn.cohort import (
    Feature,
    FeatureSchema,
    GeneratorConfig,
    TransitionDataset,
    build_transitions,
    generate_synthetic,
)
from classdbn.dbn import (
    DbnModel,
    DbnStructure,
    LinearGaussianCpd,
    SliceNode,
    bic_score,
    export_dot,
    fit_parameters,
    forecast,
    forecast_batch,
    hill_climb,
    joint_log_density,
    learn_structure,
    load_model,
    neighborhood,
    predict_step,
    save_model,
    total_score,
)
from classdbn.dbn.learn import VAR_FLOOR
from classdbn.errors import DataError, ForecastDivergenceError, SchemaError

n0 = lambda v: SliceNode(v, "t0")
n1 = lambda v: SliceNode(v, "t1")


def schema_of(names):
    return FeatureSchema(tuple(Feature(v, "vital") for v in names))


def dataset(x0, x1, names):
    x0, x1 = np.atleast_2d(x0), np.atleast_2d(x1)
    return TransitionDataset(np.hstack([x0, x1]), [("p", i) for i in range(x0.shape[0])], schema_of(names))


def var_system(n=10_000, seed=0, sigma=0.1):
    """x1' = 0.9 x1 + e, x2' = 0.8 x2 + 0.7 x1 + e, sampled at stationarity."""
    rng = np.random.default_rng(seed)
    x = np.zeros(2)
    for _ in range(200):
        x = np.array([0.9 * x[0], 0.8 * x[1] + 0.7 * x[0]]) + rng.normal(0, sigma, 2)
    cur, nxt = np.empty((n, 2)), np.empty((n, 2))
    for i in range(n):
        y = np.array([0.9 * x[0], 0.8 * x[1] + 0.7 * x[0]]) + rng.normal(0, sigma, 2)
        cur[i], nxt[i] = x, y
        x = y
    return dataset(cur, nxt, ["x1", "x2"])


def model_from(names, cpds, period=4.0):
    arcs = {(p, c.child) for c in cpds for p in c.parents}
    return DbnModel(schema_of(names), DbnStructure(tuple(names), frozenset(arcs)), cpds, period)


# -- structure ---------------------------------------------------------------------


def test_structure_legality():
    with pytest.raises(DataError):
        DbnStructure(("a",), frozenset({(n1("a"), n0("a"))}))
    with pytest.raises(DataError):
        DbnStructure(("a",), frozenset({(n1("a"), n1("a"))}))
    with pytest.raises(DataError):
        DbnStructure(("a", "b"), frozenset({(n1("a"), n1("b")), (n1("b"), n1("a"))}))
    with pytest.raises(DataError):
        DbnStructure(("a", "b"), frozenset({(n0("a"), n1("b")), (n0("b"), n1("b"))}), max_parents=1)
    s = DbnStructure(("a", "b", "c"), frozenset({(n1("c"), n1("a")), (n1("a"), n1("b"))}))
    assert s.topological_order() == [n1("c"), n1("a"), n1("b")]


# -- scoring ---------------------------------------------------------------------


def _bic_oracle(y, x):
    n = y.size
    design = np.column_stack([np.ones(n), x]) if x.size else np.ones((n, 1))
    beta = np.linalg.lstsq(design, y, rcond=None)[0]
    var = max(np.mean((y - design @ beta) ** 2), VAR_FLOOR)
    loglik = np.sum(-0.5 * (np.log(2 * np.pi * var) + (y - design @ beta) ** 2 / var))
    return loglik - 0.5 * (design.shape[1] + 1) * np.log(n)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 3))
def test_bic_matches_brute_force_likelihood(seed, k):
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=(60, 4))
    x1 = x0 @ rng.normal(size=(4, 4)) * 0.5 + rng.normal(size=(60, 4))
    d = dataset(x0, x1, list("abcd"))
    parents = [n0(v) for v in "abcd"[:k]]
    expected = _bic_oracle(x1[:, 3], x0[:, :k])
    assert bic_score(n1("d"), parents, d) == pytest.approx(expected, rel=1e-9)


def test_bic_penalty_rejects_irrelevant_parent():
    rng = np.random.default_rng(1)
    x0 = rng.normal(size=(200, 2))
    x1 = np.column_stack([3 + 1e-3 * rng.normal(size=200), rng.normal(size=200)])
    d = dataset(x0, x1, ["c", "z"])
    base = bic_score(n1("c"), [], d)
    assert base > bic_score(n1("c"), [n0("z")], d)
    assert base > bic_score(n1("c"), [n1("z")], d)


def test_bic_rewards_real_parent():
    rng = np.random.default_rng(2)
    x = rng.normal(size=200)
    y = 2 * x + rng.normal(0, 0.1, 200)
    d = dataset(np.column_stack([x, 0 * x]), np.column_stack([0 * x, y]), ["x", "y"])
    gain = bic_score(n1("y"), [n0("x")], d) - bic_score(n1("y"), [], d)
    assert gain > 50 * math.log(200)


def test_bic_rejects_bad_parent_lists():
    d = var_system(100)
    with pytest.raises(DataError):
        bic_score(n1("x1"), [n0("x1"), n0("x1")], d)
    with pytest.raises(DataError):
        bic_score(n0("x1"), [], d)


# -- structure learning --------------------------------------------------------------


def test_recovers_var_system_arcs():
    s = learn_structure(var_system(), max_parents=5, restarts=1, seed=0)
    inter = {(u.label, v.label) for u, v in s.arcs if u.slice == "t0"}
    assert inter == {("x1_t0", "x1_t1"), ("x2_t0", "x2_t1"), ("x1_t0", "x2_t1")}


def test_null_data_has_few_arcs():
    rng = np.random.default_rng(3)
    names = [f"v{i}" for i in range(6)]
    d = dataset(rng.normal(size=(2000, 6)), rng.normal(size=(2000, 6)), names)
    s = learn_structure(d, max_parents=5)
    possible = 6 * 6 + 6 * 5 // 2
    assert len(s.arcs) <= 0.05 * possible


def _check_legal(result, data):
    for trace in result.traces:
        assert all(b >= a for a, b in zip(trace, trace[1:]))
    s = result.structure
    assert all(v.slice == "t1" for _, v in s.arcs) and s.is_acyclic()
    assert result.score == pytest.approx(total_score(s, data), rel=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 3))
def test_hill_climb_monotone_and_legal(seed, max_parents, restarts):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(5, 5)) * (rng.random((5, 5)) < 0.4)
    x0 = rng.normal(size=(150, 5))
    x1 = x0 @ a + rng.normal(size=(150, 5))
    x1[:, 4] += 0.8 * x1[:, 0]  # induces an intra-slice dependency
    d = dataset(x0, x1, list("abcde"))
    res = hill_climb(d, max_parents, restarts, seed)
    _check_legal(res, d)
    assert len(res.traces) == restarts
    assert all(len(pa) <= max_parents for pa in res.structure.parent_map().values())


def test_hill_climb_deterministic():
    d = var_system(600, seed=4)
    a, b = hill_climb(d, 3, 3, 11), hill_climb(d, 3, 3, 11)
    assert a.structure == b.structure and a.traces == b.traces


# -- parameters ------------------------------------------------------------------


def test_fit_constant_and_exact_line():
    x = np.linspace(-1, 1, 50)
    d = dataset(np.column_stack([x, x]), np.column_stack([np.full(50, 3.0), 2 * x + 1]), ["c", "y"])
    s = DbnStructure(("c", "y"), frozenset({(n0("y"), n1("y"))}))
    m = fit_parameters(s, d)
    assert m.cpd("c").intercept == pytest.approx(3.0) and m.cpd("c").residual_variance == VAR_FLOOR
    assert m.cpd("y").coefficients[0] == pytest.approx(2.0)
    assert m.cpd("y").intercept == pytest.approx(1.0)
    assert m.cpd("y").residual_variance == VAR_FLOOR


def test_fit_matches_normal_equations():
    rng = np.random.default_rng(6)
    for _ in range(20):
        x0 = rng.normal(size=(500, 5))
        x1 = rng.normal(size=(500, 5))
        x1[:, 0] = 0.3 + x0 @ rng.normal(size=5) + rng.normal(size=500)
        d = dataset(x0, x1, list("abcde"))
        s = DbnStructure(tuple("abcde"), frozenset((n0(v), n1("a")) for v in "abcde"))
        cpd = fit_parameters(s, d).cpd("a")
        design = np.column_stack([np.ones(500), x0])
        beta = np.linalg.solve(design.T @ design, design.T @ x1[:, 0])
        got = np.array([cpd.intercept, *cpd.coefficients])
        order = [0] + [1 + "abcde".index(p.variable) for p in cpd.parents]
        np.testing.assert_allclose(got, beta[order], rtol=0, atol=1e-8)


def test_fit_singular_design_uses_ridge():
    x = np.random.default_rng(0).normal(size=100)
    d = dataset(np.column_stack([x, x]), np.column_stack([x, 2 * x]), ["a", "b"])
    s = DbnStructure(("a", "b"), frozenset({(n0("a"), n1("b")), (n0("b"), n1("b"))}))
    cpd = fit_parameters(s, d).cpd("b")
    assert all(np.isfinite(cpd.coefficients))
    assert sum(cpd.coefficients) == pytest.approx(2.0, rel=1e-4)


def test_fit_needs_enough_rows():
    d = dataset([[1.0, 2.0], [2.0, 1.0]], [[1.0, 1.0], [2.0, 2.0]], ["a", "b"])
    s = DbnStructure(("a", "b"), frozenset({(n0("a"), n1("b")), (n0("b"), n1("b"))}))
    with pytest.raises(DataError):
        fit_parameters(s, d)


# -- forecasting --------------------------------------------------------------------


def identity_model(names):
    return model_from(names, [LinearGaussianCpd(n1(v), (n0(v),), 0.0, (1.0,), 1.0) for v in names])


def test_predict_identity_and_fixed_point():
    m = identity_model(["a", "b"])
    np.testing.assert_array_equal(predict_step(m, [3.0, -1.0]), [3.0, -1.0])
    half = model_from(["x"], [LinearGaussianCpd(n1("x"), (n0("x"),), 1.0, (0.5,), 1.0)])
    assert predict_step(half, [2.0])[0] == 2.0


def test_forecast_halving_and_span():
    m = model_from(["x"], [LinearGaussianCpd(n1("x"), (n0("x"),), 0.0, (0.5,), 1.0)])
    t = forecast(m, [8.0], 3)
    np.testing.assert_array_equal(t.states[:, 0], [4.0, 2.0, 1.0])
    assert forecast(m, [8.0], 10).span_hours == 40.0
    np.testing.assert_array_equal(forecast(m, [8.0], 10).hours, 4.0 * np.arange(1, 11))
    t = forecast(identity_model(["a"]), [5.0], 7)
    assert np.all(t.states == 5.0)
    with pytest.raises(DataError):
        forecast(m, [1.0], 0)
    with pytest.raises(SchemaError):
        forecast(m, [1.0, 2.0], 1)


def _random_model(rng, n=4, intra=True):
    names = [f"v{i}" for i in range(n)]
    cpds = []
    for j, v in enumerate(names):
        parents = [n0(u) for u in names if rng.random() < 0.5]
        if intra:
            parents += [n1(u) for u in names[:j] if rng.random() < 0.4]
        coef = rng.normal(scale=0.4, size=len(parents))
        cpds.append(LinearGaussianCpd(n1(v), tuple(parents), float(rng.normal()), tuple(coef), float(rng.uniform(0.2, 2))))
    return model_from(names, cpds)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_mean_map_is_affine(seed, a, b):
    rng = np.random.default_rng(seed)
    m = _random_model(rng)
    u, v = rng.normal(size=4), rng.normal(size=4)
    zero = predict_step(m, np.zeros(4))
    lhs = predict_step(m, a * u + b * v)
    rhs = a * predict_step(m, u) + b * predict_step(m, v) - (a + b - 1) * zero
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_stable_zero_intercept_forecast_decays():
    rng = np.random.default_rng(3)
    names = ["a", "b", "c"]
    a = rng.normal(size=(3, 3))
    a *= 0.7 / np.max(np.abs(np.linalg.eigvals(a)))
    cpds = [LinearGaussianCpd(n1(v), tuple(n0(u) for u in names), 0.0, tuple(a[j]), 1.0) for j, v in enumerate(names)]
    t = forecast(model_from(names, cpds), [5.0, -3.0, 2.0], 60)
    norms = np.linalg.norm(t.states, axis=1)
    assert norms[-1] < 1e-6 * norms[0]


def test_forecast_is_markov(monkeypatch):
    m = _random_model(np.random.default_rng(9))
    seen = []
    real = dbn_model.predict_step

    def spy(model, s):
        seen.append(np.array(s))
        return real(model, s)

    monkeypatch.setattr(dbn_model, "predict_step", spy)
    s0 = np.arange(4.0)
    t = dbn_model.forecast(m, s0, 5)
    np.testing.assert_array_equal(seen[0], s0)
    for h in range(1, 5):
        np.testing.assert_array_equal(seen[h], t.states[h - 1])


def test_divergent_forecast_flags():
    m = model_from(["x"], [LinearGaussianCpd(n1("x"), (n0("x"),), 0.0, (1e200,), 1.0)])
    with pytest.raises(ForecastDivergenceError) as err:
        forecast(m, [1e200], 5)
    assert err.value.step == 1
    paths, ok = forecast_batch(m, np.array([[1e200], [0.0]]), 3)
    assert not ok[0, 0] and ok[:, 1].all()


def test_batch_forecast_matches_single():
    m = _random_model(np.random.default_rng(2))
    starts = np.random.default_rng(1).normal(size=(6, 4))
    paths, ok = forecast_batch(m, starts, 5)
    assert ok.all()
    for i in range(6):
        np.testing.assert_allclose(paths[:, i], forecast(m, starts[i], 5).states, atol=1e-12)


# -- densities --------------------------------------------------------------------


def test_standard_normal_mode():
    m = model_from(["x"], [LinearGaussianCpd(n1("x"), (), 0.0, (), 1.0)])
    assert joint_log_density(m, [7.0], [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi))


def test_one_dimensional_density_integrates_to_one():
    m = model_from(["x"], [LinearGaussianCpd(n1("x"), (n0("x"),), 0.5, (0.8,), 0.3)])
    s0 = 1.5
    mu, sd = 0.5 + 0.8 * s0, math.sqrt(0.3)
    grid = np.linspace(mu - 8 * sd, mu + 8 * sd, 20001)
    dens = np.exp([joint_log_density(m, [s0], [g]) for g in grid])
    assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-6)


def test_two_variable_density_matches_bivariate_gaussian():
    # b_t1 depends on a_t1 and a_t0; assemble the joint mean and covariance of (a1, b1)
    ca = LinearGaussianCpd(n1("a"), (n0("a"),), 0.2, (0.7,), 0.5)
    cb = LinearGaussianCpd(n1("b"), (n0("a"), n1("a")), -0.1, (0.3, 1.2), 0.8)
    m = model_from(["a", "b"], [ca, cb])
    rng = np.random.default_rng(0)
    for _ in range(100):
        s0 = rng.normal(size=2)
        s1 = rng.normal(size=2) * 2
        mu_a = 0.2 + 0.7 * s0[0]
        mu_b = -0.1 + 0.3 * s0[0] + 1.2 * mu_a
        cov = np.array([[0.5, 1.2 * 0.5], [1.2 * 0.5, 0.8 + 1.2**2 * 0.5]])
        diff = s1 - np.array([mu_a, mu_b])
        ref = -0.5 * (2 * math.log(2 * math.pi) + math.log(np.linalg.det(cov)) + diff @ np.linalg.solve(cov, diff))
        assert joint_log_density(m, s0, s1) == pytest.approx(ref, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_density_factorizes(seed):
    rng = np.random.default_rng(seed)
    m = _random_model(rng)
    s0, s1 = rng.normal(size=4), rng.normal(size=4)
    parts = 0.0
    for c in m.cpds:
        pv = [(s0 if p.slice == "t0" else s1)[int(p.variable[1:])] for p in c.parents]
        mean = c.intercept + float(np.dot(c.coefficients, pv))
        parts += -0.5 * (math.log(2 * math.pi * c.residual_variance) + (s1[int(c.child.variable[1:])] - mean) ** 2 / c.residual_variance)
    assert joint_log_density(m, s0, s1) == pytest.approx(parts, rel=1e-12)


# -- interpretation and persistence ------------------------------------------------


def test_neighborhood_examples():
    s = DbnStructure(("a", "b", "c", "d"), frozenset({(n1("a"), n1("b")), (n1("b"), n1("c")), (n0("d"), n1("d"))}))
    nb = neighborhood(s, "b")
    assert set(nb.nodes) == {n1("a"), n1("b"), n1("c")}
    assert nb.arcs == {(n1("a"), n1("b")), (n1("b"), n1("c"))}
    iso = neighborhood(DbnStructure(("a", "b"), frozenset()), "a")
    assert iso.nodes == [n1("a")] and not iso.arcs
    with pytest.raises(SchemaError):
        neighborhood(s, "zzz")


def test_neighborhood_of_oxygen_analog_on_synthetic_cohort():
    cohort = generate_synthetic(GeneratorConfig(n_patients=400, missing_rate=0.0), 5)
    data = build_transitions(cohort)
    model = fit_parameters(learn_structure(data), data)
    nb = neighborhood(model, "spo2_max")
    assert (n0("spo2_max"), n1("spo2_max")) in nb.arcs
    assert "spo2_max_t1" in export_dot(nb)


def test_export_dot_format():
    empty = export_dot(DbnStructure(("b", "a"), frozenset()))
    assert empty.startswith("digraph dbn {") and "->" not in empty
    assert empty.index("a_t0") < empty.index("b_t0")
    s = DbnStructure(("a", "b"), frozenset({(n0("a"), n1("b"))}))
    assert "  a_t0 -> b_t1;" in export_dot(s).splitlines()
    assert export_dot(s) == export_dot(DbnStructure(("a", "b"), frozenset({(n0("a"), n1("b"))})))


def test_model_json_round_trip(tmp_path):
    m = _random_model(np.random.default_rng(4))
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    s0 = np.arange(4.0)
    np.testing.assert_array_equal(predict_step(back, s0), predict_step(m, s0))
    d = m.to_dict()
    assert set(d["cpds"][0]) == {"child", "parents", "intercept", "coefficients", "variance"}
    assert all(len(a) == 2 and a[1].endswith("_t1") for a in d["arcs"])


def test_model_rejects_mismatched_cpds():
    with pytest.raises(DataError):
        model_from(["a"], [LinearGaussianCpd(n1("a"), (n0("a"),), 0.0, (1.0, 2.0), 1.0)])
    s = DbnStructure(("a",), frozenset({(n0("a"), n1("a"))}))
    with pytest.raises(DataError):
        DbnModel(schema_of(["a"]), s, [LinearGaussianCpd(n1("a"), (), 0.0, (), 1.0)])
