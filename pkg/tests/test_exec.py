from __future__ import annotations

import logging

import numpy as np
import pytest

import ra_oracle
from nrel import synthetic
from nrel.errors import FitError, PredError
from nrel.execution.oracle import diff_relation
from nrel.execution.physical import Executor, compile_physical, evaluate
from nrel.execution.runtime import FitConfig, artifact_path, relation_csv_rows, write_relation_csv
from nrel.manifest import Manifest
from nrel.relmodel import attach_learnable_embeddings
from nrel.tensor import ParameterStore
from progutil import as_dict, compile_program, database, oracle_run, relation

DRIVER = """\
d = 16. k = 4. Mix = Linear(2*d, d). Cls = Linear(d, k) .
def DriverProfile(Dr, Ra, Re):
  Inter(x, y; Mix(Concat(z1, z2)) + z3) :-
      Dr(x; z1), Ra(y; z2), Re(x, y; z3) .
  Out(x; sum(z)) :- Inter(x, y; z) .
enddef
Profile(x; z) :- DriverProfile(Drivers, Races, Results)(x; z) .
Loss(; CrossEntropyLoss()(Cls(z_p), z_l)) :-
    Profile(x; z_p), Label(x; z_l) .
"""

QUADRATIC = "P = Parameter(1) .\nLoss(; (P - 3) * (P - 3)) ."


def driver_db(store, seed=7):
    content = {
        "Drivers": relation(["x"], [(1,), (2,), (3,)]),
        "Races": relation(["y"], [(10,), (11,)]),
        "Results": relation(["x", "y"], [(1, 10), (1, 11), (2, 10), (3, 11)]),
    }
    rels = {n: attach_learnable_embeddings(r.with_name(n), 16, store, seed)
            for n, r in content.items()}
    rels["Label"] = relation(["x"], {(i,): np.eye(4)[i] for i in (1, 2, 3)})
    return database(rels)


def classifier(seed=0):
    feats, labels = synthetic.separable_points(20, seed)
    return {
        "X": relation(["n"], {(i,): [a, b] for i, a, b in feats}),
        "Y": relation(["n"], {(i,): [y0, y1] for i, y0, y1 in labels}),
    }


# -- physical plans -------------------------------------------------------------


def test_driver_agg_physical_shape():
    store = ParameterStore(0)
    src = "d = 16 .\nDriverAgg(x; sum(Linear(2*d, d)(Concat(z1, z2)))) :- Drivers(x; z1), Results(x, y; z2) ."
    s, flat = compile_program(src, driver_db(store), store)
    phys = compile_physical(s.program.plan("DriverAgg"))
    assert phys.ops == ["scan", "scan", "merge", "gather", "gather", "concat", "layer", "groupby", "scatter_sum"]
    assert diff_relation(s.evaluate("DriverAgg"), oracle_run(s, flat)["DriverAgg"], 1e-9) == []


def test_single_transform_is_one_layer():
    s, _ = compile_program("B(x; ReLU(z)) :- A(x; z) .", {"A": relation(["x"], {(1,): [-1.0], (2,): [2.0]})})
    phys = compile_physical(s.program.plan("B"))
    assert phys.ops.count("layer") == 1
    assert as_dict(s.evaluate("B")) == {(1,): [0.0], (2,): [2.0]}


def test_select_under_join_matches_post_join_filter():
    rng = np.random.default_rng(4)
    a = relation(["x", "y"], {(i, j): rng.normal(size=2) for i in range(4) for j in range(3)})
    b = relation(["y", "w"], {(j, w): rng.normal(size=1) for j in range(3) for w in range(2)})
    s, _ = compile_program("J(x, y, w; Concat(p, q)) :- A(x, y; p), B(y, w; q), x > 1, w != 0 .", {"A": a, "B": b})
    ops = compile_physical(s.program.plan("J")).ops
    assert ops.index("merge") < ops.index("filter_mask") < ops.index("layer")
    attrs, joined = ra_oracle.natural_join(*ra_oracle.as_map(a), *ra_oracle.as_map(b))
    attrs, want = ra_oracle.select(attrs, joined, lambda r: r["x"] > 1 and r["w"] != 0)
    assert ra_oracle.same(s.evaluate("J"), attrs, want, atol=1e-12)


def test_evaluate_leaf_is_the_relation():
    r = relation(["x"], {(1,): [1.0, 2.0]})
    s, _ = compile_program("?pred A .", {"A": r})
    plan = s.program.plan("A")
    assert [n.op for n in plan.nodes()] == ["leaf"]
    out = evaluate(plan, s.db, s.store)
    assert out.rows == r.rows
    np.testing.assert_array_equal(out.emb.data, r.emb.data)


def test_evaluate_twice_is_identical():
    store = ParameterStore(7)
    s, _ = compile_program(DRIVER, driver_db(store), store)
    a, b = s.evaluate("Profile"), s.evaluate("Profile")
    assert a.rows == b.rows
    np.testing.assert_array_equal(a.emb.data, b.emb.data)


def test_content_is_computed_once():
    store = ParameterStore(7)
    s, _ = compile_program(DRIVER, driver_db(store), store)
    ex = s.executor("Loss")
    ex.evaluate(store)
    first = ex.content_runs
    assert first > 0
    ex.evaluate(store)
    assert ex.content_runs == first
    fresh = Executor(ex.phys, s.db, cache_content=False)
    fresh.evaluate(store)
    fresh.evaluate(store)
    assert fresh.content_runs == 2 * first


def test_decode_is_recomputed_per_evaluation():
    score = relation(["did"], {(1,): [0.5], (2,): [1.5]})
    s, _ = compile_program("Pred(did, [c]) :- Score(did; c) .\nBack(did, c; [c]) :- Pred(did, c) .", {"Score": score})
    assert s.evaluate("Pred").rows == ((1, 0.5), (2, 1.5))
    assert as_dict(s.evaluate("Back")) == {(1, 0.5): [0.5], (2, 1.5): [1.5]}
    phys = s.executor("Back").phys
    assert phys.dynamic


def test_missing_leaf_relation():
    s, _ = compile_program("B(x; z) :- A(x; z) .", {"A": relation(["x"], {(1,): [1.0]})})
    with pytest.raises(Exception, match="A"):
        evaluate(s.program.plan("B"), database({}), s.store)


# -- fit ------------------------------------------------------------------------


def test_quadratic_converges():
    s, _ = compile_program(QUADRATIC, {})
    res = s.fit("Loss", FitConfig(epochs=200, lr=0.1))
    assert len(res.trace) == 200
    assert abs(s.store[("P", ())].data[0, 0] - 3) < 1e-2


def test_zero_epochs_changes_nothing():
    s, _ = compile_program(QUADRATIC, {})
    before = s.store.snapshot()
    res = s.fit("Loss", FitConfig(epochs=0))
    assert res.trace == []
    after = s.store.snapshot()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_separable_classifier():
    src = "Loss(; CrossEntropyLoss()(Linear(2, 2)(x), y)) :- X(n; x), Y(n; y) ."
    s, _ = compile_program(src, classifier())
    res = s.fit("Loss", FitConfig(epochs=300, lr=0.05))
    assert res.trace[-1] < 0.1


def test_sgd_loss_descent_below_threshold():
    # for the quadratic the curvature is 2, so sgd with lr < 1 never increases the loss
    s, _ = compile_program(QUADRATIC, {})
    trace = s.fit("Loss", FitConfig(epochs=50, lr=0.3, optimizer="sgd")).trace
    assert all(b <= a for a, b in zip(trace, trace[1:]))
    src = "Loss(; CrossEntropyLoss()(Linear(2, 2)(x), y)) :- X(n; x), Y(n; y) ."
    s, _ = compile_program(src, classifier(1))
    trace = s.fit("Loss", FitConfig(epochs=100, lr=0.1, optimizer="sgd")).trace
    assert all(b <= a + 1e-15 for a, b in zip(trace, trace[1:]))


def test_fit_resumes_from_current_parameters():
    s, _ = compile_program(QUADRATIC, {})
    first = s.fit("Loss", FitConfig(epochs=20, lr=0.1, optimizer="sgd"))
    second = s.fit("Loss", FitConfig(epochs=1, lr=0.1, optimizer="sgd"))
    assert second.trace[0] < first.trace[0]
    assert second.trace[0] <= first.trace[-1]


def test_weight_decay_pulls_towards_zero():
    s, _ = compile_program(QUADRATIC, {})
    s.fit("Loss", FitConfig(epochs=300, lr=0.1, weight_decay=1.0, optimizer="sgd"))
    # minimizer of (p-3)^2 + p^2/2 is p = 2
    assert abs(s.store[("P", ())].data[0, 0] - 2) < 1e-6


def test_non_scalar_loss_rejected():
    s, _ = compile_program("L(x; z) :- A(x; z) .", {"A": relation(["x"], {(1,): [1.0]})})
    with pytest.raises(FitError, match="no content attributes"):
        s.fit("L", FitConfig(epochs=1))


def test_empty_loss_rejected():
    src = "Loss(; mean(Linear(1, 1)(z))) :- A(x; z), x > 5 ."
    s, _ = compile_program(src, {"A": relation(["x"], {(1,): [1.0]})})
    with pytest.raises(FitError, match="empty loss"):
        s.fit("Loss", FitConfig(epochs=1))


def test_unreachable_parameters_warn(caplog):
    src = QUADRATIC + "\nOther(x; Linear(1, 1)(z)) :- A(x; z) ."
    s, _ = compile_program(src, {"A": relation(["x"], {(1,): [1.0]})})
    before = s.store[("Other#0", ())].data.copy()
    with caplog.at_level(logging.WARNING):
        res = s.fit("Loss", FitConfig(epochs=5, lr=0.1))
    assert res.unreachable == [("Other#0", ())]
    assert "do not reach" in caplog.text
    np.testing.assert_array_equal(s.store[("Other#0", ())].data, before)


@pytest.mark.parametrize("kwargs, msg", [
    ({"epochs": -1}, "epochs"),
    ({"epochs": 2.5}, "epochs"),
    ({"lr": 0}, "lr"),
    ({"weight_decay": -1}, "weight_decay"),
    ({"optimizer": "rmsprop"}, "optimizer"),
    ({"momentum": 0.9}, "unknown"),
])
def test_fit_config_validation(kwargs, msg):
    with pytest.raises(FitError, match=msg):
        FitConfig.from_kwargs(kwargs)


def test_fit_config_defaults():
    cfg = FitConfig.from_kwargs({})
    assert (cfg.epochs, cfg.lr, cfg.weight_decay, cfg.optimizer) == (100, 0.01, 0.0, "adam")


# -- driver program properties --------------------------------------------------


def test_gradient_reach_on_driver_program():
    store = ParameterStore(7)
    s, _ = compile_program(DRIVER, driver_db(store), store)
    keys = s.plan_keys("Loss")
    assert ("Mix", ()) in keys and ("Cls", ()) in keys
    assert sum(1 for k in keys if k[0] in ("Drivers", "Races", "Results")) == 3 + 2 + 4
    res = s.fit("Loss", FitConfig(epochs=1))
    assert res.unreachable == []
    grads = s.store.gradients(keys)
    for k in keys:
        assert np.any(grads[k] != 0), k


def test_content_independent_of_parameter_values():
    store_a, store_b = ParameterStore(1), ParameterStore(2)
    sa, _ = compile_program(DRIVER, driver_db(store_a, seed=1), store_a)
    sb, _ = compile_program(DRIVER, driver_db(store_b, seed=2), store_b)
    for name in ("DriverProfile#1.Inter", "Profile", "Loss"):
        ra, rb = sa.evaluate(name), sb.evaluate(name)
        assert ra.rows == rb.rows
        assert not np.array_equal(ra.emb.data, rb.emb.data)


def test_driver_profile_matches_oracle():
    store = ParameterStore(7)
    s, flat = compile_program(DRIVER, driver_db(store), store)
    want = oracle_run(s, flat)
    for name in ("DriverProfile#1.Inter", "DriverProfile#1.Out", "Profile", "Loss"):
        assert diff_relation(s.evaluate(name), want[name], 1e-9) == [], name


# -- predict and export ---------------------------------------------------------


def test_predict_undefined():
    s, _ = compile_program(QUADRATIC, {})
    with pytest.raises(PredError, match="undefined"):
        s.predict("Nope")


def test_export_d0_relation(tmp_path):
    s, _ = compile_program("B(x, y) :- A(x, y) .", {"A": relation(["x", "y"], [(1, "a"), (2, "b")])})
    rows = relation_csv_rows(s.predict("B"))
    assert rows == [["x", "y"], ["1", "a"], ["2", "b"]]


def test_export_format_and_repeat(tmp_path):
    r = relation(["x", "flag"], {(1, True): [0.1, 1 / 3]})
    path = tmp_path / "R.csv"
    write_relation_csv(r, path)
    text = path.read_text()
    assert text == "x,flag,emb_0,emb_1\n1,true,0.10000000000000001,0.33333333333333331\n"
    used = {}
    names = [artifact_path(str(tmp_path), "R", ".csv", used) for _ in range(3)]
    assert [p.rsplit("/", 1)[1] for p in names] == ["R.csv", "R.2.csv", "R.3.csv"]


def test_pred_twice_identical(tmp_path):
    store = ParameterStore(7)
    s, _ = compile_program(DRIVER, driver_db(store), store)
    s.fit("Loss", FitConfig(epochs=3))
    write_relation_csv(s.predict("Profile"), tmp_path / "a.csv")
    write_relation_csv(s.predict("Profile"), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


# -- manifests ------------------------------------------------------------------


def test_manifest_parse(tmp_path):
    (tmp_path / "a.csv").write_text("id,color,w\n1,red,0.5\n2,blue,1.5\n")
    m = Manifest.parse("# c\nseed=3\nA.path=a.csv\nA.columns=id:content,color:content,w:feature\n"
                       "A.vocab.color=red|green|blue\n", str(tmp_path))
    db, vocabs = m.build(ParameterStore(3))
    assert m.seed == 3
    assert db["A"].attrs == ("id", "color") and db["A"].d == 1
    assert vocabs[("A", "color")] == ("red", "green", "blue")


@pytest.mark.parametrize("text, msg", [
    ("seed=x\n", "integer"),
    ("A.path=a.csv\nA.path=b.csv\n", "twice"),
    ("A.columns=x\n", "no path"),
    ("A.frob=1\nA.path=a.csv\n", "unknown key"),
    ("novalue\n", "key=value"),
])
def test_manifest_errors(text, msg):
    from nrel.errors import LoadError
    with pytest.raises(LoadError, match=msg):
        Manifest.parse(text)
