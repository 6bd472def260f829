from __future__ import annotations

import random

import numpy as np
import pytest

import ra_oracle as oracle
from gradutil import numeric_grad
from nrel.errors import ExecError, SchemaError, ShapeError
from nrel.nra import exprs as E
from nrel.nra import operators as ops
from nrel.nra.operators import EncodeItem
from nrel.nra.predicates import Arith, Comparison, Lit, Var
from nrel.nra.termgraph import TermGraph
from nrel.relmodel import EmbeddedRelation
from nrel.tensor import ParameterStore, Tape, Tensor, reduce


def rel(attrs, mapping, d=None):
    rows = list(mapping)
    emb = np.array([mapping[r] for r in rows], dtype=float).reshape(len(rows), -1) if rows else np.zeros((0, d or 0))
    return EmbeddedRelation.from_rows(attrs, rows, emb, dim=d)


def random_rel(rng, attrs, d, n_max=8, dom=4):
    rows = {tuple(rng.randrange(dom) for _ in attrs) for _ in range(rng.randint(0, n_max))}
    if not attrs:
        rows = set(list(rows)[:1])
    return rel(attrs, {r: [rng.uniform(-1, 1) for _ in range(d)] for r in rows}, d=d)


# -- join ---------------------------------------------------------------------


def test_join_example():
    r1 = rel(["x", "y"], {("a", "b"): [1, 2], ("a", "c"): [3, 4]})
    r2 = rel(["y", "w"], {("b", "d"): [5], ("b", "e"): [6], ("c", "d"): [7]})
    out = ops.join(r1, r2)
    assert out.attrs == ("x", "y", "w")
    assert out.to_dict().keys() == {("a", "b", "d"), ("a", "b", "e"), ("a", "c", "d")}
    np.testing.assert_array_equal(out.to_dict()[("a", "c", "d")], [3, 4, 7])
    np.testing.assert_array_equal(out.to_dict()[("a", "b", "e")], [1, 2, 6])


def test_join_with_empty():
    r1 = rel(["x"], {(1,): [1.0]})
    out = ops.join(r1, rel(["x", "y"], {}, d=2))
    assert len(out) == 0 and out.d == 3 and out.attrs == ("x", "y")


def test_join_incompatible_types():
    with pytest.raises(SchemaError):
        ops.join(rel(["x"], {(1,): []}, d=0), rel(["x"], {("a",): []}, d=0))


def test_join_random_vs_nested_loop():
    rng = random.Random(0)
    for _ in range(1000):
        la = rng.sample(["a", "b", "c", "d"], rng.randint(0, 3))
        ra = rng.sample(["a", "b", "c", "d"], rng.randint(0, 3))
        l, r = random_rel(rng, la, rng.randint(0, 2)), random_rel(rng, ra, rng.randint(0, 2))
        out = ops.join(l, r)
        assert out.d == l.d + r.d
        assert oracle.same(out, *oracle.natural_join(*oracle.as_map(l), *oracle.as_map(r)))


# -- projected union ----------------------------------------------------------


def test_projected_union_sum_example():
    r = rel(["x", "y"], {("a", "b"): [1], ("a", "d"): [2], ("b", "f"): [3]})
    out = ops.projected_union([r], ["x"], "sum")
    assert out.to_dict() == {("a",): pytest.approx([3.0]), ("b",): pytest.approx([3.0])}


@pytest.mark.parametrize("agg", ["sum", "mean", "max"])
def test_projected_union_disjoint_is_plain_union(agg):
    a = rel(["x"], {(1,): [1.0], (2,): [2.0]})
    b = rel(["x"], {(3,): [5.0]})
    out = ops.projected_union([a, b], ["x"], agg)
    assert {k: v.tolist() for k, v in out.to_dict().items()} == {(1,): [1.0], (2,): [2.0], (3,): [5.0]}


def test_projected_union_mean_is_one_shot():
    a = rel(["x", "y"], {(1, 1): [1.0], (1, 2): [2.0], (1, 3): [3.0]})
    b = rel(["x", "y"], {(1, 9): [10.0]})
    out = ops.projected_union([a, b], ["x"], "mean")
    assert out.to_dict()[(1,)][0] == pytest.approx(4.0)  # mean of means would be 6.0


def test_projected_union_random_vs_multiset():
    rng = random.Random(1)
    for _ in range(300):
        d = rng.randint(0, 2)
        ins = [random_rel(rng, ["x", "y"], d) for _ in range(rng.randint(1, 3))]
        agg = rng.choice(["sum", "mean", "max"])
        attrs = rng.choice([["x"], ["y"], ["x", "y"], [], ["y", "x"]])
        out = ops.projected_union(ins, attrs, agg)
        want = oracle.projected_union([oracle.as_map(i) for i in ins], attrs, agg)
        assert oracle.same(out, *want, atol=1e-12)


def test_projected_union_errors():
    with pytest.raises(SchemaError):
        ops.projected_union([rel(["x"], {(1,): [1.0]})], ["z"], "sum")
    with pytest.raises(SchemaError):
        ops.projected_union([rel(["x"], {(1,): [1.0]}), rel(["x"], {(2,): [1.0, 2.0]})], ["x"], "sum")


# -- transform ----------------------------------------------------------------


def test_transform_identity():
    r = rel(["x"], {(1,): [1.0, 2.0]})
    out = ops.transform(r, E.identity(2), ParameterStore())
    np.testing.assert_array_equal(out.emb.data, r.emb.data)


def test_transform_fixed_linear():
    store = ParameterStore()
    store.register(("L", ()), [[1.0], [1.0], [0.0]])
    tau = E.Transformation(E.Linear(("L", ()), 2, 1, E.Input(0, 2)), 2)
    out = ops.transform(rel(["x"], {(0,): [1, 2], (1,): [3, 4]}), tau, store)
    np.testing.assert_array_equal(out.emb.data, [[3], [7]])


def test_transform_relu_linear_gradient():
    store = ParameterStore(seed=4)
    key = ("W", ())
    store.get_or_create(key, (4, 2), "linear")
    tau = E.Transformation(E.Act("relu", E.Linear(key, 3, 2, E.Input(0, 3))), 3)
    r = rel(["x"], {(i,): list(np.random.default_rng(i).normal(size=3)) for i in range(5)})
    with Tape() as tape:
        loss = reduce(ops.transform(r, tau, store).emb, "sum")
    tape.backward(loss)
    analytic = store[key].grad.copy()

    def f(arrs):
        store.set_value(key, arrs[0])
        return reduce(ops.transform(r, tau, store).emb, "sum").item()

    w0 = store[key].data.copy()
    num = numeric_grad(f, [w0], 0)
    store.set_value(key, w0)
    assert np.max(np.abs(analytic - num) / np.maximum(1, np.abs(num))) < 1e-4


def test_transform_width_mismatch():
    with pytest.raises(ShapeError):
        ops.transform(rel(["x"], {(1,): [1.0]}), E.identity(2), ParameterStore())


def test_transform_unresolved_parameter():
    tau = E.Transformation(E.Linear(("missing", ()), 1, 1, E.Input(0, 1)), 1)
    with pytest.raises(ShapeError):
        ops.transform(rel(["x"], {(1,): [1.0]}), tau, ParameterStore())


# -- expression typing --------------------------------------------------------


def test_expression_types():
    z = E.Input(0, 3)
    w = E.Param(("W", ()), (3, 3))
    assert E.MatMul(z, w).ty == E.rows_ty(3)
    assert E.MatMul(E.MatMul(z, w), E.Transpose(E.Input(3, 3))).ty == E.rows_ty(1)
    assert E.Binary("*", E.Input(0, 1), z).ty == E.rows_ty(3)
    assert E.Binary("-", E.Const(1.0), E.Act("sigmoid", E.Param(("s", ()), (1, 1)))).ty == E.fixed_ty(1, 1)
    with pytest.raises(ShapeError):
        E.Binary("+", E.Input(0, 2), z)
    with pytest.raises(ShapeError):
        E.Binary("/", z, E.Input(0, 1))
    with pytest.raises(ShapeError):
        E.Linear(("L", ()), 2, 1, z)
    with pytest.raises(ShapeError):
        E.Transformation(E.Input(1, 3), 3)


def test_broadcast_arithmetic_values():
    store = ParameterStore()
    store.register(("s", ()), [[0.0]])
    store.register(("A", ()), [[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]])
    gate = E.Act("sigmoid", E.Param(("s", ()), (1, 1)))
    z = E.Input(0, 2)
    expr = E.Binary("+", E.Binary("*", gate, E.Linear(("A", ()), 2, 2, z)),
                    E.Binary("*", E.Binary("-", E.Const(1.0), gate), z))
    out = E.Transformation(expr, 2).apply(Tensor([[2.0, 4.0]]), store)
    np.testing.assert_allclose(out.data, [[0.5 * 2 + 0.5 * 2, 0.5 * 8 + 0.5 * 4]])


# -- select / difference / rename --------------------------------------------


def lt(var, c):
    return Comparison("<", Var(var), Lit(c))


def test_select_examples():
    r = rel(["x"], {(i,): [float(i)] for i in (1, 2, 3, 4)})
    assert ops.select(r, []) is r
    assert ops.select(r, [lt("x", 3)]).rows == ((1,), (2,))


def test_select_conjunction_is_sequential():
    rng = random.Random(2)
    for _ in range(200):
        r = random_rel(rng, ["x", "y", "z"], 1)
        p1 = lt("x", rng.randint(0, 4))
        p2 = Comparison(rng.choice(["=", "!=", ">="]), Var("y"), Arith("+", Var("z"), Lit(rng.randint(-1, 1))))
        both = ops.select(r, [p1, p2])
        seq = ops.select(ops.select(r, [p1]), [p2])
        assert both.rows == seq.rows
        np.testing.assert_array_equal(both.emb.data, seq.emb.data)


def test_select_type_mismatch():
    with pytest.raises(ExecError):
        ops.select(rel(["x"], {("a",): []}, d=0), [lt("x", 3)])


def test_difference_examples():
    r = rel(["x"], {(1,): [1.0], (2,): [2.0]})
    assert len(ops.difference(r, r)) == 0
    keep = ops.difference(r, rel(["x"], {}, d=1))
    np.testing.assert_array_equal(keep.emb.data, r.emb.data)
    with pytest.raises(SchemaError):
        ops.difference(r, rel(["y"], {}, d=1))


def test_difference_random_and_rename():
    rng = random.Random(3)
    for _ in range(300):
        l, r = random_rel(rng, ["x", "y"], 1), random_rel(rng, ["y", "x"], 2)
        assert oracle.same(ops.difference(l, r), *oracle.difference(*oracle.as_map(l), *oracle.as_map(r)))
    r = rel(["x", "y"], {(1, 2): [1.0]})
    assert ops.rename(r, {"x": "a"}).attrs == ("a", "y")
    with pytest.raises(SchemaError):
        ops.rename(r, {"x": "y"})


def test_filtered_rows_get_zero_gradient():
    leaf = Tensor(np.array([[1.0], [2.0], [3.0], [4.0]]), requires_grad=True)
    r = EmbeddedRelation(("x",), ((1,), (2,), (3,), (4,)), leaf)
    with Tape() as tape:
        out = ops.projected_union([ops.select(r, [lt("x", 3)])], [], "sum")
        loss = out.emb
    tape.backward(loss)
    np.testing.assert_array_equal(leaf.grad, [[1], [1], [0], [0]])


# -- encode / decode ----------------------------------------------------------


def test_encode_examples():
    r = rel(["age", "flag", "color"], {(30, True, "green"): [], (40, False, "red"): []}, d=0)
    out = ops.encode(r, [EncodeItem("age"), EncodeItem("flag"), EncodeItem("color", ("red", "green", "blue"))])
    np.testing.assert_array_equal(out.emb.data, [[30, 1, 0, 1, 0], [40, 0, 1, 0, 0]])
    with pytest.raises(ExecError):
        ops.encode(r, [EncodeItem("color")])


def test_decode_examples_and_roundtrip():
    r = rel(["x"], {(1,): [0.25], (2,): [-1.5]})
    out = ops.decode(r, 0, 1, ["c"])
    assert out.rows == ((1, 0.25), (2, -1.5)) and out.d == 1
    back = ops.encode(EmbeddedRelation(out.attrs, out.rows, Tensor(np.zeros((2, 0)))), [EncodeItem("c")])
    np.testing.assert_array_equal(back.emb.data, r.emb.data)
    empty = ops.decode(rel(["x"], {}, d=2), 0, 2, ["a", "b"])
    assert empty.attrs == ("x", "a", "b") and len(empty) == 0
    with pytest.raises(SchemaError):
        ops.decode(r, 0, 2, ["a", "b"])


# -- term graph ---------------------------------------------------------------


def test_term_graph_schema_and_dump():
    g = TermGraph()
    a = g.leaf("Drivers", ["x"], 16)
    b = g.leaf("Results", ["x", "y"], 16)
    j = g.join(a, b)
    key = ("Lin", ())
    tau = E.Transformation(E.Linear(key, 32, 16, E.Concat((E.Input(0, 16, "z1"), E.Input(16, 16, "z2")))), 32)
    t = g.transform(j, tau)
    u = g.union([t], ["x"], "sum")
    g.bind("DriverAgg", u)
    plan = g.extract_plan("DriverAgg")
    assert [n.op for n in plan.nodes()] == ["leaf", "leaf", "join", "transform", "union"]
    assert (g[u].attrs, g[u].dim) == (("x",), 16)
    text = plan.dump()
    assert "Linear(32,16)(Concat(z1, z2))" in text and "=> DriverAgg" in text
    assert text == g.extract_plan("DriverAgg").dump()
    with pytest.raises(SchemaError):
        g.extract_plan("Nope")
    with pytest.raises(SchemaError):
        g.transform(j, E.identity(3))


def test_plan_sharing():
    g = TermGraph()
    a = g.leaf("A", ["x"], 1)
    mid = g.transform(a, E.identity(1))
    g.bind("Mid", mid)
    g.bind("Out", g.join(g.rename(mid, {"x": "y"}), mid))
    plan = g.extract_plan("Out")
    assert plan.node_ids.count(mid) == 1 and plan.out_degree(mid) == 2
    assert len(g.extract_plan("Mid").node_ids) == 2
