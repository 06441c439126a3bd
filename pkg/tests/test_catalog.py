import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stylerec.catalog import (
    Article,
    AvailabilityWindow,
    Catalog,
    CatalogError,
    PurchaseEvent,
    PurchaseSequence,
    Schema,
    build_purchase_matrix,
    feature_vector,
    in_store,
    load_catalog,
    load_sales,
    load_schema,
    save_catalog,
    save_sales,
    save_schema,
)

HEADER = "id\ttags\tlog_price\tfabric\tavailability\timage_feat\n"


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def _article(aid, windows=((0, 10),), tags=(), price=0.0, fabric=None):
    return Article(aid, frozenset(tags), price, fabric or {}, None,
                   tuple(AvailabilityWindow(s, e) for s, e in windows))


def test_load_empty_catalog(tmp_path):
    cat = load_catalog(_write(tmp_path / "c.tsv", HEADER))
    assert len(cat) == 0


def test_load_fabric_ok(tmp_path):
    cat = load_catalog(_write(tmp_path / "c.tsv", HEADER + "x1\tt1;t2\t3.5\tcotton:0.6;wool:0.4\t0-100\t\n"))
    assert cat["x1"].fabric == {"cotton": 0.6, "wool": 0.4}
    assert cat["x1"].tags == {"t1", "t2"}
    assert cat["x1"].availability == (AvailabilityWindow(0, 100),)


def test_load_fabric_bad_sum_names_article(tmp_path):
    with pytest.raises(CatalogError, match="x7"):
        load_catalog(_write(tmp_path / "c.tsv", HEADER + "x7\t\t1.0\tcotton:0.5;wool:0.4\t0-100\t\n"))


def test_parse_error_has_line_number(tmp_path):
    text = HEADER + "a\t\t1.0\t\t0-10\t\nb\t\tnot-a-number\t\t0-10\t\n"
    with pytest.raises(CatalogError, match=":3:"):
        load_catalog(_write(tmp_path / "c.tsv", text))


def test_missing_header_rejected(tmp_path):
    with pytest.raises(CatalogError):
        load_catalog(_write(tmp_path / "c.tsv", "a\t\t1.0\t\t0-10\t\n"))


def test_overlapping_windows_rejected():
    with pytest.raises(CatalogError, match="overlapping"):
        Catalog([_article("a", [(0, 10), (5, 20)])])


def test_tags_checked_against_schema():
    schema = Schema(("t1",), ())
    with pytest.raises(CatalogError, match="a"):
        Catalog([_article("a", tags=("t9",))], schema)


def test_catalog_and_schema_round_trip(tmp_path):
    schema = Schema(("t1", "t2"), ("cotton", "wool"), 2)
    arts = [
        Article("a", frozenset({"t1"}), 1.25, {"cotton": 0.3, "wool": 0.7}, (0.1, -2.0),
                (AvailabilityWindow(0, 5), AvailabilityWindow(9, 12))),
        Article("b", frozenset(), -0.5, {}, None, ()),
    ]
    save_schema(tmp_path / "s.tsv", schema)
    save_catalog(tmp_path / "c.tsv", Catalog(arts, schema))
    assert load_schema(tmp_path / "s.tsv") == schema
    again = load_catalog(tmp_path / "c.tsv", schema)
    assert again.articles == arts


def _catalog(ids):
    return Catalog([_article(a) for a in ids])


def test_load_sales_empty(tmp_path):
    assert load_sales(_write(tmp_path / "s.tsv", "customer_id\tarticle_id\ttimestamp\n"), _catalog([])) == []


def test_load_sales_equal_timestamps_keep_file_order(tmp_path):
    text = "customer_id\tarticle_id\ttimestamp\nk\tb\t5\nk\ta\t5\nk\tc\t5\n"
    seqs = load_sales(_write(tmp_path / "s.tsv", text), _catalog("abc"))
    assert len(seqs) == 1
    assert seqs[0].articles == ["b", "a", "c"]


def test_load_sales_interleaved_customers(tmp_path):
    rng = np.random.default_rng(0)
    rows = [(("k1", "k2")[i % 2], "abc"[rng.integers(3)], int(rng.integers(100))) for i in range(40)]
    text = "customer_id\tarticle_id\ttimestamp\n" + "".join(f"{c}\t{a}\t{t}\n" for c, a, t in rows)
    seqs = load_sales(_write(tmp_path / "s.tsv", text), _catalog("abc"))
    assert [s.customer for s in seqs] == ["k1", "k2"]
    for seq in seqs:
        mine = [(t, i, a) for i, (c, a, t) in enumerate(rows) if c == seq.customer]
        want = [a for t, i, a in sorted(mine)]  # time, then file position
        assert seq.articles == want


def test_load_sales_errors(tmp_path):
    head = "customer_id\tarticle_id\ttimestamp\n"
    with pytest.raises(CatalogError, match="unknown article"):
        load_sales(_write(tmp_path / "s.tsv", head + "k\tzzz\t1\n"), _catalog("a"))
    with pytest.raises(CatalogError, match="timestamp"):
        load_sales(_write(tmp_path / "s.tsv", head + "k\ta\t1.5x\n"), _catalog("a"))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["k1", "k2", "k3"]), st.sampled_from("abcd"),
                          st.integers(0, 50)), max_size=30))
def test_sales_round_trip(tmp_path_factory, rows):
    from stylerec.catalog import group_sales

    seqs = group_sales(PurchaseEvent(*r) for r in rows)
    path = tmp_path_factory.mktemp("rt") / "s.tsv"
    save_sales(path, seqs)
    assert load_sales(path, _catalog("abcd")) == seqs


def test_in_store_boundaries():
    cat = Catalog([_article("a", [(10, 20)]), _article("b", [(15, 30)])])
    assert in_store(cat, 5) == set()
    assert in_store(cat, 10) == {"a"}
    assert in_store(cat, 15) == {"a", "b"}
    assert in_store(cat, 20) == {"b"}
    assert in_store(cat, 30) == set()


def _random_catalog(rng, n=100):
    arts = []
    for i in range(n):
        wins, t = [], int(rng.integers(0, 50))
        for _ in range(int(rng.integers(0, 4))):
            e = t + int(rng.integers(1, 30))
            wins.append((t, e))
            t = e + int(rng.integers(0, 20))
        arts.append(_article(f"a{i:03d}", wins))
    return Catalog(arts)


def test_in_store_matches_brute_force():
    rng = np.random.default_rng(4)
    cat = _random_catalog(rng)
    for t in range(0, 200, 3):
        brute = {a.id for a in cat.articles if any(w.start <= t < w.end for w in a.availability)}
        assert in_store(cat, t) == brute


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 99), st.integers(1, 40), st.integers(0, 200))
def test_in_store_monotone_under_window_extension(seed, which, extra, t):
    rng = np.random.default_rng(seed)
    cat = _random_catalog(rng)
    art = cat.articles[which]
    if not art.availability:
        return
    wins = list(art.availability)
    last = wins[-1]
    wins[-1] = AvailabilityWindow(last.start, last.end + extra)
    arts = list(cat.articles)
    arts[which] = Article(art.id, art.tags, art.log_price, art.fabric, None, tuple(wins))
    assert in_store(cat, t) <= in_store(Catalog(arts), t)


def test_feature_vector_layouts():
    schema = Schema(("t0", "t1", "t2", "t3"), ("cotton", "wool"), 0)
    x = feature_vector(_article("a", price=1.0), schema)
    assert x.tolist() == [0, 0, 0, 0, 1.0, 0, 0]
    a = feature_vector(_article("a", tags=("t1", "t3"), price=2.0), schema)
    b = feature_vector(_article("b", tags=("t1",), price=2.0), schema)
    assert int((a != b).sum()) == 1
    full = Article("c", frozenset({"t0", "t2"}), 4.5, {"wool": 0.25, "cotton": 0.75}, None, ())
    assert feature_vector(full, schema).tolist() == [1, 0, 1, 0, 4.5, 0.75, 0.25]


def test_feature_vector_image_slot_and_errors():
    schema = Schema(("t0",), ("f",), 2)
    art = Article("a", frozenset(), 0.0, {}, (3.0, 4.0), ())
    assert feature_vector(art, schema).tolist() == [0, 0, 0, 3.0, 4.0]
    assert len(feature_vector(_article("b"), schema)) == schema.width == 5
    with pytest.raises(CatalogError):
        feature_vector(_article("c", tags=("zz",)), schema)


def _seq(c, arts):
    return PurchaseSequence(c, tuple(PurchaseEvent(c, a, i) for i, a in enumerate(arts)))


def test_purchase_matrix_basics():
    m = build_purchase_matrix([], ["k"], ["a"])
    assert m.pairs() == set()
    m = build_purchase_matrix([_seq("k", ["a", "b", "a"])], ["k"], ["a", "b"])
    assert m.pairs() == {(0, 0), (1, 0)}
    with pytest.raises(CatalogError):
        build_purchase_matrix([_seq("k", ["x"])], ["k"], ["a"])


def test_purchase_matrix_matches_dense_tabulation():
    rng = np.random.default_rng(5)
    custs = [f"k{i}" for i in range(10)]
    arts = [f"a{i}" for i in range(10)]
    seqs = [_seq(c, [arts[j] for j in rng.integers(0, 10, rng.integers(0, 8))]) for c in custs]
    dense = np.zeros((10, 10))
    for ci, s in enumerate(seqs):
        for ev in s.events:
            dense[arts.index(ev.article), ci] = 1
    m = build_purchase_matrix(seqs, custs, arts)
    np.testing.assert_array_equal(m.dense(), dense)
    np.testing.assert_array_equal(m.dense(np.array([3, 7])), dense[[3, 7]])


def test_negative_window_bounds_round_trip(tmp_path):
    arts = [_article("a", [(-500, -20), (-5, 40)])]
    save_catalog(tmp_path / "c.tsv", Catalog(arts))
    assert load_catalog(tmp_path / "c.tsv").articles == arts
    with pytest.raises(CatalogError, match=":2:"):
        load_catalog(_write(tmp_path / "bad.tsv", HEADER + "a\t\t1.0\t\t5--\t\n"))
