import math

import numpy as np
import pytest

from gradcheck import check_blocks
from stylerec.catalog import (
    Article,
    AvailabilityWindow,
    Catalog,
    PurchaseEvent,
    PurchaseSequence,
    Schema,
    build_purchase_matrix,
)
from stylerec.numerics import DimensionError, Rng
from stylerec.static_model import (
    Layer,
    StaticConfig,
    StaticCustomerProfile,
    StaticModel,
    encode_article,
    init_encoder,
    load_static,
    loss_and_grads,
    purchase_prob,
    save_static,
    static_loss,
    static_rank,
    train_static,
)


def test_encode_zero_and_identity():
    enc = [Layer(np.zeros((3, 4)), np.zeros(3), "relu"), Layer(np.zeros((2, 3)), np.zeros(2), "identity")]
    np.testing.assert_array_equal(encode_article(enc, np.arange(4.0)), np.zeros(2))
    ident = [Layer(np.eye(3), np.zeros(3), "identity")]
    np.testing.assert_array_equal(encode_article(ident, [1.0, -2.0, 3.0]), [1.0, -2.0, 3.0])
    with pytest.raises(DimensionError):
        encode_article(ident, np.ones(4))


def test_encode_matches_composed_oracle():
    rng = np.random.default_rng(0)
    W1, b1 = rng.normal(size=(5, 4)), rng.normal(size=5)
    W2, b2 = rng.normal(size=(3, 5)), rng.normal(size=3)
    enc = [Layer(W1, b1, "relu"), Layer(W2, b2, "identity")]
    x = rng.normal(size=4)
    hidden = [max(0.0, sum(W1[i, j] * x[j] for j in range(4)) + b1[i]) for i in range(5)]
    want = [sum(W2[i, j] * hidden[j] for j in range(5)) + b2[i] for i in range(3)]
    np.testing.assert_allclose(encode_article(enc, x), want, atol=1e-12)
    # batch rows agree with single rows, and encoding is purely functional
    X = rng.normal(size=(6, 4))
    np.testing.assert_allclose(encode_article(enc, X)[2], encode_article(enc, X[2]), atol=1e-14)
    assert encode_article(enc, x).tobytes() == encode_article(enc, x.copy()).tobytes()


def test_purchase_prob_examples():
    assert purchase_prob([0.0, 0.0], StaticCustomerProfile(np.ones(2), 0.0)) == 0.5
    assert purchase_prob([1.0], StaticCustomerProfile(np.zeros(1), 50.0)) >= 1 - 1e-20
    assert purchase_prob([1.0, 1.0], StaticCustomerProfile(np.array([0.5, 0.5]), -1.0)) == 0.5
    with pytest.raises(DimensionError):
        purchase_prob([1.0], StaticCustomerProfile(np.ones(2), 0.0))


def test_static_loss_closed_forms():
    F = np.zeros((2, 3))
    S = np.ones((4, 3))
    Pi = np.array([[1, 0, 1, 0], [0, 0, 1, 1]], dtype=float)
    assert static_loss(F, S, np.zeros(4), Pi) == pytest.approx(math.log(2), abs=1e-15)
    assert static_loss(np.ones((1, 1)), np.ones((1, 1)), np.array([40.0]), np.ones((1, 1))) < 1e-11


def test_static_loss_matches_scalar_loop():
    rng = np.random.default_rng(1)
    F, S, beta = rng.normal(size=(3, 2)), rng.normal(size=(4, 2)), rng.normal(size=4)
    Pi = (rng.random((3, 4)) < 0.5).astype(float)
    total = 0.0
    for a in range(3):
        per = 0.0
        for k in range(4):
            p = 1.0 / (1.0 + math.exp(-(F[a] @ S[k] + beta[k])))
            per += -(Pi[a, k] * math.log(p) + (1 - Pi[a, k]) * math.log(1 - p))
        total += per / 4
    assert static_loss(F, S, beta, Pi) == pytest.approx(total / 3, abs=1e-12)


def test_static_loss_finite_under_extreme_parameters():
    F = np.array([[1e4, -1e4]])
    S = np.array([[1e4, 1e4], [-1e4, 1e4]])
    val = static_loss(F, S, np.array([1e3, -1e3]), np.array([[0.0, 1.0]]))
    assert math.isfinite(val)


def _toy_model(rng, n_in=3, hidden=(4,), D=2, K=2):
    enc = init_encoder([n_in, *hidden, D], Rng(int(rng.integers(1 << 30))))
    for layer in enc:
        layer.b = rng.normal(size=layer.b.shape) * 0.3
    return StaticModel(enc, [f"k{i}" for i in range(K)], rng.normal(size=(K, D)), rng.normal(size=K))


def _loss_at(model, X, Pi):
    def f(params):
        m = StaticModel([Layer(l.W, l.b, l.activation) for l in model.encoder],
                        model.customers, model.S, model.beta)
        m.set_parameters(params)
        return loss_and_grads(m, X, Pi)[0]
    return f


def test_gradient_2x2_toy():
    rng = np.random.default_rng(2)
    model = _toy_model(rng, K=2)
    X = rng.normal(size=(2, 3))
    Pi = np.array([[1.0, 0.0], [0.0, 1.0]])
    _, grads = loss_and_grads(model, X, Pi)
    assert check_blocks(model.parameters(), grads, _loss_at(model, X, Pi)) < 1e-4


def _article(i, windows=((0, 1000),)):
    return Article(f"a{i}", frozenset({f"t{i % 3}"}), 1.0 + 0.1 * i, {}, None,
                   tuple(AvailabilityWindow(s, e) for s, e in windows))


def _toy_market(n_art=6, customers=("k0",), bought=None):
    schema = Schema(("t0", "t1", "t2"), ())
    cat = Catalog([_article(i) for i in range(n_art)], schema)
    seqs = []
    for c in customers:
        arts = bought[c] if bought else cat.ids
        seqs.append(PurchaseSequence(c, tuple(PurchaseEvent(c, a, i) for i, a in enumerate(arts))))
    return cat, build_purchase_matrix(seqs, list(customers), cat.ids)


def test_zero_epochs_returns_initialisation():
    cat, pm = _toy_market()
    cfg = StaticConfig(hidden=(4,), dim=2, epochs=0, seed=3)
    a = train_static(cat, pm, cfg)
    b = train_static(cat, pm, cfg)
    assert len(a.history) == 1
    for x, y in zip(a.parameters(), b.parameters()):
        assert x.tobytes() == y.tobytes()
    # the bias starts at the clamped logit of the purchase rate (here 1.0 -> +6)
    assert a.beta[0] == 6.0


def test_customer_who_bought_everything():
    # two customers so the initial bias is not already saturated
    cat, pm = _toy_market(n_art=8, customers=("all", "few"),
                          bought={"all": [f"a{i}" for i in range(8)], "few": ["a0", "a1"]})
    cfg = StaticConfig(hidden=(4,), dim=2, lr=0.05, batch=4, seed=1)
    probs, betas = [], []
    for epochs in range(0, 5):
        m = train_static(cat, pm, StaticConfig(**{**cfg.__dict__, "epochs": epochs}))
        F = m.embed(np.stack([np.r_[np.eye(3)[i % 3], 1.0 + 0.1 * i] for i in range(8)]))
        prof = m.profile("all")
        probs.append([purchase_prob(f, prof) for f in F])
        betas.append(prof.beta)
    assert betas[-1] > betas[0] > 0
    for earlier, later in zip(probs, probs[1:]):
        assert all(b > a for a, b in zip(earlier, later))


def test_training_reduces_validation_loss_and_is_deterministic():
    rng = np.random.default_rng(4)
    custs = [f"k{i}" for i in range(5)]
    bought = {c: [f"a{j}" for j in range(12) if (j + i) % 3 == 0] for i, c in enumerate(custs)}
    schema = Schema(("t0", "t1", "t2"), ())
    cat = Catalog([_article(i) for i in range(12)], schema)
    seqs = [PurchaseSequence(c, tuple(PurchaseEvent(c, a, 0) for a in bought[c])) for c in custs]
    pm = build_purchase_matrix(seqs, custs, cat.ids)
    cfg = StaticConfig(hidden=(8,), dim=3, lr=0.02, batch=4, epochs=30, seed=5)
    m1 = train_static(cat, pm, cfg)
    m2 = train_static(cat, pm, cfg)
    assert m1.history[-1]["val_loss"] < m1.history[0]["val_loss"]
    assert all(x.tobytes() == y.tobytes() for x, y in zip(m1.parameters(), m2.parameters()))


def test_static_rank_orders():
    prof = StaticCustomerProfile(np.array([1.0, 0.0]), 3.0)
    assert static_rank(prof, ["a"], [[0.3, 9.0]]) == ["a"]
    assert static_rank(prof, ["a", "b"], [[1.0, 0.0], [2.0, 0.0]]) == ["b", "a"]
    assert static_rank(prof, ["b", "a"], [[1.0, 5.0], [1.0, -5.0]]) == ["a", "b"]


def test_static_rank_matches_sort_oracle_and_ignores_shift():
    rng = np.random.default_rng(6)
    ids = [f"x{i:02d}" for i in rng.permutation(50)]
    F = rng.integers(-3, 4, size=(50, 3)).astype(float)  # exact scores, many ties
    s = np.array([1.0, -0.5, 0.25])
    prof = StaticCustomerProfile(s, -2.0)
    scores = F @ s
    oracle = [ids[i] for i in sorted(range(50), key=lambda i: (-scores[i], ids[i]))]
    assert static_rank(prof, ids, F) == oracle
    # adding the same constant (here 2) to every score leaves the order alone
    shift = np.array([2.0, 0.0, 0.0])
    assert static_rank(prof, ids, F + shift) == oracle
    assert static_rank(StaticCustomerProfile(s, 100.0), ids, F) == oracle


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(7)
    model = _toy_model(rng, n_in=5, hidden=(6, 4), D=3, K=4)
    model.customers = ["k0", "kü", "k 2", "k3"]
    path = tmp_path / "static.ckpt"
    save_static(path, model, seed=9)
    back = load_static(path)
    assert back.customers == model.customers
    assert [l.activation for l in back.encoder] == [l.activation for l in model.encoder]
    for x, y in zip(model.parameters(), back.parameters()):
        assert x.tobytes() == y.tobytes()
    save_static(tmp_path / "again.ckpt", back, seed=9)
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()
