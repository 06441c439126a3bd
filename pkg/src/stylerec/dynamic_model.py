"""LSTM customer-style model.

Each step sees ``[time(prev purchase) | embedding(prev purchase) | time(now)]``;
the first step has the previous-purchase blocks zeroed. The LSTM hidden state
is projected to a style vector ``d`` in embedding space, and articles are
scored by ``f . d``. Training uses sampled negatives and one of three losses
(``sigmoid``, ``softmax``, ``rank``), with only the first item of each
same-timestamp order acting as a target.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .catalog import Catalog, PurchaseSequence
from .numerics import (
    AdamState,
    DimensionError,
    Rng,
    adam_step,
    clip_by_global_norm,
    log_sigmoid,
    sigmoid,
)
from .static_model import NumericalAbort

log = logging.getLogger(__name__)

MINUTES_PER_YEAR = 525960  # 365.25 days
TIME_WIDTH = {"annual": 3, "linear": 1}
LOSS_KINDS = ("sigmoid", "softmax", "rank")
DYNAMIC_MAGIC = b"STYLEREC-DYNAMIC\n"
FORMAT_VERSION = 1


class SamplingError(ValueError):
    """Not enough in-store candidates to draw the requested negatives."""


class PreconditionError(ValueError):
    pass


def encode_time(t, mode: str = "annual") -> np.ndarray:
    """Time features: years since epoch, plus the annual phase as (sin, cos)."""
    t = np.asarray(t, dtype=np.float64)
    years = t / MINUTES_PER_YEAR
    if mode == "linear":
        return years[..., None]
    if mode != "annual":
        raise ValueError(f"unknown time encoding {mode!r}")
    phase = 2.0 * np.pi * (np.mod(t, MINUTES_PER_YEAR) / MINUTES_PER_YEAR)
    return np.stack([years, np.sin(phase), np.cos(phase)], axis=-1)


def step_input(prev, t_now, dim: int, mode: str = "annual") -> np.ndarray:
    """Concatenate previous purchase (time, embedding) with the current time.

    ``prev`` is ``(embedding, timestamp)`` or ``None`` for the first step, in
    which case both previous-purchase blocks are zero.
    """
    w = TIME_WIDTH[mode]
    x = np.zeros(2 * w + dim)
    if prev is not None:
        f_prev, t_prev = prev
        f_prev = np.asarray(f_prev, dtype=np.float64)
        if f_prev.shape != (dim,):
            raise DimensionError(f"previous embedding has shape {f_prev.shape}, want ({dim},)")
        x[:w] = encode_time(t_prev, mode)
        x[w:w + dim] = f_prev
    x[w + dim:] = encode_time(t_now, mode)
    return x


@dataclass
class LstmParams:
    W: np.ndarray  # (4H, U+H), gate blocks [input, forget, output, candidate]
    b: np.ndarray  # (4H,)
    Wp: np.ndarray  # (D, H)
    bp: np.ndarray  # (D,)
    time_mode: str = "annual"

    @property
    def H(self) -> int:
        return self.Wp.shape[1]

    @property
    def D(self) -> int:
        return self.Wp.shape[0]

    @property
    def U(self) -> int:
        return self.W.shape[1] - self.H

    def arrays(self) -> list[np.ndarray]:
        return [self.W, self.b, self.Wp, self.bp]

    def with_arrays(self, arrs: Sequence[np.ndarray]) -> "LstmParams":
        return LstmParams(*arrs, time_mode=self.time_mode)

    def n_params(self) -> int:
        return int(sum(a.size for a in self.arrays()))

    def validate(self) -> None:
        H, D = self.H, self.D
        if self.W.shape[0] != 4 * H or self.b.shape != (4 * H,) or self.bp.shape != (D,):
            raise DimensionError("LSTM parameter shapes do not chain")
        if self.U != 2 * TIME_WIDTH[self.time_mode] + D:
            raise DimensionError(f"input width {self.U} inconsistent with D={D}")


def init_lstm(dim: int, hidden: int, rng: Rng, time_mode: str = "annual") -> LstmParams:
    U = 2 * TIME_WIDTH[time_mode] + dim
    lim = math.sqrt(1.0 / (U + hidden))
    W = rng.uniform(-lim, lim, (4 * hidden, U + hidden))
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0
    plim = math.sqrt(6.0 / (hidden + dim))
    Wp = rng.uniform(-plim, plim, (dim, hidden))
    return LstmParams(W, b, Wp, np.zeros(dim), time_mode)


@dataclass
class LstmState:
    cell: np.ndarray
    hidden: np.ndarray

    @classmethod
    def zeros(cls, H: int) -> "LstmState":
        return cls(np.zeros(H), np.zeros(H))


def lstm_step(params: LstmParams, state: LstmState, x) -> tuple[LstmState, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.U,):
        raise DimensionError(f"step input has shape {x.shape}, want ({params.U},)")
    if state.cell.shape != (params.H,) or state.hidden.shape != (params.H,):
        raise DimensionError("state size does not match hidden size")
    z = params.W @ np.concatenate([x, state.hidden]) + params.b
    _, c, _, h = kernels.lstm_gates_forward(z[None, :], state.cell[None, :])
    return LstmState(c[0], h[0]), h[0]


@dataclass
class DynamicStyle:
    d: np.ndarray
    at_step: int
    customer: str = ""


def _sequence_inputs(E_seq: np.ndarray, ts: Sequence[int], D: int, mode: str,
                     eval_time=None) -> np.ndarray:
    """Stack step inputs for one sequence, optionally with the inference step."""
    ts = np.asarray(ts, dtype=np.int64)
    n = len(ts) + (eval_time is not None)
    w = TIME_WIDTH[mode]
    X = np.zeros((n, 2 * w + D))
    now = ts if eval_time is None else np.append(ts, eval_time)
    X[:, w + D:] = encode_time(now, mode)
    if n > 1:
        X[1:, :w] = encode_time(ts[: n - 1], mode)
        X[1:, w:w + D] = E_seq[: n - 1]
    return X


def _run(params: LstmParams, X: np.ndarray):
    """Forward pass over a (T, B, U) input block; keeps what backprop needs."""
    T, B, U = X.shape
    H = params.H
    Wx, Wh = params.W[:, :U], params.W[:, U:]
    Zx = (X.reshape(T * B, U) @ Wx.T + params.b).reshape(T, B, 4 * H)
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = {
        "h_prev": np.empty((T, B, H)),
        "c_prev": np.empty((T, B, H)),
        "gates": np.empty((T, B, 4 * H)),
        "tanh_c": np.empty((T, B, H)),
        "hs": np.empty((T, B, H)),
    }
    for t in range(T):
        cache["h_prev"][t] = h
        cache["c_prev"][t] = c
        z = Zx[t] + h @ Wh.T
        g, c, tc, h = kernels.lstm_gates_forward(z, c)
        cache["gates"][t] = g
        cache["tanh_c"][t] = tc
        cache["hs"][t] = h
    styles = cache["hs"] @ params.Wp.T + params.bp
    return styles, cache


def styles_array(params: LstmParams, E_seq, timestamps, eval_time=None) -> np.ndarray:
    """Style vectors for every step, as an (N or N+1, D) array."""
    ts = list(timestamps)
    if eval_time is not None and ts and eval_time < ts[-1]:
        raise PreconditionError(f"eval_time {eval_time} precedes last purchase {ts[-1]}")
    E_seq = np.asarray(E_seq, dtype=np.float64).reshape(len(ts), params.D)
    if not ts and eval_time is None:
        return np.zeros((0, params.D))
    X = _sequence_inputs(E_seq, ts, params.D, params.time_mode, eval_time)
    styles, _ = _run(params, X[:, None, :])
    return styles[:, 0, :]


def style_sequence(params: LstmParams, E_seq, timestamps, eval_time=None,
                   customer: str = "") -> list[DynamicStyle]:
    """Run the LSTM from a zero state over one purchase history.

    With ``eval_time`` one more step is appended whose current time is
    ``eval_time`` and whose previous purchase is the last event; its output is
    the style used for ranking at that time.
    """
    S = styles_array(params, E_seq, timestamps, eval_time)
    return [DynamicStyle(S[i], i + 1, customer) for i in range(len(S))]


def shuffle_orders(seq: PurchaseSequence, rng: Rng) -> PurchaseSequence:
    """Permute events within each equal-timestamp group."""
    events = list(seq.events)
    out = []
    i = 0
    while i < len(events):
        j = i + 1
        while j < len(events) and events[j].t == events[i].t:
            j += 1
        group = events[i:j]
        if len(group) > 1:
            group = [group[k] for k in rng.permutation(len(group))]
        out.extend(group)
        i = j
    return PurchaseSequence(seq.customer, tuple(out))


def order_mask(timestamps: Sequence[int]) -> list[bool]:
    """True for the first event of every same-timestamp order."""
    ts = list(timestamps)
    for a, b in zip(ts, ts[1:]):
        if b < a:
            raise PreconditionError("timestamps must be non-decreasing")
    return [i == 0 or ts[i] != ts[i - 1] for i in range(len(ts))]


def _negative_indices(catalog: Catalog, t, exclude: Iterable[int], n: int, rng: Rng) -> np.ndarray:
    mask = catalog.in_store_mask(t)
    for i in exclude:
        mask[i] = False
    pool = np.flatnonzero(mask)
    if len(pool) < n:
        raise SamplingError(f"only {len(pool)} candidates in store at t={t}, need {n}")
    return pool[rng.choice(len(pool), n)]


def sample_negatives(catalog: Catalog, t, exclude: Iterable[str], n: int, rng: Rng) -> list[str]:
    """``n`` distinct in-store articles at ``t``, uniformly, avoiding ``exclude``."""
    idx = _negative_indices(catalog, t, [catalog.index[a] for a in exclude if a in catalog], n, rng)
    return [catalog.ids[i] for i in idx]


def _score_loss(kind: str, sp: np.ndarray, sn: np.ndarray):
    """Per-row loss and its gradient wrt the positive and negative scores."""
    if kind == "sigmoid":
        loss = -log_sigmoid(sp) - log_sigmoid(-sn).sum(axis=1)
        gp = -sigmoid(-sp)
        gn = sigmoid(sn)
    elif kind == "softmax":
        allsc = np.concatenate([sp[:, None], sn], axis=1)
        m = allsc.max(axis=1, keepdims=True)
        e = np.exp(allsc - m)
        z = e.sum(axis=1, keepdims=True)
        loss = (np.log(z) + m)[:, 0] - sp
        prob = e / z
        gp = prob[:, 0] - 1.0
        gn = prob[:, 1:]
    elif kind == "rank":
        n = sn.shape[1]
        s = sigmoid(sn - sp[:, None])
        loss = s.mean(axis=1)
        gn = s * (1.0 - s) / n
        gp = -gn.sum(axis=1)
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    return np.atleast_1d(loss), np.atleast_1d(gp), np.atleast_2d(gn)


def sequence_loss(kind: str, d, f_pos, negs) -> float:
    """Loss of one target given style ``d``, positive embedding and negatives."""
    d = np.asarray(getattr(d, "d", d), dtype=np.float64)
    negs = np.atleast_2d(np.asarray(negs, dtype=np.float64))
    if negs.size == 0:
        raise PreconditionError("at least one negative example is required")
    f_pos = np.asarray(f_pos, dtype=np.float64)
    if f_pos.shape != d.shape or negs.shape[1] != d.shape[0]:
        raise DimensionError("sequence_loss: dimensions do not match")
    loss, _, _ = _score_loss(kind, np.array([f_pos @ d]), (negs @ d)[None, :])
    return float(loss[0])


@dataclass
class SequenceBatch:
    """Padded, time-major block of prepared sequences.

    ``pos``/``neg`` index rows of ``E``; ``weights`` is zero on non-target and
    padded steps.
    """

    X: np.ndarray  # (T, B, U)
    pos: np.ndarray  # (T, B)
    neg: np.ndarray  # (T, B, n)
    weights: np.ndarray  # (T, B)
    lengths: np.ndarray  # (B,)
    E: np.ndarray  # (A, D)


def prepare_batch(seqs: Sequence[PurchaseSequence], catalog: Catalog, E: np.ndarray, n: int,
                  rngs: Sequence[Rng], time_mode: str = "annual") -> SequenceBatch:
    """Shuffle orders, mask non-first items, draw negatives and pad."""
    D = E.shape[1]
    B = len(seqs)
    T = max((len(s) for s in seqs), default=0)
    U = 2 * TIME_WIDTH[time_mode] + D
    X = np.zeros((T, B, U))
    pos = np.zeros((T, B), dtype=np.int64)
    neg = np.zeros((T, B, n), dtype=np.int64)
    weights = np.zeros((T, B))
    lengths = np.zeros(B, dtype=np.int64)
    for j, (seq, rng) in enumerate(zip(seqs, rngs)):
        seq = shuffle_orders(seq, rng)
        ts = seq.timestamps
        idx = np.array([catalog.index[a] for a in seq.articles], dtype=np.int64)
        L = len(ts)
        lengths[j] = L
        X[:L, j] = _sequence_inputs(E[idx], ts, D, time_mode)
        pos[:L, j] = idx
        mask = order_mask(ts)
        i = 0
        while i < L:
            k = i
            while k < L and ts[k] == ts[i]:
                k += 1
            exclude = set(idx[i:k].tolist())
            try:
                neg[i, j] = _negative_indices(catalog, ts[i], exclude, n, rng)
            except SamplingError:
                log.warning("customer %s t=%d: store too small, sampling from whole catalog",
                            seq.customer, ts[i])
                pool = np.array(sorted(set(range(len(catalog))) - exclude), dtype=np.int64)
                if len(pool) < n:
                    raise
                neg[i, j] = pool[rng.choice(len(pool), n)]
            weights[i, j] = 1.0 if mask[i] else 0.0
            i = k
    return SequenceBatch(X, pos, neg, weights, lengths, E)


def bptt_gradients(params: LstmParams, batch: SequenceBatch, kind: str, chunk: int = 512):
    """Mean weighted target loss and its exact gradients (``params.arrays()`` order).

    The loss is the weighted sum of per-target losses divided by the number of
    targets with non-zero weight.
    """
    X = batch.X
    T, B, U = X.shape
    H, D = params.H, params.D
    if U != params.U:
        raise DimensionError(f"batch input width {U} != model input width {params.U}")
    styles, cache = _run(params, X)
    sel_t, sel_b = np.nonzero(batch.weights)
    n_targets = len(sel_t)
    dstyle = np.zeros((T, B, D))
    total = 0.0
    for s in range(0, n_targets, chunk):
        tt, bb = sel_t[s:s + chunk], sel_b[s:s + chunk]
        d = styles[tt, bb]
        fp = batch.E[batch.pos[tt, bb]]
        fn = batch.E[batch.neg[tt, bb]]  # (m, n, D)
        sp = np.einsum("md,md->m", fp, d)
        sn = np.einsum("mnd,md->mn", fn, d)
        loss, gp, gn = _score_loss(kind, sp, sn)
        w = batch.weights[tt, bb]
        total += float(w @ loss)
        dstyle[tt, bb] = (w * gp)[:, None] * fp + w[:, None] * np.einsum("mn,mnd->md", gn, fn)
    if not n_targets:
        return 0.0, [np.zeros_like(a) for a in params.arrays()]
    loss = total / n_targets
    if not math.isfinite(loss):
        raise NumericalAbort("non-finite sequence loss")
    dstyle /= n_targets

    hs = cache["hs"]
    gWp = dstyle.reshape(-1, D).T @ hs.reshape(-1, H)
    gbp = dstyle.reshape(-1, D).sum(axis=0)
    dhs = dstyle @ params.Wp
    Wh = params.W[:, U:]
    dZ = np.empty((T, B, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dz, dc_next = kernels.lstm_gates_backward(
            cache["gates"][t], cache["c_prev"][t], cache["tanh_c"][t], dhs[t] + dh_next, dc_next
        )
        dZ[t] = dz
        dh_next = dz @ Wh
    dZf = dZ.reshape(-1, 4 * H)
    gW = np.concatenate([dZf.T @ X.reshape(-1, U), dZf.T @ cache["h_prev"].reshape(-1, H)], axis=1)
    gb = dZf.sum(axis=0)
    return loss, [gW, gb, gWp, gbp]


def batch_loss(params: LstmParams, batch: SequenceBatch, kind: str) -> float:
    """Forward-only version of the ``bptt_gradients`` loss."""
    styles, _ = _run(params, batch.X)
    sel_t, sel_b = np.nonzero(batch.weights)
    if not len(sel_t):
        return 0.0
    d = styles[sel_t, sel_b]
    fp = batch.E[batch.pos[sel_t, sel_b]]
    fn = batch.E[batch.neg[sel_t, sel_b]]
    loss, _, _ = _score_loss(kind, np.einsum("md,md->m", fp, d), np.einsum("mnd,md->mn", fn, d))
    return float(batch.weights[sel_t, sel_b] @ loss) / len(sel_t)


@dataclass
class TrainConfigDyn:
    loss: str = "rank"
    n: int = 20
    hidden: int = 256
    lr: float = 1e-3
    epochs: int = 10
    batch: int = 32
    clip: float = 5.0
    seed: int = 0
    time_mode: str = "annual"
    val_size: int = 200

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one negative example")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}")
        if self.time_mode not in TIME_WIDTH:
            raise ValueError(f"time encoding must be one of {sorted(TIME_WIDTH)}")


@dataclass
class DynamicModel:
    params: LstmParams
    loss: str = "rank"
    n: int = 20
    seed: int = 0
    history: list[dict] = field(default_factory=list)


def length_batches(lengths: Sequence[int], size: int) -> list[np.ndarray]:
    """Group sequence indices of similar length (stable by length, then index)."""
    order = np.argsort(np.asarray(lengths), kind="stable")
    return [order[i:i + size] for i in range(0, len(order), size)]


def train_dynamic(catalog: Catalog, sequences: Sequence[PurchaseSequence], E: np.ndarray,
                  config: TrainConfigDyn) -> DynamicModel:
    """Adam with global-norm clipping; embeddings ``E`` (catalog order) stay fixed."""
    rng = Rng(config.seed)
    D = E.shape[1]
    params = init_lstm(D, config.hidden, rng.child(1), config.time_mode)
    seqs = [s for s in sequences if len(s)]
    batches = length_batches([len(s) for s in seqs], config.batch)

    # fixed validation slice: same shuffles and negatives every epoch
    vsel = np.sort(rng.child(2).choice(len(seqs), min(config.val_size, len(seqs)))) if seqs else []
    vseqs = [seqs[i] for i in vsel]
    vrng = rng.child(3)
    val = [
        prepare_batch([vseqs[i] for i in grp], catalog, E, config.n,
                      [vrng.child(int(i)) for i in grp], config.time_mode)
        for grp in length_batches([len(s) for s in vseqs], config.batch)
    ]

    def val_loss():
        if not val:
            return 0.0
        w = [float((b.weights > 0).sum()) for b in val]
        return sum(batch_loss(params, b, "rank") * wi for b, wi in zip(val, w)) / max(sum(w), 1.0)

    model = DynamicModel(params, config.loss, config.n, config.seed)
    model.history = [{"epoch": 0, "train_loss": float("nan"), "val_loss": val_loss()}]
    state = AdamState.zeros_like(params.arrays())
    for epoch in range(1, config.epochs + 1):
        total, count = 0.0, 0
        for bi in rng.child(4, epoch).permutation(len(batches)):
            grp = batches[bi]
            batch = prepare_batch([seqs[i] for i in grp], catalog, E, config.n,
                                  [rng.child(5, epoch, int(i)) for i in grp], config.time_mode)
            try:
                loss, grads = bptt_gradients(params, batch, config.loss)
            except NumericalAbort as exc:
                raise NumericalAbort(f"{exc} at epoch {epoch}, batch {bi}") from None
            grads = clip_by_global_norm(grads, config.clip)
            arrs, state = adam_step(params.arrays(), grads, state, lr=config.lr)
            params = params.with_arrays(arrs)
            m = int((batch.weights > 0).sum())
            total += loss * m
            count += m
        model.params = params
        rec = {"epoch": epoch, "train_loss": total / max(count, 1), "val_loss": val_loss()}
        model.history.append(rec)
        log.info("dynamic epoch %d train %.6f val(rank) %.6f", epoch, rec["train_loss"], rec["val_loss"])
    model.params = params
    return model


# ---------------------------------------------------------------- checkpoints


def save_dynamic(path, model: DynamicModel) -> None:
    p = model.params
    header = {
        "version": FORMAT_VERSION,
        "U": p.U,
        "H": p.H,
        "D": p.D,
        "time_encoding": p.time_mode,
        "loss": model.loss,
        "n": model.n,
        "seed": model.seed,
    }
    with open(path, "wb") as fh:
        fh.write(DYNAMIC_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for a in p.arrays():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_dynamic(path) -> DynamicModel:
    data = Path(path).read_bytes()
    if not data.startswith(DYNAMIC_MAGIC):
        raise ValueError(f"{path}: not a dynamic checkpoint")
    start = len(DYNAMIC_MAGIC)
    nl = data.index(b"\n", start)
    h = json.loads(data[start:nl])
    if h["version"] != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {h['version']}")
    U, H, D = h["U"], h["H"], h["D"]
    shapes = [(4 * H, U + H), (4 * H,), (D, H), (D,)]
    pos = nl + 1
    arrs = []
    for shp in shapes:
        n = int(np.prod(shp))
        arrs.append(np.frombuffer(data, "<f8", n, pos).astype(np.float64).reshape(shp))
        pos += 8 * n
    params = LstmParams(*arrs, time_mode=h["time_encoding"])
    params.validate()
    return DynamicModel(params, h["loss"], h["n"], h["seed"])
