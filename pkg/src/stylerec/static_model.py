"""Content encoder and static customer profiles trained by logistic factorization.

The encoder maps article features to an embedding ``f``; each customer ``k``
holds a style vector ``s_k`` and a bias ``beta_k``, and the purchase
probability is ``sigmoid(f . s_k + beta_k)``. Unseen articles are embedded by
a forward pass, which is what makes cold-start ranking possible.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .catalog import Catalog, PurchaseMatrix, feature_matrix
from .numerics import RNG_ID, AdamState, DimensionError, Rng, adam_step, sigmoid

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12
STATIC_MAGIC = b"STYLEREC-STATIC\n"
FORMAT_VERSION = 1


class NumericalAbort(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class Layer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = "relu"  # "relu" | "identity"

    def __post_init__(self):
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise DimensionError("layer weight/bias shapes do not chain")


EncoderParams = list  # list[Layer]


def init_encoder(dims: Sequence[int], rng: Rng) -> list[Layer]:
    """Glorot-uniform weights, zero biases; rectifiers everywhere but the top."""
    layers = []
    for i, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
        lim = math.sqrt(6.0 / (n_in + n_out))
        W = rng.uniform(-lim, lim, (n_out, n_in))
        act = "identity" if i == len(dims) - 2 else "relu"
        layers.append(Layer(W, np.zeros(n_out), act))
    return layers


def _check_chain(enc: Sequence[Layer]) -> None:
    for a, b in zip(enc, enc[1:]):
        if a.W.shape[0] != b.W.shape[1]:
            raise DimensionError("encoder layer dimensions do not chain")
    if enc and enc[-1].activation != "identity":
        raise DimensionError("final encoder layer must be linear")


def _forward(enc: Sequence[Layer], X: np.ndarray):
    acts = [X]
    pre = []
    for layer in enc:
        z = acts[-1] @ layer.W.T + layer.b
        pre.append(z)
        acts.append(np.maximum(z, 0.0) if layer.activation == "relu" else z)
    return acts, pre


def encode_article(enc: Sequence[Layer], x) -> np.ndarray:
    """Embedding of one feature vector (1-d) or of a row-stacked batch (2-d)."""
    x = np.asarray(x, dtype=np.float64)
    if not enc:
        return x.copy()
    if x.shape[-1] != enc[0].W.shape[1]:
        raise DimensionError(f"feature width {x.shape[-1]} != encoder input {enc[0].W.shape[1]}")
    acts, _ = _forward(enc, np.atleast_2d(x))
    return acts[-1][0] if x.ndim == 1 else acts[-1]


@dataclass
class StaticCustomerProfile:
    s: np.ndarray
    beta: float


def purchase_prob(f, prof: StaticCustomerProfile) -> float:
    f = np.asarray(f, dtype=np.float64)
    if f.shape != prof.s.shape:
        raise DimensionError(f"embedding {f.shape} vs style {prof.s.shape}")
    return sigmoid(float(f @ prof.s) + prof.beta)


def static_loss(F, S, beta, Pi) -> float:
    """Mean over batch articles of the mean per-customer cross-entropy.

    ``F`` is (B, D) embeddings, ``S`` (K, D) styles, ``beta`` (K,), ``Pi`` (B, K) 0/1.
    """
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    if F.shape[1] != S.shape[1] or np.shape(Pi) != (F.shape[0], S.shape[0]):
        raise DimensionError("static_loss: shapes do not match")
    p = np.clip(sigmoid(F @ S.T + beta), PROB_CLAMP, 1.0 - PROB_CLAMP)
    ce = -(Pi * np.log(p) + (1.0 - Pi) * np.log1p(-p))
    return float(ce.mean())


@dataclass
class StaticModel:
    encoder: list[Layer]
    customers: list[str]
    S: np.ndarray  # (K, D)
    beta: np.ndarray  # (K,)
    history: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self._cpos = {c: i for i, c in enumerate(self.customers)}

    @property
    def dim(self) -> int:
        return self.S.shape[1]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.encoder:
            out += [layer.W, layer.b]
        return out + [self.S, self.beta]

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        for i, layer in enumerate(self.encoder):
            layer.W, layer.b = params[2 * i], params[2 * i + 1]
        self.S, self.beta = params[-2], params[-1]

    def n_params(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def embed(self, X) -> np.ndarray:
        return encode_article(self.encoder, X)

    def profile(self, customer: str) -> StaticCustomerProfile | None:
        i = self._cpos.get(customer)
        if i is None:
            return None
        return StaticCustomerProfile(self.S[i].copy(), float(self.beta[i]))

    def profiles(self) -> dict[str, StaticCustomerProfile]:
        return {c: StaticCustomerProfile(self.S[i].copy(), float(self.beta[i]))
                for i, c in enumerate(self.customers)}


def loss_and_grads(model: StaticModel, X: np.ndarray, Pi: np.ndarray):
    """Loss of one article batch and gradients in ``model.parameters()`` order."""
    acts, pre = _forward(model.encoder, X)
    F = acts[-1]
    logits = F @ model.S.T + model.beta
    p = sigmoid(logits)
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = float((-(Pi * np.log(pc) + (1.0 - Pi) * np.log1p(-pc))).mean())
    g_logit = (p - Pi) / Pi.size
    g_S = g_logit.T @ F
    g_beta = g_logit.sum(axis=0)
    g = g_logit @ model.S
    layer_grads = []
    for li in range(len(model.encoder) - 1, -1, -1):
        layer = model.encoder[li]
        if layer.activation == "relu":
            g = g * (pre[li] > 0)
        layer_grads.append((g.T @ acts[li], g.sum(axis=0)))
        g = g @ layer.W
    grads = []
    for gW, gb in reversed(layer_grads):
        grads += [gW, gb]
    return loss, grads + [g_S, g_beta]


@dataclass
class StaticConfig:
    hidden: tuple[int, ...] = (256,)
    dim: int = 128
    lr: float = 1e-3
    batch: int = 128
    epochs: int = 20
    seed: int = 0
    val_size: int = 256


def init_static(n_features: int, customers: Sequence[str], rates: np.ndarray,
                config: StaticConfig, rng: Rng) -> StaticModel:
    enc = init_encoder([n_features, *config.hidden, config.dim], rng)
    S = 0.01 * rng.normal((len(customers), config.dim))
    r = np.clip(rates, 1e-12, 1 - 1e-12)
    beta = np.clip(np.log(r) - np.log1p(-r), -6.0, 6.0)
    return StaticModel(enc, list(customers), S, beta)


def train_static(catalog: Catalog, matrix: PurchaseMatrix, config: StaticConfig,
                 X: np.ndarray | None = None) -> StaticModel:
    """Mini-batch (by article) Adam on the full-customer cross-entropy."""
    if X is None:
        X = feature_matrix(catalog)
    apos = np.array([catalog.index[a] for a in matrix.articles], dtype=np.int64)
    X = X[apos]
    A, K = matrix.shape
    rng = Rng(config.seed)
    counts = np.bincount(matrix.customer_idx, minlength=K)
    model = init_static(X.shape[1], matrix.customers, counts / max(A, 1), config, rng.child(1))
    val = np.sort(rng.child(2).choice(A, min(config.val_size, A))) if A else np.zeros(0, int)
    Pi_val = matrix.dense(val)

    def val_loss():
        return float(loss_and_grads(model, X[val], Pi_val)[0]) if len(val) else 0.0

    model.history = [{"epoch": 0, "train_loss": float("nan"), "val_loss": val_loss()}]
    state = AdamState.zeros_like(model.parameters())
    for epoch in range(1, config.epochs + 1):
        order = rng.child(3, epoch).permutation(A)
        total = 0.0
        for bi, start in enumerate(range(0, A, config.batch)):
            rows = np.sort(order[start:start + config.batch])
            loss, grads = loss_and_grads(model, X[rows], matrix.dense(rows))
            if not math.isfinite(loss):
                raise NumericalAbort(f"non-finite static loss at epoch {epoch}, batch {bi}")
            params, state = adam_step(model.parameters(), grads, state, lr=config.lr)
            model.set_parameters(params)
            total += loss * len(rows)
        rec = {"epoch": epoch, "train_loss": total / max(A, 1), "val_loss": val_loss()}
        model.history.append(rec)
        log.info("static epoch %d train %.6f val %.6f", epoch, rec["train_loss"], rec["val_loss"])
    return model


def static_rank(profile: StaticCustomerProfile, ids: Sequence[str], F) -> list[str]:
    """Candidates by descending ``f . s``; ties by ascending id. The bias is irrelevant."""
    scores = np.asarray(F, dtype=np.float64) @ profile.s
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return [ids[i] for i in order]


# ---------------------------------------------------------------- checkpoints


def _f8(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def save_static(path, model: StaticModel, seed: int | None = None) -> None:
    header = {
        "version": FORMAT_VERSION,
        "rng": RNG_ID,
        "dim": model.dim,
        "layers": [[l.W.shape[1], l.W.shape[0], l.activation] for l in model.encoder],
        "customers": len(model.customers),
        "seed": seed,
    }
    with open(path, "wb") as fh:
        fh.write(STATIC_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for layer in model.encoder:
            fh.write(_f8(layer.W))
            fh.write(_f8(layer.b))
        for i, cid in enumerate(model.customers):
            raw = cid.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(_f8(model.S[i]))
            fh.write(_f8([model.beta[i]]))


def load_static(path) -> StaticModel:
    data = Path(path).read_bytes()
    if not data.startswith(STATIC_MAGIC):
        raise ValueError(f"{path}: not a static checkpoint")
    pos = len(STATIC_MAGIC)
    nl = data.index(b"\n", pos)
    header = json.loads(data[pos:nl])
    if header["version"] != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {header['version']}")
    pos = nl + 1

    def take(n):
        nonlocal pos
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(np.float64)
        pos += 8 * n
        return arr

    enc = []
    for n_in, n_out, act in header["layers"]:
        W = take(n_in * n_out).reshape(n_out, n_in)
        enc.append(Layer(W, take(n_out), act))
    D = header["dim"]
    K = header["customers"]
    customers, S, beta = [], np.zeros((K, D)), np.zeros(K)
    for i in range(K):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        customers.append(data[pos:pos + n].decode("utf-8"))
        pos += n
        S[i] = take(D)
        beta[i] = take(1)[0]
    return StaticModel(enc, customers, S, beta)
