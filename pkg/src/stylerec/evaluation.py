"""Backtest protocol: per-customer rankings, purchase ranks and the collective ROC.

For every customer with purchases in the evaluation window the candidate set
(all articles on offer at some moment of the window) is ranked, and the
1-based positions of the purchased articles are collected. ``R[j]`` counts
purchases ranked at position ``j`` or better; ``R / R[z]`` is the collective
ROC and its area is the mean of ``(z - r) / (z - 1)`` over purchases.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .baseline import PopularityTable, default_window, popularity_scores
from .catalog import Catalog, PurchaseEvent, PurchaseSequence
from .dynamic_model import DynamicModel, shuffle_orders, styles_array
from .numerics import DimensionError, Rng
from .static_model import StaticModel

log = logging.getLogger(__name__)

QUANTILES = (0.1, 0.5, 0.9)
MODEL_KINDS = ("baseline", "static", "dynamic", "oracle")


class ProtocolError(ValueError):
    """Evaluation inputs are inconsistent (e.g. purchase outside the candidates)."""


class UndefinedAucError(ValueError):
    """No purchases to rank."""


def intent_scores(d, ids: Sequence[str], F) -> dict[str, float]:
    """Intent-of-purchase ``f . d`` per candidate; a score, not a probability."""
    d = np.asarray(getattr(d, "d", d), dtype=np.float64)
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    if F.shape[1] != d.shape[0] or F.shape[0] != len(ids):
        raise DimensionError("intent_scores: candidate embeddings do not match style")
    return dict(zip(ids, (F @ d).tolist()))


def rank_purchases(ranking: Sequence[str], purchased: Iterable[str]) -> list[int]:
    pos = {a: i + 1 for i, a in enumerate(ranking)}
    ranks = []
    for a in purchased:
        if a not in pos:
            raise ProtocolError(f"purchased article {a!r} is not a candidate")
        ranks.append(pos[a])
    return sorted(ranks)


@dataclass
class RocCurve:
    R: np.ndarray  # R[0..z]
    auc: float

    @property
    def z(self) -> int:
        return len(self.R) - 1

    @property
    def total(self) -> int:
        return int(self.R[-1])

    def normalized(self) -> np.ndarray:
        return self.R / self.R[-1]


def auc_from_ranks(ranks, z: int) -> float:
    r = np.asarray(ranks, dtype=np.float64)
    if not r.size:
        raise UndefinedAucError("no purchases to evaluate")
    if z == 1:
        return 1.0
    return float(np.mean((z - r) / (z - 1)))


def cumulative_rank(ranks, z: int) -> RocCurve:
    ranks = np.asarray(ranks, dtype=np.int64)
    if not ranks.size:
        raise UndefinedAucError("no purchases to evaluate")
    return RocCurve(kernels.cumulative_counts(ranks, z), auc_from_ranks(ranks, z))


def rank_quantile(curve: RocCurve, q: float) -> int:
    """Smallest ``j`` with ``R[j] / R[z] >= q``."""
    if not 0.0 < q <= 1.0:
        raise ValueError("q must lie in (0, 1]")
    frac = curve.R / curve.R[-1]
    return int(np.argmax(frac >= q))


@dataclass
class RankTable:
    z: int
    customers: list[str]
    articles: list[str]
    ranks: np.ndarray

    def subset(self, pairs: set[tuple[str, str]]) -> "RankTable":
        keep = [i for i, p in enumerate(zip(self.customers, self.articles)) if p in pairs]
        return RankTable(self.z, [self.customers[i] for i in keep],
                         [self.articles[i] for i in keep], self.ranks[keep])


@dataclass
class Backtest:
    """Everything a model needs to be scored over one evaluation window."""

    catalog: Catalog
    window: tuple[int, int]
    cand_ids: list[str]  # sorted by id: index order is the tie-break order
    cand_idx: np.ndarray  # catalog row of each candidate
    customers: list[str]
    first_time: list[int]
    purchased: list[np.ndarray]  # candidate positions per customer
    history: dict[str, PurchaseSequence] = field(default_factory=dict)
    train_sales: list[PurchaseSequence] = field(default_factory=list)

    @property
    def z(self) -> int:
        return len(self.cand_ids)


def prepare_backtest(catalog: Catalog, train_sales: Sequence[PurchaseSequence],
                     test_sales: Sequence[PurchaseSequence], window: tuple[int, int]) -> Backtest:
    start, end = window
    mask = catalog.overlap_mask(start, end)
    cand_ids = sorted(catalog.ids[i] for i in np.flatnonzero(mask))
    cand_pos = {a: i for i, a in enumerate(cand_ids)}
    customers, first, purchased = [], [], []
    for seq in test_sales:
        evs = [e for e in seq.events if start <= e.t < end]
        if not evs:
            continue
        arts = sorted({e.article for e in evs})
        missing = [a for a in arts if a not in cand_pos]
        if missing:
            raise ProtocolError(f"purchased article {missing[0]!r} is not a candidate")
        customers.append(seq.customer)
        first.append(min(e.t for e in evs))
        purchased.append(np.array([cand_pos[a] for a in arts], dtype=np.int64))
    history = {s.customer: s for s in train_sales}
    return Backtest(
        catalog, (start, end), cand_ids,
        np.array([catalog.index[a] for a in cand_ids], dtype=np.int64),
        customers, first, purchased, history, list(train_sales),
    )


def _rank_all(bt: Backtest, score_fn: Callable[[int], np.ndarray]) -> RankTable:
    custs, arts, ranks = [], [], []
    for k, cust in enumerate(bt.customers):
        scores = score_fn(k)
        r = kernels.ranks_from_scores(scores, bt.purchased[k])
        custs += [cust] * len(r)
        arts += [bt.cand_ids[p] for p in bt.purchased[k]]
        ranks.append(r)
    flat = np.concatenate(ranks) if ranks else np.zeros(0, dtype=np.int64)
    return RankTable(bt.z, custs, arts, flat)


def baseline_table(bt: Backtest, days: int = 7) -> PopularityTable:
    ws, we = default_window(bt.window[0], days)
    return popularity_scores(bt.train_sales, bt.catalog, ws, we, bt.window[0], bt.window[1])


def rank_baseline(bt: Backtest, table: PopularityTable) -> RankTable:
    missing = [a for a in bt.cand_ids if a not in table.scores]
    if missing:
        raise ProtocolError(f"candidate {missing[0]!r} has no popularity score")
    scores = np.array([table.scores[a] for a in bt.cand_ids])
    return _rank_all(bt, lambda k: scores)


def rank_static(bt: Backtest, model: StaticModel, E: np.ndarray) -> RankTable:
    """``E`` holds embeddings in catalog order (cold-start articles included)."""
    F = E[bt.cand_idx]
    zero = np.zeros(len(bt.cand_ids))
    unknown = [c for c in bt.customers if model.profile(c) is None]
    if unknown:
        log.warning("%d test customers have no static profile; ranked by id order", len(unknown))

    def score(k):
        prof = model.profile(bt.customers[k])
        return zero if prof is None else F @ prof.s

    return _rank_all(bt, score)


def dynamic_styles(bt: Backtest, model: DynamicModel, E: np.ndarray, seed: int) -> np.ndarray:
    """Style of each test customer at their first in-window purchase time."""
    rng = Rng(seed).child(7)
    out = np.zeros((len(bt.customers), model.params.D))
    n_cold = 0
    for k, cust in enumerate(bt.customers):
        hist = bt.history.get(cust)
        if hist is None or not len(hist):
            n_cold += 1
            ts, Eh = [], np.zeros((0, model.params.D))
        else:
            hist = shuffle_orders(hist, rng.child(k))
            ts = hist.timestamps
            Eh = E[[bt.catalog.index[a] for a in hist.articles]]
        out[k] = styles_array(model.params, Eh, ts, eval_time=bt.first_time[k])[-1]
    if n_cold:
        log.info("%d test customers without history use the time-only first step", n_cold)
    return out


def rank_dynamic(bt: Backtest, model: DynamicModel, E: np.ndarray, seed: int = 0) -> RankTable:
    F = E[bt.cand_idx]
    styles = dynamic_styles(bt, model, E, seed)
    return _rank_all(bt, lambda k: F @ styles[k])


def rank_oracle(bt: Backtest, truth) -> RankTable:
    return _rank_all(bt, lambda k: truth.true_scores(bt.customers[k], bt.first_time[k], bt.cand_idx))


def cold_start_subset(test_sales: Iterable[PurchaseSequence],
                      train_sales: Iterable[PurchaseSequence]) -> list[PurchaseEvent]:
    """Test purchases of articles never sold in the training data."""
    sold = {e.article for s in train_sales for e in s.events}
    return [e for s in test_sales for e in s.events if e.article not in sold]


@dataclass
class EvalResult:
    model: str
    curve: RocCurve
    quantiles: dict[float, int]
    n_params: int | None
    table: RankTable
    cold_auc: float | None = None


def summarize(model: str, table: RankTable, n_params: int | None,
              cold_pairs: set[tuple[str, str]] | None = None) -> EvalResult:
    curve = cumulative_rank(table.ranks, table.z)
    quant = {q: rank_quantile(curve, q) for q in QUANTILES}
    cold = None
    if cold_pairs:
        sub = table.subset(cold_pairs)
        if len(sub.ranks):
            cold = auc_from_ranks(sub.ranks, sub.z)
    return EvalResult(model, curve, quant, n_params, table, cold)


def evaluate_model(model: str, catalog: Catalog, test_sales, train_sales, window, *,
                   static: StaticModel | None = None, dynamic: DynamicModel | None = None,
                   E: np.ndarray | None = None, truth=None, seed: int = 0,
                   baseline_days: int = 7, backtest: Backtest | None = None) -> EvalResult:
    """Rank test purchases with one model and summarise them."""
    bt = backtest or prepare_backtest(catalog, train_sales, test_sales, window)
    cold = {(e.customer, e.article) for e in cold_start_subset(test_sales, train_sales)}
    if model == "baseline":
        table, n_params = rank_baseline(bt, baseline_table(bt, baseline_days)), None
    elif model == "static":
        if static is None or E is None:
            raise ValueError("static evaluation needs the static model and embeddings")
        table, n_params = rank_static(bt, static, E), static.n_params()
    elif model == "dynamic":
        if dynamic is None or E is None:
            raise ValueError("dynamic evaluation needs the dynamic model and embeddings")
        table, n_params = rank_dynamic(bt, dynamic, E, seed), dynamic.params.n_params()
    elif model == "oracle":
        if truth is None:
            raise ValueError("oracle evaluation needs the ground truth")
        table, n_params = rank_oracle(bt, truth), None
    else:
        raise ValueError(f"unknown model {model!r}")
    return summarize(model, table, n_params, cold)


# ---------------------------------------------------------------- exports


def write_roc(path, result: EvalResult, seed: int) -> None:
    c = result.curve
    frac = c.normalized()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# model={result.model}\tz={c.z}\tauc={c.auc!r}\tseed={seed}\n")
        fh.write("j\tR_j\tR_j_over_R_z\n")
        for j in range(c.z + 1):
            fh.write(f"{j}\t{int(c.R[j])}\t{float(frac[j])!r}\n")


METRICS_HEADER = ["model", "auc", "q10", "q50", "q90", "params", "cold_auc", "purchases", "z"]


def metrics_rows(results: Sequence[EvalResult]) -> list[list[str]]:
    rows = []
    for r in results:
        rows.append([
            r.model,
            repr(r.curve.auc),
            *(str(r.quantiles[q]) for q in QUANTILES),
            "-" if r.n_params is None else str(r.n_params),
            "-" if r.cold_auc is None else repr(r.cold_auc),
            str(r.curve.total),
            str(r.curve.z),
        ])
    return rows


def write_metrics(path, results: Sequence[EvalResult]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(METRICS_HEADER) + "\n")
        for row in metrics_rows(results):
            fh.write("\t".join(row) + "\n")


def read_metrics(path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8") as fh:
        lines = [l.rstrip("\n").split("\t") for l in fh if l.strip()]
    header, rows = lines[0], lines[1:]
    return [dict(zip(header, r)) for r in rows]


def format_report(rows: Sequence[dict[str, str]]) -> str:
    """Markdown comparison table: AUC, recommendations needed for 10/50/90%, params."""
    out = [
        "| model | AUC | 10% | 50% | 90% | #params | cold-start AUC |",
        "|---|---|---|---|---|---|---|",
    ]
    best = max((float(r["auc"]) for r in rows if r["model"] != "oracle"), default=None)
    for r in rows:
        auc = f"{100 * float(r['auc']):.1f}%"
        if best is not None and r["model"] != "oracle" and float(r["auc"]) == best:
            auc = f"**{auc}**"
        cold = "-" if r["cold_auc"] == "-" else f"{100 * float(r['cold_auc']):.1f}%"
        out.append(
            f"| {r['model']} | {auc} | {int(r['q10']):,} | {int(r['q50']):,} | "
            f"{int(r['q90']):,} | {r['params']} | {cold} |"
        )
    return "\n".join(out) + "\n"
