"""Seeded synthetic fashion market with a known ground truth.

Articles carry a latent taste vector derived from a handful of archetypes;
their tags, price and fabric are noisy functions of that vector, so the
content encoder can recover taste for articles it never saw sold. Customers
hold a latent style that drifts (an Ornstein-Uhlenbeck walk, updated at each
order) and buy in multi-item orders at Poisson times. Items in an order are
drawn without replacement from the articles in store, with weights
``exp(style . latent + appeal + seasonal term)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .catalog import (
    MINUTES_PER_DAY,
    Article,
    AvailabilityWindow,
    Catalog,
    PurchaseEvent,
    PurchaseSequence,
    Schema,
    group_sales,
    save_catalog,
    save_sales,
    save_schema,
    split_sales,
)
from .dynamic_model import MINUTES_PER_YEAR
from .numerics import Rng

MINUTES_PER_YEAR_DAYS = 365.25


class GenerationError(ValueError):
    """The configuration cannot produce a consistent market."""


@dataclass
class GenConfig:
    customers: int = 2000
    articles: int = 5000
    tags: int = 60
    fibers: int = 8
    latent: int = 8
    image_dim: int = 0
    horizon_start: int = 0
    horizon_days: int = 3 * 365
    test_days: int = 8
    drift_rate: float = 1.0  # per year
    season_amp: float = 1.0
    taste_scale: float = 0.7
    appeal_scale: float = 0.8
    mean_order_size: float = 1.8
    shop_rate: float = 12.0  # orders per customer-year (mean)
    orders_per_customer: int | None = None  # fixed count instead of Poisson
    shelf_days: float = 120.0
    reentry_prob: float = 0.3
    archetypes: int = 12
    seed: int = 0

    def validate(self) -> None:
        for name in ("customers", "articles", "tags", "fibers", "latent", "archetypes"):
            if getattr(self, name) < 1:
                raise GenerationError(f"{name} must be at least 1")
        if self.horizon_days <= 0 or self.test_days < 0 or self.test_days >= self.horizon_days:
            raise GenerationError("need 0 <= test_days < horizon_days")
        if self.drift_rate < 0 or self.mean_order_size < 1 or self.shop_rate <= 0:
            raise GenerationError("need drift_rate >= 0, mean_order_size >= 1, shop_rate > 0")
        if self.shelf_days <= 0 or not 0 <= self.reentry_prob <= 1:
            raise GenerationError("need shelf_days > 0 and reentry_prob in [0, 1]")

    @property
    def horizon_end(self) -> int:
        return self.horizon_start + self.horizon_days * MINUTES_PER_DAY

    @property
    def test_window(self) -> tuple[int, int]:
        return self.horizon_end - self.test_days * MINUTES_PER_DAY, self.horizon_end


@dataclass
class GroundTruth:
    article_ids: list[str]
    latent: np.ndarray  # (A, L)
    appeal: np.ndarray  # (A,)
    phase: np.ndarray  # (A,) annual phase of peak demand, in years
    season_amp: float
    customer_times: dict[str, np.ndarray] = field(default_factory=dict)
    customer_styles: dict[str, np.ndarray] = field(default_factory=dict)  # (n, L)

    def style(self, customer: str, t) -> np.ndarray:
        """Latent style in force at ``t`` (piecewise constant between updates)."""
        times = self.customer_times[customer]
        i = max(int(np.searchsorted(times, t, side="right")) - 1, 0)
        return self.customer_styles[customer][i]

    def seasonal(self, t, rows) -> np.ndarray:
        yfrac = np.mod(t, MINUTES_PER_YEAR) / MINUTES_PER_YEAR
        return self.season_amp * np.cos(2.0 * np.pi * (yfrac - self.phase[rows]))

    def true_scores(self, customer: str, t, rows) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        u = self.style(customer, t)
        return self.latent[rows] @ u + self.appeal[rows] + self.seasonal(t, rows)


def oracle_rank(truth: GroundTruth, customer: str, t, candidates: Sequence[str]) -> list[str]:
    """Best achievable ranking: the true purchase logits, ties by id."""
    pos = {a: i for i, a in enumerate(truth.article_ids)}
    scores = truth.true_scores(customer, t, [pos[a] for a in candidates])
    order = sorted(range(len(candidates)), key=lambda i: (-scores[i], candidates[i]))
    return [candidates[i] for i in order]


@dataclass
class Market:
    config: GenConfig
    schema: Schema
    catalog: Catalog
    sales: list[PurchaseSequence]
    truth: GroundTruth

    @property
    def window(self) -> tuple[int, int]:
        return self.config.test_window

    def split(self) -> tuple[list[PurchaseSequence], list[PurchaseSequence]]:
        return split_sales(self.sales, *self.window)


def _articles(cfg: GenConfig, rng: Rng, schema: Schema):
    A, L, T, F = cfg.articles, cfg.latent, cfg.tags, cfg.fibers
    centers = rng.child(1).normal((cfg.archetypes, L))
    cluster = rng.child(2).integers(cfg.archetypes, A)
    latent = centers[cluster] + 0.6 * rng.child(3).normal((A, L))
    tag_vecs = rng.child(4).normal((T, L))
    tag_vecs /= np.linalg.norm(tag_vecs, axis=1, keepdims=True)
    tag_draw = rng.child(5).random((A, T))
    has_tag = tag_draw < 1.0 / (1.0 + np.exp(-(3.0 * latent @ tag_vecs.T - 4.0)))
    has_tag[np.arange(A), cluster % T] = True

    aux = rng.child(6).normal((3, L))
    aux /= np.linalg.norm(aux, axis=1, keepdims=True)
    noise = rng.child(7).normal((A, 3))
    appeal = cfg.appeal_scale * (0.75 * latent @ aux[0] / math.sqrt(1.36) + 0.5 * noise[:, 0])
    log_price = 3.5 + 0.4 * latent @ aux[1] + 0.15 * noise[:, 1]
    cluster_phase = rng.child(8).random(cfg.archetypes)
    phase = np.mod(cluster_phase[cluster] + 0.05 * noise[:, 2], 1.0)

    fab_proj = 0.4 * rng.child(9).normal((F, L))
    fab_rng = rng.child(10)
    has_fabric = fab_rng.random(A) < 0.7
    image_proj = rng.child(11).normal((cfg.image_dim, L)) if cfg.image_dim else None
    image_noise = rng.child(12).normal((A, cfg.image_dim)) if cfg.image_dim else None

    lo = cfg.horizon_start - MINUTES_PER_YEAR
    hi = cfg.horizon_end
    av = rng.child(13)
    entry = av.uniform(lo, hi, A)
    dur = cfg.shelf_days * MINUTES_PER_DAY * (0.25 + av.exponential(1.0, A))
    again = av.random(A) < cfg.reentry_prob
    gap = av.uniform(30, 180, A) * MINUTES_PER_DAY
    dur2 = cfg.shelf_days * MINUTES_PER_DAY * (0.25 + av.exponential(1.0, A))

    articles = []
    for i in range(A):
        fabric = {}
        if has_fabric[i] and F:
            alpha = np.exp(fab_proj @ latent[i])
            w = fab_rng.gamma(1.0, 1.0, F) * alpha
            w = np.where(w / w.sum() >= 0.02, w, 0.0)
            w = w / w.sum()
            fabric = {schema.fibers[j]: float(w[j]) for j in np.flatnonzero(w)}
        s1 = int(entry[i])
        wins = [AvailabilityWindow(s1, s1 + max(int(dur[i]), MINUTES_PER_DAY))]
        if again[i]:
            s2 = wins[0].end + int(gap[i])
            wins.append(AvailabilityWindow(s2, s2 + max(int(dur2[i]), MINUTES_PER_DAY)))
        feat = None
        if image_proj is not None:
            feat = tuple(float(v) for v in image_proj @ latent[i] + 0.3 * image_noise[i])
        articles.append(Article(
            id=f"a{i:05d}",
            tags=frozenset(schema.tags[j] for j in np.flatnonzero(has_tag[i])),
            log_price=float(log_price[i]),
            fabric=fabric,
            image_feat=feat,
            availability=tuple(wins),
        ))
    return articles, latent, appeal, phase


def generate_market(config: GenConfig, seed: int | None = None) -> Market:
    cfg = config
    cfg.validate()
    if seed is not None:
        cfg = GenConfig(**{**cfg.__dict__, "seed": seed})
    rng = Rng(cfg.seed)
    schema = Schema(
        tuple(f"tag{j:03d}" for j in range(cfg.tags)),
        tuple(f"fiber{j:02d}" for j in range(cfg.fibers)),
        cfg.image_dim,
    )
    articles, latent, appeal, phase = _articles(cfg, rng.child(100), schema)
    catalog = Catalog(articles, schema)
    truth = GroundTruth(catalog.ids, latent, appeal, phase, cfg.season_amp)

    years = cfg.horizon_days / MINUTES_PER_YEAR_DAYS
    events: list[PurchaseEvent] = []
    crng = rng.child(200)
    for k in range(cfg.customers):
        cid = f"c{k:05d}"
        r = crng.child(k)
        if cfg.orders_per_customer is not None:
            n_orders = cfg.orders_per_customer
        else:
            rate = max(r.gamma(2.0, cfg.shop_rate / 2.0), 0.5)
            n_orders = int(r.poisson(rate * years))
        times = np.sort(r.integers(cfg.horizon_end - cfg.horizon_start, n_orders)) + cfg.horizon_start
        for i in range(1, len(times)):  # distinct orders get distinct minutes
            times[i] = max(times[i], times[i - 1] + 1)
        if len(times) and times[-1] >= cfg.horizon_end:
            raise GenerationError(f"customer {cid}: too many orders for the horizon")
        u = cfg.taste_scale * r.normal(cfg.latent)
        style_t, styles = [cfg.horizon_start], [u]
        last = cfg.horizon_start
        sizes = 1 + r.poisson(cfg.mean_order_size - 1.0, len(times))
        for t, size in zip(times, sizes):
            a = math.exp(-cfg.drift_rate * (t - last) / MINUTES_PER_YEAR)
            u = a * u + math.sqrt(1.0 - a * a) * cfg.taste_scale * r.normal(cfg.latent)
            last = int(t)
            style_t.append(int(t))
            styles.append(u)
            pool = np.flatnonzero(catalog.in_store_mask(t))
            if len(pool) < size:
                raise GenerationError(f"order of {size} items at t={t} but {len(pool)} in store")
            logits = latent[pool] @ u + appeal[pool] + truth.seasonal(t, pool)
            # Gumbel top-k: sequential sampling without replacement
            keys = -(logits + r.gumbel(len(pool)))
            top = np.argpartition(keys, size - 1)[:size]
            pick = top[np.argsort(keys[top], kind="stable")]
            events.extend(PurchaseEvent(cid, catalog.ids[p], int(t)) for p in pool[pick])
        truth.customer_times[cid] = np.array(style_t, dtype=np.int64)
        truth.customer_styles[cid] = np.array(styles)
    return Market(cfg, schema, catalog, group_sales(events), truth)


# ---------------------------------------------------------------- files

TRUTH_HEADER = ["record", "key", "t", "values"]


def save_truth(path, truth: GroundTruth) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(TRUTH_HEADER)
        w.writerow(["meta", "season_amp", "", repr(float(truth.season_amp))])
        for i, aid in enumerate(truth.article_ids):
            vals = [truth.appeal[i], truth.phase[i], *truth.latent[i]]
            w.writerow(["article", aid, "", ",".join(repr(float(v)) for v in vals)])
        for cid, times in truth.customer_times.items():
            for t, u in zip(times, truth.customer_styles[cid]):
                w.writerow(["style", cid, int(t), ",".join(repr(float(v)) for v in u)])


def load_truth(path) -> GroundTruth:
    ids, rows, amp = [], [], 0.0
    times: dict[str, list[int]] = {}
    styles: dict[str, list[list[float]]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        if next(reader, None) != TRUTH_HEADER:
            raise ValueError(f"{path}: not a ground-truth file")
        for rec, key, t, vals in reader:
            v = [float(x) for x in vals.split(",")]
            if rec == "meta" and key == "season_amp":
                amp = v[0]
            elif rec == "article":
                ids.append(key)
                rows.append(v)
            elif rec == "style":
                times.setdefault(key, []).append(int(t))
                styles.setdefault(key, []).append(v)
    arr = np.array(rows).reshape(len(rows), -1)
    truth = GroundTruth(ids, arr[:, 2:], arr[:, 0], arr[:, 1], amp)
    truth.customer_times = {k: np.array(v, dtype=np.int64) for k, v in times.items()}
    truth.customer_styles = {k: np.array(v) for k, v in styles.items()}
    return truth


MARKET_FILES = {
    "catalog": "catalog.tsv",
    "schema": "schema.tsv",
    "sales": "sales.tsv",
    "truth": "truth.tsv",
}


def write_market(out_dir, market: Market) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / v for k, v in MARKET_FILES.items()}
    save_schema(paths["schema"], market.schema)
    save_catalog(paths["catalog"], market.catalog)
    save_sales(paths["sales"], market.sales)
    save_truth(paths["truth"], market.truth)
    return paths
