"""Articles, sales and the binary purchase matrix.

Timestamps are integer minutes since 2008-01-01T00:00Z. Availability windows
are half-open ``[start, end)``. All files are UTF-8, tab separated, with a
header line; see FORMATS.md for the column layout.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

MINUTES_PER_DAY = 24 * 60
CATALOG_HEADER = ["id", "tags", "log_price", "fabric", "availability", "image_feat"]
# "start-end" in minutes; either bound may be negative (before the epoch)
_WINDOW_RE = re.compile(r"(-?\d+)-(-?\d+)")
SALES_HEADER = ["customer_id", "article_id", "timestamp"]


class CatalogError(ValueError):
    """Malformed catalog, schema or sales data."""


@dataclass(frozen=True)
class Schema:
    tags: tuple[str, ...]
    fibers: tuple[str, ...]
    image_dim: int = 0

    @property
    def width(self) -> int:
        return len(self.tags) + 1 + len(self.fibers) + self.image_dim


@dataclass(frozen=True)
class AvailabilityWindow:
    start: int
    end: int

    def __post_init__(self):
        if not self.start < self.end:
            raise CatalogError(f"window start {self.start} not before end {self.end}")

    def contains(self, t) -> bool:
        return self.start <= t < self.end


@dataclass(frozen=True)
class Article:
    id: str
    tags: frozenset[str]
    log_price: float
    fabric: dict[str, float] = field(default_factory=dict)
    image_feat: tuple[float, ...] | None = None
    availability: tuple[AvailabilityWindow, ...] = ()

    def validate(self, schema: Schema | None = None) -> None:
        if self.fabric:
            total = sum(self.fabric.values())
            if abs(total - 1.0) > 1e-6:
                raise CatalogError(f"article {self.id}: fabric fractions sum to {total}")
            if any(not 0.0 <= v <= 1.0 for v in self.fabric.values()):
                raise CatalogError(f"article {self.id}: fabric fraction outside [0, 1]")
        if not math.isfinite(self.log_price):
            raise CatalogError(f"article {self.id}: non-finite log_price")
        wins = sorted(self.availability, key=lambda w: w.start)
        for a, b in zip(wins, wins[1:]):
            if b.start < a.end:
                raise CatalogError(f"article {self.id}: overlapping availability windows")
        if schema is not None:
            unknown = self.tags - set(schema.tags)
            if unknown:
                raise CatalogError(f"article {self.id}: tags {sorted(unknown)} not in schema")
            bad = set(self.fabric) - set(schema.fibers)
            if bad:
                raise CatalogError(f"article {self.id}: fibers {sorted(bad)} not in schema")
            if self.image_feat is not None and len(self.image_feat) != schema.image_dim:
                raise CatalogError(f"article {self.id}: image feature length mismatch")


class Catalog:
    """Ordered article collection with a vectorised availability index."""

    def __init__(self, articles: Sequence[Article] = (), schema: Schema | None = None):
        self.articles: list[Article] = list(articles)
        self.schema = schema
        self.index: dict[str, int] = {}
        for i, a in enumerate(self.articles):
            if a.id in self.index:
                raise CatalogError(f"duplicate article id {a.id}")
            a.validate(schema)
            self.index[a.id] = i
        self.ids = [a.id for a in self.articles]
        width = max((len(a.availability) for a in self.articles), default=0)
        # slot-major window table; unused slots are [0, 0) and never match
        starts = np.zeros((max(width, 1), len(self.articles)), dtype=np.int64)
        ends = np.zeros_like(starts)
        for i, a in enumerate(self.articles):
            for j, w in enumerate(a.availability):
                starts[j, i] = w.start
                ends[j, i] = w.end
        self._starts = list(starts)
        self._ends = list(ends)

    def __len__(self) -> int:
        return len(self.articles)

    def __getitem__(self, article_id: str) -> Article:
        return self.articles[self.index[article_id]]

    def __contains__(self, article_id: str) -> bool:
        return article_id in self.index

    def _any_window(self, test) -> np.ndarray:
        mask = np.zeros(len(self.articles), dtype=bool)
        for s, e in zip(self._starts, self._ends):
            mask |= test(s, e)
        return mask

    def in_store_mask(self, t) -> np.ndarray:
        """Boolean mask over articles available at time ``t``."""
        return self._any_window(lambda s, e: (s <= t) & (t < e))

    def overlap_mask(self, start, end) -> np.ndarray:
        """Articles available at some moment of ``[start, end)``."""
        return self._any_window(lambda s, e: (s < end) & (start < e))

    def available_since_mask(self, t) -> np.ndarray:
        """Articles available at some moment at or after ``t``."""
        return self._any_window(lambda s, e: e > t)


def in_store(catalog: Catalog, t) -> set[str]:
    mask = catalog.in_store_mask(t)
    return {catalog.ids[i] for i in np.flatnonzero(mask)}


class PurchaseEvent(NamedTuple):
    customer: str
    article: str
    t: int


@dataclass(frozen=True)
class PurchaseSequence:
    customer: str
    events: tuple[PurchaseEvent, ...]

    def __len__(self) -> int:
        return len(self.events)

    @property
    def timestamps(self) -> list[int]:
        return [e.t for e in self.events]

    @property
    def articles(self) -> list[str]:
        return [e.article for e in self.events]


@dataclass
class PurchaseMatrix:
    customers: list[str]
    articles: list[str]
    article_idx: np.ndarray  # pair rows, sorted by (article, customer)
    customer_idx: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.articles), len(self.customers)

    def pairs(self) -> set[tuple[int, int]]:
        return set(zip(self.article_idx.tolist(), self.customer_idx.tolist()))

    def dense(self, rows: np.ndarray | None = None) -> np.ndarray:
        """Dense 0/1 block for the given article rows (all rows by default)."""
        if rows is None:
            out = np.zeros(self.shape)
            out[self.article_idx, self.customer_idx] = 1.0
            return out
        rows = np.asarray(rows)
        pos = np.full(len(self.articles), -1)
        pos[rows] = np.arange(len(rows))
        sel = pos[self.article_idx] >= 0
        out = np.zeros((len(rows), len(self.customers)))
        out[pos[self.article_idx[sel]], self.customer_idx[sel]] = 1.0
        return out


def build_purchase_matrix(
    sequences: Iterable[PurchaseSequence], customers: Sequence[str], articles: Sequence[str]
) -> PurchaseMatrix:
    cpos = {c: i for i, c in enumerate(customers)}
    apos = {a: i for i, a in enumerate(articles)}
    pairs = set()
    for seq in sequences:
        for ev in seq.events:
            try:
                pairs.add((apos[ev.article], cpos[ev.customer]))
            except KeyError as exc:
                raise CatalogError(f"unknown id {exc.args[0]}") from None
    arr = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    return PurchaseMatrix(list(customers), list(articles), arr[:, 0].copy(), arr[:, 1].copy())


def feature_vector(article: Article, schema: Schema) -> np.ndarray:
    """``[tag multi-hot | log price | fabric fractions | image features or zeros]``."""
    x = np.zeros(schema.width)
    tpos = {t: i for i, t in enumerate(schema.tags)}
    for tag in article.tags:
        if tag not in tpos:
            raise CatalogError(f"article {article.id}: tag {tag!r} outside schema")
        x[tpos[tag]] = 1.0
    T, F = len(schema.tags), len(schema.fibers)
    x[T] = article.log_price
    fpos = {f: i for i, f in enumerate(schema.fibers)}
    for fiber, frac in article.fabric.items():
        if fiber not in fpos:
            raise CatalogError(f"article {article.id}: fiber {fiber!r} outside schema")
        x[T + 1 + fpos[fiber]] = frac
    if article.image_feat is not None:
        x[T + 1 + F :] = article.image_feat
    return x


def feature_matrix(catalog: Catalog, schema: Schema | None = None) -> np.ndarray:
    schema = schema or catalog.schema
    if schema is None:
        raise CatalogError("no schema available for feature extraction")
    if not len(catalog):
        return np.zeros((0, schema.width))
    return np.stack([feature_vector(a, schema) for a in catalog.articles])


# ---------------------------------------------------------------- file io


def _reader(path):
    fh = open(path, newline="", encoding="utf-8")
    return fh, csv.reader(fh, delimiter="\t")


def _check_header(row, expected, path):
    if row is None or [c.strip() for c in row[: len(expected)]] != expected[: len(row)]:
        raise CatalogError(f"{path}:1: expected header {expected}")


def save_schema(path, schema: Schema) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("field\tvalues\n")
        fh.write("tags\t" + ";".join(schema.tags) + "\n")
        fh.write("fibers\t" + ";".join(schema.fibers) + "\n")
        fh.write(f"image_dim\t{schema.image_dim}\n")


def load_schema(path) -> Schema:
    fh, rows = _reader(path)
    with fh:
        header = next(rows, None)
        if header != ["field", "values"]:
            raise CatalogError(f"{path}:1: expected header field/values")
        vals = {}
        for lineno, row in enumerate(rows, start=2):
            if len(row) != 2:
                raise CatalogError(f"{path}:{lineno}: expected 2 columns")
            vals[row[0]] = row[1]
    try:
        tags = tuple(t for t in vals["tags"].split(";") if t)
        fibers = tuple(f for f in vals["fibers"].split(";") if f)
        image_dim = int(vals.get("image_dim", "0"))
    except (KeyError, ValueError) as exc:
        raise CatalogError(f"{path}: incomplete schema ({exc})") from None
    return Schema(tags, fibers, image_dim)


def _fmt(x: float) -> str:
    return repr(float(x))


def save_catalog(path, catalog: Catalog) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(CATALOG_HEADER)
        for a in catalog.articles:
            w.writerow(
                [
                    a.id,
                    ";".join(sorted(a.tags)),
                    _fmt(a.log_price),
                    ";".join(f"{k}:{_fmt(v)}" for k, v in a.fabric.items()),
                    ";".join(f"{w_.start}-{w_.end}" for w_ in a.availability),
                    "" if a.image_feat is None else ",".join(_fmt(v) for v in a.image_feat),
                ]
            )


def _parse_article(row: list[str]) -> Article:
    row = row + [""] * (len(CATALOG_HEADER) - len(row))
    aid, tags, price, fabric, avail, image = row[:6]
    if not aid:
        raise ValueError("empty article id")
    fab = {}
    for pair in filter(None, fabric.split(";")):
        k, _, v = pair.rpartition(":")
        if not k:
            raise ValueError(f"bad fabric pair {pair!r}")
        fab[k] = float(v)
    wins = []
    for pair in filter(None, avail.split(";")):
        m = _WINDOW_RE.fullmatch(pair.strip())
        if not m:
            raise ValueError(f"bad availability window {pair!r}")
        wins.append(AvailabilityWindow(int(m[1]), int(m[2])))
    feat = tuple(float(v) for v in image.split(",")) if image else None
    return Article(
        id=aid,
        tags=frozenset(filter(None, tags.split(";"))),
        log_price=float(price),
        fabric=fab,
        image_feat=feat,
        availability=tuple(wins),
    )


def load_catalog(path, schema: Schema | None = None) -> Catalog:
    fh, rows = _reader(path)
    articles = []
    with fh:
        header = next(rows, None)
        if header is None or header[:5] != CATALOG_HEADER[:5]:
            raise CatalogError(f"{path}:1: expected header {CATALOG_HEADER}")
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            try:
                art = _parse_article(row)
            except (ValueError, CatalogError) as exc:
                raise CatalogError(f"{path}:{lineno}: {exc}") from None
            articles.append(art)
    return Catalog(articles, schema)


def group_sales(events: Iterable[PurchaseEvent]) -> list[PurchaseSequence]:
    """Group events per customer (first-appearance order), stable-sorted by time."""
    by_cust: dict[str, list[PurchaseEvent]] = {}
    for ev in events:
        by_cust.setdefault(ev.customer, []).append(ev)
    return [
        PurchaseSequence(c, tuple(sorted(evs, key=lambda e: e.t))) for c, evs in by_cust.items()
    ]


def load_sales(path, catalog: Catalog | None = None) -> list[PurchaseSequence]:
    fh, rows = _reader(path)
    events = []
    with fh:
        header = next(rows, None)
        if header != SALES_HEADER:
            raise CatalogError(f"{path}:1: expected header {SALES_HEADER}")
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise CatalogError(f"{path}:{lineno}: expected 3 columns")
            cust, art, ts = row
            try:
                t = int(ts)
            except ValueError:
                raise CatalogError(f"{path}:{lineno}: malformed timestamp {ts!r}") from None
            if catalog is not None and art not in catalog:
                raise CatalogError(f"{path}:{lineno}: unknown article {art!r}")
            events.append(PurchaseEvent(cust, art, t))
    return group_sales(events)


def save_sales(path, sequences: Iterable[PurchaseSequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(SALES_HEADER)
        for seq in sequences:
            for ev in seq.events:
                w.writerow([ev.customer, ev.article, int(ev.t)])


def split_sales(
    sequences: Iterable[PurchaseSequence], start: int, end: int
) -> tuple[list[PurchaseSequence], list[PurchaseSequence]]:
    """Split into (events before ``start``, events within ``[start, end)``)."""
    before, within = [], []
    for seq in sequences:
        pre = tuple(e for e in seq.events if e.t < start)
        mid = tuple(e for e in seq.events if start <= e.t < end)
        if pre:
            before.append(PurchaseSequence(seq.customer, pre))
        if mid:
            within.append(PurchaseSequence(seq.customer, mid))
    return before, within
