"""Yelp-schema ingestion, filtering, feature derivation, splits and token strata.

Pipeline order: category filter -> year filter -> English-word filter ->
dedup (latest post per user/business) -> seeded sample -> text cleanup ->
70/15/15 split -> vocabulary from the training texts -> tokenization ->
tabular features (count features min-max scaled on the training split).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime
import json
import logging
import os
import re

import numpy as np

from .text import build_vocab, tokenize_fixed, Vocabulary, PAD

log = logging.getLogger(__name__)

DAYS = ("Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday")
FEATURES = (
    "open_dow",
    "open_hours",
    "open_mon",
    "open_tue",
    "open_wed",
    "open_thu",
    "open_fri",
    "open_sat",
    "open_sun",
    "n_friends",
    "n_fans",
    "n_elites",
    "n_useful",
    "n_funny",
    "n_cool",
)
COUNT_FEATURES = FEATURES[9:]
CATEGORIES = ("restaurants", "nightlife", "cafe")


@dataclass
class ReviewRecord:
    user_id: str
    business_id: str
    stars: int
    date: datetime
    text: str
    useful: int = 0
    funny: int = 0
    cool: int = 0
    n_friends: int = 0
    n_fans: int = 0
    n_elites: int = 0
    hours: dict = field(default_factory=dict)
    categories: frozenset = frozenset()

    def __post_init__(self):
        if self.stars not in (1, 2, 3, 4, 5):
            raise ValueError(f"stars must be an integer 1..5, got {self.stars!r}")
        if isinstance(self.date, str):
            self.date = parse_date(self.date)
        self.categories = frozenset(self.categories)


def parse_date(s):
    for fmt in ("%Y-%m-%d %H:%M:%S", "%Y-%m-%d"):
        try:
            return datetime.strptime(s, fmt)
        except ValueError:
            pass
    raise ValueError(f"unparseable date {s!r}")


# -- filters ------------------------------------------------------------------------

_RULES = {
    "restaurants": ({"Restaurants"}, {"Fast Food", "Food Truck", "Nightlife", "Bar"}),
    "nightlife": ({"Restaurants", "Nightlife"}, {"Fast Food", "Food Truck"}),
    "cafe": ({"Cafes", "Coffee and Tea"}, {"Fast Food", "Food Truck"}),
}


def in_category(tags, category):
    if category not in _RULES:
        raise ValueError(f"unknown category {category!r}; choose from {CATEGORIES}")
    required, excluded = _RULES[category]
    tags = set(tags)
    return required <= tags and not (excluded & tags)


def filter_category(records, category):
    if category not in _RULES:
        raise ValueError(f"unknown category {category!r}; choose from {CATEGORIES}")
    return [r for r in records if in_category(r.categories, category)]


def has_english_word(text):
    return re.search(r"[A-Za-z]", text) is not None


def dedup_latest(records):
    """Keep one record per (user, business): the latest; on equal dates the later one in input order."""
    best = {}
    for i, r in enumerate(records):
        key = (r.user_id, r.business_id)
        if key not in best or r.date >= records[best[key]].date:
            best[key] = i
    keep = sorted(best.values())
    return [records[i] for i in keep]


_DISALLOWED = re.compile(r"[^A-Za-z0-9 ,.!?'\"()\-:;$%&/@]")
_PERIOD_RUN = re.compile(r"\s*\.(?:\s*\.)+")


def preprocess_text(s):
    """Replace line breaks and symbols with periods, then merge period runs."""
    s = _DISALLOWED.sub(".", s)
    s = _PERIOD_RUN.sub(".", s)
    return s.strip()


# -- features -------------------------------------------------------------------------


def _clock(s):
    h, _, m = s.partition(":")
    return int(h) + int(m or 0) / 60.0


def day_hours(span):
    """Opening hours of a ``"H:M-H:M"`` span. Close before open wraps past midnight."""
    if not span:
        return 0.0
    start, _, end = span.partition("-")
    a, b = _clock(start), _clock(end)
    if b <= a:
        b += 24.0
    return min(b - a, 24.0)


def derive_tabular(record):
    """The 15 features; location ones scaled to [0, 1], counts left raw."""
    daily = [day_hours((record.hours or {}).get(d)) for d in DAYS]
    open_days = sum(1 for h in daily if h > 0)
    loc = [open_days / 7.0, sum(daily) / 168.0] + [h / 24.0 for h in daily]
    counts = [record.n_friends, record.n_fans, record.n_elites, record.useful, record.funny, record.cool]
    return np.array(loc + [float(c) for c in counts])


def normalize_rating(stars):
    if isinstance(stars, bool) or not isinstance(stars, (int, np.integer)) or not 1 <= stars <= 5:
        raise ValueError(f"rating must be an integer 1..5, got {stars!r}")
    return (int(stars) - 1) / 4.0


@dataclass
class CountScaler:
    """Min-max scaling of the six count features with training-split extrema."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, x_tab):
        c = x_tab[:, 9:]
        return cls(c.min(axis=0), c.max(axis=0))

    def transform(self, x_tab):
        out = x_tab.copy()
        span = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        out[:, 9:] = np.clip((x_tab[:, 9:] - self.lo) / span, 0.0, 1.0)
        return out


# -- examples and splits -----------------------------------------------------------------


@dataclass
class ExampleSet:
    ids: np.ndarray
    mask: np.ndarray
    x_tab: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)

    @property
    def n_tokens(self):
        return self.mask.sum(axis=1)

    def subset(self, idx):
        return ExampleSet(self.ids[idx], self.mask[idx], self.x_tab[idx], self.y[idx])


@dataclass
class SplitDataset:
    train: ExampleSet
    validation: ExampleSet
    test: ExampleSet

    def parts(self):
        return {"train": self.train, "validation": self.validation, "test": self.test}


def split_sizes(n):
    """70/15/15 with the validation share floored and the remainder going to test."""
    n_train = n * 70 // 100
    n_val = n * 15 // 100
    return n_train, n_val, n - n_train - n_val


def split_indices(n, seed):
    order = np.random.default_rng(seed).permutation(n)
    a, b, _ = split_sizes(n)
    return order[:a], order[a : a + b], order[a + b :]


def split(examples, seed):
    tr, va, te = split_indices(len(examples), seed)
    return SplitDataset(examples.subset(tr), examples.subset(va), examples.subset(te))


def token_strata(n_tokens, k=5):
    """Index arrays of k near-equal strata by ascending token count (stable sort)."""
    order = np.argsort(np.asarray(n_tokens), kind="stable")
    return np.array_split(order, k)


def strata_summary(n_tokens, k=5, y=None, y_hat=None):
    """Per-stratum size, mean token count and, given predictions, RMSE."""
    n_tokens = np.asarray(n_tokens)
    rows = []
    for s, idx in enumerate(token_strata(n_tokens, k)):
        row = {"stratum": s + 1, "n": len(idx), "mean_tokens": float(n_tokens[idx].mean()) if len(idx) else float("nan")}
        if y is not None and y_hat is not None:
            d = np.asarray(y)[idx] - np.asarray(y_hat)[idx]
            row["rmse"] = float(np.sqrt(np.mean(d * d))) if len(idx) else float("nan")
        rows.append(row)
    return rows


# -- ingestion ---------------------------------------------------------------------------


class IngestError(RuntimeError):
    pass


def _read_jsonl(path, max_bad_fraction=0.01):
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    rows, bad, total = [], 0, 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            total += 1
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError:
                bad += 1
    if total and bad / total > max_bad_fraction:
        raise IngestError(f"{path}: {bad} of {total} lines are malformed JSON")
    if bad:
        log.warning("%s: skipped %d malformed lines", path, bad)
    return rows, bad


def _csv_count(value):
    if not value or value == "None":
        return 0
    if isinstance(value, list):
        return len(value)
    return sum(1 for part in str(value).split(",") if part.strip())


def _categories(value):
    if not value:
        return frozenset()
    if isinstance(value, list):
        return frozenset(value)
    return frozenset(c.strip() for c in value.split(",") if c.strip())


def load_yelp(review_path, user_path, business_path):
    """Join the three Yelp JSON-lines files into :class:`ReviewRecord` objects.

    Reviews whose user or business is unknown are dropped. Returns
    ``(records, stats)``.
    """
    users, bad_u = _read_jsonl(user_path)
    businesses, bad_b = _read_jsonl(business_path)
    reviews, bad_r = _read_jsonl(review_path)
    umap = {u["user_id"]: u for u in users if "user_id" in u}
    bmap = {b["business_id"]: b for b in businesses if "business_id" in b}
    records, orphans = [], 0
    for r in reviews:
        u, b = umap.get(r.get("user_id")), bmap.get(r.get("business_id"))
        if u is None or b is None:
            orphans += 1
            continue
        records.append(
            ReviewRecord(
                user_id=r["user_id"],
                business_id=r["business_id"],
                stars=int(r["stars"]),
                date=parse_date(r["date"]),
                text=r.get("text", ""),
                useful=int(r.get("useful", 0)),
                funny=int(r.get("funny", 0)),
                cool=int(r.get("cool", 0)),
                n_friends=_csv_count(u.get("friends")),
                n_fans=int(u.get("fans", 0)),
                n_elites=_csv_count(u.get("elite")),
                hours=b.get("hours") or {},
                categories=_categories(b.get("categories")),
            )
        )
    stats = {"malformed": bad_u + bad_b + bad_r, "orphans": orphans, "records": len(records)}
    return records, stats


def records_to_yelp(records):
    """Inverse of :func:`load_yelp`: three lists of JSON-ready dicts."""
    reviews, users, businesses = [], {}, {}
    for i, r in enumerate(records):
        reviews.append(
            {
                "review_id": f"r{i:07d}",
                "user_id": r.user_id,
                "business_id": r.business_id,
                "stars": r.stars,
                "useful": r.useful,
                "funny": r.funny,
                "cool": r.cool,
                "text": r.text,
                "date": r.date.strftime("%Y-%m-%d %H:%M:%S"),
            }
        )
        users.setdefault(
            r.user_id,
            {
                "user_id": r.user_id,
                "friends": ", ".join(f"f{j}" for j in range(r.n_friends)) or "None",
                "fans": r.n_fans,
                "elite": ",".join(str(2010 + j) for j in range(r.n_elites)),
            },
        )
        businesses.setdefault(
            r.business_id,
            {
                "business_id": r.business_id,
                "categories": ", ".join(sorted(r.categories)),
                "hours": dict(r.hours) or None,
            },
        )
    return reviews, list(users.values()), list(businesses.values())


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


@dataclass
class Dataset:
    splits: SplitDataset
    vocab: Vocabulary
    meta: dict


def build_dataset(
    records,
    category="restaurants",
    n=10000,
    seed=0,
    len_max=64,
    vocab_size=2000,
    normalize_counts=True,
    year=2018,
):
    """Run the full pipeline from records to a tokenized, split dataset."""
    recs = filter_category(records, category)
    if year is not None:
        recs = [r for r in recs if r.date.year == year]
    recs = [r for r in recs if has_english_word(r.text)]
    recs = dedup_latest(recs)
    if not recs:
        raise IngestError("no records survive filtering")
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.permutation(len(recs))[: min(n, len(recs))])
    recs = [recs[i] for i in pick]
    texts = [preprocess_text(r.text) for r in recs]
    tr, va, te = split_indices(len(recs), seed)
    vocab = build_vocab([texts[i] for i in tr], vocab_size)
    seqs = [tokenize_fixed(vocab, t, len_max) for t in texts]
    ids = np.stack([s.ids for s in seqs])
    mask = np.stack([s.mask for s in seqs])
    x_raw = np.stack([derive_tabular(r) for r in recs])
    y = np.array([normalize_rating(r.stars) for r in recs])
    scaler = CountScaler.fit(x_raw[tr])
    x_tab = scaler.transform(x_raw) if normalize_counts else x_raw
    full = ExampleSet(ids, mask, x_tab, y)
    splits = SplitDataset(full.subset(tr), full.subset(va), full.subset(te))
    meta = {
        "category": category,
        "n": len(recs),
        "seed": seed,
        "len_max": len_max,
        "vocab_size": len(vocab),
        "normalize_counts": normalize_counts,
        "year": year,
        "count_min": scaler.lo.tolist(),
        "count_max": scaler.hi.tolist(),
    }
    return Dataset(splits, vocab, meta)


# -- dataset files ------------------------------------------------------------------------


def save_dataset(ds, directory):
    """``dataset.csv`` (split, ids, 15 features, y), ``vocab.txt`` and ``meta.json``."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "dataset.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "ids", *FEATURES, "y"])
        for name, part in ds.splits.parts().items():
            for i in range(len(part)):
                real = part.ids[i][part.mask[i].astype(bool)]
                w.writerow([name, "|".join(str(int(t)) for t in real), *(repr(float(v)) for v in part.x_tab[i]), repr(float(part.y[i]))])
    ds.vocab.save(os.path.join(directory, "vocab.txt"))
    with open(os.path.join(directory, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(ds.meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(directory):
    with open(os.path.join(directory, "meta.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    vocab = Vocabulary.load(os.path.join(directory, "vocab.txt"))
    len_max = meta["len_max"]
    rows = {"train": [], "validation": [], "test": []}
    with open(os.path.join(directory, "dataset.csv"), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["split", "ids"] or header[-1] != "y":
            raise IngestError(f"{directory}: unexpected dataset header")
        for row in reader:
            rows[row[0]].append(row)

    def build(part_rows):
        n = len(part_rows)
        ids = np.full((n, len_max), PAD, dtype=np.int64)
        mask = np.zeros((n, len_max), dtype=np.uint8)
        x = np.zeros((n, len(FEATURES)))
        y = np.zeros(n)
        for i, row in enumerate(part_rows):
            toks = [int(t) for t in row[1].split("|")] if row[1] else []
            ids[i, : len(toks)] = toks
            mask[i, : len(toks)] = 1
            x[i] = [float(v) for v in row[2:-1]]
            y[i] = float(row[-1])
        return ExampleSet(ids, mask, x, y)

    splits = SplitDataset(build(rows["train"]), build(rows["validation"]), build(rows["test"]))
    return Dataset(splits, vocab, meta)
