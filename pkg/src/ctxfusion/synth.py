"""Synthetic Yelp-like corpus with a planted text x tabular interaction.

For each review the latent score is::

    s = (n_pos - n_neg) / (n_pos + n_neg)                 # sentiment words in the text
    e = n_elites / 10                                     # reviewer profile
    h = weekly opening hours / 168                        # venue
    z = 0.5 + 0.25 * s * (0.25 + 1.5 * e) + 0.4 * (h - 0.4)
    stars = 1 + round(4 * clip(z + sigma * N(0, 1), 0, 1))

The text carries ``s`` but not ``e``; the tabular features carry ``e`` and
``h`` but not ``s``. Only a model reading both can recover the rating.
"""
from __future__ import annotations

from datetime import datetime, timedelta

import numpy as np

from .data import DAYS, ReviewRecord, day_hours

POSITIVE = (
    "delicious", "amazing", "friendly", "fresh", "wonderful", "excellent",
    "tasty", "lovely", "perfect", "great", "awesome", "fantastic",
)
NEGATIVE = (
    "bland", "rude", "stale", "awful", "terrible", "cold",
    "greasy", "slow", "dirty", "horrible", "overpriced", "disappointing",
)
NEUTRAL = (
    "the", "a", "we", "i", "ordered", "table", "menu", "waiter", "dinner", "lunch",
    "place", "food", "came", "with", "and", "our", "was", "were", "it", "they",
    "service", "drinks", "pasta", "burger", "salad", "soup", "dessert", "coffee",
    "friends", "family", "evening", "night", "weekend", "visit", "again", "here",
    "seat", "kitchen", "portion", "plate", "sauce", "bread", "wine", "beer",
    "parking", "downtown", "street", "corner", "wait", "minutes",
)

START = datetime(2018, 1, 1)


def latent_score(s, n_elites, weekly_hours):
    e = n_elites / 10.0
    h = weekly_hours / 168.0
    return 0.5 + 0.25 * s * (0.25 + 1.5 * e) + 0.4 * (h - 0.4)


def stars_from_score(z):
    return 1 + int(np.rint(4.0 * min(max(z, 0.0), 1.0)))


def _hours(rng):
    days = rng.choice(7, size=rng.integers(4, 8), replace=False)
    hours = {}
    for d in sorted(days):
        open_h = int(rng.integers(6, 13))
        span = int(rng.integers(6, 17))
        close_h = (open_h + span) % 24
        hours[DAYS[d]] = f"{open_h}:0-{close_h}:0"
    return hours


def _text(rng, n_pos, n_neg):
    words = list(rng.choice(POSITIVE, n_pos)) + list(rng.choice(NEGATIVE, n_neg))
    words += list(rng.choice(NEUTRAL, int(rng.integers(3, 41))))
    rng.shuffle(words)
    out = []
    for i, w in enumerate(words):
        out.append(w)
        if i % 9 == 8 and i != len(words) - 1:
            out[-1] += "."
    return " ".join(out) + "."


def synth_generate(n, seed=0, sigma=0.05, n_businesses=None):
    """``n`` :class:`ReviewRecord` objects, all tagged Restaurants in 2018.

    Every review has a distinct user, so dedup keeps all of them.
    """
    rng = np.random.default_rng(seed)
    n_businesses = n_businesses or max(1, n // 5)
    venues = [(f"b{j:06d}", _hours(rng)) for j in range(n_businesses)]
    records = []
    for i in range(n):
        bid, hours = venues[int(rng.integers(n_businesses))]
        k = int(rng.integers(1, 7))
        n_pos = int(rng.binomial(k, rng.uniform()))
        n_neg = k - n_pos
        s = (n_pos - n_neg) / k
        n_elites = int(rng.integers(0, 11))
        rec = ReviewRecord(
            user_id=f"u{i:07d}",
            business_id=bid,
            stars=1,
            date=START + timedelta(minutes=int(rng.integers(0, 365 * 24 * 60))),
            text=_text(rng, n_pos, n_neg),
            useful=int(rng.poisson(1.5)),
            funny=int(rng.poisson(0.5)),
            cool=int(rng.poisson(0.8)),
            n_friends=int(rng.poisson(40)),
            n_fans=int(rng.poisson(3)),
            n_elites=n_elites,
            hours=hours,
            categories={"Restaurants"},
        )
        weekly = sum(day_hours(hours.get(d)) for d in DAYS)
        z = latent_score(s, n_elites, weekly)
        noise = sigma * rng.standard_normal()
        rec.stars = stars_from_score(z + noise)
        records.append(rec)
    return records
