import json
from datetime import datetime

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxfusion.data import (
    DAYS,
    FEATURES,
    CountScaler,
    IngestError,
    ReviewRecord,
    build_dataset,
    day_hours,
    dedup_latest,
    derive_tabular,
    filter_category,
    has_english_word,
    in_category,
    load_dataset,
    load_yelp,
    normalize_rating,
    preprocess_text,
    records_to_yelp,
    save_dataset,
    split_indices,
    split_sizes,
    strata_summary,
    token_strata,
    write_jsonl,
)
from ctxfusion.synth import synth_generate


def rec(user="u", biz="b", date="2018-05-01", stars=3, text="ok", **kw):
    return ReviewRecord(user_id=user, business_id=biz, stars=stars, date=date, text=text, **kw)


def test_feature_order():
    assert FEATURES[:2] == ("open_dow", "open_hours") and len(FEATURES) == 15
    assert FEATURES[9:] == ("n_friends", "n_fans", "n_elites", "n_useful", "n_funny", "n_cool")


def test_category_rules():
    assert not in_category({"Restaurants", "Bar"}, "restaurants")
    assert not in_category({"Restaurants", "Bar"}, "nightlife")
    assert in_category({"Restaurants", "Nightlife"}, "nightlife")
    assert not in_category({"Restaurants", "Nightlife"}, "restaurants")
    assert not in_category({"Cafes"}, "cafe")
    assert in_category({"Cafes", "Coffee and Tea"}, "cafe")
    assert not in_category({"Cafes", "Coffee and Tea", "Food Truck"}, "cafe")
    with pytest.raises(ValueError):
        filter_category([], "bars")


def test_dedup_rules():
    a = rec(date="2018-01-01", text="old")
    b = rec(date="2018-02-01", text="new")
    assert [r.text for r in dedup_latest([b, a])] == ["new"]
    assert len(dedup_latest([rec(biz="x"), rec(biz="y")])) == 2
    tie = dedup_latest([rec(text="first"), rec(text="second")])
    assert [r.text for r in tie] == ["second"]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("uvw"), st.sampled_from("bc"), st.integers(1, 5)), max_size=20))
def test_dedup_idempotent(rows):
    records = [rec(user=u, biz=b, date=f"2018-01-0{d}", text=str(i)) for i, (u, b, d) in enumerate(rows)]
    once = dedup_latest(records)
    assert dedup_latest(once) == once
    assert len({(r.user_id, r.business_id) for r in once}) == len(once)


def test_preprocess_examples():
    assert preprocess_text("Nice\n\nfood..") == "Nice.food."
    assert preprocess_text("Great \U0001F600\U0001F600 place") == "Great. place"
    assert preprocess_text("plain text") == "plain text"


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=60))
def test_preprocess_idempotent(s):
    once = preprocess_text(s)
    assert preprocess_text(once) == once


def test_english_word_filter():
    assert has_english_word("ok 123") and not has_english_word("123 !!")


def test_hours():
    assert day_hours("9:0-17:0") == 8.0
    assert day_hours("22:0-2:0") == 4.0
    assert day_hours("0:0-0:0") == 24.0
    assert day_hours(None) == 0.0


def test_tabular_features():
    week = {d: "9:0-17:0" for d in DAYS}
    x = derive_tabular(rec(hours=week, n_friends=3))
    assert x[0] == 1.0 and x[1] == pytest.approx(56 / 168)
    assert x[2] == pytest.approx(8 / 24) and x[2] == pytest.approx(0.3333, abs=1e-4)
    assert x[9] == 3.0
    assert np.all(derive_tabular(rec())[:9] == 0.0)


def test_count_scaler_uses_train_extrema():
    train = np.zeros((3, 15))
    train[:, 9] = [2, 4, 6]
    s = CountScaler.fit(train)
    other = np.zeros((2, 15))
    other[:, 9] = [5, 100]
    np.testing.assert_allclose(s.transform(other)[:, 9], [0.75, 1.0])


def test_normalize_rating():
    assert [normalize_rating(s) for s in range(1, 6)] == [0.0, 0.25, 0.5, 0.75, 1.0]
    for bad in (0, 6, 2.5, True, "3"):
        with pytest.raises(ValueError):
            normalize_rating(bad)


def test_split_sizes():
    assert split_sizes(10_000) == (7_000, 1_500, 1_500)
    assert split_sizes(10) == (7, 1, 2)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 500), st.integers(0, 2**31))
def test_splits_partition(n, seed):
    parts = split_indices(n, seed)
    joined = np.concatenate(parts)
    assert sorted(joined.tolist()) == list(range(n))
    assert tuple(len(p) for p in parts) == split_sizes(n)
    assert all(np.array_equal(a, b) for a, b in zip(parts, split_indices(n, seed)))


def test_strata_examples():
    groups = token_strata(np.arange(1, 11), 5)
    assert [sorted((g + 1).tolist()) for g in groups] == [[1, 2], [3, 4], [5, 6], [7, 8], [9, 10]]
    assert [r["mean_tokens"] for r in strata_summary(np.arange(1, 11), 5)] == [1.5, 3.5, 5.5, 7.5, 9.5]
    same = token_strata(np.full(7, 4), 5)
    assert [g.tolist() for g in same] == [g.tolist() for g in token_strata(np.full(7, 4), 5)]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 50), min_size=1, max_size=60), st.integers(1, 6))
def test_strata_partition(counts, k):
    groups = token_strata(np.array(counts), k)
    sizes = [len(g) for g in groups]
    assert max(sizes) - min(sizes) <= 1
    assert sorted(np.concatenate(groups).tolist()) == list(range(len(counts)))


def test_strata_rmse():
    rows = strata_summary([1, 2, 3, 4], 2, y=[0, 0, 1, 1], y_hat=[0, 0, 0, 0])
    assert [r["rmse"] for r in rows] == [0.0, 1.0]


# -- ingestion ----------------------------------------------------------------------------


def write_yelp(tmp_path, records):
    for name, rows in zip(("review", "user", "business"), records_to_yelp(records)):
        write_jsonl(tmp_path / f"{name}.json", rows)
    return [tmp_path / f"{n}.json" for n in ("review", "user", "business")]


def test_yelp_round_trip(tmp_path):
    records = synth_generate(30, seed=2)
    back, stats = load_yelp(*write_yelp(tmp_path, records))
    assert stats == {"malformed": 0, "orphans": 0, "records": 30}
    for a, b in zip(records, back):
        assert (a.user_id, a.stars, a.text, a.n_friends, a.n_elites, a.hours, a.categories) == (
            b.user_id, b.stars, b.text, b.n_friends, b.n_elites, b.hours, b.categories)


def test_malformed_lines(tmp_path):
    paths = write_yelp(tmp_path, synth_generate(300, seed=1))
    lines = paths[0].read_text().splitlines()
    paths[0].write_text("\n".join(lines + ["{broken"]) + "\n")
    _, stats = load_yelp(*paths)
    assert stats["malformed"] == 1
    paths[0].write_text("\n".join(lines + ["{broken"] * 10) + "\n")
    with pytest.raises(IngestError):
        load_yelp(*paths)
    with pytest.raises(FileNotFoundError):
        load_yelp(tmp_path / "missing.json", *paths[1:])


def test_orphan_reviews_dropped(tmp_path):
    paths = write_yelp(tmp_path, synth_generate(10, seed=1))
    with open(paths[0], "a") as fh:
        fh.write(json.dumps({"user_id": "ghost", "business_id": "b000000", "stars": 3, "date": "2018-01-01", "text": "x"}) + "\n")
    records, stats = load_yelp(*paths)
    assert stats["orphans"] == 1 and len(records) == 10


def test_build_dataset_pipeline():
    records = synth_generate(50, seed=0)
    records.append(rec(user="late", biz="b000001", date=datetime(2017, 3, 1), categories={"Restaurants"}))
    records.append(rec(user="bar", biz="b000001", categories={"Restaurants", "Bar"}))
    records.append(rec(user="digits", biz="b000001", text="1234", categories={"Restaurants"}))
    ds = build_dataset(records, n=1000, seed=0, len_max=16, vocab_size=100)
    assert ds.meta["n"] == 50
    sizes = tuple(len(p) for p in ds.splits.parts().values())
    assert sizes == split_sizes(50)
    for part in ds.splits.parts().values():
        assert part.ids.shape == (len(part), 16) and np.all(part.ids[:, 0] == 2)
        assert np.all((part.x_tab >= 0) & (part.x_tab <= 1)) and np.all((part.y >= 0) & (part.y <= 1))


def test_raw_count_mode():
    ds = build_dataset(synth_generate(60, seed=0), n=60, len_max=16, normalize_counts=False)
    assert ds.splits.train.x_tab[:, 9].max() > 1


def test_no_survivors():
    with pytest.raises(IngestError):
        build_dataset([rec(categories={"Bar"})], n=10)


def test_dataset_files_round_trip(tmp_path, small_dataset):
    save_dataset(small_dataset, tmp_path)
    back = load_dataset(tmp_path)
    assert back.meta == small_dataset.meta and back.vocab.tokens == small_dataset.vocab.tokens
    for name, part in small_dataset.splits.parts().items():
        other = back.splits.parts()[name]
        for field in ("ids", "mask", "x_tab", "y"):
            assert np.array_equal(getattr(part, field), getattr(other, field)), (name, field)
    header = (tmp_path / "dataset.csv").read_text().splitlines()[0].split(",")
    assert header == ["split", "ids", *FEATURES, "y"]
