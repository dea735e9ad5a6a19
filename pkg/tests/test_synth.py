import numpy as np

from ctxfusion.data import DAYS, build_dataset, day_hours, dedup_latest
from ctxfusion.models import fit_linear_regression, predict_linear
from ctxfusion.synth import NEGATIVE, POSITIVE, latent_score, stars_from_score, synth_generate


def sentiment(text):
    words = [w.strip(".") for w in text.split()]
    pos = sum(w in POSITIVE for w in words)
    neg = sum(w in NEGATIVE for w in words)
    return (pos - neg) / (pos + neg)


def test_same_seed_same_corpus():
    assert synth_generate(40, seed=3) == synth_generate(40, seed=3)
    assert synth_generate(40, seed=3) != synth_generate(40, seed=4)


def test_noise_free_rating_is_function_of_planted_factors():
    for r in synth_generate(200, seed=1, sigma=0.0):
        weekly = sum(day_hours(r.hours.get(d)) for d in DAYS)
        assert r.stars == stars_from_score(latent_score(sentiment(r.text), r.n_elites, weekly))


def test_every_review_survives_dedup():
    records = synth_generate(100, seed=0)
    assert len(dedup_latest(records)) == 100
    assert all(r.date.year == 2018 and "Restaurants" in r.categories for r in records)


def test_tabular_alone_cannot_explain_noise_free_ratings():
    ds = build_dataset(synth_generate(600, seed=2, sigma=0.0), n=600, seed=2, len_max=16)
    tr = ds.splits.train
    resid = tr.y - predict_linear(fit_linear_regression(tr.x_tab, tr.y), tr.x_tab)
    assert np.sqrt(np.mean(resid**2)) > 0.05


def test_stars_cover_the_scale():
    stars = {r.stars for r in synth_generate(2000, seed=0)}
    assert stars == {1, 2, 3, 4, 5}
