import numpy as np
import pytest

from ctxfusion import kernels

pytestmark = pytest.mark.skipif("native" not in kernels.available(), reason="native kernels not built")

N, C = kernels.get("numpy"), (kernels.get("native") if "native" in kernels.available() else None)


def close(a, b):
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_layer_norm_agrees(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(13, 7)) * rng.uniform(0.1, 10)
    gain, shift = rng.normal(size=7), rng.normal(size=7)
    outs = [k.layer_norm_fwd(x, gain, shift, 1e-5) for k in (N, C)]
    for a, b in zip(*outs):
        close(a, b)
    g = rng.normal(size=x.shape)
    _, xhat, rstd = outs[0]
    for a, b in zip(N.layer_norm_bwd(g, xhat, rstd, gain), C.layer_norm_bwd(g, xhat, rstd, gain)):
        close(a, b)


@pytest.mark.parametrize("seed", range(5))
def test_softmax_agrees(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(12, 9)) * 20
    close(N.softmax_fwd(x), C.softmax_fwd(x))
    mask = (rng.uniform(size=(3, 9)) < 0.5).astype(np.uint8)
    mask[2] = 0  # fully masked rows give zeros in both
    a, b = N.softmax_fwd(x, mask, 4), C.softmax_fwd(x, mask, 4)
    close(a, b)
    assert np.all(a[8:] == 0.0) and np.all(b[8:] == 0.0)
    g = rng.normal(size=x.shape)
    close(N.softmax_bwd(g, a), C.softmax_bwd(g, a))


@pytest.mark.parametrize("kind", ["adam", "nadam", "adamax"])
def test_optimizer_updates_agree(kind):
    rng = np.random.default_rng(7)
    theta = rng.normal(size=50)
    states = [[theta.copy(), np.zeros(50), np.zeros(50)] for _ in range(2)]
    for t in range(1, 30):
        g = rng.normal(size=50)
        for k, (th, m, v) in zip((N, C), states):
            getattr(k, f"{kind}_update")(th, g, m, v, 0.01, 0.9, 0.999, 1e-8, t)
    for a, b in zip(*states):
        close(a, b)


def test_backend_switching():
    previous = kernels.use("numpy")
    try:
        assert kernels.active.NAME == "numpy"
        kernels.use("native")
        assert kernels.active.NAME == "native"
    finally:
        kernels.use(previous)
    with pytest.raises(ValueError):
        kernels.get("fortran")
