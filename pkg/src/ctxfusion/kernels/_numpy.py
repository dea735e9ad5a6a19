"""Pure-numpy kernels. Reference behaviour for the native extension."""
import numpy as np

NAME = "numpy"


def layer_norm_fwd(x, gain, shift, eps):
    """Row-wise layer norm of a 2-D array.

    Returns ``(out, xhat, rstd)``; the last two are saved for the backward pass.
    """
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gain + shift, xhat, rstd[:, 0]


def layer_norm_bwd(gout, xhat, rstd, gain):
    gxhat = gout * gain
    d = xhat.shape[1]
    a = gxhat.sum(axis=1, keepdims=True) / d
    b = (gxhat * xhat).sum(axis=1, keepdims=True) / d
    gx = rstd[:, None] * (gxhat - a - xhat * b)
    return gx, (gout * xhat).sum(axis=0), gout.sum(axis=0)


def softmax_fwd(x, mask=None, rows_per_mask=1):
    """Softmax over the last axis of a 2-D array.

    ``mask`` is an optional uint8 array of shape ``(rows // rows_per_mask, cols)``;
    zero entries get weight exactly 0. A fully masked row yields zeros.
    """
    if mask is None:
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)
    keep = np.repeat(mask.astype(bool), rows_per_mask, axis=0)
    z = np.where(keep, x, -np.inf)
    mx = z.max(axis=1, keepdims=True)
    mx[~np.isfinite(mx)] = 0.0
    e = np.where(keep, np.exp(z - mx), 0.0)
    s = e.sum(axis=1, keepdims=True)
    s[s == 0.0] = 1.0
    return e / s


def softmax_bwd(gy, y):
    return y * (gy - (gy * y).sum(axis=1, keepdims=True))


def adam_update(theta, g, m, v, lr, b1, b2, eps, t):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    mhat = m / (1.0 - b1**t)
    vhat = v / (1.0 - b2**t)
    theta -= lr * mhat / (np.sqrt(vhat) + eps)


def nadam_update(theta, g, m, v, lr, b1, b2, eps, t):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    mbar = b1 * m / (1.0 - b1 ** (t + 1)) + (1.0 - b1) * g / (1.0 - b1**t)
    vhat = v / (1.0 - b2**t)
    theta -= lr * mbar / (np.sqrt(vhat) + eps)


def adamax_update(theta, g, m, u, lr, b1, b2, eps, t):
    m *= b1
    m += (1.0 - b1) * g
    np.maximum(b2 * u, np.abs(g), out=u)
    theta -= (lr / (1.0 - b1**t)) * m / np.maximum(u, eps)
