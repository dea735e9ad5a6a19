"""Time the native kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Shapes are those of a tiny-preset training step (batch 256, 15 tabular
queries, 64 text positions, d_model 64, 8 fusion heads).
"""
import argparse
import timeit

import numpy as np

from ctxfusion import kernels


def cases(rng):
    rows_ln = 256 * 15
    x_ln = rng.normal(size=(rows_ln, 64))
    gain, shift = rng.normal(size=64), rng.normal(size=64)
    scores = rng.normal(size=(256 * 8 * 15, 64))
    mask = (rng.uniform(size=(256, 64)) < 0.6).astype(np.uint8)
    mask[:, 0] = 1
    n_param = 53_523
    theta, g = rng.normal(size=n_param), rng.normal(size=n_param)

    def ln_fwd(k):
        return lambda: k.layer_norm_fwd(x_ln, gain, shift, 1e-5)

    def ln_bwd(k):
        _, xhat, rstd = k.layer_norm_fwd(x_ln, gain, shift, 1e-5)
        return lambda: k.layer_norm_bwd(x_ln, xhat, rstd, gain)

    def sm_fwd(k):
        return lambda: k.softmax_fwd(scores, mask, 8 * 15)

    def sm_bwd(k):
        y = k.softmax_fwd(scores, mask, 8 * 15)
        return lambda: k.softmax_bwd(scores, y)

    def opt(kind):
        def make(k):
            m, v = np.zeros(n_param), np.zeros(n_param)
            th = theta.copy()
            fn = getattr(k, f"{kind}_update")
            return lambda: fn(th, g, m, v, 0.001, 0.9, 0.999, 1e-8, 1)

        return make

    return {
        "layer_norm_fwd (3840x64)": ln_fwd,
        "layer_norm_bwd (3840x64)": ln_bwd,
        "softmax_fwd masked (30720x64)": sm_fwd,
        "softmax_bwd (30720x64)": sm_bwd,
        "adam_update (53k)": opt("adam"),
        "nadam_update (53k)": opt("nadam"),
        "adamax_update (53k)": opt("adamax"),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = kernels.available()
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, make in cases(rng).items():
        times = []
        for b in backends:
            fn = make(kernels.get(b))
            fn()
            times.append(min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e3)
        line = f"{name:34s}" + "".join(f"{t:10.3f}ms" for t in times)
        if len(times) > 1:
            line += f"{times[0] / times[1]:11.2f}x"
        print(line)


if __name__ == "__main__":
    main()
