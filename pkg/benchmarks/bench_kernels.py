#!/usr/bin/env python3
"""Benchmark the numba kernel lane against the pure-numpy fallback.

Times the four hot kernels at training-representative shapes and prints a
table with the speedup, plus one end-to-end VAE training step per lane.
The active lane in normal runs is picked by RGBX_KERNELS (auto|numba|numpy).

Usage: python benchmarks/bench_kernels.py [--repeats 30]
"""

import argparse
import time

import numpy as np

from rgbx.kernels import numpy_impl

try:
    from rgbx.kernels import numba_impl
except ImportError:
    numba_impl = None


def timeit(fn, repeats):
    fn()  # warm up (and jit-compile on the numba lane)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1000.0


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    cases = []

    for shape, k, s, p in [
        ((16, 32, 32, 32), 3, 1, 1),
        ((16, 64, 16, 16), 3, 1, 1),
        ((8, 128, 8, 8), 3, 1, 1),
        ((16, 32, 32, 32), 3, 2, 1),
    ]:
        x = rng.standard_normal(shape).astype(np.float32)
        cols = numpy_impl.im2col(x, k, s, p)
        label = f"{shape} k{k}s{s}"
        cases.append((f"im2col {label}", lambda m, x=x, k=k, s=s, p=p: m.im2col(x, k, s, p)))
        cases.append(
            (f"col2im {label}",
             lambda m, c=cols, sh=shape, k=k, s=s, p=p: m.col2im(c, sh, k, s, p))
        )

    blur_in = rng.standard_normal((8, 3, 64, 64)).astype(np.float32)
    cases.append(("blur5 (8,3,64,64)", lambda m: m.blur5(blur_in)))

    pdata = rng.standard_normal(500_000).astype(np.float32)
    gdata = rng.standard_normal(500_000).astype(np.float32)

    def adam_case(m):
        p = pdata.copy()
        mom = np.zeros_like(p)
        vel = np.zeros_like(p)
        dt = p.dtype.type
        m.adam_update(p, gdata, mom, vel, dt(1e-4), dt(0.9), dt(0.999), dt(1e-8),
                      dt(1 - 0.9), dt(1 - 0.999))

    cases.append(("adam_update 500k", adam_case))

    print(f"{'kernel':<34}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    print("-" * 63)
    for name, fn in cases:
        t_np = timeit(lambda: fn(numpy_impl), repeats)
        if numba_impl is not None:
            t_nb = timeit(lambda: fn(numba_impl), repeats)
            print(f"{name:<34}{t_np:>10.3f}{t_nb:>10.3f}{t_np / t_nb:>8.2f}x")
        else:
            print(f"{name:<34}{t_np:>10.3f}{'n/a':>10}{'':>9}")


def bench_train_step(repeats):
    from rgbx import kernels
    from rgbx.config import RunConfig
    from rgbx.optim import Adam
    from rgbx.scenes import make_records
    from rgbx.train import stack_modalities, vae_config_from_run
    from rgbx.vae import DPVAE, dp_vae_loss_terms, make_extractors

    cfg = RunConfig({
        "data.canvas": 32, "vae.stem_width": 16, "vae.widths": (16, 24, 32),
        "vae.z_channels": 4, "vae.batch_size": 16,
    })
    records = list(make_records(0, 16, canvas=32, modalities=("rgb", "depth")))
    arrays = stack_modalities(records, ("rgb", "depth"))
    lanes = ["numpy"] + (["numba"] if numba_impl is not None else [])
    print(f"\n{'VAE train step (batch 16, 32px)':<34}", end="")
    results = []
    for lane in lanes:
        kernels.set_backend(lane)
        vcfg = vae_config_from_run(cfg)
        vae = DPVAE(vcfg, np.random.default_rng(0))
        ex = make_extractors(vcfg.modalities)
        opt = Adam(dict(vae.named_parameters()), lr=1e-4)

        def step():
            dist = vae.encode(None, batched=arrays)
            recon = vae.decode_tensors(dist.mu)
            targets = {t: a for t, a in zip(vcfg.modalities, arrays)}
            terms = dp_vae_loss_terms(targets, recon, dist, ex)
            vae.zero_grad()
            terms["total"].backward()
            opt.step()

        results.append(timeit(step, max(repeats // 5, 3)))
    kernels.set_backend("auto")
    if len(results) == 2:
        print(f"{results[0]:>10.1f}{results[1]:>10.1f}{results[0] / results[1]:>8.2f}x")
    else:
        print(f"{results[0]:>10.1f}{'n/a':>10}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()
    if numba_impl is None:
        print("numba unavailable: showing the numpy lane only\n")
    bench_kernels(args.repeats)
    bench_train_step(args.repeats)


if __name__ == "__main__":
    main()
