"""Time the compiled likelihood kernels against their numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--size 20000] [--repeat 20]

Sizes mirror the sampler's workload: one call evaluates every Beta-Binomial
term of a corpus (a few thousand per hundred surveys) or every overall
observation's mixed relative means.  Also times one full sampler sweep under
each backend, which is what matters end to end.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from fuelmix import _pykernels
from fuelmix.hierarchy import FuelHierarchy

try:
    from fuelmix import _ckernels
except ImportError:
    _ckernels = None


def kernel_inputs(m, rng):
    n = rng.integers(0, 100001, m).astype(float)
    v = np.floor(rng.uniform(0, 1, m) * (n + 1))
    nu = rng.uniform(0.001, 0.999, m)
    phi = np.exp(rng.uniform(0, 8, m))
    rho = rng.uniform(0.5, 1, m)
    group = rng.integers(0, max(1, m // 10), m).astype(np.int64)
    return v, n, nu, phi, rho, group


def mix_inputs(rows, rng):
    h = FuelHierarchy.default()
    nu_u = rng.uniform(0.01, 0.99, (rows, h.S))
    nu_r = rng.uniform(0.01, 0.99, (rows, h.S))
    pi = rng.uniform(0, 1, rows)
    tier_k = np.array([t.k for t in h.tiers], dtype=np.int64)
    tier_parent = np.array([-1 if t.parent is None else h.node_index[t.parent]
                            for t in h.tiers], dtype=np.int64)
    nu_idx = np.array([h.nu_index[c] for t in h.tiers for c in t.children[:-1]], dtype=np.int64)
    node_idx = np.array([h.node_index[c] for t in h.tiers for c in t.children], dtype=np.int64)
    return nu_u, nu_r, pi, tier_k, tier_parent, nu_idx, node_idx


def bench(impl, size, repeat, rng):
    v, n, nu, phi, rho, group = kernel_inputs(size, rng)
    lch = impl.log_choose(n, v)
    out = np.empty(size)
    old = np.zeros(size)
    delta = np.zeros(group.max() + 1)
    mix = mix_inputs(size // 10, rng)
    mix_out = np.empty_like(mix[0])
    calls = {
        "log_choose": lambda: impl.log_choose(n, v),
        "bb_mix_logpmf": lambda: impl.bb_mix_logpmf(v, n, lch, nu, phi, rho, out, 1e-12),
        "bb_mix_delta": lambda: impl.bb_mix_delta(v, n, lch, nu, phi, rho, old, group, out,
                                                  delta, 1e-12),
        "mix_relative": lambda: impl.mix_relative(*mix, 1e-12, mix_out),
    }
    return {k: min(timeit.repeat(f, number=1, repeat=repeat)) for k, f in calls.items()}


SWEEP = """
import time, numpy as np
from fuelmix import kernels
from fuelmix.synth import synthesize_corpus
from fuelmix.model import FuelModel
from fuelmix.config import McmcConfig
from fuelmix.mcmc import FuelSampler
corpus = synthesize_corpus(np.random.default_rng(3))
model = FuelModel(corpus.records, corpus.un_urban, corpus.regions)
s = FuelSampler(model, McmcConfig(), np.random.default_rng(0))
s.sweep()
t = time.perf_counter()
for _ in range({sweeps}):
    s.sweep()
print(kernels.BACKEND, (time.perf_counter() - t) / {sweeps})
"""


def sweep_time(pure, sweeps):
    env = dict(os.environ)
    if pure:
        env["FUELMIX_PURE_PYTHON"] = "1"
    else:
        env.pop("FUELMIX_PURE_PYTHON", None)
    res = subprocess.run([sys.executable, "-c", SWEEP.format(sweeps=sweeps)], env=env,
                         capture_output=True, text=True, check=True)
    backend, secs = res.stdout.split()
    return backend, float(secs)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--size", type=int, default=20000)
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--sweeps", type=int, default=50)
    args = p.parse_args(argv)
    rng = np.random.default_rng(0)
    py = bench(_pykernels, args.size, args.repeat, rng)
    cy = bench(_ckernels, args.size, args.repeat, rng) if _ckernels is not None else None
    print(f"{'kernel':<16}{'numpy ms':>12}{'cython ms':>12}{'speedup':>10}")
    for k in py:
        if cy is None:
            print(f"{k:<16}{py[k] * 1e3:>12.3f}{'n/a':>12}{'n/a':>10}")
        else:
            print(f"{k:<16}{py[k] * 1e3:>12.3f}{cy[k] * 1e3:>12.3f}{py[k] / cy[k]:>10.1f}")
    print()
    rows = [sweep_time(True, args.sweeps)]
    if _ckernels is not None:
        rows.append(sweep_time(False, args.sweeps))
    for backend, secs in rows:
        print(f"sampler sweep ({backend}): {secs * 1e3:.1f} ms")
    if len(rows) == 2:
        print(f"sweep speedup: {rows[0][1] / rows[1][1]:.2f}x")


if __name__ == "__main__":
    main()
