#!/usr/bin/env python3
"""Benchmark the compiled kernel extension against the pure-Python fallback.

Times the operations the fuzz loop leans on (n-gram embedding, dot product,
bitmap update, byte mutations) plus one end-to-end mini campaign per
backend. Results are wall-clock medians over repeated runs.

Usage: python benchmarks/bench_kernels.py [--campaign-budget N]
"""

import argparse
import random
import statistics
import time

from ragfuzz.kernels import _pykernels

try:
    from ragfuzz.kernels import _kernels
except ImportError:
    _kernels = None

TEXT = ("RTSP methods that contribute to state use the Session header field. "
        "SETUP starts an RTSP session and PLAY starts data transmission.") * 4
DATA = (b"PLAY rtsp://target.example/media/stream1 RTSP/1.0\r\n"
        b"CSeq: 4\r\nSession: 000022B8\r\n\r\n") * 5


def _time(fn, number, repeats=5):
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        for _ in range(number):
            fn()
        samples.append((time.perf_counter() - start) / number)
    return statistics.median(samples)


def kernel_cases(impl):
    rng = random.Random(7)
    vec = impl.embed_text(TEXT, 256, 2326)
    bitmap = bytearray(8192)
    ids = [rng.randrange(200) for _ in range(25)]
    return [
        ("embed_text (300 chars, 256 dims)", lambda: impl.embed_text(TEXT, 256, 2326), 200),
        ("dot (256 dims)", lambda: impl.dot(vec, vec), 5000),
        ("update_bitmap (25 probes)", lambda: impl.update_bitmap(bitmap, ids, 65535), 5000),
        ("bitflip", lambda: impl.bitflip(DATA, 100), 5000),
        ("block_duplicate (64B)", lambda: impl.block_duplicate(DATA, 10, 64, 200), 5000),
    ]


def run_campaign(budget):
    import os
    from pathlib import Path

    from ragfuzz import engine as eng

    seeds_dir = Path(__file__).resolve().parent.parent / "src" / "ragfuzz" / \
        "assets" / "demo" / "seeds"
    seeds = [p.read_bytes() for p in sorted(seeds_dir.iterdir())]
    cfg = eng.CampaignConfig(budget=budget, rng_seed=101)
    start = time.perf_counter()
    stats = eng.run_campaign(cfg, seeds=seeds)
    elapsed = time.perf_counter() - start
    return elapsed, stats.branches


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--campaign-budget", type=int, default=20000)
    args = parser.parse_args()

    backends = [("python", _pykernels)]
    if _kernels is not None:
        backends.insert(0, ("compiled", _kernels))
    else:
        print("note: compiled extension not built; timing fallback only\n")

    print(f"{'kernel':38s}" + "".join(f"{name:>14s}" for name, _ in backends)
          + ("{:>10s}".format("speedup") if len(backends) == 2 else ""))
    print("-" * (38 + 14 * len(backends) + (10 if len(backends) == 2 else 0)))
    rows = {}
    for name, impl in backends:
        for label, fn, number in kernel_cases(impl):
            rows.setdefault(label, {})[name] = _time(fn, number)
    for label, times in rows.items():
        cells = "".join(f"{times[name] * 1e6:>12.2f}us" for name, _ in backends)
        if len(backends) == 2:
            cells += f"{times['python'] / times['compiled']:>9.1f}x"
        print(f"{label:38s}{cells}")

    print(f"\nend-to-end campaign ({args.campaign_budget} executions, baseline arm):",
          flush=True)
    import os
    import subprocess
    import sys

    for name, _ in backends:
        env = dict(os.environ)
        if name == "python":
            env["RAGFUZZ_PURE_PYTHON"] = "1"
        else:
            env.pop("RAGFUZZ_PURE_PYTHON", None)
        code = ("import sys; sys.path.insert(0, '.'); "
                "from benchmarks.bench_kernels import run_campaign; "
                f"elapsed, branches = run_campaign({args.campaign_budget}); "
                "print('  {:>10s}: {:6.2f}s  ({} probes hit)'"
                f".format('{name}', elapsed, branches))")
        subprocess.run([sys.executable, "-c", code], env=env, check=True)


if __name__ == "__main__":
    main()
