"""Compare the compiled and pure-Python kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]

Runs both backends on the same inputs, checks that they agree and prints
the time per call.  The compiled backend is skipped when not built.
"""

from __future__ import annotations

import argparse
import random
import timeit

from sid import _pykernels
from sid.parser import parse_type
from sid.types import _encode

try:
    from sid import _ckernels
except ImportError:
    _ckernels = None


def wp_inputs(rng: random.Random, threads: int, names: int, count: int):
    cases = []
    for _ in range(count):
        plus = [rng.getrandbits(names) for _ in range(threads)]
        minus = [rng.getrandbits(names) & ~p for p in plus]
        cases.append((plus, minus, [True] * threads))
    return cases


def bisim_inputs():
    pairs = [
        ("rec S. !Nat.@?Nat.@S", "!Nat.@(rec T. ?Nat.@!Nat.@T)"),
        ("rec S. ?(rec T. !Nat.@T).!Nat.@S", "?(rec T. !Nat.@!Nat.@T).!Nat.@(rec S. ?(rec T. !Nat.@T).!Nat.@S)"),
        ("rec S. @(Nat * S)", "@(Nat * (rec T. @(Nat * @(Nat * T))))"),
    ]
    out = []
    for a, b in pairs:
        ta, ka = _encode(parse_type(a))
        tb, kb = _encode(parse_type(b))
        out.append((ta, ka, 0, tb, kb, 0))
    return out


def bench(label: str, fn, cases, repeat: int) -> float:
    def loop():
        for c in cases:
            fn(*c)

    best = min(timeit.repeat(loop, number=1, repeat=repeat))
    per_call = best / len(cases) * 1e6
    print(f"  {label:<8} {per_call:10.1f} us/call")
    return per_call


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    if _ckernels is None:
        print("compiled kernels not built; timing the fallback only")

    for threads in (4, 6, 8, 10):
        cases = wp_inputs(rng, threads, 8, 200 if threads < 10 else 40)
        print(f"wp_search, {threads} threads, {len(cases)} multisets")
        results = {}
        times = {}
        for label, mod in backends:
            results[label] = [mod.wp_search(*c) is not None for c in cases]
            times[label] = bench(label, mod.wp_search, cases, args.repeat)
        if len(results) == 2:
            assert results["python"] == results["cython"], "backends disagree"
            print(f"  speed-up {times['python'] / times['cython']:.1f}x")

    cases = bisim_inputs() * 200
    print(f"bisimilar, {len(cases)} type pairs")
    times = {}
    for label, mod in backends:
        assert all(mod.bisimilar(*c) for c in cases)
        times[label] = bench(label, mod.bisimilar, cases, args.repeat)
    if len(times) == 2:
        print(f"  speed-up {times['python'] / times['cython']:.1f}x")


if __name__ == "__main__":
    main()
