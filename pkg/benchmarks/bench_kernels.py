"""Compare the compiled and pure-Python kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]

Detection throughput is measured in subprocesses so each run picks its
backend at import time (PROXYSCOPE_PURE=1 forces the pure one).
"""

from __future__ import annotations

import argparse
import json
import os
import random
import subprocess
import sys
import timeit

from proxyscope import _pure

try:
    from proxyscope import _speedups
except ImportError:
    _speedups = None

DETECT_SNIPPET = """
import json, time
from proxyscope import kernels, samples
from proxyscope.proxy import detect_proxy
from proxyscope.state import EmptyState

class World(EmptyState):
    def get_storage_at(self, address, slot, block):
        return 0xBEEF

codes = [samples.minimal_proxy(0x1234), samples.listing_proxy(), samples.eip1967_proxy((1, 2, 3)),
         samples.eip1822_proxy(), samples.library_caller(0x55), samples.plain_contract()]
world = World()
n = 0
t0 = time.perf_counter()
while time.perf_counter() - t0 < 1.0:
    for c in codes:
        detect_proxy(c, world)
        n += 1
print(json.dumps({"backend": kernels.BACKEND, "per_s": n / (time.perf_counter() - t0)}))
"""


def corpus(seed: int = 1) -> dict[str, bytes]:
    rng = random.Random(seed)
    return {
        "keccak 32B": rng.randbytes(32),
        "keccak 4KiB": rng.randbytes(4096),
        "code 24KiB": rng.randbytes(24576),
    }


def bench(fn, arg, repeat: int) -> float:
    number = max(1, int(0.2 / max(timeit.timeit(lambda: fn(arg), number=1), 1e-7)))
    best = min(timeit.repeat(lambda: fn(arg), number=number, repeat=repeat))
    return best / number * 1e6


def detect_rate(pure: bool) -> dict:
    env = dict(os.environ, PROXYSCOPE_PURE="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", DETECT_SNIPPET], env=env, check=True,
                         capture_output=True, text=True).stdout
    return json.loads(out)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    data = corpus()
    rows = [
        ("keccak256", "keccak 32B"),
        ("keccak256", "keccak 4KiB"),
        ("decode_raw", "code 24KiB"),
        ("contains_opcode", "code 24KiB"),
        ("jumpdests", "code 24KiB"),
    ]
    print(f"{'kernel':<16}{'input':<14}{'python us':>12}{'cython us':>12}{'speedup':>9}")
    for name, key in rows:
        arg = data[key]
        if name == "contains_opcode":
            py = bench(lambda c: _pure.contains_opcode(c, 0xF4), arg, args.repeat)
            cy = bench(lambda c: _speedups.contains_opcode(c, 0xF4), arg, args.repeat) if _speedups else None
        else:
            py = bench(getattr(_pure, name), arg, args.repeat)
            cy = bench(getattr(_speedups, name), arg, args.repeat) if _speedups else None
        cy_s = f"{cy:12.1f}" if cy else f"{'n/a':>12}"
        ratio = f"{py / cy:8.1f}x" if cy else f"{'':>9}"
        print(f"{name:<16}{key:<14}{py:12.1f}{cy_s}{ratio}")

    print()
    for pure in (True, False):
        r = detect_rate(pure)
        print(f"detect_proxy end-to-end ({r['backend']}): {r['per_s']:.0f} contracts/s")


if __name__ == "__main__":
    main()
