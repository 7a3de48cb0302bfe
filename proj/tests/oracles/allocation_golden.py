#!/usr/bin/env python3
"""Reference reader allocation, written from the generator definition only.

Prints the pair sequence for a few seeds; the C++ tests freeze this output.
"""
import sys

MASK = (1 << 64) - 1
PAIRS = ["R1+R2", "R1+R3", "R2+R3"]


def xorshift64star(seed):
    x = seed or 0x9E3779B97F4A7C15
    while True:
        x ^= x >> 12
        x ^= (x << 25) & MASK
        x ^= x >> 27
        yield (x * 0x2545F4914F6CDD1D) & MASK


def allocate(seed, n):
    rng = xorshift64star(seed)
    out, block = [], []
    for _ in range(n):
        if not block:
            block = [0, 1, 2]
            for i in (2, 1):
                j = next(rng) % (i + 1)
                block[i], block[j] = block[j], block[i]
        out.append(block.pop(0))
    return out


if __name__ == "__main__":
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 12
    for seed in (42, 0, 1, 7):
        print(seed, " ".join(PAIRS[p] for p in allocate(seed, n)))
