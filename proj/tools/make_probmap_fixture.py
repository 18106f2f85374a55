#!/usr/bin/env python3
"""Writes the committed ProbMap fixture and the features numpy computes for it.

The expected-feature CSV is produced here, independently of the C++ engine, so the
engine's feature tests compare against a second implementation.

    python3 tools/make_probmap_fixture.py tests/fixtures
"""
import struct
import sys
from pathlib import Path

import numpy as np

PASSES = 15
PIXELS = 64
CLASSES = 6


def volume(rng, kind):
    if kind == "confident":
        logits = np.zeros((PIXELS, CLASSES))
        logits[np.arange(PIXELS), rng.integers(0, 2, PIXELS)] = 6.0
        logits = np.broadcast_to(logits, (PASSES, PIXELS, CLASSES)) + 0.05 * rng.standard_normal((PASSES, PIXELS, CLASSES))
    elif kind == "disagreeing":
        logits = 3.0 * rng.standard_normal((PASSES, PIXELS, CLASSES))
    else:  # uniform: every pass predicts every class equally, exact ties everywhere
        logits = np.zeros((PASSES, PIXELS, CLASSES))
    p = np.exp(logits - logits.max(axis=-1, keepdims=True))
    p /= p.sum(axis=-1, keepdims=True)
    return p.astype(np.float32)


def entropy(p):
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return terms.sum(axis=-1)


def features(p32):
    p = p32.astype(np.float64)
    bald = entropy(p.mean(axis=0)) - entropy(p).mean(axis=0)
    bald = np.maximum(bald, 0.0)
    lo, hi = bald.min(), bald.max()
    mean = min(max(bald.mean(), lo), hi)
    presence = np.zeros(CLASSES, dtype=int)
    presence[np.unique(np.argmax(p.sum(axis=0), axis=-1))] = 1
    return hi, lo, mean, presence


def main(out_dir):
    out_dir = Path(out_dir)
    rng = np.random.default_rng(20240515)
    ids = [3, 17, 42]
    volumes = [volume(rng, kind) for kind in ("confident", "disagreeing", "uniform")]

    body = bytearray(b"MSPM" + struct.pack("<HHI", 1, 0, len(ids)))
    for pid, vol in zip(ids, volumes):
        body += struct.pack("<QIIH", pid, PASSES, PIXELS, CLASSES)
        body += vol.astype("<f4").tobytes()
    body += struct.pack("<Q", sum(body) % 2**64)
    (out_dir / "probmaps_t15.mspm").write_bytes(bytes(body))

    with open(out_dir / "probmaps_t15_features.csv", "w") as f:
        f.write("id,bald_max,bald_min,bald_mean," + ",".join(f"p{c}" for c in range(CLASSES)) + "\n")
        for pid, vol in zip(ids, volumes):
            hi, lo, mean, presence = features(vol)
            f.write(f"{pid},{hi:.17g},{lo:.17g},{mean:.17g}," + ",".join(map(str, presence)) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures")
