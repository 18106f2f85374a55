#!/usr/bin/env python3
"""Writes small pool files with a byte layout built by hand from struct, independent of the C++ writer.

    python3 tools/make_pool_fixture.py tests/fixtures

small_pool.msal          3 records, 10 classes, entropy column
corrupted_checksum.msal  the same bytes with the trailing checksum off by one
"""
import struct
import sys
from pathlib import Path

CLASSES = 10
CAPACITY = 4096
# id, (bald_max, bald_min, bald_mean), entropy_mean, predicted classes, {class: pixels}
RECORDS = [
    (5, (0.75, 0.125, 0.5), 1.25, [0, 9], {0: 1000, 9: 200}),
    (8, (0.0, 0.0, 0.0), 0.0, [], {}),
    (13, (2.25, 0.25, 1.0), 2.0, [1, 8, 9], {1: 4000, 8: 50, 9: 46}),
]


def record_bytes(pid, bald, entropy, predicted, counts):
    out = struct.pack("<Q", pid) + struct.pack("<fff", *bald) + struct.pack("<f", entropy)
    bits = bytearray((CLASSES + 7) // 8)
    for c in predicted:
        bits[c // 8] |= 1 << (c % 8)
    out += bytes(bits)
    out += struct.pack(f"<{CLASSES}I", *[counts.get(c, 0) for c in range(CLASSES)])
    return out


def main(out_dir):
    out_dir = Path(out_dir)
    body = b"MSAL" + struct.pack("<HHQHI", 1, 0x1, len(RECORDS), CLASSES, CAPACITY)
    for rec in RECORDS:
        body += record_bytes(*rec)
    checksum = sum(body) % 2**64
    (out_dir / "small_pool.msal").write_bytes(body + struct.pack("<Q", checksum))
    (out_dir / "corrupted_checksum.msal").write_bytes(body + struct.pack("<Q", (checksum + 1) % 2**64))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures")
