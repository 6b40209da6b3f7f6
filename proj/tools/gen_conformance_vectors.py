#!/usr/bin/env python3
"""Writes input-assembly conformance vectors shared with the exporter.

Each vector gives a raw prefix and a flow snapshot together with the 568
activations the bit-mode input must contain (one byte each, hex encoded).
"""

import argparse
import json
import random

PREFIX_BYTES = 68
WIDTH = PREFIX_BYTES * 8 + 24


def iat_feature(iat_ns):
    lg = (iat_ns + 1).bit_length() - 1
    return min(255, lg * 8)


def flow_feature(flow_id):
    return (flow_id ^ (flow_id >> 8) ^ (flow_id >> 16) ^ (flow_id >> 24)) & 0xFF


def tensor(prefix, packet_count, min_iat, max_iat, flow_id):
    out = [0] * WIDTH
    for b, byte in enumerate(prefix):
        for bit in range(8):
            out[b * 8 + bit] = (byte >> (7 - bit)) & 1
    tail = PREFIX_BYTES * 8
    if packet_count >= 2:
        out[tail] = iat_feature(min_iat)
        out[tail + 1] = iat_feature(max_iat)
    out[tail + 2] = flow_feature(flow_id)
    return out


def vector(name, prefix, packet_count, min_iat, max_iat, flow_id):
    return {
        "name": name,
        "prefix_hex": bytes(prefix).hex(),
        "packet_count": packet_count,
        "min_iat_ns": min_iat,
        "max_iat_ns": max_iat,
        "flow_id": flow_id,
        "tensor_hex": bytes(tensor(prefix, packet_count, min_iat, max_iat, flow_id)).hex(),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-o", "--output", required=True)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--random", type=int, default=32, help="number of random vectors")
    args = ap.parse_args()

    vectors = [
        vector("all-zero", [], 1, 0, 0, 0),
        vector("msb-first", [0x80], 1, 0, 0, 0),
        vector("first-packet-iat-undefined", [0x45, 0x00], 1, 123, 456, 7),
        vector("udp-40-bytes", list(range(40)), 2, 1000, 1000, 0xDEADBEEF),
        vector("full-prefix", [0xFF] * PREFIX_BYTES, 1024, 1, 10**12, 0xFFFFFFFF),
    ]
    rng = random.Random(args.seed)
    for i in range(args.random):
        n = rng.randint(0, PREFIX_BYTES)
        prefix = [rng.randrange(256) for _ in range(n)]
        count = rng.randint(1, 5000)
        lo = rng.randrange(10**9)
        hi = lo + rng.randrange(10**10)
        vectors.append(vector(f"random-{i}", prefix, count, lo, hi, rng.randrange(2**32)))

    with open(args.output, "w") as f:
        json.dump({"format": "netnn-conformance", "version": 1, "width": WIDTH, "vectors": vectors}, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
