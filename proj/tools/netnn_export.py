#!/usr/bin/env python3
"""Post-training quantization exporter for the netnn model and trace formats.

Float model: a list of layer dicts, in order,
  {"kind": "conv1d", "weights": (filters, kernel) array, "biases": (filters,), "stride": s}
  {"kind": "maxpool1d", "window": w}
  {"kind": "dense", "weights": (out, in) array, "biases": (out,)}
Inputs are integer activations (bit-mode: 0/1 per prefix bit, then three
feature bytes), so the input scale is 1.

Weights are quantized symmetrically per layer to [-127, 127]. Each hidden
layer gets the smallest right shift that keeps at most 1% of its calibration
activations above 255; the final dense layer emits raw scores (shift 0).
"""

import argparse
import json
import sys

import numpy as np

from gen_conformance_vectors import PREFIX_BYTES, WIDTH, tensor

MAX_SATURATION = 0.01


class ExportError(ValueError):
    pass


def quantize_weights(w):
    w = np.asarray(w, dtype=np.float64)
    peak = float(np.max(np.abs(w))) if w.size else 0.0
    if peak == 0.0:
        return np.zeros(w.shape, dtype=np.int64), 1.0
    scale = 127.0 / peak
    return np.clip(np.rint(w * scale), -127, 127).astype(np.int64), scale


# Integer forward passes, mirroring the reference engine.

def conv_acc(x, w, b, stride):
    filters, k = w.shape
    n = x.shape[1]
    length = (n - k) // stride + 1
    idx = np.arange(length)[:, None] * stride + np.arange(k)[None, :]
    windows = x[:, idx]  # batch, length, k
    acc = np.einsum("blk,fk->bfl", windows, w) + b[None, :, None]
    return acc.reshape(x.shape[0], filters * length)


def pool(x, window):
    return x.reshape(x.shape[0], -1, window).max(axis=2)


def requantize(acc, shift):
    return np.clip(acc >> shift, 0, 255)


def float_forward(layers, x):
    x = np.asarray(x, dtype=np.float64)
    for i, layer in enumerate(layers):
        last = i == len(layers) - 1
        if layer["kind"] == "maxpool1d":
            x = pool(x, layer["window"])
            continue
        w = np.asarray(layer["weights"], dtype=np.float64)
        b = np.asarray(layer["biases"], dtype=np.float64)
        x = conv_acc(x, w, b, layer.get("stride", 1)) if layer["kind"] == "conv1d" else x @ w.T + b
        if not last:
            x = np.maximum(x, 0)
    return x


def quantize_and_export(layers, calibration):
    """Returns (model document, calibration summary)."""
    calibration = np.asarray(calibration, dtype=np.int64)
    if calibration.ndim != 2 or calibration.shape[0] == 0:
        raise ExportError("empty calibration set")
    if not layers or layers[-1]["kind"] != "dense":
        raise ExportError("the final layer must be dense")
    x = calibration
    in_scale = 1.0
    out_layers, summary = [], []
    for i, layer in enumerate(layers):
        kind = layer["kind"]
        last = i == len(layers) - 1
        if kind == "maxpool1d":
            x = pool(x, layer["window"])
            out_layers.append({"kind": kind, "window": int(layer["window"])})
            continue
        if kind not in ("conv1d", "dense"):
            raise ExportError(f"unsupported layer '{kind}'")
        q, w_scale = quantize_weights(layer["weights"])
        acc_scale = w_scale * in_scale
        bias = np.rint(np.asarray(layer["biases"], dtype=np.float64) * acc_scale).astype(np.int64)
        bias = np.clip(bias, -(2**31), 2**31 - 1)
        stride = int(layer.get("stride", 1))
        acc = conv_acc(x, q, bias, stride) if kind == "conv1d" else x @ q.T + bias
        shift = 0
        if not last:
            while shift < 31 and np.mean(np.maximum(acc, 0) >> shift > 255) > MAX_SATURATION:
                shift += 1
            x = requantize(acc, shift)
            in_scale = acc_scale / (1 << shift)
        else:
            x = acc
        doc = {"kind": kind}
        if kind == "conv1d":
            doc.update(filters=int(q.shape[0]), kernel_width=int(q.shape[1]), stride=stride)
        else:
            doc.update(in_width=int(q.shape[1]), out_width=int(q.shape[0]))
        doc.update(requant_shift=shift, weights=q.tolist(), biases=bias.tolist())
        out_layers.append(doc)
        summary.append({
            "layer": i,
            "kind": kind,
            "weight_scale": w_scale,
            "requant_shift": shift,
            "saturation": 0.0 if last else float(np.mean(np.maximum(acc, 0) >> shift > 255)),
        })
    agreement = float(np.mean(np.argmax(x, axis=1) == np.argmax(float_forward(layers, calibration), axis=1)))
    model = {
        "format": "netnn-model",
        "version": 1,
        "input_width": int(calibration.shape[1]),
        "class_count": int(np.asarray(layers[-1]["weights"]).shape[0]),
        "metadata": {"generator": "netnn_export"},
        "layers": out_layers,
    }
    return model, {"layers": summary, "argmax_agreement": agreement}


def emit_bit_input_dataset(flows, out):
    """flows: dicts with src_ip, src_port, dst_ip, dst_port, proto, label and
    packets [(timestamp_ns, prefix bytes)]. Writes time-ordered CSV lines."""
    rows = []
    for f in flows:
        try:
            tup = (f["src_ip"], int(f["src_port"]), f["dst_ip"], int(f["dst_port"]), int(f["proto"]))
            for ts, prefix in f["packets"]:
                prefix = bytes(prefix)[:PREFIX_BYTES]
                rows.append((int(ts), tup, prefix.hex(), f.get("label")))
        except (KeyError, TypeError, ValueError) as e:
            raise ExportError(f"malformed flow record: {e}") from e
    rows.sort(key=lambda r: r[0])
    out.write("# timestamp_ns,src_ip,src_port,dst_ip,dst_port,proto,prefix_hex,label\n")
    for ts, (sip, sp, dip, dp, proto), hx, label in rows:
        out.write(f"{ts},{sip},{sp},{dip},{dp},{proto},{hx},{'' if label is None else label}\n")
    return len(rows)


def check_conformance(path):
    doc = json.load(open(path))
    bad = []
    for v in doc["vectors"]:
        got = bytes(tensor(bytes.fromhex(v["prefix_hex"]), v["packet_count"], v["min_iat_ns"], v["max_iat_ns"],
                           v["flow_id"])).hex()
        if got != v["tensor_hex"]:
            bad.append(v["name"])
    return len(doc["vectors"]), bad


def demo_model(rng):
    """Small float model of the supported shape over the bit-mode input."""
    return [
        {"kind": "conv1d", "weights": rng.normal(0, 0.5, (4, 3)), "biases": rng.normal(0, 0.1, 4), "stride": 1},
        {"kind": "maxpool1d", "window": 2},
        {"kind": "dense", "weights": rng.normal(0, 0.05, (16, 4 * 283)), "biases": rng.normal(0, 0.1, 16)},
        {"kind": "dense", "weights": rng.normal(0, 0.3, (2, 16)), "biases": np.zeros(2)},
    ]


def demo_calibration(rng, n):
    x = np.zeros((n, WIDTH), dtype=np.int64)
    x[:, : PREFIX_BYTES * 8] = rng.integers(0, 2, (n, PREFIX_BYTES * 8))
    x[:, PREFIX_BYTES * 8 : PREFIX_BYTES * 8 + 3] = rng.integers(0, 256, (n, 3))
    return x


def selftest():
    model, _ = quantize_and_export(
        [{"kind": "dense", "weights": np.zeros((2, 3)), "biases": np.zeros(2)}], np.ones((4, 3), dtype=np.int64))
    assert model["layers"][0]["weights"] == [[0, 0, 0], [0, 0, 0]]
    q, scale = quantize_weights([-1.0, 1.0])
    assert q.tolist() == [-127, 127] and scale == 127.0
    for bad, what in (([{"kind": "lstm", "weights": [[1]], "biases": [0]},
                        {"kind": "dense", "weights": [[1]], "biases": [0]}], "unsupported"),
                      ([{"kind": "dense", "weights": [[1]], "biases": [0]}], "empty")):
        try:
            quantize_and_export(bad, np.ones((0 if what == "empty" else 2, 1), dtype=np.int64))
            raise AssertionError(f"expected '{what}' error")
        except ExportError as e:
            assert what in str(e), e
    import io
    buf = io.StringIO()
    assert emit_bit_input_dataset([], buf) == 0 and buf.getvalue().count("\n") == 1
    buf = io.StringIO()
    flow = {"src_ip": "10.0.0.1", "src_port": 5000, "dst_ip": "10.0.0.2", "dst_port": 53, "proto": 17, "label": 0,
            "packets": [(t, bytes([0x45, 0, 0, 28])) for t in (30, 10, 20)]}
    assert emit_bit_input_dataset([flow], buf) == 3
    lines = buf.getvalue().splitlines()[1:]
    assert [ln.split(",")[0] for ln in lines] == ["10", "20", "30"]
    assert len({",".join(ln.split(",")[1:6]) for ln in lines}) == 1
    # the quantized demo stays within the saturation bound on its calibration set
    rng = np.random.default_rng(3)
    _, summary = quantize_and_export(demo_model(rng), demo_calibration(rng, 64))
    assert all(s["saturation"] <= MAX_SATURATION for s in summary["layers"])
    print(f"selftest ok (argmax agreement {summary['argmax_agreement']:.3f})")


def main(argv):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    d = sub.add_parser("demo", help="quantize a seeded float demo model and write the model file")
    d.add_argument("-o", "--output", required=True)
    d.add_argument("--seed", type=int, default=1)
    d.add_argument("--calibration", type=int, default=128)
    d.add_argument("--summary", help="write the calibration summary here")
    c = sub.add_parser("conformance", help="check this side's input assembly against a vector file")
    c.add_argument("vectors")
    sub.add_parser("selftest")
    args = ap.parse_args(argv)

    if args.cmd == "selftest":
        selftest()
    elif args.cmd == "conformance":
        n, bad = check_conformance(args.vectors)
        print(f"conformance: {n} vectors, {len(bad)} mismatches{': ' + ', '.join(bad) if bad else ''}")
        return 1 if bad else 0
    else:
        rng = np.random.default_rng(args.seed)
        model, summary = quantize_and_export(demo_model(rng), demo_calibration(rng, args.calibration))
        with open(args.output, "w") as f:
            json.dump(model, f)
        if args.summary:
            with open(args.summary, "w") as f:
                json.dump(summary, f, indent=2)
        print(f"wrote {args.output}: shifts {[s['requant_shift'] for s in summary['layers']]}, "
              f"argmax agreement {summary['argmax_agreement']:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
