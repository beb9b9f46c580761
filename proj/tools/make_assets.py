#!/usr/bin/env python3
"""Regenerates the bundled desk-scale models and datasets under assets/.

Trains a 2-32-32-2 MLP on a two-spiral problem and a small CNN on 8x8
bar/diagonal images, writes them in the gencomp model container format, and
stores the reference validation accuracy computed by an independent float64
NumPy forward pass in each manifest.

Usage: python3 tools/make_assets.py [--out assets]
"""

import argparse
import json
import os
import struct

import numpy as np
import torch
from torch import nn

VALIDATION_FRACTION = 0.2


def write_container(path, name, layers, tensors, extra):
    manifest = {"name": name, "layers": layers}
    manifest.update(extra)
    header = json.dumps(manifest, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for w, b in tensors:
            f.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def write_csv(path, x, y, feature_names):
    with open(path, "w") as f:
        f.write(",".join(feature_names + ["label"]) + "\n")
        for row, label in zip(x, y):
            f.write(",".join("%.6f" % v for v in row) + ",%d\n" % label)


def read_csv_features(path):
    """Parses the CSV back the way the C++ loader does (text -> f32 -> f64)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64)
    x = data[:, :-1].astype(np.float32).astype(np.float64)
    y = data[:, -1].astype(np.int64)
    return x, y


# ---- reference forward pass (float64, direct loops over the manifest) ------

def oracle_forward(layers, tensors, sample):
    act = sample
    spatial = layers[0]["kind"] != "fully_connected"
    if spatial:
        l0 = layers[0]
        act = sample.reshape(l0["n"], l0["h_in"], l0["w_in"])
    for layer, (w, b) in zip(layers, tensors):
        w = w.astype(np.float64)
        b = b.astype(np.float64)
        if layer["kind"] == "fully_connected":
            if act.ndim == 3:
                act = act.mean(axis=(1, 2))
            out = w.reshape(layer["m"], layer["n"]) @ act + b
        else:
            k, s, p = layer["k"], layer["stride"], layer["padding"]
            h, wd = layer["h_in"], layer["w_in"]
            ho = (h + 2 * p - k) // s + 1
            wo = (wd + 2 * p - k) // s + 1
            padded = np.zeros((layer["n"], h + 2 * p, wd + 2 * p))
            padded[:, p:p + h, p:p + wd] = act
            kern = w.reshape(layer["m"], layer["n"], k, k)
            out = np.zeros((layer["m"], ho, wo))
            for y in range(ho):
                for x in range(wo):
                    patch = padded[:, y * s:y * s + k, x * s:x * s + k]
                    out[:, y, x] = np.tensordot(kern, patch, axes=([1, 2, 3], [0, 1, 2])) + b
        if layer["has_relu"]:
            out = np.maximum(out, 0.0)
        act = out
    if act.ndim == 3:
        act = act.mean(axis=(1, 2))
    return act


def oracle_accuracy(layers, tensors, x, y):
    correct = 0
    for row, label in zip(x, y):
        logits = oracle_forward(layers, tensors, row)
        if int(np.argmax(logits)) == label:  # argmax picks the lowest index on ties
            correct += 1
    return correct


# ---- spiral MLP --------------------------------------------------------------

def spiral_data(rng, per_class=1000):
    xs, ys = [], []
    for c in range(2):
        t = np.sqrt(rng.uniform(0.0, 1.0, per_class))
        angle = t * 2.5 * np.pi + c * np.pi
        r = t
        pts = np.stack([r * np.cos(angle), r * np.sin(angle)], axis=1)
        pts += rng.normal(0.0, 0.04, pts.shape)
        xs.append(pts)
        ys.append(np.full(per_class, c))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    perm = rng.permutation(len(y))
    return x[perm], y[perm]


def train(model, x, y, epochs, lr, seed):
    torch.manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    xt = torch.tensor(x, dtype=torch.float32)
    yt = torch.tensor(y, dtype=torch.long)
    loss_fn = nn.CrossEntropyLoss()
    for _ in range(epochs):
        opt.zero_grad()
        loss = loss_fn(model(xt), yt)
        loss.backward()
        opt.step()
    return float(loss.detach())


def make_mlp(out_dir, rng):
    x, y = spiral_data(rng)
    csv_path = os.path.join(out_dir, "spiral.csv")
    write_csv(csv_path, x, y, ["x", "y"])
    x, y = read_csv_features(csv_path)

    torch.manual_seed(1)
    net = nn.Sequential(nn.Linear(2, 32), nn.ReLU(), nn.Linear(32, 32), nn.ReLU(), nn.Linear(32, 2))
    loss = train(net, x, y, epochs=4000, lr=0.01, seed=1)
    layers = [
        {"kind": "fully_connected", "m": 32, "n": 2, "k": 1, "h_in": 0, "w_in": 0, "stride": 1, "padding": 0, "has_relu": True},
        {"kind": "fully_connected", "m": 32, "n": 32, "k": 1, "h_in": 0, "w_in": 0, "stride": 1, "padding": 0, "has_relu": True},
        {"kind": "fully_connected", "m": 2, "n": 32, "k": 1, "h_in": 0, "w_in": 0, "stride": 1, "padding": 0, "has_relu": False},
    ]
    tensors = [(m.weight.detach().numpy().astype(np.float32), m.bias.detach().numpy().astype(np.float32))
               for m in net if isinstance(m, nn.Linear)]
    return finish(out_dir, "spiral_mlp", layers, tensors, x, y, loss,
                  "2-32-32-2 ReLU MLP trained on a noisy two-spiral problem")


# ---- small CNN ---------------------------------------------------------------

def bars_data(rng, count=2000):
    """8x8 single-channel images: horizontal bar, vertical bar, diagonal, anti-diagonal."""
    x = np.zeros((count, 1, 8, 8))
    y = rng.integers(0, 4, count)
    for i in range(count):
        img = np.zeros((8, 8))
        o = rng.integers(0, 8)
        if y[i] == 0:
            img[o, :] = 1.0
        elif y[i] == 1:
            img[:, o] = 1.0
        elif y[i] == 2:
            np.fill_diagonal(img, 1.0)
            img = np.roll(img, rng.integers(-2, 3), axis=1)
        else:
            np.fill_diagonal(img, 1.0)
            img = np.roll(img[:, ::-1], rng.integers(-2, 3), axis=1)
        img += rng.normal(0.0, 0.8, img.shape)
        x[i, 0] = img
    return x.reshape(count, 64), y


def make_cnn(out_dir, rng):
    x, y = bars_data(rng)
    csv_path = os.path.join(out_dir, "bars.csv")
    write_csv(csv_path, x, y, ["p%d" % i for i in range(64)])
    x, y = read_csv_features(csv_path)

    class Net(nn.Module):
        def __init__(self):
            super().__init__()
            self.c1 = nn.Conv2d(1, 8, 3, padding=1)
            self.c2 = nn.Conv2d(8, 16, 3, stride=2, padding=1)
            self.c3 = nn.Conv2d(16, 16, 1)
            self.fc = nn.Linear(16, 4)

        def forward(self, v):
            v = v.view(-1, 1, 8, 8)
            v = torch.relu(self.c1(v))
            v = torch.relu(self.c2(v))
            v = torch.relu(self.c3(v))
            return self.fc(v.mean(dim=(2, 3)))

    torch.manual_seed(2)
    net = Net()
    loss = train(net, x, y, epochs=600, lr=0.01, seed=2)
    layers = [
        {"kind": "conv", "m": 8, "n": 1, "k": 3, "h_in": 8, "w_in": 8, "stride": 1, "padding": 1, "has_relu": True},
        {"kind": "conv", "m": 16, "n": 8, "k": 3, "h_in": 8, "w_in": 8, "stride": 2, "padding": 1, "has_relu": True},
        {"kind": "pointwise_conv", "m": 16, "n": 16, "k": 1, "h_in": 4, "w_in": 4, "stride": 1, "padding": 0, "has_relu": True},
        {"kind": "fully_connected", "m": 4, "n": 16, "k": 1, "h_in": 0, "w_in": 0, "stride": 1, "padding": 0, "has_relu": False},
    ]
    tensors = [(m.weight.detach().numpy().astype(np.float32), m.bias.detach().numpy().astype(np.float32))
               for m in (net.c1, net.c2, net.c3, net.fc)]
    return finish(out_dir, "bars_cnn", layers, tensors, x, y, loss,
                  "3-conv + linear CNN on 8x8 bar/diagonal images; global average pool before the linear layer")


# ---- synthetic FLOPs model -----------------------------------------------------

def make_synthetic(out_dir, rng):
    dims = [16, 64, 32, 32, 8]
    layers, tensors = [], []
    for i in range(4):
        m, n = dims[i + 1], dims[i]
        layers.append({"kind": "fully_connected", "m": m, "n": n, "k": 1, "h_in": 0, "w_in": 0,
                       "stride": 1, "padding": 0, "has_relu": i < 3})
        tensors.append((rng.normal(0, 0.3, (m, n)).astype(np.float32), np.zeros(m, dtype=np.float32)))
    write_container(os.path.join(out_dir, "synthetic4.gcm"), "synthetic4", layers, tensors,
                    {"description": "4-layer FLOPs carrier for synthetic-landscape runs (weights unused)"})


def finish(out_dir, name, layers, tensors, x, y, loss, description):
    rows = int(np.ceil(VALIDATION_FRACTION * len(y) - 1e-9))
    correct = oracle_accuracy(layers, tensors, x[:rows], y[:rows])
    extra = {
        "description": description,
        "validation_fraction": VALIDATION_FRACTION,
        "validation_rows": rows,
        "reference_correct": correct,
        "reference_accuracy": correct / rows,
    }
    write_container(os.path.join(out_dir, name + ".gcm"), name, layers, tensors, extra)
    print("%s: train loss %.4f, validation accuracy %d/%d = %.4f" % (name, loss, correct, rows, correct / rows))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "assets"))
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(20240607)
    make_mlp(args.out, rng)
    make_cnn(args.out, rng)
    make_synthetic(args.out, rng)


if __name__ == "__main__":
    main()
