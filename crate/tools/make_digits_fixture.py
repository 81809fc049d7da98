#!/usr/bin/env python3
"""Train the small digits CNN used by the test suite and export it.

Writes a model container, a calibration bundle, a test bundle and a golden
file into crates/core/tests/fixtures/digits/. Run once; outputs are committed.

    python3 tools/make_digits_fixture.py
"""
import hashlib
import json
import os
import sys

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.datasets import load_digits

SEED = 7
BN_EPS = 1e-3
N_TEST = 512
N_CALIB = 256
OUT = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "tests", "fixtures", "digits")


class Net(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 8, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(8, eps=BN_EPS)
        self.conv2 = nn.Conv2d(8, 16, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(16, eps=BN_EPS)
        self.pool1 = nn.AvgPool2d(2)
        self.conv3 = nn.Conv2d(16, 16, 3, padding=1)
        self.bn3 = nn.BatchNorm2d(16, eps=BN_EPS)
        self.pool2 = nn.AvgPool2d(2)
        self.fc1 = nn.Linear(64, 32)
        self.bn4 = nn.BatchNorm1d(32, eps=BN_EPS)
        self.fc2 = nn.Linear(32, 10)

    def forward(self, x):
        x = F.relu(self.bn1(self.conv1(x)))
        x = F.relu(self.bn2(self.conv2(x)))
        x = self.pool1(x)
        x = F.relu(self.bn3(self.conv3(x)))
        x = self.pool2(x)
        x = torch.flatten(x, 1)
        x = F.relu(self.bn4(self.fc1(x)))
        return self.fc2(x)


def shift(batch, rng):
    out = torch.zeros_like(batch)
    for k in range(batch.shape[0]):
        dy, dx = rng.integers(-1, 2, size=2)
        out[k] = torch.roll(batch[k], shifts=(int(dy), int(dx)), dims=(1, 2))
        if dy == 1:
            out[k, :, 0, :] = 0
        elif dy == -1:
            out[k, :, -1, :] = 0
        if dx == 1:
            out[k, :, :, 0] = 0
        elif dx == -1:
            out[k, :, :, -1] = 0
    return out


def write_blob(dirpath, name, arr, dtype):
    arr = np.ascontiguousarray(arr, dtype=dtype)
    with open(os.path.join(dirpath, name), "wb") as f:
        f.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    return {"name": name, "dtype": "f32" if dtype == np.float32 else "u32", "shape": list(arr.shape)}


def export_dataset(dirpath, split, x, y):
    os.makedirs(dirpath, exist_ok=True)
    tensors = [
        write_blob(dirpath, "inputs", x, np.float32),
        write_blob(dirpath, "labels", y, np.uint32),
    ]
    manifest = {
        "format_version": "1.0",
        "kind": "dataset",
        "split": split,
        "sample_shape": list(x.shape[1:]),
        "tensors": tensors,
    }
    with open(os.path.join(dirpath, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)


def export_model(dirpath, net):
    os.makedirs(dirpath, exist_ok=True)
    sd = {k: v.detach().numpy() for k, v in net.state_dict().items()}
    tensors = []
    layers = [{"name": "input", "kind": "Input"}]

    def param(name):
        tensors.append(write_blob(dirpath, name, sd[name], np.float32))
        return name

    def conv(name, out_ch):
        layers.append({
            "name": name, "kind": "Conv2D", "out_channels": out_ch,
            "kernel_size": [3, 3], "stride": 1, "padding": 1,
            "params": {"weight": param(name + ".weight"), "bias": param(name + ".bias")},
        })

    def bn(name):
        layers.append({
            "name": name, "kind": "BatchNorm", "epsilon": BN_EPS,
            "params": {
                "gamma": param(name + ".weight"), "beta": param(name + ".bias"),
                "mean": param(name + ".running_mean"), "variance": param(name + ".running_var"),
            },
        })

    def relu(name):
        layers.append({"name": name, "kind": "Relu"})

    conv("conv1", 8); bn("bn1"); relu("relu1")
    conv("conv2", 16); bn("bn2"); relu("relu2")
    layers.append({"name": "pool1", "kind": "AvgPool", "window": 2, "stride": 2})
    conv("conv3", 16); bn("bn3"); relu("relu3")
    layers.append({"name": "pool2", "kind": "AvgPool", "window": 2, "stride": 2})
    layers.append({"name": "flatten", "kind": "Flatten"})
    layers.append({"name": "fc1", "kind": "Dense", "units": 32,
                   "params": {"weight": param("fc1.weight"), "bias": param("fc1.bias")}})
    bn("bn4"); relu("relu4")
    layers.append({"name": "fc2", "kind": "Dense", "units": 10,
                   "params": {"weight": param("fc2.weight"), "bias": param("fc2.bias")}})

    manifest = {
        "format_version": "1.0",
        "kind": "cnn",
        "name": "digits-vgg-lite",
        "input_shape": [1, 8, 8],
        "metadata": {
            "source_framework": "pytorch " + torch.__version__.split("+")[0],
            "export_timestamp": "2026-10-16T00:00:00Z",
        },
        "layers": layers,
        "tensors": tensors,
    }
    with open(os.path.join(dirpath, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
    checksums = {}
    for t in tensors:
        with open(os.path.join(dirpath, t["name"]), "rb") as f:
            checksums[t["name"]] = hashlib.sha256(f.read()).hexdigest()
    return checksums, len(layers)


def main():
    torch.manual_seed(SEED)
    rng = np.random.default_rng(SEED)
    digits = load_digits()
    x = (digits.data / 16.0).astype(np.float32).reshape(-1, 1, 8, 8)
    y = digits.target.astype(np.int64)
    perm = rng.permutation(len(y))
    test_idx = perm[:N_TEST]
    train_idx = perm[N_TEST:]
    calib_idx = train_idx[:N_CALIB]

    xt = torch.from_numpy(x[train_idx])
    yt = torch.from_numpy(y[train_idx])
    net = Net()
    opt = torch.optim.Adam(net.parameters(), lr=3e-3, weight_decay=1e-4)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=120)
    for epoch in range(120):
        net.train()
        order = torch.from_numpy(rng.permutation(len(yt)))
        for s in range(0, len(order), 64):
            idx = order[s:s + 64]
            if len(idx) < 2:
                continue
            xb = shift(xt[idx], rng)
            loss = F.cross_entropy(net(xb), yt[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        sched.step()

    net.eval()
    with torch.no_grad():
        logits = net(torch.from_numpy(x[test_idx])).numpy()
    acc = float((logits.argmax(1) == y[test_idx]).mean())
    print(f"test accuracy on {N_TEST}: {acc:.4f}")
    if acc < 0.98:
        sys.exit("fixture CNN below 98% accuracy")

    checksums, layer_count = export_model(os.path.join(OUT, "model"), net)
    export_dataset(os.path.join(OUT, "calib"), "calibration", x[calib_idx], y[calib_idx])
    export_dataset(os.path.join(OUT, "test"), "test", x[test_idx], y[test_idx])

    probes = list(range(16))
    with torch.no_grad():
        probe_in = torch.from_numpy(x[test_idx][probes])
        probe_logits = net(probe_in).numpy()
        bn1_out = net.bn1(net.conv1(probe_in[:1])).numpy()
    golden = {
        "probe_indices": probes,
        "logits": probe_logits.astype(np.float64).tolist(),
        "bn1_preactivation_probe0": bn1_out.reshape(-1).astype(np.float64).tolist(),
        "cnn_test_accuracy": acc,
        "layer_count": layer_count,
        "param_sha256": checksums,
    }
    with open(os.path.join(OUT, "golden.json"), "w") as f:
        json.dump(golden, f, indent=1)


if __name__ == "__main__":
    main()
