"""Smoke test for the floodnet_py extension.

Build first:
    cargo build --release -p floodnet-python --features extension-module
then run from the repository root:
    python3 python/smoke_test.py
"""

import math
import os
import random
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def import_extension():
    target = os.environ.get("CARGO_TARGET_DIR", os.path.join(ROOT, "target"))
    lib = os.path.join(target, "release", "libfloodnet_py.so")
    if not os.path.exists(lib):
        sys.exit(f"{lib} not found; build the floodnet-python crate first")
    stage = tempfile.mkdtemp()
    shutil.copy(lib, os.path.join(stage, "floodnet_py.so"))
    sys.path.insert(0, stage)
    import floodnet_py

    return floodnet_py


def separable(fp, n, seed):
    rng = random.Random(seed)
    ds = fp.Dataset(3, 8)
    for i in range(n):
        label = i % 2
        shift = 1.5 if label else -1.5
        x = [0.3 * rng.gauss(0, 1) + (shift if k < 8 else 0.0) for k in range(24)]
        ds.push(x, label, sensor_id=f"S{i:03d}", t_end=i)
    return ds


def main():
    fp = import_extension()

    s = lambda v: 1 / (1 + math.exp(-v))
    w, u, bz, bh, zr, nr, x, h = 0.7, -0.4, 0.1, -0.2, 1.0, -3.0, 0.5, 0.3
    z = s(w * x + u * h + bz)
    expect = (s(zr) * (1 - z) + s(nr)) * math.tanh(w * x + u * h + bh) + z * h
    got = fp.fastgrnn_step(w, u, bz, bh, zr, nr, x, h)
    assert abs(got - expect) < 1e-12, (got, expect)

    data = separable(fp, 16, 1)
    assert data.shape == (16, 3, 8)
    config = {
        "hidden_size": "4",
        "conv_channels": "4,8,4",
        "kernel_sizes": "3,3,3",
        "dropout_rate": "0",
        "learning_rate": "0.01",
        "batch_size": "8",
        "max_epochs": "200",
        "patience": "200",
    }
    model, history = fp.train(data, data, config)
    assert len(history) == 200
    scores = model.predict(data)
    metrics = fp.evaluate(scores, data.labels)
    assert metrics["accuracy"] == 1.0, metrics

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.bin")
        model.save(path)
        back = fp.Model.load(path)
        assert back.predict(data) == scores
        assert back.predict_window(data.features(3)) == scores[3]
        data.save(os.path.join(d, "data.bin"))
        assert fp.Dataset.load(os.path.join(d, "data.bin")).labels == data.labels

    try:
        fp.Model.load(os.path.join(ROOT, "README.md"))
    except OSError:
        pass
    else:
        raise AssertionError("loading a non-model file should fail")

    print(f"ok: {model!r}, {data!r}, max_f={metrics['max_f']:.3f}")


if __name__ == "__main__":
    main()
