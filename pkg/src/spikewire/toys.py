"""Bundled toy models and synthetic datasets.

Everything the CLI and the test suite exercise end to end is generated
here, so the repository is self-contained: a small ReLU MLP, a tiny CNN,
and a single attention head, plus Gaussian calibration data.
"""

from __future__ import annotations

import numpy as np

from .graph import AnnGraph, LayerNode


def make_gaussian_dataset(n: int, shape, seed: int = 0, mu: float = 0.0, sigma: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return mu + sigma * rng.standard_normal((int(n),) + tuple(int(s) for s in shape))


def make_mlp(dims=(16, 8, 4), seed: int = 0) -> AnnGraph:
    """ReLU MLP: Linear/ReLU pairs with a linear head."""
    if len(dims) < 2:
        raise ValueError("need at least input and output dims")
    rng = np.random.default_rng(seed)
    nodes = [LayerNode(id="in", kind="Input", params={"shape": [dims[0]]})]
    prev = "in"
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_out, fan_in))
        b = rng.normal(0.0, 0.1, size=(fan_out,))
        lid = f"fc{i + 1}"
        nodes.append(LayerNode(id=lid, kind="Linear", params={"weight": w, "bias": b}, inputs=[prev]))
        prev = lid
        if i < len(dims) - 2:
            rid = f"relu{i + 1}"
            nodes.append(LayerNode(id=rid, kind="ReLU", inputs=[prev]))
            prev = rid
    return AnnGraph.from_nodes(nodes)


def make_cnn(seed: int = 0) -> AnnGraph:
    """Tiny CNN: two conv/ReLU stages, average pool, flatten, dense head.

    The second conv sits directly after a ReLU, so conversion exercises the
    channel-wise threshold-iteration path.
    """
    rng = np.random.default_rng(seed)
    c_in, h, w = 1, 8, 8
    c_mid = 4
    conv1_w = rng.normal(0.0, 1.0 / 3.0, size=(c_mid, c_in, 3, 3))
    conv1_b = rng.normal(0.0, 0.1, size=(c_mid,))
    conv2_w = rng.normal(0.0, 1.0 / 6.0, size=(c_mid, c_mid, 3, 3))
    conv2_b = rng.normal(0.0, 0.1, size=(c_mid,))
    fc_in = c_mid * 4 * 4
    fc_w = rng.normal(0.0, 1.0 / np.sqrt(fc_in), size=(4, fc_in))
    fc_b = rng.normal(0.0, 0.1, size=(4,))
    nodes = [
        LayerNode(id="in", kind="Input", params={"shape": [c_in, h, w]}),
        LayerNode(
            id="conv1",
            kind="Conv2d",
            params={"weight": conv1_w, "bias": conv1_b, "stride": [1, 1], "pad": [1, 1]},
            inputs=["in"],
        ),
        LayerNode(id="relu1", kind="ReLU", inputs=["conv1"]),
        LayerNode(
            id="conv2",
            kind="Conv2d",
            params={"weight": conv2_w, "bias": conv2_b, "stride": [1, 1], "pad": [1, 1]},
            inputs=["relu1"],
        ),
        LayerNode(id="relu2", kind="ReLU", inputs=["conv2"]),
        LayerNode(id="pool1", kind="AvgPool", params={"kernel": [2, 2], "stride": [2, 2]}, inputs=["relu2"]),
        LayerNode(id="flat", kind="Flatten", inputs=["pool1"]),
        LayerNode(id="fc1", kind="Linear", params={"weight": fc_w, "bias": fc_b}, inputs=["flat"]),
    ]
    return AnnGraph.from_nodes(nodes)


def make_attention(dim: int = 4, seq: int = 3, seed: int = 0) -> AnnGraph:
    """Single attention head: Q/K/V projections, scores, softmax, values.

    The 1/sqrt(dim) score scaling is folded into the query projection.
    """
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(dim)

    def proj(factor=1.0):
        return rng.normal(0.0, 1.0 / np.sqrt(dim), size=(dim, dim)) * factor

    nodes = [
        LayerNode(id="in", kind="Input", params={"shape": [seq, dim]}),
        LayerNode(id="wq", kind="Linear", params={"weight": proj(scale), "bias": rng.normal(0, 0.05, dim)}, inputs=["in"]),
        LayerNode(id="wk", kind="Linear", params={"weight": proj(), "bias": rng.normal(0, 0.05, dim)}, inputs=["in"]),
        LayerNode(id="wv", kind="Linear", params={"weight": proj(), "bias": rng.normal(0, 0.05, dim)}, inputs=["in"]),
        LayerNode(id="scores", kind="MatMul", params={"transpose_b": True}, inputs=["wq", "wk"]),
        LayerNode(id="attn", kind="Softmax", params={"axis": -1}, inputs=["scores"]),
        LayerNode(id="context", kind="MatMul", params={"transpose_b": False}, inputs=["attn", "wv"]),
    ]
    return AnnGraph.from_nodes(nodes)


TOY_BUILDERS = {"mlp": make_mlp, "cnn": make_cnn, "attention": make_attention}


def make_toy(kind: str, seed: int = 0) -> AnnGraph:
    if kind not in TOY_BUILDERS:
        raise ValueError(f"unknown toy kind {kind!r}; choose from {sorted(TOY_BUILDERS)}")
    return TOY_BUILDERS[kind](seed=seed)
