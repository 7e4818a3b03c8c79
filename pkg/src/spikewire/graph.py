"""Source ANN graphs: typed layer DAG, reference evaluation, statistics.

The graph is the conversion source and the accuracy oracle: ``forward``
defines the exact semantics every converted network is compared against.
Models serialize to a JSON manifest plus a raw little-endian weight blob
(float32 for ANN checkpoints; the SNN side reuses the format with float64
tensors so conversion round-trips losslessly).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor
from .tensor import ShapeError, as_tensor

LAYER_KINDS = frozenset(
    {
        "Input",
        "Linear",
        "Conv2d",
        "ReLU",
        "GeLU",
        "SiLU",
        "MaxPool",
        "AvgPool",
        "LayerNorm",
        "Softmax",
        "MatMul",
        "ElemMul",
        "Add",
        "Flatten",
    }
)

_TWO_INPUT = frozenset({"MatMul", "ElemMul", "Add"})

LAYERNORM_EPS = 1e-5
SIGMA_FLOOR = 1e-6


class GraphError(ValueError):
    """Malformed graph: unknown kind, bad arity, cycle, or shape mismatch."""


@dataclass
class LayerNode:
    id: str
    kind: str
    params: dict = field(default_factory=dict)
    inputs: list = field(default_factory=list)


@dataclass
class AnnGraph:
    nodes: dict
    inputs: list
    outputs: list

    @classmethod
    def from_nodes(cls, nodes, outputs=None):
        table = {}
        for node in nodes:
            if node.id in table:
                raise GraphError(f"duplicate node id {node.id!r}")
            table[node.id] = node
        graph = cls(nodes=table, inputs=[n.id for n in nodes if n.kind == "Input"], outputs=[])
        graph.outputs = outputs or graph._sinks()
        graph.validate()
        return graph

    def _sinks(self):
        consumed = {src for node in self.nodes.values() for src in node.inputs}
        return [nid for nid in self.nodes if nid not in consumed]

    def topo_order(self):
        order, state = [], {}

        def visit(nid):
            mark = state.get(nid)
            if mark == "done":
                return
            if mark == "open":
                raise GraphError(f"cycle detected through node {nid!r}")
            state[nid] = "open"
            for src in self.nodes[nid].inputs:
                if src not in self.nodes:
                    raise GraphError(f"node {nid!r} references unknown input {src!r}")
                visit(src)
            state[nid] = "done"
            order.append(nid)

        for nid in self.nodes:
            visit(nid)
        return order

    def validate(self):
        if not self.inputs:
            raise GraphError("graph has no Input node")
        for node in self.nodes.values():
            if node.kind not in LAYER_KINDS:
                raise GraphError(f"unknown layer kind {node.kind!r}")
            want = 0 if node.kind == "Input" else (2 if node.kind in _TWO_INPUT else 1)
            if len(node.inputs) != want:
                raise GraphError(f"{node.kind} node {node.id!r} needs {want} inputs, has {len(node.inputs)}")
        for out in self.outputs:
            if out not in self.nodes:
                raise GraphError(f"unknown output node {out!r}")
        self.topo_order()

    def input_shapes(self):
        shapes = {}
        for nid in self.inputs:
            shape = self.nodes[nid].params.get("shape")
            if shape is None:
                raise GraphError(f"Input node {nid!r} does not declare a shape")
            shapes[nid] = tuple(int(s) for s in shape)
        return shapes


# ---------------------------------------------------------------------------
# reference layer semantics
# ---------------------------------------------------------------------------


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def gelu(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + tensor.erf(x / np.sqrt(2.0)))


def silu(x):
    x = np.asarray(x, dtype=np.float64)
    return x / (1.0 + np.exp(-x))


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def layernorm(x, axes=(-1,), gamma=None, beta=None, eps=LAYERNORM_EPS):
    x = np.asarray(x, dtype=np.float64)
    axes = tuple(int(a) for a in axes)
    mean = np.mean(x, axis=axes, keepdims=True)
    var = np.mean((x - mean) ** 2, axis=axes, keepdims=True)
    y = (x - mean) / np.sqrt(var + eps)
    if gamma is not None:
        y = y * gamma
    if beta is not None:
        y = y + beta
    return y


def _pool_windows(x, kernel, stride):
    if x.ndim != 3:
        raise ShapeError(f"pooling expects (C,H,W), got {x.shape}")
    kh, kw = int(kernel[0]), int(kernel[1])
    sy, sx = int(stride[0]), int(stride[1])
    c, h, w = x.shape
    oh = (h - kh) // sy + 1
    ow = (w - kw) // sx + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"pool output extents not positive for input {x.shape}")
    views = [
        x[:, ky : ky + sy * oh : sy, kx : kx + sx * ow : sx]
        for ky in range(kh)
        for kx in range(kw)
    ]
    return np.stack(views, axis=0)


def maxpool2d(x, kernel, stride=None):
    x = np.asarray(x, dtype=np.float64)
    stride = stride or kernel
    return np.max(_pool_windows(x, kernel, stride), axis=0)


def avgpool2d(x, kernel, stride=None):
    x = np.asarray(x, dtype=np.float64)
    stride = stride or kernel
    win = _pool_windows(x, kernel, stride)
    return np.sum(win, axis=0) / win.shape[0]


def flatten(x):
    return np.asarray(x, dtype=np.float64).reshape(-1)


def linear_apply(x, weight, bias=None):
    """Dense map on the trailing axis: y = x @ W.T (+ b)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        y = tensor.matmul(x[None, :], weight.T)[0]
    elif x.ndim == 2:
        y = tensor.matmul(x, weight.T)
    else:
        raise ShapeError(f"Linear expects 1-D or 2-D input, got {x.shape}")
    if bias is not None:
        y = y + bias
    return y


def unary_function(kind: str, params: dict):
    """Reference nonlinearity for a layer kind, as a closure over its params."""
    if kind == "ReLU":
        return relu
    if kind == "GeLU":
        return gelu
    if kind == "SiLU":
        return silu
    if kind == "Softmax":
        axis = int(params.get("axis", -1))
        return lambda x: softmax(x, axis=axis)
    if kind == "LayerNorm":
        axes = tuple(params.get("axes", (-1,)))
        gamma = params.get("gamma")
        beta = params.get("beta")
        eps = float(params.get("eps", LAYERNORM_EPS))
        return lambda x: layernorm(x, axes=axes, gamma=gamma, beta=beta, eps=eps)
    if kind == "MaxPool":
        kernel = params["kernel"]
        stride = params.get("stride") or kernel
        return lambda x: maxpool2d(x, kernel, stride)
    raise GraphError(f"{kind} is not a unary nonlinearity")


def _eval_node(node: LayerNode, args):
    kind = node.kind
    p = node.params
    if kind == "Linear":
        return linear_apply(args[0], p["weight"], p.get("bias"))
    if kind == "Conv2d":
        y = tensor.conv2d(args[0], p["weight"], p.get("stride", (1, 1)), p.get("pad", (0, 0)))
        bias = p.get("bias")
        return y if bias is None else y + np.asarray(bias)[:, None, None]
    if kind in ("ReLU", "GeLU", "SiLU", "Softmax", "LayerNorm", "MaxPool"):
        return unary_function(kind, p)(args[0])
    if kind == "AvgPool":
        return avgpool2d(args[0], p["kernel"], p.get("stride") or p["kernel"])
    if kind == "Flatten":
        return flatten(args[0])
    if kind == "MatMul":
        b = args[1].T if p.get("transpose_b") else args[1]
        return tensor.matmul(args[0], b)
    if kind == "ElemMul":
        if args[0].shape != args[1].shape:
            raise ShapeError(f"ElemMul operands disagree: {args[0].shape} vs {args[1].shape}")
        return args[0] * args[1]
    if kind == "Add":
        if args[0].shape != args[1].shape:
            raise ShapeError(f"Add operands disagree: {args[0].shape} vs {args[1].shape}")
        return args[0] + args[1]
    raise GraphError(f"cannot evaluate kind {kind!r}")


def forward(graph: AnnGraph, inputs) -> dict:
    """Topological evaluation; returns every node's activation by id."""
    if isinstance(inputs, dict):
        feed = {k: as_tensor(v, k) for k, v in inputs.items()}
    else:
        arrs = [inputs] if isinstance(inputs, np.ndarray) or np.isscalar(inputs) else list(inputs)
        if len(arrs) != len(graph.inputs):
            raise ShapeError(f"graph has {len(graph.inputs)} inputs, got {len(arrs)}")
        feed = {nid: as_tensor(a, nid) for nid, a in zip(graph.inputs, arrs)}
    declared = graph.input_shapes()
    for nid, arr in feed.items():
        if arr.shape != declared[nid]:
            raise ShapeError(f"input {nid!r} expects shape {declared[nid]}, got {arr.shape}")
    acts = {}
    for nid in graph.topo_order():
        node = graph.nodes[nid]
        if node.kind == "Input":
            acts[nid] = feed[nid]
        else:
            acts[nid] = _eval_node(node, [acts[src] for src in node.inputs])
    return acts


def infer_shapes(graph: AnnGraph) -> dict:
    """Static shape propagation from the declared input shapes."""
    shapes = dict(graph.input_shapes())
    for nid in graph.topo_order():
        node = graph.nodes[nid]
        if node.kind == "Input":
            continue
        ins = [shapes[src] for src in node.inputs]
        p = node.params
        if node.kind == "Linear":
            w = np.asarray(p["weight"])
            if ins[0][-1] != w.shape[1]:
                raise GraphError(f"{nid!r}: weight {w.shape} incompatible with input {ins[0]}")
            shapes[nid] = ins[0][:-1] + (w.shape[0],)
        elif node.kind == "Conv2d":
            shapes[nid] = tensor.conv2d_output_shape(
                ins[0], np.asarray(p["weight"]).shape, p.get("stride", (1, 1)), p.get("pad", (0, 0))
            )
        elif node.kind in ("MaxPool", "AvgPool"):
            kh, kw = p["kernel"]
            sy, sx = p.get("stride") or p["kernel"]
            c, h, w = ins[0]
            oh, ow = (h - kh) // sy + 1, (w - kw) // sx + 1
            if oh <= 0 or ow <= 0:
                raise GraphError(f"{nid!r}: pool output extents not positive")
            shapes[nid] = (c, oh, ow)
        elif node.kind == "Flatten":
            shapes[nid] = (int(np.prod(ins[0])),)
        elif node.kind == "MatMul":
            a, b = ins
            b = (b[1], b[0]) if node.params.get("transpose_b") else b
            if a[-1] != b[0]:
                raise GraphError(f"{nid!r}: matmul inner extents disagree ({a} vs {b})")
            shapes[nid] = a[:-1] + (b[1],)
        elif node.kind in ("ElemMul", "Add"):
            if ins[0] != ins[1]:
                raise GraphError(f"{nid!r}: operand shapes disagree ({ins[0]} vs {ins[1]})")
            shapes[nid] = ins[0]
        else:
            shapes[nid] = ins[0]
    return shapes


# ---------------------------------------------------------------------------
# activation statistics
# ---------------------------------------------------------------------------


@dataclass
class GaussianStats:
    """Per-channel population moments of observed pre-activations."""

    mean: np.ndarray
    std: np.ndarray
    count: int


class StreamingMoments:
    """Single-pass, mergeable mean/variance accumulator (per channel)."""

    def __init__(self, channels: int):
        self.count = 0
        self.mean = np.zeros(channels)
        self.m2 = np.zeros(channels)

    def update(self, values: np.ndarray):
        """values: (n_observations, channels)."""
        values = np.asarray(values, dtype=np.float64)
        n = values.shape[0]
        if n == 0:
            return
        batch_mean = values.mean(axis=0)
        batch_m2 = ((values - batch_mean) ** 2).sum(axis=0)
        self._combine(n, batch_mean, batch_m2)

    def merge(self, other: "StreamingMoments"):
        self._combine(other.count, other.mean, other.m2)

    def _combine(self, n, mean, m2):
        if n == 0:
            return
        total = self.count + n
        delta = mean - self.mean
        self.mean = self.mean + delta * (n / total)
        self.m2 = self.m2 + m2 + delta**2 * (self.count * n / total)
        self.count = total

    def finalize(self, sigma_floor: float = SIGMA_FLOOR) -> GaussianStats:
        if self.count == 0:
            raise ValueError("no observations")
        var = self.m2 / self.count  # population convention
        std = np.maximum(np.sqrt(var), sigma_floor)
        return GaussianStats(mean=self.mean.copy(), std=std, count=self.count)


def _channel_view(x: np.ndarray) -> np.ndarray:
    """(C,H,W) -> (H*W, C) channel observations; anything else -> (size, 1)."""
    if x.ndim == 3:
        return x.reshape(x.shape[0], -1).T
    return x.reshape(-1, 1)


def collect_relu_stats(graph: AnnGraph, dataset) -> dict:
    """Population mean/std of the tensor feeding each ReLU.

    Channel-wise for (C,H,W) pre-activations, whole-tensor otherwise.
    """
    samples = list(dataset) if not isinstance(dataset, np.ndarray) else list(dataset)
    if not samples:
        raise ValueError("dataset is empty")
    relu_ids = [nid for nid, n in graph.nodes.items() if n.kind == "ReLU"]
    acc: dict = {}
    for sample in samples:
        acts = forward(graph, sample)
        for rid in relu_ids:
            pre = acts[graph.nodes[rid].inputs[0]]
            view = _channel_view(pre)
            if rid not in acc:
                acc[rid] = StreamingMoments(view.shape[1])
            acc[rid].update(view)
    return {rid: m.finalize() for rid, m in acc.items()}


def collect_percentile_thresholds(graph: AnnGraph, dataset, p: float, c: float, per_channel: bool = False) -> dict:
    """c times the p-quantile of |activation| observed at every node output."""
    if not (0.0 < p < 1.0):
        raise ValueError("p must be in (0, 1)")
    if c <= 0:
        raise ValueError("scale c must be positive")
    samples = list(dataset)
    if not samples:
        raise ValueError("dataset is empty")
    observed: dict = {nid: [] for nid in graph.nodes}
    for sample in samples:
        acts = forward(graph, sample)
        for nid, val in acts.items():
            observed[nid].append(np.abs(np.asarray(val, dtype=np.float64)))
    out = {}
    for nid, chunks in observed.items():
        stack = np.stack(chunks)
        if per_channel and stack.ndim == 4:  # (n, C, H, W)
            q = np.quantile(stack.transpose(1, 0, 2, 3).reshape(stack.shape[1], -1), p, axis=1)
            out[nid] = c * q
        else:
            out[nid] = float(c * np.quantile(stack.reshape(-1), p))
    return out


# ---------------------------------------------------------------------------
# manifests and datasets
# ---------------------------------------------------------------------------

_TENSOR_PARAMS = ("weight", "bias", "gamma", "beta", "fold")


def _split_params(params: dict):
    plain, tensors = {}, {}
    for key, val in params.items():
        if key in _TENSOR_PARAMS and val is not None:
            tensors[key] = np.asarray(val, dtype=np.float64)
        elif isinstance(val, np.ndarray):
            tensors[key] = np.asarray(val, dtype=np.float64)
        elif val is not None:
            plain[key] = val
    return plain, tensors


def save_manifest(path, schema: str, nodes, inputs, outputs, extra=None, dtype: str = "<f4"):
    """Write a JSON manifest plus a raw little-endian weight blob."""
    path = Path(path)
    blob_path = path.with_suffix(".bin")
    offset = 0
    records = []
    chunks = []
    itemsize = np.dtype(dtype).itemsize
    for node in nodes:
        plain, tensors = _split_params(node.params)
        trec = {}
        for key in sorted(tensors):
            arr = np.ascontiguousarray(tensors[key].astype(np.dtype(dtype)))
            trec[key] = {"offset": offset, "shape": list(arr.shape), "dtype": dtype}
            chunks.append(arr.tobytes())
            offset += arr.size * itemsize
        records.append({"id": node.id, "kind": node.kind, "inputs": list(node.inputs), "params": plain, "tensors": trec})
    manifest = {
        "schema": schema,
        "inputs": list(inputs),
        "outputs": list(outputs),
        "weights_file": blob_path.name,
        "nodes": records,
    }
    if extra:
        manifest.update(extra)
    blob_path.write_bytes(b"".join(chunks))
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_manifest(path):
    """Read a manifest; returns (manifest_dict, node_list) with tensors inlined."""
    path = Path(path)
    manifest = json.loads(path.read_text())
    blob = (path.parent / manifest["weights_file"]).read_bytes()
    nodes = []
    for rec in manifest["nodes"]:
        params = dict(rec.get("params", {}))
        for key, meta in rec.get("tensors", {}).items():
            dt = np.dtype(meta["dtype"])
            count = int(np.prod(meta["shape"])) if meta["shape"] else 1
            arr = np.frombuffer(blob, dtype=dt, count=count, offset=meta["offset"])
            params[key] = arr.reshape(meta["shape"]).astype(np.float64)
        nodes.append(LayerNode(id=rec["id"], kind=rec["kind"], params=params, inputs=list(rec["inputs"])))
    return manifest, nodes


def save_model(graph: AnnGraph, path):
    """ANN checkpoint: float32 weights, row-major, little-endian."""
    order = graph.topo_order()
    nodes = [graph.nodes[nid] for nid in order]
    return save_manifest(path, "spikewire-ann-v1", nodes, graph.inputs, graph.outputs, dtype="<f4")


def load_model(path) -> AnnGraph:
    manifest, nodes = load_manifest(path)
    if manifest.get("schema") != "spikewire-ann-v1":
        raise GraphError(f"not an ANN manifest: schema {manifest.get('schema')!r}")
    return AnnGraph.from_nodes(nodes, outputs=manifest["outputs"])


def load_dataset(path, fmt: str, input_shape) -> np.ndarray:
    """Dataset loading: 'csv' (one sample per row) or 'raw' (directory of f4 blobs)."""
    path = Path(path)
    shape = tuple(int(s) for s in input_shape)
    size = int(np.prod(shape))
    if fmt == "csv":
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            data = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
        if data.size == 0:
            raise ValueError(f"dataset {path} is empty")
        if data.shape[1] != size:
            raise ShapeError(f"CSV rows have {data.shape[1]} values, input needs {size}")
        return data.reshape((-1,) + shape)
    if fmt == "raw":
        files = sorted(p for p in path.iterdir() if p.is_file())
        if not files:
            raise ValueError(f"no raw tensor files in {path}")
        samples = []
        for f in files:
            arr = np.frombuffer(f.read_bytes(), dtype="<f4").astype(np.float64)
            if arr.size != size:
                raise ShapeError(f"{f.name} holds {arr.size} values, input needs {size}")
            samples.append(arr.reshape(shape))
        return np.stack(samples)
    raise ValueError(f"unknown dataset format {fmt!r} (expected 'csv' or 'raw')")
