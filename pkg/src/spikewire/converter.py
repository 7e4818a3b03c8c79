"""ANN-to-SNN graph conversion.

Structural rules:

* every weighted node (dense kernel, conv kernel, binary product) gets a
  differential identity spiking neuron immediately upstream on each weighted
  input edge, one per source node (no duplicates between consecutive
  kernels);
* nonlinear layers become graded units; the ReLU's unit is followed by the
  calibrated spiking neuron of its insertion point, so the pair realizes the
  clipped-and-quantized ReLU the threshold solver models;
* residual adds pass streams through unchanged;
* biases are stripped from kernels and folded into the initial state of the
  first stateful node downstream (neuron rate-memory, graded membrane, or
  the output decoder's running value), propagating through any linear ops in
  between.

The converted graph is coding-mode aware but structurally identical for
differential and rate simulation; rate mode applies folded constants as a
per-step input current instead of an initial state.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import graph as G
from . import tensor

SNN_KINDS = frozenset(
    {
        "Input",
        "LinearKernel",
        "ConvKernel",
        "AvgPoolKernel",
        "FlattenKernel",
        "Add",
        "DiffNeuron",
        "UnaryGraded",
        "BinaryGraded",
        "Output",
    }
)

_UNARY_KINDS = {"ReLU", "GeLU", "SiLU", "Softmax", "LayerNorm", "MaxPool"}
_WEIGHTED_ANN = {"Linear", "Conv2d", "MatMul", "ElemMul"}

# graded units that commute with positive rescaling of their input
_HOMOGENEOUS_FUNCS = {"ReLU", "MaxPool"}


class ConversionError(ValueError):
    """Conversion cannot proceed (missing threshold, unsupported node, ...)."""


class SnnValidationError(ValueError):
    """Converted graph violates a structural invariant."""


@dataclass
class SnnNode:
    id: str
    kind: str
    params: dict = field(default_factory=dict)
    inputs: list = field(default_factory=list)


@dataclass
class SnnGraph:
    nodes: dict
    inputs: list
    outputs: list
    mode: str = "differential"
    n_thresholds: int = 1
    metadata: dict = field(default_factory=dict)

    def topo_order(self):
        order, state = [], {}

        def visit(nid):
            mark = state.get(nid)
            if mark == "done":
                return
            if mark == "open":
                raise SnnValidationError(f"cycle through {nid!r}")
            state[nid] = "open"
            for src in self.nodes[nid].inputs:
                if src not in self.nodes:
                    raise SnnValidationError(f"{nid!r} references unknown node {src!r}")
                visit(src)
            state[nid] = "done"
            order.append(nid)

        for nid in self.nodes:
            visit(nid)
        return order

    def neurons(self):
        return [nid for nid, n in self.nodes.items() if n.kind == "DiffNeuron"]


def insertion_points(graph: G.AnnGraph) -> dict:
    """Spiking-neuron insertion points: source node id -> calibration method.

    A neuron is inserted on every edge feeding a weighted node, keyed by the
    producing node. Sources that are ReLU layers calibrate by threshold
    iteration on their Gaussian pre-activation stats; everything else uses
    the percentile path.
    """
    points = {}
    for node in graph.nodes.values():
        if node.kind in _WEIGHTED_ANN:
            srcs = node.inputs if node.kind in ("MatMul", "ElemMul") else node.inputs[:1]
            for src in srcs:
                method = "iteration" if graph.nodes[src].kind == "ReLU" else "percentile"
                points[src] = method
    return points


def _normalize_thresholds(thresholds: dict) -> dict:
    out = {}
    for key, val in thresholds.items():
        if isinstance(val, dict):
            out[key] = {"theta": val["theta"], "method": val.get("method", "unspecified")}
        else:
            out[key] = {"theta": val, "method": "unspecified"}
    return out


def _theta_array(theta):
    th = np.asarray(theta, dtype=np.float64)
    if th.ndim == 0:
        return float(th)
    if th.ndim == 1:
        return th.copy()
    raise ConversionError(f"threshold must be scalar or per-channel 1-D, got shape {th.shape}")


def convert(graph: G.AnnGraph, thresholds: dict, mode: str = "differential", n: int = 4) -> SnnGraph:
    """Map an ANN graph onto spiking kernels, neurons, and graded units."""
    if mode not in ("differential", "rate"):
        raise ConversionError(f"unknown mode {mode!r}")
    if not (1 <= int(n) <= 30):
        raise ConversionError("threshold count n must be in [1, 30]")
    shapes = G.infer_shapes(graph)
    thresholds = _normalize_thresholds(thresholds)

    needed = insertion_points(graph)
    missing = sorted(k for k in needed if k not in thresholds)
    if missing:
        raise ConversionError(f"missing thresholds for insertion points: {missing}")

    unsupported = sorted({nd.kind for nd in graph.nodes.values() if nd.kind not in G.LAYER_KINDS})
    if unsupported:
        raise ConversionError(f"unsupported node kinds: {unsupported}")

    snn_nodes: list[SnnNode] = []
    out_id: dict = {}
    pending: dict = {}  # snn node id -> full-shape constant riding its stream
    neuron_cache: dict = {}
    metadata: dict = {"thresholds": {}}

    def add_node(node: SnnNode):
        snn_nodes.append(node)
        return node.id

    def take_pending(snn_src: str):
        return pending.get(snn_src)

    def ensure_neuron(src_ann: str) -> str:
        if src_ann in neuron_cache:
            return neuron_cache[src_ann]
        producer = out_id[src_ann]
        entry = thresholds[src_ann]
        theta = _theta_array(entry["theta"])
        nid = f"{src_ann}.spike"
        fold = take_pending(producer)
        params = {"theta": theta, "n": int(n)}
        if fold is not None:
            params["fold"] = fold
        add_node(SnnNode(id=nid, kind="DiffNeuron", params=params, inputs=[producer]))
        metadata["thresholds"][nid] = {
            "source": src_ann,
            "method": entry["method"],
            "theta": theta.tolist() if isinstance(theta, np.ndarray) else theta,
        }
        neuron_cache[src_ann] = nid
        return nid

    for ann_id in graph.topo_order():
        node = graph.nodes[ann_id]
        kind = node.kind
        p = node.params
        if kind == "Input":
            out_id[ann_id] = add_node(
                SnnNode(id=ann_id, kind="Input", params={"shape": list(shapes[ann_id])}, inputs=[])
            )
        elif kind in ("Linear", "Conv2d"):
            upstream = ensure_neuron(node.inputs[0])
            weight = np.asarray(p["weight"], dtype=np.float64)
            if kind == "Linear":
                kid = add_node(SnnNode(id=ann_id, kind="LinearKernel", params={"weight": weight}, inputs=[upstream]))
            else:
                kid = add_node(
                    SnnNode(
                        id=ann_id,
                        kind="ConvKernel",
                        params={
                            "weight": weight,
                            "stride": list(p.get("stride", (1, 1))),
                            "pad": list(p.get("pad", (0, 0))),
                        },
                        inputs=[upstream],
                    )
                )
            out_id[ann_id] = kid
            bias = p.get("bias")
            if bias is not None:
                bias = np.asarray(bias, dtype=np.float64)
                if kind == "Conv2d":
                    const = np.broadcast_to(bias[:, None, None], shapes[ann_id]).copy()
                else:
                    const = np.broadcast_to(bias, shapes[ann_id]).copy()
                pending[kid] = const
        elif kind in _UNARY_KINDS:
            producer = out_id[node.inputs[0]]
            fold = take_pending(producer)
            params = {"func": kind, "func_params": _func_params(kind, p)}
            if fold is not None:
                params["fold"] = fold
            out_id[ann_id] = add_node(SnnNode(id=ann_id, kind="UnaryGraded", params=params, inputs=[producer]))
        elif kind in ("MatMul", "ElemMul"):
            na = ensure_neuron(node.inputs[0])
            nb = ensure_neuron(node.inputs[1])
            params = {"op": "matmul" if kind == "MatMul" else "elemmul"}
            if kind == "MatMul":
                params["transpose_b"] = bool(p.get("transpose_b", False))
            out_id[ann_id] = add_node(SnnNode(id=ann_id, kind="BinaryGraded", params=params, inputs=[na, nb]))
        elif kind == "Add":
            pa, pb = (out_id[s] for s in node.inputs)
            out_id[ann_id] = add_node(SnnNode(id=ann_id, kind="Add", params={}, inputs=[pa, pb]))
            ca, cb = pending.get(pa), pending.get(pb)
            if ca is not None or cb is not None:
                zeros = np.zeros(shapes[ann_id])
                pending[ann_id] = (ca if ca is not None else zeros) + (cb if cb is not None else zeros)
        elif kind == "AvgPool":
            producer = out_id[node.inputs[0]]
            kernel = list(p["kernel"])
            stride = list(p.get("stride") or p["kernel"])
            kid = add_node(
                SnnNode(id=ann_id, kind="AvgPoolKernel", params={"kernel": kernel, "stride": stride}, inputs=[producer])
            )
            out_id[ann_id] = kid
            const = pending.get(producer)
            if const is not None:
                pending[kid] = G.avgpool2d(const, kernel, stride)
        elif kind == "Flatten":
            producer = out_id[node.inputs[0]]
            kid = add_node(SnnNode(id=ann_id, kind="FlattenKernel", params={}, inputs=[producer]))
            out_id[ann_id] = kid
            const = pending.get(producer)
            if const is not None:
                pending[kid] = G.flatten(const)
        else:  # pragma: no cover - kinds are pre-validated
            raise ConversionError(f"unsupported node kind {kind!r}")

    outputs = []
    for out in graph.outputs:
        producer = out_id[out]
        oid = f"{out}.out"
        fold = pending.get(producer)
        params = {"fold": fold} if fold is not None else {}
        add_node(SnnNode(id=oid, kind="Output", params=params, inputs=[producer]))
        outputs.append(oid)

    snn = SnnGraph(
        nodes={nd.id: nd for nd in snn_nodes},
        inputs=list(graph.inputs),
        outputs=outputs,
        mode=mode,
        n_thresholds=int(n),
        metadata=metadata,
    )
    validate_snn(snn)
    return snn


def _func_params(kind: str, p: dict) -> dict:
    if kind == "Softmax":
        return {"axis": int(p.get("axis", -1))}
    if kind == "LayerNorm":
        out = {"axes": list(p.get("axes", (-1,))), "eps": float(p.get("eps", G.LAYERNORM_EPS))}
        for key in ("gamma", "beta"):
            if p.get(key) is not None:
                out[key] = np.asarray(p[key], dtype=np.float64)
        return out
    if kind == "MaxPool":
        return {"kernel": list(p["kernel"]), "stride": list(p.get("stride") or p["kernel"])}
    return {}


def graded_callable(params: dict):
    """Build the graded unit's F from serialized node params."""
    kind = params["func"]
    fp = dict(params.get("func_params", {}))
    if kind == "ReLU":
        return G.relu
    if kind == "GeLU":
        return G.gelu
    if kind == "SiLU":
        return G.silu
    if kind == "Softmax":
        axis = int(fp.get("axis", -1))
        return lambda x: G.softmax(x, axis=axis)
    if kind == "LayerNorm":
        axes = tuple(fp.get("axes", (-1,)))
        return lambda x: G.layernorm(x, axes=axes, gamma=fp.get("gamma"), beta=fp.get("beta"), eps=float(fp.get("eps", G.LAYERNORM_EPS)))
    if kind == "MaxPool":
        return lambda x: G.maxpool2d(x, fp["kernel"], fp.get("stride") or fp["kernel"])
    raise ConversionError(f"unknown graded function {kind!r}")


def binary_callable(params: dict):
    if params["op"] == "matmul":
        if params.get("transpose_b"):
            return lambda a, b: tensor.matmul(a, np.asarray(b).T)
        return tensor.matmul
    if params["op"] == "elemmul":
        return lambda a, b: a * b
    raise ConversionError(f"unknown binary op {params['op']!r}")


def validate_snn(snn: SnnGraph):
    """Structural audit of the converted graph."""
    order = snn.topo_order()
    for nid in order:
        node = snn.nodes[nid]
        if node.kind not in SNN_KINDS:
            raise SnnValidationError(f"unknown SNN kind {node.kind!r} at {nid!r}")
        if "bias" in node.params:
            raise SnnValidationError(f"node {nid!r} carries a bias term")
        if node.kind in ("LinearKernel", "ConvKernel"):
            src = snn.nodes[node.inputs[0]]
            if src.kind != "DiffNeuron":
                raise SnnValidationError(f"kernel {nid!r} lacks an upstream spiking neuron (found {src.kind})")
        if node.kind == "BinaryGraded":
            for src_id in node.inputs:
                if snn.nodes[src_id].kind != "DiffNeuron":
                    raise SnnValidationError(
                        f"binary unit {nid!r} operand {src_id!r} is not a spiking neuron"
                    )
        if node.kind == "DiffNeuron":
            theta = np.asarray(node.params["theta"], dtype=np.float64)
            if np.any(theta <= 0) or not np.all(np.isfinite(theta)):
                raise SnnValidationError(f"neuron {nid!r} has a non-positive threshold")
            if not (1 <= int(node.params["n"]) <= 30):
                raise SnnValidationError(f"neuron {nid!r} has invalid threshold count")
        fold = node.params.get("fold")
        if fold is not None and not np.all(np.isfinite(np.asarray(fold))):
            raise SnnValidationError(f"node {nid!r} has a non-finite folded constant")
    for out in snn.outputs:
        if snn.nodes[out].kind != "Output":
            raise SnnValidationError(f"output {out!r} is not an Output node")


# ---------------------------------------------------------------------------
# hardware-path weight normalization
# ---------------------------------------------------------------------------


def _bcast(theta, ndim: int, axis: int = 0):
    th = np.asarray(theta, dtype=np.float64)
    if th.ndim == 0:
        return th
    shape = [1] * ndim
    shape[axis] = th.size
    return th.reshape(shape)


def normalize_weights(snn: SnnGraph) -> SnnGraph:
    """Rescale kernels so every neuron runs at base threshold 1.

    Kernel weights absorb the upstream threshold and pre-divide by the
    downstream one; folded constants divide by their node's downstream
    threshold; trailing kernels absorb the last threshold so outputs stay in
    real units. Only neurons and positively homogeneous graded units (ReLU,
    MaxPool) commute with this rescaling; anything else is refused.
    """
    snn = copy.deepcopy(snn)
    order = snn.topo_order()
    consumers: dict = {nid: [] for nid in snn.nodes}
    for node in snn.nodes.values():
        for src in node.inputs:
            consumers[src].append(node.id)

    for node in snn.nodes.values():
        if node.kind == "BinaryGraded":
            raise ConversionError("normalize_weights does not support binary product units")
        if node.kind == "UnaryGraded" and node.params["func"] not in _HOMOGENEOUS_FUNCS:
            raise ConversionError(
                f"normalize_weights cannot rescale through {node.params['func']} (not positively homogeneous)"
            )

    # nearest downstream neuron threshold (1.0 past the last neuron)
    down: dict = {}
    for nid in reversed(order):
        node = snn.nodes[nid]
        if node.kind == "DiffNeuron":
            down[nid] = np.asarray(node.params["theta"], dtype=np.float64)
            continue
        vals = [down[c] for c in consumers[nid]]
        if not vals:
            down[nid] = np.asarray(1.0)
        else:
            for v in vals[1:]:
                if not np.array_equal(vals[0], v):
                    raise ConversionError(f"node {nid!r} fans out to branches with different thresholds")
            down[nid] = vals[0]

    orig_theta = {
        nid: np.asarray(node.params["theta"], dtype=np.float64)
        for nid, node in snn.nodes.items()
        if node.kind == "DiffNeuron"
    }

    def theta_of(nid):
        return orig_theta[nid]

    input_scales = {}
    output_scales = {}
    for nid in order:
        node = snn.nodes[nid]
        if node.kind == "Input":
            input_scales[nid] = down[nid].tolist() if down[nid].ndim else float(down[nid])
        elif node.kind in ("LinearKernel", "ConvKernel"):
            up = theta_of(node.inputs[0])
            dn = down[nid]
            w = np.asarray(node.params["weight"], dtype=np.float64)
            if node.kind == "LinearKernel":
                if up.ndim or dn.ndim:
                    raise ConversionError("channel-wise thresholds around a dense kernel are not supported")
                node.params["weight"] = w * (up / dn)
            else:
                w = w * _bcast(up, 4, axis=1)
                node.params["weight"] = w / _bcast(dn, 4, axis=0)
        elif node.kind in ("UnaryGraded", "DiffNeuron"):
            fold = node.params.get("fold")
            if fold is not None:
                dn = down[nid]
                node.params["fold"] = np.asarray(fold, dtype=np.float64) / _bcast(dn, np.ndim(fold), axis=0)
        elif node.kind == "Output":
            # the arriving stream is in units of the producer's downstream
            # threshold; rescale the decoder accordingly
            dn = down[node.inputs[0]]
            fold = node.params.get("fold")
            if fold is not None:
                node.params["fold"] = np.asarray(fold, dtype=np.float64) / _bcast(dn, np.ndim(fold), axis=0)
            output_scales[nid] = dn.tolist() if dn.ndim else float(dn)
        if node.kind == "DiffNeuron":
            th = theta_of(nid)
            node.params["theta"] = np.ones(th.shape) if th.ndim else 1.0

    snn.metadata = dict(snn.metadata)
    snn.metadata["normalized"] = True
    snn.metadata["input_scales"] = input_scales
    snn.metadata["output_scales"] = output_scales
    validate_snn(snn)
    return snn


# ---------------------------------------------------------------------------
# serialization (same manifest format as the ANN side, float64 tensors)
# ---------------------------------------------------------------------------


def _flatten_node_for_save(node: SnnNode) -> G.LayerNode:
    params = {}
    for key, val in node.params.items():
        if key == "func_params":
            for fk, fv in val.items():
                params[f"func.{fk}"] = fv
        else:
            params[key] = val
    return G.LayerNode(id=node.id, kind=node.kind, params=params, inputs=node.inputs)


def _unflatten_node(node: G.LayerNode) -> SnnNode:
    params, func_params = {}, {}
    for key, val in node.params.items():
        if key.startswith("func."):
            func_params[key[5:]] = val
        else:
            params[key] = val
    if func_params or params.get("func"):
        params["func_params"] = func_params
    return SnnNode(id=node.id, kind=node.kind, params=params, inputs=list(node.inputs))


def save_snn(snn: SnnGraph, path):
    nodes = [_flatten_node_for_save(snn.nodes[nid]) for nid in snn.topo_order()]
    extra = {
        "mode": snn.mode,
        "n_thresholds": snn.n_thresholds,
        "metadata": _jsonable(snn.metadata),
    }
    return G.save_manifest(path, "spikewire-snn-v1", nodes, snn.inputs, snn.outputs, extra=extra, dtype="<f8")


def load_snn(path) -> SnnGraph:
    manifest, nodes = G.load_manifest(path)
    if manifest.get("schema") != "spikewire-snn-v1":
        raise SnnValidationError(f"not an SNN manifest: schema {manifest.get('schema')!r}")
    snn = SnnGraph(
        nodes={n.id: _unflatten_node(n) for n in nodes},
        inputs=list(manifest["inputs"]),
        outputs=list(manifest["outputs"]),
        mode=manifest.get("mode", "differential"),
        n_thresholds=int(manifest.get("n_thresholds", 1)),
        metadata=manifest.get("metadata", {}),
    )
    validate_snn(snn)
    return snn


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj
