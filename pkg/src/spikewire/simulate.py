"""Discrete-time SNN simulation, decoding, and spike/energy accounting.

The runner steps every node once per timestep in topological order. Inputs
are encoded as an impulse at t=1 under differential coding (the encoded
value is then constant over time) or repeated every step under rate coding.
The primary output is decoded incrementally, r[t] = r[t-1] + x[t]/t for
differential traces and a running mean for rate traces, starting from any
folded bias.

Synaptic operations (ACs) are counted event-driven: a nonzero element
entering a kernel or a binary product unit costs one accumulate per weight
it touches. Graded-unit internal arithmetic and pooling are treated as
bookkeeping and not charged, matching an energy model that only charges
dense, convolutional, and matrix-product layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import graded as GU
from . import graph as G
from . import neurons as NR
from . import tensor
from .converter import SnnGraph, binary_callable, graded_callable
from .tensor import ShapeError

E_MAC_PJ = 4.6
E_AC_PJ = 0.9

_OVERFLOW_FACTOR = 1e6


class SimulationOverflowError(ArithmeticError):
    """Membrane magnitude exploded; thresholds are likely miscalibrated."""


def encode_input(x, timesteps: int, mode: str = "differential") -> list:
    """Differential: the value at t=1 then zeros; rate: the value every step."""
    if timesteps < 1:
        raise ValueError("timesteps must be >= 1")
    x = tensor.as_tensor(x, "input")
    if mode == "differential":
        return [x] + [np.zeros_like(x) for _ in range(timesteps - 1)]
    if mode == "rate":
        return [x for _ in range(timesteps)]
    raise ValueError(f"unknown coding mode {mode!r}")


@dataclass
class SimulationTrace:
    timesteps: int
    mode: str
    firing_rule: str
    output_id: str
    stream: list = field(default_factory=list)  # x^L[t] per step
    decoded: list = field(default_factory=list)  # r^L[t] per step
    spike_counts: dict = field(default_factory=dict)
    ac_counts: dict = field(default_factory=dict)
    spike_history: list = field(default_factory=list)  # cumulative, per step
    ac_history: list = field(default_factory=list)
    streams: dict = field(default_factory=dict)  # node id -> per-step values

    @property
    def spike_total(self) -> int:
        return int(sum(self.spike_counts.values()))

    @property
    def ac_total(self) -> int:
        return int(sum(self.ac_counts.values()))


def _conv_window_counts(in_shape, kernel_hw, stride, pad, out_hw):
    """Number of sliding windows covering each input pixel."""
    _, h, w = in_shape
    kh, kw = kernel_hw
    sy, sx = stride
    py, px = pad
    oh, ow = out_hw

    def axis_counts(extent, k, s, p, out):
        counts = np.zeros(extent, dtype=np.int64)
        for o in range(out):
            start = o * s - p
            lo = max(start, 0)
            hi = min(start + k, extent)
            if hi > lo:
                counts[lo:hi] += 1
        return counts

    return np.outer(axis_counts(h, kh, sy, py, oh), axis_counts(w, kw, sx, px, ow))


class _Runtime:
    """Per-run mutable node states and counters."""

    def __init__(self, snn: SnnGraph, mode: str, firing_rule: str):
        self.snn = snn
        self.mode = mode
        self.firing_rule = firing_rule
        self.states: dict = {}
        self.out_r: dict = {}
        self.ac_counts = {nid: 0 for nid in snn.nodes}
        self.prev_spikes = {nid: 0 for nid in snn.nodes}

    def fold_of(self, node):
        fold = node.params.get("fold")
        return None if fold is None else np.asarray(fold, dtype=np.float64)

    def neuron_state(self, node, shape) -> NR.NeuronLayerState:
        st = self.states.get(node.id)
        if st is None:
            ladder = NR.ThresholdLadder(theta=node.params["theta"], n=int(node.params["n"]))
            fold = self.fold_of(node)
            m_r0 = fold if (self.mode == "differential" and fold is not None) else None
            st = NR.NeuronLayerState.create(ladder, shape, m_r0=m_r0, firing_rule=self.firing_rule)
            self.states[node.id] = st
        return st

    def unary_state(self, node, shape) -> GU.UnaryGradedState:
        st = self.states.get(node.id)
        if st is None:
            func = graded_callable(node.params)
            fold = self.fold_of(node)
            m0 = fold if (self.mode == "differential" and fold is not None) else None
            st = GU.UnaryGradedState.create(func, shape, m0=m0)
            self.states[node.id] = st
        return st

    def binary_state(self, node, shape_a, shape_b) -> GU.BinaryGradedState:
        st = self.states.get(node.id)
        if st is None:
            op = binary_callable(node.params)
            a0 = node.params.get("fold_a") if self.mode == "differential" else None
            b0 = node.params.get("fold_b") if self.mode == "differential" else None
            st = GU.BinaryGradedState.create(op, shape_a, shape_b, a0=a0, b0=b0)
            self.states[node.id] = st
        return st


def _rate_bias(runtime: _Runtime, node, x):
    # rate coding applies the folded constant as a per-step input current
    fold = runtime.fold_of(node)
    if runtime.mode == "rate" and fold is not None:
        return x + fold
    return x


def run(
    snn: SnnGraph,
    inputs,
    timesteps: int,
    mode: str | None = None,
    firing_rule: str = "argmin",
    record_nodes=(),
    count_acs: bool = True,
) -> SimulationTrace:
    """Drive the SNN for ``timesteps`` steps and decode the primary output."""
    mode = mode or snn.mode
    if mode not in ("differential", "rate"):
        raise ValueError(f"unknown coding mode {mode!r}")
    if firing_rule not in ("argmin", "hw"):
        raise ValueError(f"unknown firing rule {firing_rule!r}")

    if isinstance(inputs, dict):
        feed = {k: tensor.as_tensor(v, k) for k, v in inputs.items()}
    else:
        arrs = [inputs] if isinstance(inputs, np.ndarray) or np.isscalar(inputs) else list(inputs)
        if len(arrs) != len(snn.inputs):
            raise ShapeError(f"graph has {len(snn.inputs)} inputs, got {len(arrs)}")
        feed = {nid: tensor.as_tensor(a, nid) for nid, a in zip(snn.inputs, arrs)}
    for nid in snn.inputs:
        if nid not in feed:
            raise ShapeError(f"missing input {nid!r}")
        declared = snn.nodes[nid].params.get("shape")
        if declared is not None and tuple(declared) != feed[nid].shape:
            raise ShapeError(f"input {nid!r} expects shape {tuple(declared)}, got {feed[nid].shape}")

    input_scales = snn.metadata.get("input_scales", {})
    encoded = {}
    for nid in snn.inputs:
        x = feed[nid]
        scale = input_scales.get(nid)
        if scale is not None:
            scale_arr = np.asarray(scale, dtype=np.float64)
            if scale_arr.ndim:
                scale_arr = scale_arr.reshape(scale_arr.shape + (1,) * (x.ndim - scale_arr.ndim))
            x = x / scale_arr
        encoded[nid] = encode_input(x, timesteps, mode)

    output_id = snn.outputs[0]
    output_scales = snn.metadata.get("output_scales", {})
    order = snn.topo_order()
    runtime = _Runtime(snn, mode, firing_rule)
    trace = SimulationTrace(timesteps=timesteps, mode=mode, firing_rule=firing_rule, output_id=output_id)
    record_nodes = set(record_nodes)
    for nid in record_nodes:
        trace.streams[nid] = []

    spike_cum = 0
    ac_cum = 0
    for t in range(1, timesteps + 1):
        values: dict = {}
        for nid in order:
            node = snn.nodes[nid]
            kind = node.kind
            if kind == "Input":
                values[nid] = encoded[nid][t - 1]
            elif kind == "LinearKernel":
                x = values[node.inputs[0]]
                w = node.params["weight"]
                if count_acs:
                    runtime.ac_counts[nid] += int(np.count_nonzero(x)) * int(w.shape[0])
                values[nid] = G.linear_apply(x, w)
            elif kind == "ConvKernel":
                x = values[node.inputs[0]]
                w = node.params["weight"]
                stride = tuple(node.params.get("stride", (1, 1)))
                pad = tuple(node.params.get("pad", (0, 0)))
                y = tensor.conv2d(x, w, stride, pad)
                if count_acs:
                    key = f"_win_{nid}"
                    win = getattr(runtime, key, None)
                    if win is None:
                        win = _conv_window_counts(x.shape, w.shape[2:], stride, pad, y.shape[1:])
                        setattr(runtime, key, win)
                    mask = (x != 0).sum(axis=0)
                    runtime.ac_counts[nid] += int(np.sum(win * mask)) * int(w.shape[0])
                values[nid] = y
            elif kind == "AvgPoolKernel":
                values[nid] = G.avgpool2d(values[node.inputs[0]], node.params["kernel"], node.params["stride"])
            elif kind == "FlattenKernel":
                values[nid] = G.flatten(values[node.inputs[0]])
            elif kind == "Add":
                a, b = (values[s] for s in node.inputs)
                values[nid] = a + b
            elif kind == "DiffNeuron":
                x = values[node.inputs[0]]
                st = runtime.neuron_state(node, x.shape)
                x = _rate_bias(runtime, node, x)
                if mode == "differential":
                    out = NR.step_differential(st, x)
                else:
                    out = NR.step_rate(st, x)
                theta_max = float(np.max(np.asarray(node.params["theta"])))
                if np.max(np.abs(st.v)) > _OVERFLOW_FACTOR * theta_max:
                    raise SimulationOverflowError(
                        f"membrane overflow in {nid!r} at t={t}; thresholds look miscalibrated"
                    )
                values[nid] = out
            elif kind == "UnaryGraded":
                x = values[node.inputs[0]]
                st = runtime.unary_state(node, x.shape)
                x = _rate_bias(runtime, node, x)
                values[nid] = GU.step_unary(st, x) if mode == "differential" else GU.step_unary_rate(st, x)
            elif kind == "BinaryGraded":
                xa, xb = (values[s] for s in node.inputs)
                st = runtime.binary_state(node, xa.shape, xb.shape)
                if count_acs:
                    if node.params["op"] == "matmul":
                        # each nonzero A element touches one output row (r columns),
                        # each nonzero B element one output column (p rows)
                        r = xb.shape[0] if node.params.get("transpose_b") else xb.shape[-1]
                        p = xa.shape[0] if xa.ndim > 1 else 1
                        runtime.ac_counts[nid] += int(np.count_nonzero(xa)) * int(r)
                        runtime.ac_counts[nid] += int(np.count_nonzero(xb)) * int(p)
                    else:
                        runtime.ac_counts[nid] += int(np.count_nonzero(xa)) + int(np.count_nonzero(xb))
                values[nid] = GU.step_binary(st, xa, xb) if mode == "differential" else GU.step_binary_rate(st, xa, xb)
            elif kind == "Output":
                x = values[node.inputs[0]]
                x = _rate_bias(runtime, node, x)
                r = runtime.out_r.get(nid)
                if r is None:
                    fold = runtime.fold_of(node)
                    r = np.zeros_like(x) if (fold is None or mode == "rate") else fold.copy()
                if mode == "differential":
                    r = r + x / t
                else:
                    r = r + (x - r) / t
                runtime.out_r[nid] = r
                values[nid] = x
            else:  # pragma: no cover
                raise ValueError(f"cannot simulate kind {kind!r}")
            if nid in record_nodes:
                trace.streams[nid].append(values[nid].copy())

        out_stream = values[output_id]
        decoded = runtime.out_r[output_id]
        scale = output_scales.get(output_id)
        if scale is not None:
            decoded = decoded * np.asarray(scale, dtype=np.float64)
        trace.stream.append(out_stream.copy())
        trace.decoded.append(decoded.copy())

        step_spikes = 0
        for nid, st in runtime.states.items():
            if isinstance(st, NR.NeuronLayerState):
                step_spikes += st.spike_count - runtime.prev_spikes[nid]
                runtime.prev_spikes[nid] = st.spike_count
        spike_cum += step_spikes
        ac_cum = sum(runtime.ac_counts.values())
        trace.spike_history.append(spike_cum)
        trace.ac_history.append(ac_cum)

    trace.spike_counts = {
        nid: st.spike_count for nid, st in runtime.states.items() if isinstance(st, NR.NeuronLayerState)
    }
    trace.ac_counts = {nid: c for nid, c in runtime.ac_counts.items() if c}
    return trace


def count_ann_macs(graph: G.AnnGraph) -> dict:
    """Multiply-accumulate counts of the source ANN (dense/conv/product only)."""
    shapes = G.infer_shapes(graph)
    per_node = {}
    for nid, node in graph.nodes.items():
        if node.kind == "Linear":
            w = np.asarray(node.params["weight"])
            lead = int(np.prod(shapes[nid][:-1])) if len(shapes[nid]) > 1 else 1
            per_node[nid] = lead * int(w.shape[0]) * int(w.shape[1])
        elif node.kind == "Conv2d":
            w = np.asarray(node.params["weight"])
            co, oh, ow = shapes[nid]
            per_node[nid] = co * oh * ow * int(w.shape[1]) * int(w.shape[2]) * int(w.shape[3])
        elif node.kind == "MatMul":
            a = shapes[node.inputs[0]]
            out = shapes[nid]
            per_node[nid] = int(np.prod(out)) * int(a[-1])
        elif node.kind == "ElemMul":
            per_node[nid] = int(np.prod(shapes[nid]))
    return {"total": int(sum(per_node.values())), "per_node": per_node}


def energy_report(trace: SimulationTrace, ann_macs: int) -> dict:
    """Energy ratio estimate: SNN accumulates vs ANN multiply-accumulates."""
    if ann_macs <= 0:
        raise ValueError("ann_macs must be positive")
    acs = trace.ac_total
    ratio = (acs * E_AC_PJ) / (ann_macs * E_MAC_PJ)
    return {
        "ratio": ratio,
        "snn_acs": int(acs),
        "ann_macs": int(ann_macs),
        "e_ac_pj": E_AC_PJ,
        "e_mac_pj": E_MAC_PJ,
        "spike_total": trace.spike_total,
        "per_node_acs": dict(trace.ac_counts),
        "per_node_spikes": dict(trace.spike_counts),
    }


def compare(decoded, ann_out) -> dict:
    """Error metrics of a decoded output against the ANN reference."""
    dec = np.asarray(decoded, dtype=np.float64)
    ref = np.asarray(ann_out, dtype=np.float64)
    if dec.shape != ref.shape:
        raise ShapeError(f"shape mismatch: {dec.shape} vs {ref.shape}")
    diff = dec - ref
    linf = float(np.max(np.abs(diff))) if diff.size else 0.0
    l2 = float(np.sqrt(np.sum(diff**2)))
    ref_linf = float(np.max(np.abs(ref))) if ref.size else 0.0
    ref_l2 = float(np.sqrt(np.sum(ref**2)))
    return {
        "linf": linf,
        "l2": l2,
        "linf_rel": linf / ref_linf if ref_linf else float("inf") if linf else 0.0,
        "l2_rel": l2 / ref_l2 if ref_l2 else float("inf") if l2 else 0.0,
        "argmax_match": bool(np.argmax(dec) == np.argmax(ref)) if dec.ndim == 1 and dec.size else None,
    }
