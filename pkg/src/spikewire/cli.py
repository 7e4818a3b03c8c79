"""Command-line front end: calibrate, convert, run, energy, compare, make-toy.

Every flag can be preset through an environment variable named
``SPIKEWIRE_<FLAG>`` (dashes become underscores, e.g. ``SPIKEWIRE_TIMESTEPS_T``);
explicit command-line values win. Exit codes: 0 success, 2 bad input or
unusable files, 1 internal error. Reports are JSON; a short human summary
goes to stdout.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import converter as C
from . import graph as G
from . import simulate as sim
from . import toys
from .estimator import calibrate_thresholds, thresholds_from_report
from .solver import DegenerateStatsError, IterationLimitError
from .tensor import QuadratureError, ShapeError

_INPUT_ERRORS = (
    ValueError,
    ShapeError,
    G.GraphError,
    C.ConversionError,
    C.SnnValidationError,
    DegenerateStatsError,
    IterationLimitError,
    FileNotFoundError,
    NotADirectoryError,
    IsADirectoryError,
    KeyError,
    json.JSONDecodeError,
)


def _env_default(flag: str):
    name = "SPIKEWIRE_" + flag.lstrip("-").replace("-", "_").upper()
    return os.environ.get(name)


class _Arg:
    """add_argument wrapper that honors SPIKEWIRE_* environment overrides."""

    def __init__(self, parser):
        self.parser = parser

    def add(self, flag, **kwargs):
        env = _env_default(flag)
        if env is not None:
            typ = kwargs.get("type")
            if kwargs.get("action") == "store_true":
                kwargs["default"] = env.lower() in ("1", "true", "yes", "on")
            else:
                kwargs["default"] = typ(env) if typ else env
            kwargs.pop("required", None)
        self.parser.add_argument(flag, **kwargs)
        return self


def _common_model_data(a: _Arg, need_data=True):
    a.add("--model", type=str, required=True, help="model manifest (JSON)")
    if need_data:
        a.add("--data", type=str, required=True, help="dataset: CSV file or directory of raw tensors")
        a.add("--data-format", type=str, default=None, choices=["csv", "raw"], help="default: by extension")


def _sim_flags(a: _Arg):
    a.add("--timesteps-T", type=int, default=32, help="simulation timesteps")
    a.add("--firing-rule", type=str, default="argmin", choices=["argmin", "hw"])
    a.add("--mode", type=str, default=None, choices=["differential", "rate"], help="override the converted mode")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikewire", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = _Arg(sub.add_parser("make-toy", help="generate a bundled toy model and Gaussian dataset"))
    p.add("--kind", type=str, default="mlp", choices=sorted(toys.TOY_BUILDERS))
    p.add("--out", type=str, required=True, help="output directory")
    p.add("--seed", type=int, default=0)
    p.add("--data-samples", type=int, default=64)
    p.add("--data-mu", type=float, default=0.0)
    p.add("--data-sigma", type=float, default=1.0)

    p = _Arg(sub.add_parser("calibrate", help="solve per-layer firing thresholds"))
    _common_model_data(p)
    p.add("--timesteps-T", type=int, default=32)
    p.add("--n-thresholds", type=int, default=4)
    p.add("--quant-levels-N", type=int, default=None, help="default 2**n * T")
    p.add("--eps", type=float, default=1e-6)
    p.add("--theta0", type=float, default=1.0)
    p.add("--max-iters", type=int, default=500)
    p.add("--percentile-p", type=float, default=0.999)
    p.add("--scale-c", type=float, default=4.0)
    p.add("--per-channel", action="store_true")
    p.add("--threshold-method", type=str, default="auto", choices=["auto", "percentile"])
    p.add("--seed", type=int, default=0)
    p.add("--out", type=str, required=True, help="calibration report (JSON)")

    p = _Arg(sub.add_parser("convert", help="build the spiking graph from a calibration report"))
    p.add("--model", type=str, required=True)
    p.add("--calibration", type=str, required=True, help="report from the calibrate command")
    p.add("--mode", type=str, default="differential", choices=["differential", "rate"])
    p.add("--n-thresholds", type=int, default=None, help="default: from the calibration report")
    p.add("--normalize", action="store_true", help="rescale for the theta=1 hardware path")
    p.add("--out", type=str, required=True, help="SNN manifest (JSON)")

    p = _Arg(sub.add_parser("run", help="simulate a converted model over a dataset"))
    _common_model_data(p)
    _sim_flags(p)
    p.add("--sample", type=int, default=0, help="sample index for the per-step trace")
    p.add("--seed", type=int, default=0)
    p.add("--out", type=str, required=True, help="trace summary (JSON)")
    p.add("--csv", type=str, default=None, help="also export the per-step trace as CSV")

    p = _Arg(sub.add_parser("energy", help="energy-ratio estimate vs the source ANN"))
    _common_model_data(p)
    _sim_flags(p)
    p.add("--ann-model", type=str, required=True, help="source ANN manifest")
    p.add("--seed", type=int, default=0)
    p.add("--out", type=str, required=True)

    p = _Arg(sub.add_parser("compare", help="side-by-side ANN/SNN accuracy and energy per timestep"))
    _common_model_data(p)
    _sim_flags(p)
    p.add("--ann-model", type=str, required=True)
    p.add("--seed", type=int, default=0)
    p.add("--out", type=str, required=True)

    return parser


def _load_data(args, input_shape) -> np.ndarray:
    fmt = args.data_format
    path = Path(args.data)
    if fmt is None:
        fmt = "raw" if path.is_dir() else "csv"
    data = G.load_dataset(path, fmt, input_shape)
    if data.shape[0] == 0:
        raise ValueError("dataset is empty")
    return data


def _write_json(path, payload):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(C._jsonable(payload), indent=2, sort_keys=True))


def cmd_make_toy(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    graph = toys.make_toy(args.kind, seed=args.seed)
    G.save_model(graph, out / "model.json")
    shape = graph.input_shapes()[graph.inputs[0]]
    data = toys.make_gaussian_dataset(args.data_samples, shape, seed=args.seed + 1, mu=args.data_mu, sigma=args.data_sigma)
    np.savetxt(out / "data.csv", data.reshape(data.shape[0], -1), delimiter=",")
    print(f"wrote {args.kind} model ({len(graph.nodes)} nodes) and {data.shape[0]} samples to {out}")
    return 0


def cmd_calibrate(args) -> int:
    graph = G.load_model(args.model)
    shape = graph.input_shapes()[graph.inputs[0]]
    data = _load_data(args, shape)
    _, report = calibrate_thresholds(
        graph,
        data,
        method=args.threshold_method,
        n_thresholds=args.n_thresholds,
        timesteps=args.timesteps_T,
        quant_levels=args.quant_levels_N,
        eps=args.eps,
        theta0=args.theta0,
        max_iters=args.max_iters,
        percentile_p=args.percentile_p,
        scale_c=args.scale_c,
        per_channel=args.per_channel,
    )
    _write_json(args.out, report)
    print(f"calibrated {len(report['points'])} insertion points -> {args.out}")
    for src, rec in sorted(report["points"].items()):
        theta = rec["theta"]
        desc = f"{theta:.6g}" if isinstance(theta, float) else f"per-channel x{len(theta)}"
        print(f"  {src}: method={rec['method']} theta={desc}")
    return 0


def cmd_convert(args) -> int:
    graph = G.load_model(args.model)
    report = json.loads(Path(args.calibration).read_text())
    thresholds = thresholds_from_report(report)
    n = args.n_thresholds if args.n_thresholds is not None else int(report.get("n_thresholds", 4))
    snn = C.convert(graph, thresholds, mode=args.mode, n=n)
    if args.normalize:
        snn = C.normalize_weights(snn)
    C.save_snn(snn, Path(args.out))
    print(f"converted {len(graph.nodes)} ANN nodes -> {len(snn.nodes)} SNN nodes ({snn.mode} mode) -> {args.out}")
    return 0


def cmd_run(args) -> int:
    snn = C.load_snn(args.model)
    shape = snn.nodes[snn.inputs[0]].params.get("shape")
    data = _load_data(args, shape)
    if not (0 <= args.sample < data.shape[0]):
        raise ValueError(f"--sample {args.sample} out of range for {data.shape[0]} samples")
    summaries = []
    traced = None
    for i, sample in enumerate(data):
        trace = sim.run(snn, sample, args.timesteps_T, mode=args.mode, firing_rule=args.firing_rule)
        summaries.append(
            {
                "decoded": trace.decoded[-1],
                "spikes": trace.spike_total,
                "acs": trace.ac_total,
            }
        )
        if i == args.sample:
            traced = trace
    payload = {
        "schema": "spikewire-trace-v1",
        "timesteps": args.timesteps_T,
        "mode": traced.mode,
        "firing_rule": args.firing_rule,
        "seed": args.seed,
        "samples": summaries,
        "trace_sample": args.sample,
        "per_step": {
            "decoded": [d for d in traced.decoded],
            "spikes_cum": traced.spike_history,
            "acs_cum": traced.ac_history,
        },
        "per_node_spikes": traced.spike_counts,
        "per_node_acs": traced.ac_counts,
    }
    _write_json(args.out, payload)
    if args.csv:
        _trace_csv(traced, args.csv)
    print(
        f"ran {data.shape[0]} samples for T={args.timesteps_T} ({traced.mode}, {args.firing_rule}); "
        f"trace of sample {args.sample}: {traced.spike_total} spikes, {traced.ac_total} ACs -> {args.out}"
    )
    return 0


def _trace_csv(trace: sim.SimulationTrace, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    width = int(np.asarray(trace.decoded[0]).size)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"r{i}" for i in range(width)] + ["spikes_cum", "acs_cum"])
        for t in range(trace.timesteps):
            row = [t + 1]
            row.extend(repr(v) for v in np.asarray(trace.decoded[t]).reshape(-1))
            row.append(trace.spike_history[t])
            row.append(trace.ac_history[t])
            writer.writerow(row)


def cmd_energy(args) -> int:
    snn = C.load_snn(args.model)
    ann = G.load_model(args.ann_model)
    shape = snn.nodes[snn.inputs[0]].params.get("shape")
    data = _load_data(args, shape)
    macs = sim.count_ann_macs(ann)
    ac_totals, spike_totals = [], []
    last = None
    for sample in data:
        trace = sim.run(snn, sample, args.timesteps_T, mode=args.mode, firing_rule=args.firing_rule)
        ac_totals.append(trace.ac_total)
        spike_totals.append(trace.spike_total)
        last = trace
    mean_acs = float(np.mean(ac_totals))
    ratio = mean_acs * sim.E_AC_PJ / (macs["total"] * sim.E_MAC_PJ)
    payload = {
        "schema": "spikewire-energy-v1",
        "timesteps": args.timesteps_T,
        "ratio": ratio,
        "mean_snn_acs": mean_acs,
        "mean_snn_spikes": float(np.mean(spike_totals)),
        "ann_macs": macs["total"],
        "ann_macs_per_node": macs["per_node"],
        "e_ac_pj": sim.E_AC_PJ,
        "e_mac_pj": sim.E_MAC_PJ,
        "last_sample_per_node_acs": last.ac_counts,
    }
    _write_json(args.out, payload)
    print(f"energy ratio E_SNN/E_ANN = {ratio:.4f} ({mean_acs:.0f} ACs vs {macs['total']} MACs) -> {args.out}")
    return 0


def cmd_compare(args) -> int:
    snn = C.load_snn(args.model)
    ann = G.load_model(args.ann_model)
    shape = snn.nodes[snn.inputs[0]].params.get("shape")
    data = _load_data(args, shape)
    macs = sim.count_ann_macs(ann)["total"]
    T = args.timesteps_T
    checkpoints = sorted({t for t in [1, 2, 4, 8, 16, 32, 64, 128] if t <= T} | {T})
    per_t = {t: {"linf_rel": [], "l2_rel": [], "argmax": [], "acs": []} for t in checkpoints}
    for sample in data:
        ref = G.forward(ann, sample)[ann.outputs[0]]
        trace = sim.run(snn, sample, T, mode=args.mode, firing_rule=args.firing_rule)
        for t in checkpoints:
            m = sim.compare(trace.decoded[t - 1], ref)
            per_t[t]["linf_rel"].append(m["linf_rel"])
            per_t[t]["l2_rel"].append(m["l2_rel"])
            if m["argmax_match"] is not None:
                per_t[t]["argmax"].append(m["argmax_match"])
            per_t[t]["acs"].append(trace.ac_history[t - 1])
    rows = []
    for t in checkpoints:
        rec = per_t[t]
        rows.append(
            {
                "t": t,
                "median_linf_rel": float(np.median(rec["linf_rel"])),
                "median_l2_rel": float(np.median(rec["l2_rel"])),
                "argmax_agreement": float(np.mean(rec["argmax"])) if rec["argmax"] else None,
                "energy_ratio": float(np.mean(rec["acs"]) * sim.E_AC_PJ / (macs * sim.E_MAC_PJ)),
            }
        )
    payload = {
        "schema": "spikewire-compare-v1",
        "timesteps": T,
        "mode": args.mode or snn.mode,
        "firing_rule": args.firing_rule,
        "samples": int(data.shape[0]),
        "rows": rows,
    }
    _write_json(args.out, payload)
    print(f"{'t':>5} {'L2rel':>10} {'Linf_rel':>10} {'argmax':>8} {'E_ratio':>8}")
    for row in rows:
        agree = f"{row['argmax_agreement']:.3f}" if row["argmax_agreement"] is not None else "-"
        print(
            f"{row['t']:>5} {row['median_l2_rel']:>10.4g} {row['median_linf_rel']:>10.4g} "
            f"{agree:>8} {row['energy_ratio']:>8.4f}"
        )
    print(f"-> {args.out}")
    return 0


_COMMANDS = {
    "make-toy": cmd_make_toy,
    "calibrate": cmd_calibrate,
    "convert": cmd_convert,
    "run": cmd_run,
    "energy": cmd_energy,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except QuadratureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
