"""spikewire: training-free ANN-to-SNN conversion and simulation.

Differential-coding conversion with multi-threshold spiking neurons and
graded units, a Gaussian-model threshold calibrator, a discrete-time
simulator with spike/energy accounting, and a scikit-learn style estimator
front end.
"""

from .converter import (
    ConversionError,
    SnnGraph,
    SnnNode,
    SnnValidationError,
    convert,
    insertion_points,
    load_snn,
    normalize_weights,
    save_snn,
    validate_snn,
)
from .estimator import SpikingConverter, calibrate_thresholds, thresholds_from_report
from .graded import (
    BinaryGradedState,
    UnaryGradedState,
    step_binary,
    step_binary_rate,
    step_unary,
    step_unary_rate,
)
from .graph import (
    AnnGraph,
    GaussianStats,
    GraphError,
    LayerNode,
    StreamingMoments,
    collect_percentile_thresholds,
    collect_relu_stats,
    forward,
    infer_shapes,
    load_dataset,
    load_model,
    save_model,
)
from .neurons import (
    NeuronLayerState,
    ThresholdLadder,
    fire_argmin,
    fire_hw,
    mth_select,
    mth_select_hw,
    step_differential,
    step_rate,
)
from .simulate import (
    SimulationOverflowError,
    SimulationTrace,
    compare,
    count_ann_macs,
    encode_input,
    energy_report,
    run,
)
from .solver import (
    DegenerateStatsError,
    IterationLimitError,
    QeResult,
    SolverConfig,
    ThresholdSolution,
    iterate_threshold,
    k1_closed_form,
    qe1_numeric,
    qe2_numeric,
    qe_grid,
    qe_numeric,
    quant_levels_for,
    quantizer_f,
    quantizer_f1,
    quantizer_f2,
)
from .tensor import QuadratureError, ShapeError, as_tensor, conv2d, erf, matmul, quadrature

__version__ = "0.1.0"

__all__ = [
    "AnnGraph",
    "BinaryGradedState",
    "ConversionError",
    "DegenerateStatsError",
    "GaussianStats",
    "GraphError",
    "IterationLimitError",
    "LayerNode",
    "NeuronLayerState",
    "QeResult",
    "QuadratureError",
    "ShapeError",
    "SimulationOverflowError",
    "SimulationTrace",
    "SnnGraph",
    "SnnNode",
    "SnnValidationError",
    "SolverConfig",
    "SpikingConverter",
    "StreamingMoments",
    "ThresholdLadder",
    "ThresholdSolution",
    "UnaryGradedState",
    "as_tensor",
    "calibrate_thresholds",
    "collect_percentile_thresholds",
    "collect_relu_stats",
    "compare",
    "conv2d",
    "convert",
    "count_ann_macs",
    "encode_input",
    "energy_report",
    "erf",
    "fire_argmin",
    "fire_hw",
    "forward",
    "infer_shapes",
    "insertion_points",
    "iterate_threshold",
    "k1_closed_form",
    "load_dataset",
    "load_model",
    "load_snn",
    "matmul",
    "mth_select",
    "mth_select_hw",
    "normalize_weights",
    "qe1_numeric",
    "qe2_numeric",
    "qe_grid",
    "qe_numeric",
    "quadrature",
    "quant_levels_for",
    "quantizer_f",
    "quantizer_f1",
    "quantizer_f2",
    "run",
    "save_model",
    "save_snn",
    "step_binary",
    "step_binary_rate",
    "step_differential",
    "step_rate",
    "step_unary",
    "step_unary_rate",
    "thresholds_from_report",
    "validate_snn",
]
