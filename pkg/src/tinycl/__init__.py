"""tinycl: continual learning with quantized latent replays on tiny devices.

The package has two halves. The numeric half trains the adaptive tail of a
depthwise-separable network against a replay buffer of quantized latent
vectors (tensor kernels, layers, quantization, replay protocol). The modeling
half prices the same layer steps on a two-level scratchpad hierarchy with
double-buffered DMA tiling (plans, cycle costs, memory/lifetime reports).
"""

__version__ = "0.1.0"

from .rng import Rng
from .tensor import matmul, im2col, col2im, save_tensor, load_tensor, set_workers, get_workers
from .layers import (
    LayerSpec,
    NetworkModel,
    softmax_xent,
    sgd_step,
    forward_layer,
    backward_error_layer,
    backward_grad_layer,
)
from .quantize import (
    QuantParams,
    QuantizedTensor,
    CalibrationStats,
    FrozenStage,
    calibrate,
    quantize,
    dequantize,
    fake_quant,
    freeze_and_quantize,
)
from .dataset import DeskTaskConfig, DeskDataset, make_desk_dataset, make_desk_model
from .replay import (
    ProtocolConfig,
    ProtocolResult,
    ReplayBuffer,
    build_replay_buffer,
    run_protocol,
    train_initial_phase,
)
from .workloads import LayerStepWork, adaptive_stage_works, tail_layer_works
from .memsim import (
    HierarchyConfig,
    KernelEfficiencyTable,
    TilePlan,
    InfeasiblePlanError,
    default_efficiency_table,
    plan_tiles,
    plan_stage,
    simulate,
    sweep_bandwidth,
    execute_plan,
)

__all__ = [
    "Rng",
    "matmul", "im2col", "col2im", "save_tensor", "load_tensor",
    "set_workers", "get_workers",
    "LayerSpec", "NetworkModel", "softmax_xent", "sgd_step",
    "forward_layer", "backward_error_layer", "backward_grad_layer",
    "QuantParams", "QuantizedTensor", "CalibrationStats", "FrozenStage",
    "calibrate", "quantize", "dequantize", "fake_quant", "freeze_and_quantize",
    "DeskTaskConfig", "DeskDataset", "make_desk_dataset", "make_desk_model",
    "ProtocolConfig", "ProtocolResult", "ReplayBuffer",
    "build_replay_buffer", "run_protocol", "train_initial_phase",
    "LayerStepWork", "adaptive_stage_works", "tail_layer_works",
    "HierarchyConfig", "KernelEfficiencyTable", "TilePlan",
    "InfeasiblePlanError", "default_efficiency_table",
    "plan_tiles", "plan_stage", "simulate", "sweep_bandwidth", "execute_plan",
]
