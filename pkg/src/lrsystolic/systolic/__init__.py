"""Cycle-level simulation of the two-dimensional lattice-reduction array."""

from .array import (
    ArrayState,
    CellKind,
    CellState,
    CycleLog,
    Mode,
    Signal,
    SignalKind,
    are_neighbors,
    init_array,
    step_cycle,
)
from .controller import (
    ArrayRun,
    Controller,
    SizeReductionTiming,
    reduce_on_array,
    run_full_size_reduction,
    run_reduction,
)
from .detect import run_lr_detection_on_array
from .timing import (
    column_op_start,
    column_ops_end,
    full_size_reduction_end,
    sequential_size_reduction_cost,
)

__all__ = [
    "ArrayRun", "ArrayState", "CellKind", "CellState", "Controller", "CycleLog", "Mode",
    "Signal", "SignalKind", "SizeReductionTiming", "are_neighbors", "column_op_start",
    "column_ops_end", "full_size_reduction_end", "init_array", "reduce_on_array",
    "run_full_size_reduction", "run_lr_detection_on_array", "run_reduction", "sequential_size_reduction_cost", "step_cycle",
]
