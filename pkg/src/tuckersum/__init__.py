"""Tucker-format tensor arithmetic with sketching-based summation."""
from .sketch import SketchPlan, Strategy, SumRequest, effective_subrank, round_sum, sum_tucker
from .tucker import TuckerTensor, formal_sum, reconstruct, tucker_axby, tucker_rounding

__all__ = [
    "SketchPlan", "Strategy", "SumRequest", "TuckerTensor", "effective_subrank", "formal_sum",
    "reconstruct", "round_sum", "sum_tucker", "tucker_axby", "tucker_rounding",
]
