from .core import DftRows, SblSettings, SblState, log_marginal, run_em, sbl_posterior, significant
from .estimators import (
    constellation_projector,
    decode_symbols,
    estimate_alltone,
    estimate_decision_feedback,
    estimate_nulltone,
)
from .sequential import SequentialResult, estimate_sequential

__all__ = [
    "DftRows", "SblSettings", "SblState", "SequentialResult", "constellation_projector",
    "decode_symbols", "estimate_alltone",
    "estimate_decision_feedback", "estimate_nulltone", "estimate_sequential",
    "log_marginal", "run_em", "sbl_posterior", "significant",
]
