"""Desk-scale video camouflaged object segmentation.

A small, fully testable stack: a float64 autodiff tensor core, frozen
encoder/decoder stand-ins, a FIFO embedding memory, temporal-fusion and
memory-affinity attention producing dense prompt embeddings, a composite
focal/dice/IoU loss, six evaluation measures, and a two-stage training
pipeline with a semi-supervised inference loop.
"""

from .config import RunConfig
from .memory import FrameRecord, MemoryBank
from .metrics import MetricReport, evaluate_sequence
from .propagation import PropagationConfig, PropagationModule, count_parameters
from .stubs import EncoderConfig, MaskPrediction, SegmenterStubs
from .tensor import Tape, Tensor, gradcheck

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "FrameRecord", "MemoryBank", "MetricReport",
    "evaluate_sequence", "PropagationConfig", "PropagationModule",
    "count_parameters", "EncoderConfig", "MaskPrediction", "SegmenterStubs",
    "Tape", "Tensor", "gradcheck", "__version__",
]
