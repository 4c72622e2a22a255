"""Deformation-mode motion magnification and convergence monitoring from image sequences."""

from .analysis import (
    ConvergenceSeries,
    DeformationMap,
    RingCalibration,
    RingProfile,
    convergence,
    metric_scale,
    ring_shape,
    st_median,
    unmagnify,
)
from .flow import DisplacementField, FlowParams, compute_flow, flow_series
from .ingest import FrameSequence, IlluminationParams, correct_illumination, downsample, load_sequence, to_grayscale
from .magnify import MagnificationParams, TemporalBand, magnify_sequence, wiener_smooth
from .pyramid import ComplexPyramid, FilterBank, decompose, make_filter_bank, reconstruct

__version__ = "0.1.0"
