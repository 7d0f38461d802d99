"""Calibration engine for dense segmentation predictions.

Marginal L1 calibration metrics (ACE / ECE / MCE) over hard or soft
confidence bins, differentiable binned-ACE losses with analytic
gradients, post-hoc temperature scaling, reliability diagrams and
dataset reliability histograms, and a small synthetic training harness.
"""

from .binning import BinningConfig, Kernel, bin_boundaries
from .losses import (
    ace_loss,
    ace_loss_backward,
    ace_loss_forward,
    composite_loss,
    cross_entropy_loss,
    dice_ce_loss,
    loss_grad_logits,
)
from .reliability import (
    CalibrationReport,
    ReliabilityCurve,
    ReliabilityTally,
    calibration_metrics,
    compose_hierarchical_classes,
    evaluated_classes,
    finalize,
    image_report,
    macro_report,
    merge,
    micro_report,
    tally_image,
    zero_tally,
)
from .temperature import (
    TemperatureResult,
    apply_temperature,
    fit_temperature,
    softmax,
    stream_ce,
)
from .viz import (
    DatasetHistogram,
    DiagramSpec,
    build_dataset_histogram,
    build_diagram,
    render_svg,
    sum_histograms,
    write_curve_csv,
    write_histogram_csv,
)
from .volume_io import (
    DatasetManifest,
    VolumeFormatError,
    load_manifest,
    read_volume,
    write_manifest,
    write_volume,
)

__version__ = "0.1.0"

__all__ = [
    "BinningConfig",
    "Kernel",
    "bin_boundaries",
    "ace_loss",
    "ace_loss_forward",
    "ace_loss_backward",
    "composite_loss",
    "cross_entropy_loss",
    "dice_ce_loss",
    "loss_grad_logits",
    "CalibrationReport",
    "ReliabilityCurve",
    "ReliabilityTally",
    "calibration_metrics",
    "compose_hierarchical_classes",
    "evaluated_classes",
    "finalize",
    "image_report",
    "macro_report",
    "merge",
    "micro_report",
    "tally_image",
    "zero_tally",
    "TemperatureResult",
    "apply_temperature",
    "fit_temperature",
    "softmax",
    "stream_ce",
    "DatasetHistogram",
    "DiagramSpec",
    "build_dataset_histogram",
    "build_diagram",
    "render_svg",
    "sum_histograms",
    "write_curve_csv",
    "write_histogram_csv",
    "DatasetManifest",
    "VolumeFormatError",
    "load_manifest",
    "read_volume",
    "write_manifest",
    "write_volume",
    "__version__",
]
