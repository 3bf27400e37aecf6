"""Saliency maps and causal faithfulness metrics for object detectors.

The package explains single detections of any detector wrapped in the
:class:`~xsal.detectors.DetectorAdapter` contract, in process or across a
process boundary, and scores explanations with deletion and insertion
curves. A small verifiable detector ships along for tests and demos.
"""

from .detectors import (
    CAP_DETECT,
    CAP_FEATURES,
    CAP_GRAD,
    BBox,
    Detection,
    DetectorAdapter,
    iou,
    match_box,
    select_top_box,
    target_score,
)
from .errors import (
    AdapterError,
    CapabilityMissingError,
    ConnectionLostError,
    ImageFormatError,
    IncompatiblePeerError,
    InvalidDimensionError,
    InvalidParameterError,
    NoDetectionsError,
    NoMatchError,
    ProtocolError,
    XsalError,
)
from .gradcam import GradCamConfig, gradcam_saliency
from .metrics import (
    Curve,
    CurveConfig,
    CurvePair,
    causal_curves,
    deletion_curve,
    insertion_curve,
    pixel_order,
    random_baseline,
    trapezoid_auc,
)
from .rise import RiseConfig, rise_saliency
from .sidu import SiduConfig, sidu_saliency
from .tensor_ops import (
    bilinear_resize,
    gaussian_blur,
    hadamard_mask,
    minmax_normalize,
    read_f32t,
    write_f32t,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterError",
    "BBox",
    "CAP_DETECT",
    "CAP_FEATURES",
    "CAP_GRAD",
    "CapabilityMissingError",
    "ConnectionLostError",
    "Curve",
    "CurveConfig",
    "CurvePair",
    "Detection",
    "DetectorAdapter",
    "GradCamConfig",
    "ImageFormatError",
    "IncompatiblePeerError",
    "InvalidDimensionError",
    "InvalidParameterError",
    "NoDetectionsError",
    "NoMatchError",
    "ProtocolError",
    "RiseConfig",
    "SiduConfig",
    "XsalError",
    "bilinear_resize",
    "causal_curves",
    "deletion_curve",
    "gaussian_blur",
    "gradcam_saliency",
    "hadamard_mask",
    "insertion_curve",
    "iou",
    "match_box",
    "minmax_normalize",
    "pixel_order",
    "random_baseline",
    "read_f32t",
    "rise_saliency",
    "select_top_box",
    "sidu_saliency",
    "target_score",
    "trapezoid_auc",
    "write_f32t",
    "__version__",
]
