"""Near-field blind ptychographic lensless microscopy.

A thin diffuser between sample and sensor is scanned to unknown positions;
the package recovers the scan trajectory by cross-correlation and then the
complex object exit wave and the diffuser profile jointly, at a pitch finer
than the sensor pixels.
"""

__version__ = "0.1.0"

from types import ModuleType as _ModuleType

from .exceptions import DatasetLoadError, DegenerateInputError, DimensionError, NumericalFailure
from .fields import (
    ComplexField,
    Geometry,
    RealImage,
    bin_intensity,
    energy,
    load_cfld,
    save_cfld,
    subpixel_shift,
    upsample_nn,
)
from .forward import ForwardModel, Measurement
from .propagation import PropagationKernel, make_kernel, propagate, transfer_function
from .recovery import (
    BlindPtychoReconstructor,
    RecoveryParams,
    RecoveryState,
    data_error,
    initialize,
    magnitude_project_upsampled,
    rpie_update_diffuser,
    rpie_update_object,
    run_reconstruction,
)
from .refocus import FocusScan, Refocuser, autofocus, refocus
from .registration import ScanPose, TrajectoryRegistrar, estimate_shift, estimate_trajectory
from .segmentation import (
    LabelMap,
    PhaseCellSegmenter,
    SegmentationParams,
    binarize_phase,
    count_and_report,
    extract_seeds,
    refine_oversized,
    segment_phase,
    watershed_segment,
)
from .simulate import (
    DiffuserSpec,
    NoiseSpec,
    ObjectSpec,
    generate_trajectory,
    make_blob_field,
    make_diffuser,
    make_test_object,
    simulate_dataset,
)

__all__ = [n for n, v in dict(globals()).items() if not n.startswith("_") and not isinstance(v, _ModuleType)]
