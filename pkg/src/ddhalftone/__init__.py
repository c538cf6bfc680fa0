"""Dot-diffusion halftoning toolkit: homogeneous class tilings from stacked
binary-search masks, tone/order-dependent diffusion parameters, randomized
averaged-power-spectrum estimation, and perceptual quality metrics."""

__version__ = "0.1.0"

from .imagecore import (
    BinaryImage,
    GrayImage,
    constant_patch,
    load_pbm,
    load_pgm,
    ramp,
    save_pbm,
    save_pgm,
)
from .hvs_metrics import (
    HVSKernel,
    NASANEN_MODEL_1,
    NASANEN_MODEL_2,
    NasanenParams,
    gaussian_lowpass,
    hmse,
    hpsnr,
    kernel_size_for,
    nasanen_autocorr,
)
from .dbs import (
    DbsConfig,
    MaskStack,
    build_mask_stack,
    default_target_counts,
    dmdbs_halftone,
    groundtruth_pattern,
)
from .classtiling import (
    ClassMatrix,
    ClassTiling,
    bayer_matrix,
    ideal_wavelength,
    quantize_prototype,
    tiled_cm_ct,
    validate_ct,
)
from .dotdiffusion import (
    DiffusedMatrix,
    ErrorField,
    ParameterTable,
    class_schedule,
    halftone,
    halftone_fixed,
    halftone_with_trace,
    normalization_map,
)
from .spectrum import (
    APSD,
    SpectrumCostKind,
    bartlett_apsd,
    detect_impulses,
    periodogram,
    randomized_apsd,
    rapsd_anisotropy,
    spectrum_cost,
    welch_apsd,
)
from .optimizer import (
    OptimizationTrace,
    OptimizerConfig,
    SimplexOptions,
    downhill_search,
    evaluate_candidate,
    expand_symmetric,
    init_table,
    optimize_stage,
)
