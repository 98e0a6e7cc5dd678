"""Monocular-to-stereo video conversion toolkit."""

from .core import (
    FormatError,
    InputError,
    PipelineError,
    ValidationError,
    VideoClip,
    read_clip,
    read_depth_pfm,
    read_frame_png,
    read_mask_pgm,
    read_pfm,
    write_clip,
    write_frame_png,
    write_mask_pgm,
    write_pfm,
)
from .warp import WarpConfig, WarpResult, close_mask, depth_to_disparity, forward_splat, warp_clip
from .rectify import (
    FundamentalMatrix,
    MatchSet,
    RectificationResult,
    compute_rectifying_homographies,
    estimate_fundamental_ransac,
    normalize_shift_and_crop,
    sample_frames_uniform,
    sampson_distance,
    vertical_disparity_filter,
)
from .attention import (
    AttentionParams,
    CostReport,
    attend,
    attend_full,
    attend_masked_full,
    attend_spatial,
    attend_temporal,
    attention_backward,
    predicted_cost,
)
from .refine import (
    ConditioningTensor,
    DiffusionSchedule,
    IdentityCodec,
    Patch8Codec,
    assemble_conditioning,
    baseline_farplane_refine,
    disassemble_conditioning,
    forward_diffuse,
    get_codec,
    get_refiner,
    loss_image,
    loss_latent,
    make_schedule,
    predict_single_step,
    register_refiner,
    v_target,
)
from .metrics import (
    DatasetSummary,
    MetricReport,
    dataset_aggregate,
    masked_metric,
    ms_ssim,
    psnr,
)
from .pipeline import (
    ChunkPlan,
    PipelineConfig,
    TilePlan,
    pack_stereo,
    plan_chunks,
    plan_tiles,
    run_chunked,
    run_tiled,
)

__version__ = "0.1.0"
