"""Panoptic segmentation toolkit.

Quality metrics (strict and relaxed), instance/semantic fusion, detection
box geometry, match assignment, forward loss oracles, and reference tensor
operations. Everything is deterministic and framework-free.
"""

from .boxes import (
    Anchor,
    AnchorConfig,
    Box,
    BoxDelta,
    BoxError,
    ScoredBox,
    clip_box,
    decode_box,
    encode_box,
    fpn_level,
    generate_anchors,
    iou_box,
    nms,
)
from .fusion import Detection, FusionConfig, FusionError, fuse
from .losses import (
    LossInputError,
    LossReport,
    MaskTarget,
    RoiLosses,
    RpnLosses,
    SemanticLoss,
    SemanticProb,
    SemanticTarget,
    loss_report_from_fixture,
    rasterize_mask_target,
    roi_losses,
    rpn_losses,
    semantic_loss,
    smooth_l1,
)
from .matching import (
    MatcherConfig,
    MatchSet,
    SeededRng,
    counter_draw,
    match_proposals,
    match_rpn,
    sample_matches,
)
from .metrics import (
    ClassStats,
    ImageMatches,
    MetricAccumulator,
    MetricError,
    MetricReport,
    PerClassMetrics,
    accumulate_image,
    finalize,
    match_segments,
    merge,
    segment_iou,
)
from .panoptic import (
    ClassInfo,
    ClassTable,
    Kind,
    PanopticDecodeError,
    PanopticMap,
    SegmentRecord,
    SemanticMap,
    extract_segments,
    read_class_table,
    read_panoptic,
    write_panoptic,
)
from .tensor_ops import (
    ContextBlockWeights,
    FeatureGrid,
    MaskGrid,
    TensorOpError,
    avg_pool_replicate,
    context_block_forward,
    conv2d,
    load_tensors,
    paste_mask,
    roi_align,
    save_tensors,
)

__version__ = "0.1.0"
