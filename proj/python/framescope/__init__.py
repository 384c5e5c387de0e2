"""Python surface of the framescope toolkit.

The C++ extension carries the math: attention rollout, the visual-engagement
metric suite, steering row edits, answer matching and the attention dump IO.
"""

from ._core import (  # noqa: F401
    BoxRegion,
    FramescopeError,
    Span,
    TokenLayout,
    VisualStats,
    adjust_residual,
    alignment_loss,
    apply_box_row,
    apply_ve_row,
    attention_entropy,
    box_attention,
    compute_stats,
    cqv,
    detect_sinks,
    head_reduce,
    load_dump,
    lr_at,
    map_bbox_to_patches,
    match_answer,
    parse_reframe_response,
    planted_stack,
    rf_normalize,
    rollout,
    save_dump,
    sink_attention,
    spearman_rho,
    visual_distribution,
    visual_energy,
)

__version__ = "0.1.0"
