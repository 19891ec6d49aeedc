//! Analytic cost model and attention-heatmap dumps.

mod flops;
mod heatmap;

pub use flops::{flops_estimate, FlopsReport, LayerFlops, Phase, BACKWARD_FACTOR, MASKED_FRACTION};
pub use heatmap::{attn_heatmap, HeadSelect, HeatmapDump, HeatmapRequest, PositionKind};
