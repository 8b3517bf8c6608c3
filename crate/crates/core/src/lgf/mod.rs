//! Local-global fusion of audio and visual snippet features.
//!
//! Local stage: `L` pyramid layers, each running windowed self-attention and
//! cross-modal attention per modality, merging the two with channel-wise sigmoid
//! gates and refining the result with dilated residual convolutions. The layer
//! outputs form a feature pyramid that is integrated per snippet by a cross-modal
//! weighting over granularities.
//!
//! Global stage: unrestricted multi-head cross-modal attention, a projected
//! residual, mean pooling over snippets and a fusion head.

mod attention;
mod config;
mod model;

pub use attention::{
    attention_block, multi_head_attention, window_mask, window_mask_matrix, AttentionIds, AttentionOut, BlockIds,
};
pub use config::{FusionStrategy, LgfConfig};
pub use model::{
    dilated_residual, fusion_head, gated_merge, global_fuse, integrate_granularities, BatchLogits, ForwardTrace,
    FusedOutputs, GateIds, GlobalIds, GlobalTrace, GranularityIds, GranularityTrace, HeadIds, LayerTrace, LgfModel,
    LgfParams, PyramidLayerIds, AUDIO, VISUAL,
};
