//! Shared MLPs, vector attention and the two-headed Ge-Latto layer.

mod attention;
mod gelatto;
mod mlp;

pub use attention::{multi_head_attention_reference, neighborhood_maxpool, vector_attention};
pub use gelatto::{AttentionTrace, GeLatto, GeLattoConfig, GeLattoOutput, GroupedInput, HeadMode};
pub use mlp::{Affine, BatchNorm, MlpSpec, SharedMlp, BN_EPS, BN_MOMENTUM};
