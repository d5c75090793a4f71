//! Frozen text-encoder stub and the trainable two-branch graph encoder.

mod graph_encoder;
mod params;
mod text;

pub use graph_encoder::{
    branch_forward, fuse_and_normalize, graph_backward, graph_backward_with_input, graph_forward,
    graph_forward_on, BranchCache, DisturbanceConfig, ForwardCache, GraphInputs, Propagator,
    NORM_EPS,
};
pub use params::{Block, EncoderParams};
pub use text::TextEncoder;
