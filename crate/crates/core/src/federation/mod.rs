//! Phase I server and client logic: degree-weighted structural
//! aggregation, the history pool, history matching and the round loop.

mod history;
mod pretrain;
mod weights;

pub use history::{fuse_history, history_similarities, HistoryPool, HistoryScores};
pub use pretrain::{run_pretraining, ClientState, PretrainedBundle};
pub use weights::{
    aggregate_structural, aggregation_weights, history_weights, AggregationWeights, HistoryWeights,
};
