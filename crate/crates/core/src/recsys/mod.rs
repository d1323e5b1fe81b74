//! Visual-aware recommenders (FM, VBPR, AMR) trained with BPR.

mod features;
mod model;
mod rank;
mod train;

pub use features::{FeatureStore, FEATURE_MAGIC, FEATURE_VERSION};
pub use model::{score_vbpr, RecKind, Recommender};
pub use rank::{
    pairwise_auc, rank_order, read_rankings, recommend_all, recommend_topk, write_rankings, RankingList, Scorer,
};
pub use train::{train_amr, train_bpr, RecConfig, RecReport};
