//! Probabilistic modelling of wind-farm power forecast errors with
//! two-dimensional Gaussian mixtures, fitted either centrally or by a
//! privacy-preserving distributed procedure over a wind-farm communication
//! graph.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod consensus;
pub mod dmap;
pub mod error;
pub mod eval;
pub mod gmm;
pub mod io;
pub mod json;
pub mod linalg;
pub mod map;

pub use consensus::{
    acf_consensus, acf_with_vn, k_shell, scale_to_sum, select_key_nodes, ConsensusConfig,
    ConsensusFilter, ConsensusOutcome, Topology,
};
pub use dmap::{fit_dmap, fit_naive_single_node, DmapConfig, DmapReport, NodeEstimate};
pub use error::{Error, Result};
pub use gmm::{Axis, ConditionalGmm, Gmm1D, GmmParams};
pub use map::{
    align_components, default_hyperparams, fit_em, fit_map, init_params, ComponentPrior,
    DegeneratePolicy, FitConfig, FitReport, Hyperparams, SufficientStats,
};
