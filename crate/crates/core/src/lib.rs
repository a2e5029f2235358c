//! Global news event detection and country-level news diversity and
//! synchrony analysis.
//!
//! The pipeline runs in stages:
//!
//! 1. [`corpus`] loads and filters articles carrying entity lists and
//!    embedding references.
//! 2. [`pairgen`] finds candidate pairs that share named entities inside a
//!    publication-date window.
//! 3. [`simscore`] scores candidate pairs with embedding cosine similarity.
//! 4. [`simgraph`] builds the weighted similarity graph and runs graph
//!    analytics (PageRank, betweenness, disparity backbone).
//! 5. [`events`] extracts statistically significant, possibly overlapping
//!    event clusters.
//! 6. [`measures`] turns clusters into per-country event distributions,
//!    diversity (entropy) and synchrony (negative Jensen-Shannon divergence).
//! 7. [`regress`] explains the measures with OLS plus VIF/AIC selection.
//!
//! [`agreement`] holds the inter-rater statistics used to validate event
//! coherence, and [`pipeline`] wires the stages behind the command line.

pub mod agreement;
pub mod config;
pub mod corpus;
pub mod error;
pub mod events;
pub mod io;
pub mod measures;
pub mod pairgen;
pub mod pipeline;
pub mod regress;
pub mod simgraph;
pub mod simscore;
pub mod synth;

pub use error::{Error, Result};
