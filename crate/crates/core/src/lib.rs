//! Online classification of augmented-reality (AR), cloud-gaming (CG) and
//! other UDP traffic, with the feedback loop that keeps the classifier
//! current.
//!
//! The pieces, in packet order:
//!
//! - [`pcap`]: capture files, ground-truth sidecars, synthetic traffic and
//!   paced replay.
//! - [`features`]: per-flow window statistics over packet sizes, gaps and
//!   RTP frames.
//! - [`forest`]: CART trees, random forests and the model envelope.
//! - [`pipeline`]: the classifier, its per-flow routing and hot swaps.
//! - [`oracle`]: the servers that verify routing and emit flow labels.
//! - [`trainer`]: label joining, retrain policy and model refresh.
//! - [`harness`]: the assembled loop, offline commands and reports.

pub mod features;
pub mod forest;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod pcap;
pub mod pipeline;
pub mod rng;
pub mod trainer;
