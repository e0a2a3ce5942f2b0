//! Lung-nodule classification toolkit built around Self-ONN operational layers.

pub mod container;
pub mod rng;
pub mod tensor;
pub mod enhance;
pub mod dataset;
pub mod net;
pub mod ensemble;
pub mod scorecam;
pub mod metrics;
pub mod pipeline;
