//! Fair-game simulation framework: a PAC bias auditor and a dynamic
//! debiaser coupled in a feedback loop around a classifier over a
//! drifting population, with exact enumeration oracles for every metric.

pub mod auditor;
pub mod cli;
pub mod debiaser;
pub mod game;
pub mod metrics;
pub mod model;
pub mod population;
