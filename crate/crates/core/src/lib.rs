//! Fits linear control surrogates (DMD with control on time-delay embedded
//! states) to agent trajectories and tracks their stability and
//! controllability across training checkpoints.

pub mod config;
pub mod dmdc;
pub mod embed;
pub mod envsim;
pub mod pipeline;
pub mod plot;
pub mod report;
pub mod specmetrics;
pub mod trajmodel;
