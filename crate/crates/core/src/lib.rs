//! Rigid-body dynamics for kinematic trees: a URDF front end, spatial algebra,
//! reference algorithms, parallel schedules, straight-line kernel generation
//! and a batched executor.

pub mod models;
pub mod scalar;
pub mod spatial;
pub mod urdf;
pub mod recur;
pub mod refdyn;
pub mod schedule;
pub mod kernel;
pub mod batch;
