//! Closed-loop reachability for a LiDAR-guided car in a square hallway loop.

// `!(x <= y)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod affine;
pub mod closed_loop;
pub mod controller;
pub mod dynamics;
pub mod env_server;
pub mod error;
pub mod fixtures;
pub mod interval;
pub mod lidar;
pub mod reach;
pub mod scenario;
pub mod track;

pub use error::{Error, Result};
