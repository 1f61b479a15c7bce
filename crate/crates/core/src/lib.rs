//! LiDAR-inertial odometry toolkit: an iterated error-state Kalman filter
//! with point-to-plane updates and optional relative-pose (VIO) fusion, a
//! dual-pipeline orchestrator sharing one voxel map between two non-rigidly
//! mounted LiDARs, and the synthetic simulator used to validate both.

pub mod config;
pub mod correspondence;
pub mod dataset;
pub mod deskew;
pub mod error;
pub mod esikf;
pub mod eval;
pub mod geometry;
pub mod icp;
pub mod pipeline;
pub mod scenario;
pub mod session;
pub mod sim;
pub mod tum;
pub mod voxel_map;

pub use error::{Error, Result};
