//! Trajectory planning for car-like robots on uneven terrain.
//!
//! The pipeline turns a point cloud into a terrain grid over SE(2), finds a
//! coarse path with a hybrid A* search, and refines it into a smooth
//! trajectory under terrain-aware dynamic constraints.

pub mod banded;
pub mod dynamics;
pub mod frontend;
pub mod pointcloud;
pub mod spline;
pub mod terrain_map;
pub mod optimizer;
