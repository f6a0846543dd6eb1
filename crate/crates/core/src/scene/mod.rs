//! Airframes, poses, trajectories and the normalized 5D point cloud.

mod cloud;
mod ply;
mod pose;
mod shape;

pub use cloud::{
    contrast, denormalize_cloud, make_region, normalize_cloud, EmPoint, EmPointCloud, RegionSpec,
    DEFAULT_REGION_STD,
};
pub use ply::write_ply;
pub use pose::{
    apply_pose, rotation_matrix, sample_trajectory, FlightRange, MotionBounds, Pose, Trajectory,
    TILT_XY_LIMIT_DEG, TILT_Z_LIMIT_DEG,
};
pub use shape::{make_shape, Material, ShapeKind, UavShape, BOUNDING_HALF_EXTENT};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("unknown shape kind `{0}` (expected quad_a..quad_e)")]
    UnknownShape(String),
    #[error("point budget {budget} too small: need at least {min} points to cover every component")]
    BudgetTooSmall { budget: usize, min: usize },
    #[error("material out of range: eps_rel={eps_rel}, sigma={sigma} S/m")]
    MaterialOutOfRange { eps_rel: f64, sigma: f64 },
    #[error("infeasible motion bounds: v_max={v_max}, a_max={a_max}")]
    InfeasibleBounds { v_max: f64, a_max: f64 },
    #[error("trajectory needs at least 2 steps, got {0}")]
    TooFewSteps(usize),
    #[error("invalid region: {0}")]
    InvalidRegion(String),
}
