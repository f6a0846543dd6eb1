use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{SceneError, UavShape};

pub const TILT_XY_LIMIT_DEG: f64 = 30.0;
pub const TILT_Z_LIMIT_DEG: f64 = 180.0;

/// Position (m) and tilt angles (θx, θy, θz in degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub q: [f64; 3],
    pub theta_deg: [f64; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            q: [0.0; 3],
            theta_deg: [0.0; 3],
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::from(self.q)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_matrix(self.theta_deg)
    }

    /// World-frame rotor-plane normal.
    pub fn normal(&self) -> Vector3<f64> {
        self.rotation() * UavShape::body_normal()
    }
}

/// `R_z(θz)·R_y(θy)·R_x(θx)` with angles in degrees.
pub fn rotation_matrix(theta_deg: [f64; 3]) -> Matrix3<f64> {
    let [x, y, z] = theta_deg.map(f64::to_radians);
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), x);
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), y);
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), z);
    (rz * ry * rx).into_inner()
}

/// Maps body-frame points into the world frame.
pub fn apply_pose(shape: &UavShape, pose: &Pose) -> Vec<Vector3<f64>> {
    let r = pose.rotation();
    let q = pose.position();
    shape.body_points.iter().map(|p| r * p + q).collect()
}

/// Axis-aligned box of admissible positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlightRange {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Default for FlightRange {
    fn default() -> Self {
        FlightRange {
            lo: [10.0, 10.0, 10.0],
            hi: [30.0, 30.0, 20.0],
        }
    }
}

impl FlightRange {
    pub fn contains(&self, q: &[f64; 3]) -> bool {
        (0..3).all(|i| q[i] >= self.lo[i] && q[i] <= self.hi[i])
    }

    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|i| 0.5 * (self.lo[i] + self.hi[i]))
    }
}

/// Speed (m/s) and acceleration (m/s²) limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionBounds {
    pub v_max: f64,
    pub a_max: f64,
}

impl Default for MotionBounds {
    fn default() -> Self {
        MotionBounds {
            v_max: 10.0,
            a_max: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    pub dt: f64,
}

/// Distance covered by braking from speed `v >= 0` at deceleration `a` per
/// discrete step of length `dt`.
fn stopping_distance(v: f64, a: f64, dt: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let dv = a * dt;
    let n = (v / dv).floor();
    // sum_{i=1..n} (v - i dv) dt
    dt * (n * v - dv * n * (n + 1.0) / 2.0)
}

/// Low-pass factor applied to freshly drawn tilt angles at each step.
const TILT_SMOOTHING: f64 = 0.3;

/// Bounded-acceleration random walk inside `range` with smoothed random tilts.
///
/// Each axis keeps a braking margin so the walk never has to violate the
/// acceleration bound to stay inside the range.
pub fn sample_trajectory<R: Rng + ?Sized>(
    range: &FlightRange,
    n_steps: usize,
    dt: f64,
    bounds: MotionBounds,
    rng: &mut R,
) -> Result<Trajectory, SceneError> {
    if n_steps < 2 {
        return Err(SceneError::TooFewSteps(n_steps));
    }
    if !(bounds.v_max > 0.0 && bounds.a_max > 0.0 && dt > 0.0) {
        return Err(SceneError::InfeasibleBounds {
            v_max: bounds.v_max,
            a_max: bounds.a_max,
        });
    }
    // Per-axis limits whose vector norm stays inside the isotropic bounds.
    let v_ax = bounds.v_max / 3f64.sqrt() * (1.0 - 1e-9);
    let a_ax = bounds.a_max / 3f64.sqrt() * (1.0 - 1e-9);

    let mut q: [f64; 3] = std::array::from_fn(|i| rng.random_range(range.lo[i]..=range.hi[i]));
    let mut v = [0.0f64; 3];
    let tilt_limits = [TILT_XY_LIMIT_DEG, TILT_XY_LIMIT_DEG, TILT_Z_LIMIT_DEG];
    let mut theta: [f64; 3] = std::array::from_fn(|i| rng.random_range(-tilt_limits[i]..=tilt_limits[i]));

    let mut poses = Vec::with_capacity(n_steps);
    poses.push(Pose {
        q,
        theta_deg: theta,
    });
    for _ in 1..n_steps {
        for i in 0..3 {
            let a = rng.random_range(-a_ax..=a_ax);
            let mut v_next = (v[i] + a * dt).clamp(-v_ax, v_ax);
            let mut q_next = q[i] + v_next * dt;
            let safe = q_next + stopping_distance(v_next, a_ax, dt) <= range.hi[i]
                && q_next - stopping_distance(-v_next, a_ax, dt) >= range.lo[i];
            if !safe {
                // Brake toward rest; keeps the braking margin invariant.
                let brake = (-v[i] / dt).clamp(-a_ax, a_ax);
                v_next = v[i] + brake * dt;
                q_next = q[i] + v_next * dt;
            }
            v[i] = v_next;
            q[i] = q_next.clamp(range.lo[i], range.hi[i]);
        }
        for i in 0..3 {
            let draw = rng.random_range(-tilt_limits[i]..=tilt_limits[i]);
            theta[i] = (1.0 - TILT_SMOOTHING) * theta[i] + TILT_SMOOTHING * draw;
        }
        poses.push(Pose {
            q,
            theta_deg: theta,
        });
    }
    Ok(Trajectory { poses, dt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{make_shape, Material, ShapeKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_pose_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let shape = make_shape(ShapeKind::QuadA, 50, Material::new(2.0, 2e-3).unwrap(), &mut rng)
            .unwrap();
        let world = apply_pose(&shape, &Pose::identity());
        for (w, b) in world.iter().zip(&shape.body_points) {
            assert_eq!(w, b);
        }
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = rotation_matrix([0.0, 0.0, 90.0]);
        let p = r * Vector3::x();
        assert!((p - Vector3::y()).norm() < 1e-12, "{p:?}");
    }

    #[test]
    fn rotation_order_is_x_then_y_then_z() {
        // x-turn first moves y onto z; the following z-turn leaves z alone.
        let r = rotation_matrix([90.0, 0.0, 90.0]);
        let p = r * Vector3::y();
        assert!((p - Vector3::z()).norm() < 1e-12, "{p:?}");
    }

    #[test]
    fn pose_preserves_pairwise_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let shape = make_shape(ShapeKind::QuadD, 500, Material::new(3.0, 4e-3).unwrap(), &mut rng)
            .unwrap();
        let pose = Pose {
            q: [13.0, 27.0, 18.0],
            theta_deg: [-21.0, 17.5, 133.0],
        };
        let world = apply_pose(&shape, &pose);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let i = rng.random_range(0..shape.len());
            let j = rng.random_range(0..shape.len());
            let db = (shape.body_points[i] - shape.body_points[j]).norm();
            let dw = (world[i] - world[j]).norm();
            worst = worst.max((db - dw).abs());
        }
        assert!(worst < 1e-9, "drift {worst}");
    }

    #[test]
    fn fifty_step_trajectory_within_range_and_bounds() {
        let range = FlightRange::default();
        let bounds = MotionBounds::default();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let traj = sample_trajectory(&range, 50, 0.2, bounds, &mut rng).unwrap();
            assert_eq!(traj.poses.len(), 50);
            let mut prev_v: Option<Vector3<f64>> = None;
            for w in traj.poses.windows(2) {
                assert!(range.contains(&w[1].q));
                let v = (w[1].position() - w[0].position()) / traj.dt;
                assert!(v.norm() <= bounds.v_max, "speed {}", v.norm());
                if let Some(pv) = prev_v {
                    let dv = (v - pv).norm();
                    assert!(dv <= bounds.a_max * traj.dt + 1e-9, "accel step {dv}");
                }
                prev_v = Some(v);
            }
            for p in &traj.poses {
                assert!(p.theta_deg[0].abs() <= 30.0 && p.theta_deg[1].abs() <= 30.0);
                assert!(p.theta_deg[2].abs() <= 180.0);
            }
        }
    }

    #[test]
    fn small_range_forces_braking_but_bounds_hold() {
        let range = FlightRange {
            lo: [0.0, 0.0, 0.0],
            hi: [1.0, 1.0, 1.0],
        };
        let bounds = MotionBounds {
            v_max: 20.0,
            a_max: 30.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let traj = sample_trajectory(&range, 400, 0.1, bounds, &mut rng).unwrap();
        let mut prev: Option<Vector3<f64>> = None;
        for w in traj.poses.windows(2) {
            assert!(range.contains(&w[1].q));
            let v = (w[1].position() - w[0].position()) / traj.dt;
            if let Some(pv) = prev {
                assert!((v - pv).norm() <= bounds.a_max * traj.dt + 1e-9);
            }
            prev = Some(v);
        }
    }

    #[test]
    fn zero_speed_limit_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bounds = MotionBounds {
            v_max: 0.0,
            a_max: 1.0,
        };
        assert!(matches!(
            sample_trajectory(&FlightRange::default(), 10, 0.2, bounds, &mut rng),
            Err(SceneError::InfeasibleBounds { .. })
        ));
        assert!(matches!(
            sample_trajectory(&FlightRange::default(), 1, 0.2, MotionBounds::default(), &mut rng),
            Err(SceneError::TooFewSteps(1))
        ));
    }
}
