use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SceneError;

/// Every generated shape fits in `[-0.3, 0.3]^3` m around the body origin.
pub const BOUNDING_HALF_EXTENT: f64 = 0.3;

const EPS_REL_RANGE: (f64, f64) = (1.5, 5.0);
const SIGMA_RANGE: (f64, f64) = (1e-3, 1e-2);

/// Number of surface parts (fuselage, four arms, four rotor disks).
const PART_COUNT: usize = 9;
const MIN_BUDGET: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    QuadA,
    QuadB,
    QuadC,
    QuadD,
    QuadE,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [
        ShapeKind::QuadA,
        ShapeKind::QuadB,
        ShapeKind::QuadC,
        ShapeKind::QuadD,
        ShapeKind::QuadE,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::QuadA => "quad_a",
            ShapeKind::QuadB => "quad_b",
            ShapeKind::QuadC => "quad_c",
            ShapeKind::QuadD => "quad_d",
            ShapeKind::QuadE => "quad_e",
        }
    }

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }

    fn geometry(self) -> Geometry {
        // (fuselage half-extents, arm length, arm half-width, arm half-height, rotor radius, rotor height)
        let (fus, arm_len, arm_hw, arm_hh, rotor_r, rotor_z) = match self {
            ShapeKind::QuadA => ([0.08, 0.08, 0.035], 0.24, 0.012, 0.010, 0.10, 0.075),
            ShapeKind::QuadB => ([0.10, 0.06, 0.030], 0.26, 0.010, 0.010, 0.08, 0.070),
            ShapeKind::QuadC => ([0.06, 0.06, 0.045], 0.20, 0.014, 0.012, 0.12, 0.090),
            ShapeKind::QuadD => ([0.12, 0.09, 0.040], 0.28, 0.012, 0.010, 0.07, 0.080),
            ShapeKind::QuadE => ([0.07, 0.07, 0.025], 0.22, 0.010, 0.008, 0.11, 0.065),
        };
        Geometry {
            fuselage: fus,
            arm_len,
            arm_hw,
            arm_hh,
            rotor_r,
            rotor_z,
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SceneError::UnknownShape(s.to_string()))
    }
}

/// Relative permittivity and conductivity (S/m) shared by every scatter point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub eps_rel: f64,
    pub sigma_cond: f64,
}

impl Material {
    pub fn new(eps_rel: f64, sigma_cond: f64) -> Result<Self, SceneError> {
        let ok = (EPS_REL_RANGE.0..=EPS_REL_RANGE.1).contains(&eps_rel)
            && (SIGMA_RANGE.0..=SIGMA_RANGE.1).contains(&sigma_cond);
        if !ok {
            return Err(SceneError::MaterialOutOfRange {
                eps_rel,
                sigma: sigma_cond,
            });
        }
        Ok(Material {
            eps_rel,
            sigma_cond,
        })
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Material {
            eps_rel: rng.random_range(EPS_REL_RANGE.0..=EPS_REL_RANGE.1),
            sigma_cond: rng.random_range(SIGMA_RANGE.0..=SIGMA_RANGE.1),
        }
    }
}

/// A sampled airframe in its body frame.
#[derive(Debug, Clone)]
pub struct UavShape {
    pub kind: ShapeKind,
    pub body_points: Vec<Vector3<f64>>,
    pub rotor_mask: Vec<bool>,
    pub material: Material,
}

impl UavShape {
    pub fn len(&self) -> usize {
        self.body_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.body_points.is_empty()
    }

    /// Volume of the axis-aligned body-frame bounding box, m³.
    pub fn bounding_box_volume(&self) -> f64 {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in &self.body_points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let d = hi - lo;
        d.x * d.y * d.z
    }

    /// Rotor-plane normal in the body frame.
    pub fn body_normal() -> Vector3<f64> {
        Vector3::z()
    }
}

struct Geometry {
    fuselage: [f64; 3],
    arm_len: f64,
    arm_hw: f64,
    arm_hh: f64,
    rotor_r: f64,
    rotor_z: f64,
}

enum Part {
    /// Closed axis-aligned box given by its half extents, centered at the origin.
    Fuselage([f64; 3]),
    /// Lateral surface of a rectangular beam along `dir` (unit, in the xy plane)
    /// from radius `r0` to `r1`.
    Arm {
        dir: Vector3<f64>,
        r0: f64,
        r1: f64,
        hw: f64,
        hh: f64,
    },
    /// Flat disk parallel to the xy plane.
    Rotor { center: Vector3<f64>, radius: f64 },
}

impl Part {
    fn area(&self) -> f64 {
        match *self {
            Part::Fuselage([a, b, c]) => 8.0 * (a * b + a * c + b * c),
            Part::Arm { r0, r1, hw, hh, .. } => 4.0 * (hw + hh) * (r1 - r0),
            Part::Rotor { radius, .. } => PI * radius * radius,
        }
    }

    fn is_rotor(&self) -> bool {
        matches!(self, Part::Rotor { .. })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        match *self {
            Part::Fuselage(h) => sample_box_surface(h, rng),
            Part::Arm {
                dir,
                r0,
                r1,
                hw,
                hh,
            } => {
                // Unroll the four lateral faces: two of width 2hw (top/bottom), two of height 2hh.
                let side = Vector3::new(-dir.y, dir.x, 0.0);
                let along = rng.random_range(r0..r1);
                let perim = 4.0 * (hw + hh);
                let t = rng.random_range(0.0..perim);
                let (lat, up) = if t < 2.0 * hw {
                    (t - hw, hh)
                } else if t < 4.0 * hw {
                    (t - 3.0 * hw, -hh)
                } else if t < 4.0 * hw + 2.0 * hh {
                    (hw, t - 4.0 * hw - hh)
                } else {
                    (-hw, t - 4.0 * hw - 3.0 * hh)
                };
                dir * along + side * lat + Vector3::z() * up
            }
            Part::Rotor { center, radius } => {
                let r = radius * rng.random::<f64>().sqrt();
                let phi = rng.random_range(0.0..2.0 * PI);
                center + Vector3::new(r * phi.cos(), r * phi.sin(), 0.0)
            }
        }
    }
}

fn sample_box_surface<R: Rng + ?Sized>(h: [f64; 3], rng: &mut R) -> Vector3<f64> {
    let [a, b, c] = h;
    let faces = [b * c, a * c, a * b];
    let total: f64 = faces.iter().sum();
    let mut pick = rng.random_range(0.0..total);
    let mut axis = 2;
    for (i, f) in faces.iter().enumerate() {
        if pick < *f {
            axis = i;
            break;
        }
        pick -= f;
    }
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let mut p = Vector3::new(
        rng.random_range(-a..=a),
        rng.random_range(-b..=b),
        rng.random_range(-c..=c),
    );
    p[axis] = sign * h[axis];
    p
}

fn parts(kind: ShapeKind) -> Vec<Part> {
    let g = kind.geometry();
    let mut parts = vec![Part::Fuselage(g.fuselage)];
    let r0 = g.fuselage[0].min(g.fuselage[1]);
    let diagonals = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
    for (sx, sy) in diagonals {
        let dir = Vector3::new(sx * FRAC_1_SQRT_2, sy * FRAC_1_SQRT_2, 0.0);
        parts.push(Part::Arm {
            dir,
            r0,
            r1: g.arm_len,
            hw: g.arm_hw,
            hh: g.arm_hh,
        });
    }
    for (sx, sy) in diagonals {
        let tip = Vector3::new(sx * FRAC_1_SQRT_2, sy * FRAC_1_SQRT_2, 0.0) * g.arm_len;
        parts.push(Part::Rotor {
            center: Vector3::new(tip.x, tip.y, g.rotor_z),
            radius: g.rotor_r,
        });
    }
    debug_assert_eq!(parts.len(), PART_COUNT);
    parts
}

/// Splits `budget` points across parts proportionally to area, with at least
/// one point per part (largest-remainder rounding).
fn allocate(areas: &[f64], budget: usize) -> Vec<usize> {
    let free = budget - areas.len();
    let total: f64 = areas.iter().sum();
    let exact: Vec<f64> = areas.iter().map(|a| a / total * free as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = free - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..areas.len()).collect();
    order.sort_by(|&i, &j| {
        let ri = exact[i] - exact[i].floor();
        let rj = exact[j] - exact[j].floor();
        rj.total_cmp(&ri).then(i.cmp(&j))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts.iter().map(|c| c + 1).collect()
}

/// Samples a procedural quadrotor: fuselage block, four diagonal arms and four
/// coplanar rotor disks, `point_budget` points uniformly over the surfaces.
pub fn make_shape<R: Rng + ?Sized>(
    kind: ShapeKind,
    point_budget: usize,
    material: Material,
    rng: &mut R,
) -> Result<UavShape, SceneError> {
    if point_budget < MIN_BUDGET {
        return Err(SceneError::BudgetTooSmall {
            budget: point_budget,
            min: MIN_BUDGET,
        });
    }
    Material::new(material.eps_rel, material.sigma_cond)?;

    let parts = parts(kind);
    let areas: Vec<f64> = parts.iter().map(Part::area).collect();
    let counts = allocate(&areas, point_budget);

    let mut body_points = Vec::with_capacity(point_budget);
    let mut rotor_mask = Vec::with_capacity(point_budget);
    for (part, &n) in parts.iter().zip(&counts) {
        for _ in 0..n {
            body_points.push(part.sample(rng));
            rotor_mask.push(part.is_rotor());
        }
    }
    Ok(UavShape {
        kind,
        body_points,
        rotor_mask,
        material,
    })
}

/// Indices of the part each point was drawn from, in generation order.
#[cfg(test)]
fn part_labels(kind: ShapeKind, budget: usize) -> Vec<usize> {
    let areas: Vec<f64> = parts(kind).iter().map(Part::area).collect();
    allocate(&areas, budget)
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| std::iter::repeat_n(i, n))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mat() -> Material {
        Material::new(2.5, 5e-3).unwrap()
    }

    #[test]
    fn thousand_points_with_enough_rotor_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in ShapeKind::ALL {
            let shape = make_shape(kind, 1000, mat(), &mut rng).unwrap();
            assert_eq!(shape.len(), 1000);
            let rotor = shape.rotor_mask.iter().filter(|&&m| m).count();
            assert!(rotor >= 100, "{kind}: {rotor} rotor points");
        }
    }

    #[test]
    fn minimal_budget_covers_every_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shape = make_shape(ShapeKind::QuadA, 16, mat(), &mut rng).unwrap();
        assert_eq!(shape.len(), 16);
        let labels = part_labels(ShapeKind::QuadA, 16);
        for part in 0..PART_COUNT {
            assert!(labels.contains(&part), "part {part} missing");
        }
        assert!(shape.rotor_mask.iter().any(|&m| m));
        assert!(shape.rotor_mask.iter().any(|&m| !m));
    }

    #[test]
    fn budget_below_minimum_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = make_shape(ShapeKind::QuadB, 15, mat(), &mut rng).unwrap_err();
        assert!(matches!(err, SceneError::BudgetTooSmall { .. }));
    }

    #[test]
    fn unknown_kind_is_an_error() {
        assert_eq!(
            "quad_z".parse::<ShapeKind>(),
            Err(SceneError::UnknownShape("quad_z".into()))
        );
        assert_eq!("quad_c".parse::<ShapeKind>(), Ok(ShapeKind::QuadC));
    }

    #[test]
    fn material_range_is_enforced() {
        assert!(Material::new(1.2, 5e-3).is_err());
        assert!(Material::new(2.0, 0.5).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bad = Material {
            eps_rel: 9.0,
            sigma_cond: 5e-3,
        };
        assert!(make_shape(ShapeKind::QuadA, 100, bad, &mut rng).is_err());
    }

    #[test]
    fn shapes_fit_bounding_cube_and_rotors_are_coplanar() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in ShapeKind::ALL {
            let shape = make_shape(kind, 2000, mat(), &mut rng).unwrap();
            for p in &shape.body_points {
                assert!(p.amax() <= BOUNDING_HALF_EXTENT + 1e-12, "{kind}: {p:?}");
            }
            let rotor: Vec<_> = shape
                .body_points
                .iter()
                .zip(&shape.rotor_mask)
                .filter(|(_, &m)| m)
                .map(|(p, _)| *p)
                .collect();
            // Least-squares plane through the rotor points: smallest singular direction.
            let n = rotor.len() as f64;
            let mean = rotor.iter().sum::<Vector3<f64>>() / n;
            let mut cov = nalgebra::Matrix3::zeros();
            for p in &rotor {
                let d = p - mean;
                cov += d * d.transpose();
            }
            let eig = cov.symmetric_eigen();
            let rms = (eig.eigenvalues.min() / n).max(0.0).sqrt();
            assert!(rms < 1e-6, "{kind}: rotor plane rms {rms}");
        }
    }

    #[test]
    fn rotor_plane_clears_other_surfaces() {
        // Keeps the rotor plane separable from fuselage/arm points by a plane slab.
        for kind in ShapeKind::ALL {
            let g = kind.geometry();
            assert!(g.rotor_z - g.fuselage[2].max(g.arm_hh) >= 0.03, "{kind}");
        }
    }
}
