//! Incident, total and scattered fields for a discretized scatterer.
//!
//! Point-matched volume integral equation:
//!
//! ```text
//! E_tot(p_i) = E_inc(p_i) + k² Σ_{j≠i} χ_j V_j G(p_i, p_j) E_tot(p_j) − (χ_i/3) E_tot(p_i)
//! ```
//!
//! The last term is the depolarization field of a small sphere and replaces
//! the singular self-interaction. Under the Born approximation the total field
//! is the incident field.

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::greens::{greens_apply, greens_dyadic};
use super::{ArrayConfig, EmError};
use crate::scene::{contrast, UavShape};

pub type Field = Vector3<Complex64>;

/// Default ceiling on the number of points handed to the dense MoM solver.
pub const DEFAULT_MOM_CAP: usize = 512;

#[derive(Debug, Clone)]
pub struct ScattererSet {
    pub positions: Vec<Vector3<f64>>,
    pub chi: Vec<Complex64>,
    pub volumes: Vec<f64>,
}

impl ScattererSet {
    pub fn new(
        positions: Vec<Vector3<f64>>,
        chi: Vec<Complex64>,
        volumes: Vec<f64>,
    ) -> Result<Self, EmError> {
        if positions.len() != chi.len() || positions.len() != volumes.len() {
            return Err(EmError::InvalidConfig(format!(
                "scatterer arrays disagree: {} positions, {} contrasts, {} volumes",
                positions.len(),
                chi.len(),
                volumes.len()
            )));
        }
        if let Some(v) = volumes.iter().find(|v| !(**v > 0.0)) {
            return Err(EmError::InvalidConfig(format!("voxel volume {v} must be > 0")));
        }
        Ok(ScattererSet {
            positions,
            chi,
            volumes,
        })
    }

    /// Scatter points of a posed shape: uniform contrast from the material and
    /// equal voxel volumes `V_box / M`.
    pub fn from_shape(world: &[Vector3<f64>], shape: &UavShape, f_c: f64) -> Result<Self, EmError> {
        let m = world.len();
        let chi = contrast(shape.material.eps_rel, shape.material.sigma_cond, f_c);
        let vol = shape.bounding_box_volume() / m as f64;
        Self::new(world.to_vec(), vec![chi; m], vec![vol; m])
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Copy with every contrast multiplied by `factor`.
    pub fn scaled_contrast(&self, factor: f64) -> Self {
        ScattererSet {
            positions: self.positions.clone(),
            chi: self.chi.iter().map(|c| c * factor).collect(),
            volumes: self.volumes.clone(),
        }
    }
}

/// Per-antenna incident field at every scatter point under unit excitation.
/// `columns[n][i]` is the field of antenna `n` at point `i`.
#[derive(Debug, Clone)]
pub struct IncidentField {
    pub columns: Vec<Vec<Field>>,
}

impl IncidentField {
    /// Superposition `Σ_n m_n(p) x_n` for an excitation vector `x`.
    pub fn excite(&self, x: &[Complex64]) -> Vec<Field> {
        assert_eq!(x.len(), self.columns.len(), "excitation length mismatch");
        let m = self.columns.first().map_or(0, Vec::len);
        let mut out = vec![Field::zeros(); m];
        for (col, &xn) in self.columns.iter().zip(x) {
            for (o, f) in out.iter_mut().zip(col) {
                *o += f * xn;
            }
        }
        out
    }
}

/// Point-dipole antenna model: antenna `n` radiates `G(p, p_n)·v_p`.
pub fn incident_field(
    scatterers: &ScattererSet,
    array: &ArrayConfig,
) -> Result<IncidentField, EmError> {
    let k = array.wavenumber();
    let vp = array.v_p.map(Complex64::from);
    let columns = array
        .element_positions
        .iter()
        .map(|ant| {
            scatterers
                .positions
                .iter()
                .map(|p| greens_apply(p, ant, k, &vp))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(IncidentField { columns })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ForwardMode {
    #[default]
    Born,
    Mom,
}

impl std::str::FromStr for ForwardMode {
    type Err = EmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "born" => Ok(ForwardMode::Born),
            "mom" => Ok(ForwardMode::Mom),
            other => Err(EmError::InvalidConfig(format!("unknown forward mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelfTerm {
    /// `−χ_i/3 · E_tot(p_i)` on the block diagonal.
    #[default]
    Depolarization,
    Exclude,
}

#[derive(Debug, Clone, Copy)]
pub struct MomOptions {
    pub max_points: usize,
    pub self_term: SelfTerm,
}

impl Default for MomOptions {
    fn default() -> Self {
        MomOptions {
            max_points: DEFAULT_MOM_CAP,
            self_term: SelfTerm::Depolarization,
        }
    }
}

/// Pivot-ratio bound above which the factorized system is rejected.
const MAX_CONDITION: f64 = 1e14;

/// Dense `3M × 3M` MoM system, factorized once and reused for every excitation.
pub struct MomSystem {
    matrix: DMatrix<Complex64>,
    lu: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    /// Ratio of largest to smallest |U_ii|, a cheap condition indicator.
    pub condition_estimate: f64,
}

impl MomSystem {
    pub fn new(scatterers: &ScattererSet, k: f64, opts: MomOptions) -> Result<Self, EmError> {
        let m = scatterers.len();
        if m > opts.max_points {
            return Err(EmError::MomCapExceeded {
                points: m,
                cap: opts.max_points,
            });
        }
        let n = 3 * m;
        let k2 = k * k;
        let mut a = DMatrix::<Complex64>::zeros(n, n);
        // Column blocks are independent; fill them in parallel then scatter.
        type Column = (usize, Vec<(usize, nalgebra::Matrix3<Complex64>)>);
        let blocks: Vec<Column> = (0..m)
            .into_par_iter()
            .map(|j| {
                let coeff = scatterers.chi[j] * (k2 * scatterers.volumes[j]);
                let col = (0..m)
                    .filter(|&i| i != j)
                    .map(|i| {
                        greens_dyadic(&scatterers.positions[i], &scatterers.positions[j], k)
                            .map(|g| (i, g * (-coeff)))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok((j, col))
            })
            .collect::<Result<_, EmError>>()?;
        for (j, col) in blocks {
            for (i, blk) in col {
                a.fixed_view_mut::<3, 3>(3 * i, 3 * j).copy_from(&blk);
            }
        }
        for i in 0..m {
            let diag = match opts.self_term {
                SelfTerm::Depolarization => Complex64::from(1.0) + scatterers.chi[i] / 3.0,
                SelfTerm::Exclude => Complex64::from(1.0),
            };
            for d in 0..3 {
                a[(3 * i + d, 3 * i + d)] = diag;
            }
        }

        let lu = a.clone().lu();
        let u = lu.u();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            let d = u[(i, i)].norm();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        let condition_estimate = if n == 0 { 1.0 } else { hi / lo };
        if !condition_estimate.is_finite() || condition_estimate > MAX_CONDITION {
            return Err(EmError::IllConditioned { condition_estimate });
        }
        Ok(MomSystem {
            matrix: a,
            lu,
            condition_estimate,
        })
    }

    /// Solves for the total field; returns it with the relative residual
    /// `‖A·E_tot − E_inc‖ / ‖E_inc‖`.
    pub fn solve(&self, incident: &[Field]) -> Result<(Vec<Field>, f64), EmError> {
        let n = self.matrix.nrows();
        if incident.len() * 3 != n {
            return Err(EmError::InvalidConfig(format!(
                "incident field has {} points, system has {}",
                incident.len(),
                n / 3
            )));
        }
        let b = DVector::from_iterator(n, incident.iter().flat_map(|f| f.iter().copied()));
        let x = self.lu.solve(&b).ok_or(EmError::IllConditioned {
            condition_estimate: self.condition_estimate,
        })?;
        let bn = b.norm();
        let residual = if bn > 0.0 {
            (&self.matrix * &x - &b).norm() / bn
        } else {
            (&self.matrix * &x).norm()
        };
        let fields = x
            .as_slice()
            .chunks_exact(3)
            .map(|c| Field::new(c[0], c[1], c[2]))
            .collect();
        Ok((fields, residual))
    }
}

#[derive(Debug, Clone)]
pub struct TotalField {
    pub fields: Vec<Field>,
    /// Relative residual of the discrete system; zero for Born.
    pub residual: f64,
}

/// Total field inside the scatterer for one excitation.
pub fn solve_total_field(
    scatterers: &ScattererSet,
    incident: &[Field],
    k: f64,
    mode: ForwardMode,
    opts: MomOptions,
) -> Result<TotalField, EmError> {
    match mode {
        ForwardMode::Born => Ok(TotalField {
            fields: incident.to_vec(),
            residual: 0.0,
        }),
        ForwardMode::Mom => {
            let sys = MomSystem::new(scatterers, k, opts)?;
            let (fields, residual) = sys.solve(incident)?;
            Ok(TotalField { fields, residual })
        }
    }
}

/// Sensing channel `H[m, n] = v_pᵀ k² Σ_i χ_i V_i G(p_m, p_i) E_tot⁽ⁿ⁾(p_i)`.
pub fn assemble_channel(
    scatterers: &ScattererSet,
    array: &ArrayConfig,
    mode: ForwardMode,
    opts: MomOptions,
) -> Result<DMatrix<Complex64>, EmError> {
    let k = array.wavenumber();
    let inc = incident_field(scatterers, array)?;
    let totals: Vec<Vec<Field>> = match mode {
        ForwardMode::Born => inc.columns.clone(),
        ForwardMode::Mom => {
            let sys = MomSystem::new(scatterers, k, opts)?;
            inc.columns
                .iter()
                .map(|col| sys.solve(col).map(|(f, _)| f))
                .collect::<Result<_, _>>()?
        }
    };
    // v_pᵀ G(p_m, p_i) = (G(p_i, p_m) v_p)ᵀ: reuse the incident columns as receive weights.
    let weights: Vec<Complex64> = scatterers
        .chi
        .iter()
        .zip(&scatterers.volumes)
        .map(|(c, v)| c * (k * k * v))
        .collect();
    let n_b = array.n_b();
    Ok(DMatrix::from_fn(n_b, n_b, |m, n| {
        inc.columns[m]
            .iter()
            .zip(&totals[n])
            .zip(&weights)
            .map(|((rx, e), w)| w * (rx[0] * e[0] + rx[1] * e[1] + rx[2] * e[2]))
            .sum()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Jittered sub-wavelength lattice (λ/5 spacing) with matching cell volumes.
    fn random_scene(rng: &mut ChaCha8Rng, m: usize, chi: Complex64) -> ScattererSet {
        let d = 0.02;
        let center = Vector3::new(3.0, 12.0, 4.0);
        let positions = (0..m)
            .map(|i| {
                let cell = Vector3::new((i % 4) as f64, ((i / 4) % 4) as f64, (i / 16) as f64);
                center + cell * d + Vector3::from_fn(|_, _| rng.random_range(-0.2 * d..0.2 * d))
            })
            .collect();
        ScattererSet::new(positions, vec![chi; m], vec![d * d * d; m]).unwrap()
    }

    fn array() -> ArrayConfig {
        ArrayConfig::with_default_polarization(4, 2, 3e9).unwrap()
    }

    fn rel(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn single_antenna_incident_field_is_greens_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sc = random_scene(&mut rng, 5, Complex64::new(1.0, 0.1));
        let arr = ArrayConfig::with_default_polarization(1, 1, 3e9).unwrap();
        let inc = incident_field(&sc, &arr).unwrap();
        let field = inc.excite(&[Complex64::from(1.0)]);
        for (p, f) in sc.positions.iter().zip(&field) {
            let g = greens_dyadic(p, &arr.element_positions[0], arr.wavenumber()).unwrap();
            let expected = g * arr.v_p.map(Complex64::from);
            assert!((f - expected).norm() <= 1e-14 * expected.norm());
        }
    }

    #[test]
    fn incident_field_is_linear_in_excitation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sc = random_scene(&mut rng, 12, Complex64::new(1.0, 0.1));
        let inc = incident_field(&sc, &array()).unwrap();
        let zero = inc.excite(&[Complex64::from(0.0); 8]);
        assert!(zero.iter().all(|f| f.norm() == 0.0));
        let x: Vec<Complex64> = (0..8).map(|_| Complex64::new(rng.random(), rng.random())).collect();
        let x2: Vec<Complex64> = x.iter().map(|v| v * 2.0).collect();
        let (f1, f2) = (inc.excite(&x), inc.excite(&x2));
        for (a, b) in f1.iter().zip(&f2) {
            assert!((a * Complex64::from(2.0) - b).norm() <= 1e-12 * b.norm());
        }
    }

    #[test]
    fn zero_contrast_leaves_incident_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sc = random_scene(&mut rng, 16, Complex64::from(0.0));
        let arr = array();
        let inc = incident_field(&sc, &arr).unwrap();
        for mode in [ForwardMode::Born, ForwardMode::Mom] {
            let tot =
                solve_total_field(&sc, &inc.columns[0], arr.wavenumber(), mode, MomOptions::default())
                    .unwrap();
            assert_eq!(tot.fields, inc.columns[0]);
            let h = assemble_channel(&sc, &arr, mode, MomOptions::default()).unwrap();
            assert!(h.iter().all(|z| z.norm() == 0.0));
        }
    }

    #[test]
    fn born_channel_is_reciprocal_and_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sc = random_scene(&mut rng, 40, Complex64::new(1.5, 0.03));
        let arr = array();
        let h = assemble_channel(&sc, &arr, ForwardMode::Born, MomOptions::default()).unwrap();
        assert!(rel(&h.transpose(), &h) < 1e-10);
        let h2 =
            assemble_channel(&sc.scaled_contrast(2.0), &arr, ForwardMode::Born, MomOptions::default())
                .unwrap();
        assert!(rel(&(&h * Complex64::from(2.0)), &h2) < 1e-12);
    }

    #[test]
    fn mom_residual_and_first_order_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let arr = array();
        let k = arr.wavenumber();
        for _ in 0..3 {
            let sc = random_scene(&mut rng, 32, Complex64::new(0.5, 0.03));
            let inc = incident_field(&sc, &arr).unwrap();
            let tot = solve_total_field(&sc, &inc.columns[3], k, ForwardMode::Mom, MomOptions::default())
                .unwrap();
            assert!(tot.residual < 1e-8, "residual {}", tot.residual);

            let diff = |s: &ScattererSet| {
                let born = assemble_channel(s, &arr, ForwardMode::Born, MomOptions::default()).unwrap();
                let mom = assemble_channel(s, &arr, ForwardMode::Mom, MomOptions::default()).unwrap();
                rel(&mom, &born)
            };
            let ratio = diff(&sc) / diff(&sc.scaled_contrast(0.5));
            assert!((1.5..=2.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn mom_cap_is_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sc = random_scene(&mut rng, 20, Complex64::new(1.0, 0.0));
        let opts = MomOptions {
            max_points: 10,
            ..MomOptions::default()
        };
        assert!(matches!(
            MomSystem::new(&sc, 60.0, opts),
            Err(EmError::MomCapExceeded { points: 20, cap: 10 })
        ));
    }

    #[test]
    fn excluded_self_term_changes_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sc = random_scene(&mut rng, 10, Complex64::new(2.0, 0.0));
        let arr = array();
        let inc = incident_field(&sc, &arr).unwrap();
        let k = arr.wavenumber();
        let a = solve_total_field(&sc, &inc.columns[0], k, ForwardMode::Mom, MomOptions::default()).unwrap();
        let b = solve_total_field(
            &sc,
            &inc.columns[0],
            k,
            ForwardMode::Mom,
            MomOptions {
                self_term: SelfTerm::Exclude,
                ..MomOptions::default()
            },
        )
        .unwrap();
        assert!(b.residual < 1e-8);
        let d: f64 = a.fields.iter().zip(&b.fields).map(|(x, y)| (x - y).norm()).sum();
        assert!(d > 0.0);
    }
}
