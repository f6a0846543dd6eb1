use std::f64::consts::PI;

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;

use super::EmError;
use crate::C0;

/// Planar `n_x × n_z` array in the x–z plane, half-wavelength spacing,
/// centered at the origin. Element `(i, j)` has flat index `i·n_z + j`.
#[derive(Debug, Clone)]
pub struct ArrayConfig {
    pub n_x: usize,
    pub n_z: usize,
    pub f_c: f64,
    pub element_positions: Vec<Vector3<f64>>,
    pub v_p: Vector3<f64>,
}

impl ArrayConfig {
    pub fn new(n_x: usize, n_z: usize, f_c: f64, v_p: Vector3<f64>) -> Result<Self, EmError> {
        if n_x == 0 || n_z == 0 {
            return Err(EmError::InvalidConfig(format!(
                "array needs at least one element per axis, got {n_x}x{n_z}"
            )));
        }
        if !(f_c > 0.0) {
            return Err(EmError::InvalidConfig(format!("carrier frequency {f_c} must be > 0")));
        }
        let norm = v_p.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(EmError::InvalidConfig(format!(
                "polarization must be a unit vector, |v_p| = {norm}"
            )));
        }
        let d = C0 / (2.0 * f_c);
        let cx = (n_x as f64 - 1.0) / 2.0;
        let cz = (n_z as f64 - 1.0) / 2.0;
        let mut element_positions = Vec::with_capacity(n_x * n_z);
        for i in 0..n_x {
            for j in 0..n_z {
                element_positions.push(Vector3::new(
                    (i as f64 - cx) * d,
                    0.0,
                    (j as f64 - cz) * d,
                ));
            }
        }
        Ok(ArrayConfig {
            n_x,
            n_z,
            f_c,
            element_positions,
            v_p,
        })
    }

    /// Vertically polarized array.
    pub fn with_default_polarization(n_x: usize, n_z: usize, f_c: f64) -> Result<Self, EmError> {
        Self::new(n_x, n_z, f_c, Vector3::z())
    }

    pub fn n_b(&self) -> usize {
        self.n_x * self.n_z
    }

    pub fn wavenumber(&self) -> f64 {
        crate::wavenumber(self.f_c)
    }

    pub fn spacing(&self) -> f64 {
        C0 / (2.0 * self.f_c)
    }
}

/// Unitary `n`-point DFT matrix, `F[k, l] = e^{−2πj kl/n} / √n`.
pub fn dft_matrix(n: usize) -> DMatrix<Complex64> {
    let scale = 1.0 / (n as f64).sqrt();
    DMatrix::from_fn(n, n, |k, l| {
        Complex64::from_polar(scale, -2.0 * PI * ((k * l) % n) as f64 / n as f64)
    })
}

/// DFT-codebook precoder `W = √(p_s/N_b) · (F_{n_x} ⊗ F_{n_z})`.
pub fn dft_codebook(n_x: usize, n_z: usize, p_s: f64) -> Result<DMatrix<Complex64>, EmError> {
    if n_x == 0 || n_z == 0 {
        return Err(EmError::InvalidConfig(format!(
            "codebook needs n_x, n_z >= 1, got {n_x}x{n_z}"
        )));
    }
    let n_b = (n_x * n_z) as f64;
    let f = dft_matrix(n_x).kronecker(&dft_matrix(n_z));
    Ok(f * Complex64::from((p_s / n_b).sqrt()))
}
