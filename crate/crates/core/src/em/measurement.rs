use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use super::EmError;

/// Precoder, symbols and the transmitted matrix `X = W·S`.
#[derive(Debug, Clone)]
pub struct TransmitFrame {
    pub w: DMatrix<Complex64>,
    pub s: DMatrix<Complex64>,
    pub x: DMatrix<Complex64>,
}

#[derive(Debug, Clone)]
pub struct ChannelMeasurement {
    pub h: DMatrix<Complex64>,
    pub y: DMatrix<Complex64>,
    pub sigma2: f64,
    /// Realized `‖HX‖²_F / ‖N‖²_F`; `+∞` when no noise was drawn.
    pub p_snr: f64,
}

/// Unit-modulus QPSK symbols `(±1 ± j)/√2`.
pub fn qpsk_symbols<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<Complex64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let re = if rng.random::<bool>() { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
        let im = if rng.random::<bool>() { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
        Complex64::new(re, im)
    })
}

/// Circularly-symmetric complex Gaussian matrix with per-entry variance `sigma2`.
pub fn complex_gaussian<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    sigma2: f64,
    rng: &mut R,
) -> DMatrix<Complex64> {
    let sd = (sigma2 / 2.0).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(sd * re, sd * im)
    })
}

/// Draws `L` QPSK symbol vectors, precodes them with `W` and returns the noisy
/// echoes `Y = H·X + N`.
pub fn simulate_measurement<R: Rng + ?Sized>(
    h: &DMatrix<Complex64>,
    w: &DMatrix<Complex64>,
    l: usize,
    sigma2: f64,
    rng: &mut R,
) -> Result<(ChannelMeasurement, TransmitFrame), EmError> {
    if l == 0 {
        return Err(EmError::InvalidConfig("need at least one symbol (L >= 1)".into()));
    }
    if !(sigma2 >= 0.0) {
        return Err(EmError::InvalidConfig(format!("noise variance {sigma2} must be >= 0")));
    }
    let n_b = w.nrows();
    if h.shape() != (n_b, n_b) || w.ncols() != n_b {
        return Err(EmError::InvalidConfig(format!(
            "shape mismatch: H {:?}, W {:?}",
            h.shape(),
            w.shape()
        )));
    }
    let s = qpsk_symbols(n_b, l, rng);
    let x = w * &s;
    let hx = h * &x;
    let (y, p_snr) = if sigma2 == 0.0 {
        (hx, f64::INFINITY)
    } else {
        let noise = complex_gaussian(n_b, l, sigma2, rng);
        let snr = hx.norm_squared() / noise.norm_squared();
        (hx + noise, snr)
    };
    Ok((
        ChannelMeasurement {
            h: h.clone(),
            y,
            sigma2,
            p_snr,
        },
        TransmitFrame { w: w.clone(), s, x },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::dft_codebook;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_h(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(n, n, |_, _| Complex64::new(rng.random(), rng.random()))
    }

    #[test]
    fn noiseless_echo_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = random_h(&mut rng, 8);
        let w = dft_codebook(4, 2, 1.0).unwrap();
        let (meas, frame) = simulate_measurement(&h, &w, 8, 0.0, &mut rng).unwrap();
        assert_eq!(meas.y, &h * &frame.x);
        assert_eq!(meas.p_snr, f64::INFINITY);
        assert!(simulate_measurement(&h, &w, 0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn symbol_covariance_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = 10_000;
        let s = qpsk_symbols(8, l, &mut rng);
        let cov = (&s * s.adjoint()) / Complex64::from(l as f64);
        let err = (cov - DMatrix::identity(8, 8)).norm() / 8f64.sqrt();
        assert!(err < 0.05, "covariance error {err}");
        let mean = s.column_sum() / Complex64::from(l as f64);
        assert!(mean.norm() < 0.05);
    }

    #[test]
    fn noise_energy_matches_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n_b, l, sigma2) = (8, 16, 3e-4);
        let total: f64 = (0..100)
            .map(|_| complex_gaussian(n_b, l, sigma2, &mut rng).norm_squared())
            .sum();
        let mean = total / 100.0;
        let expected = (n_b * l) as f64 * sigma2;
        assert!((mean / expected - 1.0).abs() < 0.05, "{mean} vs {expected}");
    }

    #[test]
    fn echo_is_linear_in_transmit_for_fixed_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_h(&mut rng, 4);
        let n = complex_gaussian(4, 6, 0.1, &mut rng);
        let x1 = complex_gaussian(4, 6, 1.0, &mut rng);
        let x2 = complex_gaussian(4, 6, 1.0, &mut rng);
        let y = |x: &DMatrix<Complex64>| &h * x + &n;
        let lhs = y(&(&x1 + &x2));
        let rhs = y(&x1) + y(&x2) - &n;
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn realized_snr_is_recorded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = random_h(&mut rng, 8);
        let w = dft_codebook(4, 2, 1.0).unwrap();
        let (meas, frame) = simulate_measurement(&h, &w, 8, 0.01, &mut rng).unwrap();
        let hx = &h * &frame.x;
        let noise = &meas.y - &hx;
        let snr = hx.norm_squared() / noise.norm_squared();
        assert!((snr / meas.p_snr - 1.0).abs() < 1e-9);
    }
}
