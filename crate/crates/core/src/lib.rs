//! Wireless electromagnetic point-cloud imaging of small rotary-wing aircraft.
//!
//! The crate is organised bottom-up:
//!
//! * [`scene`]: procedural airframes, poses, trajectories and the normalized
//!   5D point-cloud representation (3 coordinates plus 2 contrast channels).
//! * [`em`]: the scattering forward model (dyadic Green's function, Born and
//!   method-of-moments solvers, channel assembly, DFT precoding, noisy echoes).
//! * [`chanest`]: least-squares sensing-channel estimation.
//! * [`nn`]: a small double-precision reverse-mode autodiff tape with dense
//!   layers, activations, Adam and a checkpoint format.
//! * [`encoder`]: channel vectorization, Fourier encodings, multiplicative
//!   position gating and the MLP feature encoder.
//! * [`diffusion`]: noise schedule, ConcatSquash noise estimator, weighted
//!   training loss and the reverse sampler.
//! * [`metrics`]: Chamfer / weighted distance, positioning and rotor-plane
//!   attitude errors.
//! * [`pipeline`]: dataset generation, training, inference, evaluation and
//!   file formats used by the `emcloud` CLI.

// Validity checks are written as `!(x > 0.0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chanest;
pub mod diffusion;
pub mod em;
pub mod encoder;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod scene;

/// Vacuum permittivity, F/m.
pub const EPS0: f64 = 8.854_187_812_8e-12;
/// Speed of light in vacuum, m/s.
pub const C0: f64 = 299_792_458.0;

/// Free-space wavenumber `2π f / c` in rad/m.
pub fn wavenumber(f_c: f64) -> f64 {
    2.0 * std::f64::consts::PI * f_c / C0
}

/// Converts a power in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Converts a linear power ratio to dB.
pub fn to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wavenumber_at_three_ghz() {
        let k = wavenumber(3e9);
        assert!((k - 62.87).abs() < 0.01, "k = {k}");
    }

    #[test]
    fn dbm_conversion() {
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-15);
        assert!((dbm_to_watts(-120.0) - 1e-15).abs() < 1e-28);
    }
}
