//! Electromagnetic forward model: from a posed scatterer to noisy echoes.

mod array;
mod greens;
mod measurement;
mod scatter;

pub use array::{dft_codebook, dft_matrix, ArrayConfig};
pub use greens::greens_dyadic;
pub use measurement::{
    complex_gaussian, qpsk_symbols, simulate_measurement, ChannelMeasurement, TransmitFrame,
};
pub use scatter::{
    assemble_channel, incident_field, solve_total_field, Field, ForwardMode, IncidentField,
    MomOptions, MomSystem, ScattererSet, SelfTerm, TotalField, DEFAULT_MOM_CAP,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EmError {
    #[error("coincident points (separation {separation:e} m): self-terms must be excluded")]
    Singular { separation: f64 },
    #[error("MoM system with {points} points exceeds the cap of {cap}")]
    MomCapExceeded { points: usize, cap: usize },
    #[error("MoM system is singular or ill-conditioned (condition estimate {condition_estimate:e})")]
    IllConditioned { condition_estimate: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
